"""Contrastive decoding engine: expert/amateur logit contrast with an
alpha-mask, plus decoding loops, ranking, self-consistency, analytics, and
a reproducible experiment harness.
"""

from ._version import __version__
from .aggregation import (
    AnswerPattern,
    ExtractedAnswer,
    SelfConsistencyResult,
    VoteResult,
    canonical_number,
    extract_answer,
    majority_vote,
    self_consistency,
)
from .analysis import (
    CopyReport,
    CostPoint,
    FlopReport,
    GenStats,
    copy_metrics,
    cost_curve,
    flop_overhead,
    generation_stats,
    self_consistency_cost,
    write_cost_csv,
)
from .core import (
    CdConfig,
    LogitVector,
    ProbVector,
    ValidSet,
    alpha_mask_logits,
    alpha_mask_probs,
    cd_probabilities,
    combine_original,
    combine_refactored,
    combine_scores,
    log_softmax,
    map_parameters,
    scaled_mask_alpha,
    softmax,
)
from .datasets import (
    ArithmeticProblem,
    CorpusSpec,
    arithmetic_vocabulary,
    build_fewshot_prompt,
    build_training_corpus,
    gen_arithmetic,
    gen_template_text,
    load_problems,
    save_problems,
    solved_line,
)
from .decoding import (
    CdGreedy,
    CdSample,
    DecodeRequest,
    FailedGeneration,
    GenerationRecord,
    Greedy,
    Nucleus,
    Sample,
    TopK,
    decode,
    decode_batch,
    decode_cd_greedy,
    decode_greedy,
    decode_sample,
    sample_index,
)
from .errors import (
    CdkitError,
    ConfigurationError,
    DataError,
    DegenerateScorerError,
    InternalInvariantError,
    MetricError,
    ScorerCompatibilityError,
    ScorerProtocolError,
    UsageError,
    ValidationError,
)
from .external import ExternalScorer
from .harness import (
    ExperimentConfig,
    build_resources,
    build_scorers,
    cell_seed,
    evaluate_cell,
    load_config,
    parse_config,
    run_experiment,
    strategy_for,
)
from .ranking import (
    ChoiceTask,
    RankedChoice,
    TaskRanking,
    load_choice_tasks,
    rank_task,
    rank_tasks,
    save_choice_tasks,
    score_completion,
)
from .rng import Stream, derive_key, mix64, uniform_at
from .scorers import (
    NgramScorer,
    PairReport,
    PrefixWrappedScorer,
    Scorer,
    ScorerDescriptor,
    TableScorer,
    TokenSequence,
    Vocabulary,
    check_pair,
    load_ngram,
    save_ngram,
    train_ngram,
    with_prefix,
)
