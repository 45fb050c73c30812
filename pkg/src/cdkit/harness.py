"""Experiment runner: validated JSON configs, seeded grids, JSONL results.

A config fully determines the run: dataset, scorer construction, the
(method x beta x k) grid, and the master seed.  Every grid cell draws from
a seed derived from (master seed, method, beta, k), so cells are
independent of grid shape, ordering, and the --jobs level.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

from ._version import __version__
from .aggregation import AnswerPattern, canonical_number, self_consistency
from .core import CdConfig
from .datasets import (
    ArithmeticProblem,
    CorpusSpec,
    arithmetic_vocabulary,
    build_fewshot_prompt,
    build_training_corpus,
    gen_arithmetic,
)
from .decoding import CdGreedy, CdSample, GenerationRecord, Greedy, Sample, Strategy
from .errors import CdkitError, ConfigurationError, DataError, UsageError
from .external import ExternalScorer
from .rng import derive_key
from .scorers import Scorer, TokenSequence, Vocabulary, load_ngram, train_ngram, with_prefix

CONFIG_SCHEMA_VERSION = 1
RESULTS_FORMAT_VERSION = 1

GRID_METHODS = ("greedy", "sample", "mask_only", "cd_greedy", "cd_sample")
CELL_METRICS = ("accuracy", "parseable_fraction", "mean_chars")

_U64 = 2 ** 64


def _check_keys(section: dict, allowed: Sequence[str], path: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigurationError(f"{path}: unknown key(s) {unknown}")


def _require(section: dict, key: str, path: str) -> Any:
    if key not in section:
        raise ConfigurationError(f"{path}.{key}: missing required key")
    return section[key]


def _as_int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
    return value


def _as_number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigurationError(f"{path}: expected a string, got {value!r}")
    return value


def _as_dict(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigurationError(f"{path}: expected an object, got {value!r}")
    return value


def _as_seed(value: Any, path: str) -> int:
    seed = _as_int(value, path)
    if not (0 <= seed < _U64):
        raise ConfigurationError(f"{path}: seed must be a 64-bit unsigned integer")
    return seed


@dataclass(frozen=True)
class DatasetSection:
    generator: str
    size: int
    seed: int
    shots: int
    shot_seed: int


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved, validated experiment description."""

    seed: int
    output: str | None
    dataset: DatasetSection
    expert_spec: dict
    amateur_spec: dict | None
    negative_prefix: str | None
    cd: CdConfig
    methods: tuple[str, ...]
    betas: tuple[float, ...]
    ks: tuple[int, ...]
    max_new_tokens: int
    temperature: float
    pattern: AnswerPattern
    resolved: dict  # canonical dict the fingerprint is computed from

    @property
    def fingerprint(self) -> str:
        material = json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(material.encode("utf-8")).hexdigest()


def _parse_train_spec(section: dict, path: str) -> CorpusSpec:
    _check_keys(section, ("generator", "size", "seed", "corruption"), path)
    try:
        return CorpusSpec(
            generator=_as_str(_require(section, "generator", path), f"{path}.generator"),
            size=_as_int(_require(section, "size", path), f"{path}.size"),
            seed=_as_seed(_require(section, "seed", path), f"{path}.seed"),
            corruption=_as_number(section.get("corruption", 0.0), f"{path}.corruption"),
        )
    except ConfigurationError:
        raise
    except CdkitError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def _parse_scorer_spec(section: dict, path: str) -> dict:
    kind = _as_str(_require(section, "kind", path), f"{path}.kind")
    if kind == "ngram":
        _check_keys(section, ("kind", "order", "smoothing_k", "train"), path)
        return {
            "kind": "ngram",
            "order": _as_int(_require(section, "order", path), f"{path}.order"),
            "smoothing_k": _as_number(_require(section, "smoothing_k", path), f"{path}.smoothing_k"),
            "train": _parse_train_spec(
                _as_dict(_require(section, "train", path), f"{path}.train"), f"{path}.train"
            ).__dict__,
        }
    if kind == "ngram-file":
        _check_keys(section, ("kind", "path"), path)
        return {"kind": "ngram-file", "path": _as_str(_require(section, "path", path), f"{path}.path")}
    if kind == "external":
        _check_keys(section, ("kind", "command", "parameter_count"), path)
        return {
            "kind": "external",
            "command": _as_str(_require(section, "command", path), f"{path}.command"),
            "parameter_count": _as_number(section.get("parameter_count", 0.0), f"{path}.parameter_count"),
        }
    raise ConfigurationError(f"{path}.kind: unknown scorer kind {kind!r}")


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a loaded config dict; unknown keys are rejected with field paths."""
    _check_keys(raw, (
        "schema_version", "seed", "output", "dataset", "scorers",
        "cd", "grid", "decode", "answer_pattern",
    ), "config")
    if _require(raw, "schema_version", "config") != CONFIG_SCHEMA_VERSION:
        raise ConfigurationError(
            f"config.schema_version: expected {CONFIG_SCHEMA_VERSION}, got {raw['schema_version']!r}"
        )
    seed = _as_seed(_require(raw, "seed", "config"), "config.seed")

    ds = _as_dict(_require(raw, "dataset", "config"), "config.dataset")
    _check_keys(ds, ("generator", "size", "seed", "shots", "shot_seed"), "config.dataset")
    generator = _as_str(_require(ds, "generator", "config.dataset"), "config.dataset.generator")
    if generator != "arithmetic":
        raise ConfigurationError(
            f"config.dataset.generator: evaluation datasets must be arithmetic, got {generator!r}"
        )
    ds_size = _as_int(_require(ds, "size", "config.dataset"), "config.dataset.size")
    if ds_size < 1:
        raise ConfigurationError("config.dataset.size: must be >= 1")
    ds_seed = _as_seed(_require(ds, "seed", "config.dataset"), "config.dataset.seed")
    shots = _as_int(ds.get("shots", 8), "config.dataset.shots")
    if shots < 0:
        raise ConfigurationError("config.dataset.shots: must be >= 0")
    shot_seed = _as_seed(ds.get("shot_seed", (ds_seed + 1) % _U64), "config.dataset.shot_seed")
    dataset = DatasetSection(generator, ds_size, ds_seed, shots, shot_seed)

    scorers = _as_dict(_require(raw, "scorers", "config"), "config.scorers")
    _check_keys(scorers, ("expert", "amateur", "negative_prefix"), "config.scorers")
    expert_spec = _parse_scorer_spec(
        _as_dict(_require(scorers, "expert", "config.scorers"), "config.scorers.expert"),
        "config.scorers.expert",
    )
    amateur_spec = None
    if scorers.get("amateur") is not None:
        amateur_spec = _parse_scorer_spec(
            _as_dict(scorers["amateur"], "config.scorers.amateur"), "config.scorers.amateur"
        )
    negative_prefix = None
    if scorers.get("negative_prefix") is not None:
        negative_prefix = _as_str(scorers["negative_prefix"], "config.scorers.negative_prefix")
    if amateur_spec is None and negative_prefix is None:
        raise ConfigurationError(
            "config.scorers: need an amateur, a negative_prefix (wrapping the expert), or both"
        )

    cd_section = _as_dict(raw.get("cd", {}), "config.cd")
    _check_keys(cd_section, (
        "alpha", "beta", "expert_temp", "amateur_temp", "output_temp", "formulation",
    ), "config.cd")
    try:
        cd = CdConfig(
            alpha=_as_number(cd_section.get("alpha", 0.1), "config.cd.alpha"),
            beta=_as_number(cd_section.get("beta", 0.5), "config.cd.beta"),
            expert_temp=_as_number(cd_section.get("expert_temp", 1.0), "config.cd.expert_temp"),
            amateur_temp=_as_number(cd_section.get("amateur_temp", 1.0), "config.cd.amateur_temp"),
            output_temp=_as_number(cd_section.get("output_temp", 1.0), "config.cd.output_temp"),
            formulation=_as_str(cd_section.get("formulation", "refactored"), "config.cd.formulation"),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"config.cd: {exc}") from exc

    grid = _as_dict(_require(raw, "grid", "config"), "config.grid")
    _check_keys(grid, ("methods", "betas", "ks"), "config.grid")
    methods = _require(grid, "methods", "config.grid")
    if not isinstance(methods, list) or not methods:
        raise ConfigurationError("config.grid.methods: expected a non-empty list")
    for i, method in enumerate(methods):
        if method not in GRID_METHODS:
            raise ConfigurationError(
                f"config.grid.methods[{i}]: unknown method {method!r}; choose from {GRID_METHODS}"
            )
    betas = grid.get("betas", [cd.beta])
    if not isinstance(betas, list) or not betas:
        raise ConfigurationError("config.grid.betas: expected a non-empty list")
    betas = [_as_number(b, f"config.grid.betas[{i}]") for i, b in enumerate(betas)]
    for i, beta in enumerate(betas):
        if beta < 0:
            raise ConfigurationError(f"config.grid.betas[{i}]: beta must be >= 0")
    ks = grid.get("ks", [1])
    if not isinstance(ks, list) or not ks:
        raise ConfigurationError("config.grid.ks: expected a non-empty list")
    ks = [_as_int(k, f"config.grid.ks[{i}]") for i, k in enumerate(ks)]
    for i, k in enumerate(ks):
        if k < 1:
            raise ConfigurationError(f"config.grid.ks[{i}]: k must be >= 1")

    decode_section = _as_dict(raw.get("decode", {}), "config.decode")
    _check_keys(decode_section, ("max_new_tokens", "temperature"), "config.decode")
    max_new_tokens = _as_int(decode_section.get("max_new_tokens", 12), "config.decode.max_new_tokens")
    if max_new_tokens < 1:
        raise ConfigurationError("config.decode.max_new_tokens: must be >= 1")
    temperature = _as_number(decode_section.get("temperature", 0.7), "config.decode.temperature")
    if not temperature > 0:
        raise ConfigurationError("config.decode.temperature: must be > 0")

    pattern_section = _as_dict(raw.get("answer_pattern", {"kind": "last-number"}), "config.answer_pattern")
    _check_keys(pattern_section, ("kind", "marker"), "config.answer_pattern")
    try:
        pattern = AnswerPattern(
            kind=_as_str(pattern_section.get("kind", "last-number"), "config.answer_pattern.kind"),
            marker=pattern_section.get("marker"),
        )
    except CdkitError as exc:
        raise ConfigurationError(f"config.answer_pattern: {exc}") from exc

    output = raw.get("output")
    if output is not None:
        output = _as_str(output, "config.output")
        if base_dir is not None and not Path(output).is_absolute():
            output = str(base_dir / output)

    resolved = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "seed": seed,
        "output": raw.get("output"),
        "dataset": dataset.__dict__,
        "scorers": {
            "expert": expert_spec,
            "amateur": amateur_spec,
            "negative_prefix": negative_prefix,
        },
        "cd": {
            "alpha": cd.alpha, "beta": cd.beta, "expert_temp": cd.expert_temp,
            "amateur_temp": cd.amateur_temp, "output_temp": cd.output_temp,
            "formulation": cd.formulation,
        },
        "grid": {"methods": list(methods), "betas": betas, "ks": ks},
        "decode": {"max_new_tokens": max_new_tokens, "temperature": temperature},
        "answer_pattern": {"kind": pattern.kind, "marker": pattern.marker},
    }
    return ExperimentConfig(
        seed=seed,
        output=output,
        dataset=dataset,
        expert_spec=expert_spec,
        amateur_spec=amateur_spec,
        negative_prefix=negative_prefix,
        cd=cd,
        methods=tuple(methods),
        betas=tuple(betas),
        ks=tuple(ks),
        max_new_tokens=max_new_tokens,
        temperature=temperature,
        pattern=pattern,
        resolved=resolved,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file is not valid JSON: {path} ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config root must be a JSON object: {path}")
    return parse_config(raw, base_dir=path.parent)


def _build_scorer(spec: dict, vocab: Vocabulary) -> Scorer:
    if spec["kind"] == "ngram":
        corpus = build_training_corpus(CorpusSpec(**spec["train"]), vocab)
        return train_ngram(corpus, vocab, order=spec["order"], smoothing_k=spec["smoothing_k"])
    if spec["kind"] == "ngram-file":
        return load_ngram(spec["path"])
    return ExternalScorer(spec["command"], vocab, parameter_count=spec["parameter_count"])


@dataclass(frozen=True)
class Resources:
    """Everything a grid cell needs, built once per run."""

    vocab: Vocabulary
    expert: Scorer
    amateur: Scorer
    problems: list[ArithmeticProblem]
    prompts: list[TokenSequence]
    golds: list[str]
    stop: frozenset[int]


def build_scorers(config: ExperimentConfig) -> tuple[Vocabulary, Scorer, Scorer]:
    """Construct the expert/amateur pair a config describes."""
    vocab = arithmetic_vocabulary()
    expert = _build_scorer(config.expert_spec, vocab)
    if config.amateur_spec is not None:
        amateur = _build_scorer(config.amateur_spec, vocab)
    else:
        amateur = expert
    if config.negative_prefix is not None:
        amateur = with_prefix(amateur, vocab.encode_chars(config.negative_prefix, add_bos=False))
    return vocab, expert, amateur


def build_resources(config: ExperimentConfig) -> Resources:
    vocab, expert, amateur = build_scorers(config)
    problems = gen_arithmetic(CorpusSpec("arithmetic", config.dataset.size, config.dataset.seed))
    prompts = []
    if config.dataset.shots > 0:
        pool = gen_arithmetic(CorpusSpec(
            "arithmetic", config.dataset.shots + 8, config.dataset.shot_seed
        ))
    else:
        pool = []
    for problem in problems:
        shown = [p for p in pool if p.expression != problem.expression][:config.dataset.shots]
        prompts.append(build_fewshot_prompt(shown, config.dataset.shots, problem, vocab))
    golds = [p.answer for p in problems]
    stop = frozenset({vocab.token_to_id("\n"), vocab.eos_id})
    return Resources(vocab, expert, amateur, problems, prompts, golds, stop)


def strategy_for(config: ExperimentConfig, method: str, beta: float) -> Strategy:
    cd = replace(config.cd, beta=beta)
    if method == "greedy":
        return Greedy()
    if method == "sample":
        return Sample(temperature=config.temperature)
    if method == "mask_only":
        return CdSample(cfg=replace(cd, beta=0.0), remask=True)
    if method == "cd_greedy":
        return CdGreedy(cfg=cd)
    if method == "cd_sample":
        return CdSample(cfg=cd, remask=True)
    raise UsageError(f"unknown grid method {method!r}")


def cell_seed(master_seed: int, method: str, beta: float, k: int) -> int:
    """Stable per-cell seed; independent of the cell's position in the grid."""
    material = json.dumps([master_seed, method, repr(float(beta)), k], separators=(",", ":"))
    return int.from_bytes(hashlib.sha256(material.encode("utf-8")).digest()[:8], "big")


def evaluate_cell(
    resources: Resources, config: ExperimentConfig, method: str, beta: float, k: int
) -> dict[str, float]:
    """Run maj@k for one grid cell; returns the cell's metric values."""
    strategy = strategy_for(config, method, beta)
    seed = cell_seed(config.seed, method, beta, k)
    correct = 0
    valid_paths = 0
    total_chars = 0
    for index, (prompt, gold) in enumerate(zip(resources.prompts, resources.golds)):
        result = self_consistency(
            expert=resources.expert,
            prompt=prompt,
            k=k,
            strategy=strategy,
            seed=derive_key(seed, index),
            pattern=config.pattern,
            amateur=resources.amateur,
            max_new_tokens=config.max_new_tokens,
            stop=resources.stop,
        )
        if result.vote.winner != "" and result.vote.winner == canonical_number(gold):
            correct += 1
        valid_paths += result.vote.valid_paths
        total_chars += sum(
            len(resources.vocab.decode(r.continuation.ids))
            for r in result.records
            if isinstance(r, GenerationRecord)
        )
    n = len(resources.prompts)
    return {
        "accuracy": correct / n,
        "parseable_fraction": valid_paths / (n * k),
        "mean_chars": total_chars / (n * k),
    }


def _prior_rerun(output: Path, fingerprint: str) -> int:
    if not output.exists():
        return 0
    last = -1
    for line in output.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"existing results file is corrupt: {output} ({exc})") from exc
        if row.get("fingerprint") == fingerprint:
            last = max(last, int(row.get("rerun", 0)))
    return last + 1


def run_experiment(
    config_path: str | Path, jobs: int = 1, output: str | Path | None = None
) -> list[dict]:
    """Run every grid cell and append one JSONL row per cell per metric.

    Cells may execute concurrently (``jobs``); rows are written in grid
    order regardless.  A failing cell contributes a failed row and the run
    continues.  Returns the rows written.
    """
    if jobs < 1:
        raise UsageError(f"jobs must be >= 1, got {jobs!r}")
    config = load_config(config_path)
    out_path = Path(output) if output is not None else (
        Path(config.output) if config.output else None
    )
    if out_path is None:
        raise UsageError("no output path: set config.output or pass one explicitly")
    resources = build_resources(config)
    try:
        return _run_cells(config, resources, out_path, jobs)
    finally:
        for scorer in (resources.expert, resources.amateur):
            if isinstance(scorer, ExternalScorer):
                scorer.close()


def _run_cells(
    config: ExperimentConfig, resources: Resources, out_path: Path, jobs: int
) -> list[dict]:
    fingerprint = config.fingerprint
    rerun = _prior_rerun(out_path, fingerprint)

    cells = [
        (method, beta, k)
        for method in config.methods
        for beta in config.betas
        for k in config.ks
    ]

    def run_cell(cell):
        method, beta, k = cell
        started = time.perf_counter()
        try:
            metrics = evaluate_cell(resources, config, method, beta, k)
            status, error = "ok", None
        except CdkitError as exc:
            metrics = {metric: None for metric in CELL_METRICS}
            status, error = "failed", str(exc)
        elapsed = time.perf_counter() - started
        return [
            {
                "schema_version": RESULTS_FORMAT_VERSION,
                "fingerprint": fingerprint,
                "method": method,
                "beta": beta,
                "k": k,
                "metric": metric,
                "value": value,
                "wall_clock": elapsed,
                "engine_version": __version__,
                "rerun": rerun,
                "status": status,
                "error": error,
            }
            for metric, value in metrics.items()
        ]

    if jobs == 1:
        per_cell = [run_cell(cell) for cell in cells]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_cell = list(pool.map(run_cell, cells))

    rows = [row for cell_rows in per_cell for row in cell_rows]
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "a", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    return rows
