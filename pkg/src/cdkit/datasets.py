"""Deterministic toy datasets: arithmetic problems and corpus builders.

Everything here is a pure function of a CorpusSpec.  Each example draws
from its own forked RNG stream, so changing the corruption rate perturbs
answers without reshuffling the operands.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import DataError, UsageError, ValidationError
from .rng import Stream, derive_key
from .scorers import TokenSequence, Vocabulary

GENERATORS = ("arithmetic", "template-text")
OPS = ("*", "-")
MAX_OPERAND = 9999

PROBLEMS_FORMAT_VERSION = 1

# Stream-domain tags so dataset draws never collide with decode draws.
_ARITH_TAG = 0x41521
_TEXT_TAG = 0x7E247

_ANSWER_RE = re.compile(r"-?\d+")

ARITHMETIC_TOKENS = (
    "<s>", "</s>",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    " ", "*", "-", "=", "\n",
)


def arithmetic_vocabulary() -> Vocabulary:
    """Character-level vocabulary covering rendered arithmetic lines."""
    return Vocabulary(id="arithmetic-char-v1", tokens=ARITHMETIC_TOKENS, bos_id=0, eos_id=1)


@dataclass(frozen=True)
class ArithmeticProblem:
    expression: str  # "4821 - 907 ="
    answer: str  # exact integer, possibly deliberately wrong in corrupted corpora
    op: str
    operands: tuple[int, int]

    def __post_init__(self):
        if self.op not in OPS:
            raise ValidationError(f"op must be one of {OPS}, got {self.op!r}")
        a, b = self.operands
        for value in (a, b):
            if not (0 <= value <= MAX_OPERAND):
                raise ValidationError(f"operands must lie in [0, {MAX_OPERAND}], got {value}")
        if self.expression != f"{a} {self.op} {b} =":
            raise ValidationError(f"expression does not match operands: {self.expression!r}")
        if not _ANSWER_RE.fullmatch(self.answer):
            raise ValidationError(f"answer must be an integer string, got {self.answer!r}")
        object.__setattr__(self, "operands", (int(a), int(b)))

    @property
    def true_answer(self) -> int:
        a, b = self.operands
        return a * b if self.op == "*" else a - b


@dataclass(frozen=True)
class CorpusSpec:
    generator: str
    size: int
    seed: int
    corruption: float = 0.0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValidationError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.size < 1:
            raise UsageError(f"size must be >= 1, got {self.size!r}")
        if not (0 <= self.seed < 2 ** 64):
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if not (0.0 <= self.corruption <= 1.0):
            raise ValidationError(f"corruption must lie in [0, 1], got {self.corruption!r}")


def gen_arithmetic(spec: CorpusSpec) -> list[ArithmeticProblem]:
    """Deterministic multiplication/subtraction problems with exact answers.

    With corruption > 0 the affected examples get an answer shifted by a
    small nonzero offset; clean examples are verified against exact integer
    arithmetic before they are emitted.
    """
    if spec.generator != "arithmetic":
        raise UsageError(f"gen_arithmetic needs an arithmetic spec, got {spec.generator!r}")
    problems = []
    for i in range(spec.size):
        stream = Stream(derive_key(spec.seed, _ARITH_TAG, i))
        op = OPS[stream.next_int(0, 1)]
        a = stream.next_int(0, MAX_OPERAND)
        b = stream.next_int(0, MAX_OPERAND)
        true = a * b if op == "*" else a - b
        corrupted = stream.next_uniform() < spec.corruption
        answer = true
        if corrupted:
            offset = stream.next_int(1, 9)
            if stream.next_int(0, 1) == 1:
                offset = -offset
            answer = true + offset
        problem = ArithmeticProblem(
            expression=f"{a} {op} {b} =", answer=str(answer), op=op, operands=(a, b)
        )
        if not corrupted and problem.true_answer != int(problem.answer):
            raise DataError(f"generated answer failed verification: {problem!r}")
        problems.append(problem)
    return problems


_TEMPLATES = (
    "{a} {b}",
    "{a} {op} {b}",
    "= {a} =",
    "{a}",
)


def gen_template_text(spec: CorpusSpec) -> list[str]:
    """Filler text lines over the arithmetic character set.

    Digit-heavy but structurally unlike solved equations; used to train
    deliberately off-task amateur scorers.  Corruption is ignored here.
    """
    if spec.generator != "template-text":
        raise UsageError(f"gen_template_text needs a template-text spec, got {spec.generator!r}")
    lines = []
    for i in range(spec.size):
        stream = Stream(derive_key(spec.seed, _TEXT_TAG, i))
        template = _TEMPLATES[stream.next_int(0, len(_TEMPLATES) - 1)]
        lines.append(template.format(
            a=stream.next_int(0, MAX_OPERAND),
            b=stream.next_int(0, MAX_OPERAND),
            op=OPS[stream.next_int(0, 1)],
        ))
    return lines


def solved_line(problem: ArithmeticProblem) -> str:
    """One training/prompt line: expression, answer, newline."""
    return f"{problem.expression} {problem.answer}\n"


def build_fewshot_prompt(
    problems: Sequence[ArithmeticProblem],
    shots: int,
    target: ArithmeticProblem,
    vocab: Vocabulary | None = None,
) -> TokenSequence:
    """Solved example lines followed by the target's unanswered stem."""
    if shots > len(problems):
        raise UsageError(f"asked for {shots} shots but only {len(problems)} problems available")
    if shots < 0:
        raise UsageError(f"shots must be >= 0, got {shots!r}")
    shown = problems[:shots]
    if any(p.expression == target.expression for p in shown):
        raise UsageError(f"target appears among the shots: {target.expression!r}")
    vocab = vocab or arithmetic_vocabulary()
    text = "".join(solved_line(p) for p in shown) + target.expression
    return vocab.encode_chars(text, add_bos=True)


def build_training_corpus(spec: CorpusSpec, vocab: Vocabulary | None = None) -> list[TokenSequence]:
    """Token sequences (BOS ... EOS) for n-gram training, one per line."""
    vocab = vocab or arithmetic_vocabulary()
    if spec.generator == "arithmetic":
        texts = [solved_line(p) for p in gen_arithmetic(spec)]
    else:
        texts = [line + "\n" for line in gen_template_text(spec)]
    corpus = []
    for text in texts:
        encoded = vocab.encode_chars(text, add_bos=True)
        corpus.append(TokenSequence(vocab.id, encoded.ids + (vocab.eos_id,)))
    return corpus


def save_problems(problems: Sequence[ArithmeticProblem], path: str | Path) -> None:
    """JSON-lines, one problem per line: {expression, answer, op, operands}."""
    with open(path, "w", encoding="utf-8") as handle:
        for problem in problems:
            handle.write(json.dumps({
                "schema_version": PROBLEMS_FORMAT_VERSION,
                "expression": problem.expression,
                "answer": problem.answer,
                "op": problem.op,
                "operands": list(problem.operands),
            }) + "\n")


def load_problems(path: str | Path) -> list[ArithmeticProblem]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"problem file not found: {path}")
    problems = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        if row.get("schema_version") != PROBLEMS_FORMAT_VERSION:
            raise DataError(f"{path}:{lineno}: unsupported problem schema version")
        try:
            problems.append(ArithmeticProblem(
                expression=str(row["expression"]),
                answer=str(row["answer"]),
                op=str(row["op"]),
                operands=(int(row["operands"][0]), int(row["operands"][1])),
            ))
        except (KeyError, IndexError, TypeError, ValidationError) as exc:
            raise DataError(f"{path}:{lineno}: malformed problem record ({exc})") from exc
    if not problems:
        raise DataError(f"problem file contains no problems: {path}")
    return problems
