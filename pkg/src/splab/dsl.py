"""Prefix-notation integer micro-language used as the verifiable task environment.

Grammar (one complete prefix expression per program):

    P := X | C-3..C3 | NEG P | ADD P P | SUB P P | MUL P P
       | MIN P P | MAX P P | IFPOS P P P | COIN

``X`` is the task input, ``Ck`` the integer constant k, and ``IFPOS a b c``
evaluates ``b`` when ``a > 0`` and ``c`` otherwise (the untaken branch is
never executed).  ``COIN`` draws 0 or 1 from the evaluation seed and is the
only nondeterministic opcode; the proposal validator rejects programs that
contain it.

Execution is total: interpreter failures surface as :class:`ExecOutcome`
status codes, never exceptions.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

PROGRAM_MAX_TOKENS = 16
STEP_LIMIT = 64
EXEC_BOUND = 9999  # interpreter values must stay within [-EXEC_BOUND, EXEC_BOUND]
TASK_BOUND = 9     # task-facing inputs/outputs live in [-TASK_BOUND, TASK_BOUND]

CONSTANT_TOKENS = {f"C{k}": k for k in range(-3, 4)}

# Token -> number of operands.
ARITY: dict[str, int] = {
    "X": 0,
    "COIN": 0,
    **{name: 0 for name in CONSTANT_TOKENS},
    "NEG": 1,
    "ADD": 2,
    "SUB": 2,
    "MUL": 2,
    "MIN": 2,
    "MAX": 2,
    "IFPOS": 3,
}

# Canonical alphabet order; also the order used by the policy vocabulary.
PROGRAM_TOKENS: tuple[str, ...] = (
    "X", "C-3", "C-2", "C-1", "C0", "C1", "C2", "C3",
    "NEG", "ADD", "SUB", "MUL", "MIN", "MAX", "IFPOS", "COIN",
)

# Seeds used for the validator's double execution. Distinct on purpose so a
# COIN flip has a real chance to disagree between the two runs.
_VALIDATION_SEEDS = (11, 22)


class ValueKind(Enum):
    INT = "int"


@dataclass(frozen=True)
class Value:
    """A typed task value. Equality is type-aware: kind and payload must match."""

    kind: ValueKind
    payload: int

    def __str__(self) -> str:
        return str(self.payload)


def int_value(n: int) -> Value:
    return Value(ValueKind.INT, n)


class ExecStatus(Enum):
    OK = "ok"
    OVERFLOW = "overflow"
    ILLEGAL_TOKEN = "illegal_token"
    STEP_LIMIT = "step_limit"
    NONDETERMINISTIC = "nondeterministic"


@dataclass(frozen=True)
class ExecOutcome:
    status: ExecStatus
    value: Value | None
    steps: int

    @property
    def ok(self) -> bool:
        return self.status is ExecStatus.OK


@dataclass(frozen=True)
class Program:
    """A parsed program: a complete prefix expression of at most 16 tokens."""

    tokens: tuple[str, ...]

    def __str__(self) -> str:
        return " ".join(self.tokens)


class ProgramSyntaxError(ValueError):
    """Raised by :func:`parse`; ``position`` is the offending token index."""

    def __init__(self, position: int, reason: str):
        super().__init__(f"at token {position}: {reason}")
        self.position = position
        self.reason = reason


def parse(tokens: Sequence[str]) -> Program:
    """Parse a token sequence into a Program.

    Accepts exactly one complete prefix expression with no trailing tokens,
    at most PROGRAM_MAX_TOKENS long. Raises ProgramSyntaxError otherwise.
    """
    if len(tokens) > PROGRAM_MAX_TOKENS:
        raise ProgramSyntaxError(PROGRAM_MAX_TOKENS, "program longer than 16 tokens")
    needed = 1
    for pos, tok in enumerate(tokens):
        if needed == 0:
            raise ProgramSyntaxError(pos, "trailing token after complete expression")
        if tok not in ARITY:
            raise ProgramSyntaxError(pos, f"unknown token {tok!r}")
        needed += ARITY[tok] - 1
    if needed > 0:
        raise ProgramSyntaxError(len(tokens), "incomplete expression")
    return Program(tuple(tokens))


class _Abort(Exception):
    def __init__(self, status: ExecStatus):
        self.status = status


def _subtree_end(tokens: tuple[str, ...], idx: int) -> int:
    """Index one past the subtree rooted at idx (no evaluation, no steps)."""
    needed = 1
    while needed > 0:
        if idx >= len(tokens):
            raise _Abort(ExecStatus.ILLEGAL_TOKEN)
        needed += ARITY.get(tokens[idx], 0) - 1
        idx += 1
    return idx


def evaluate(program: Program, input_value: Value, seed: int = 0) -> ExecOutcome:
    """Run a program on one input.

    Deterministic for COIN-free programs regardless of seed. Any intermediate
    value outside [-EXEC_BOUND, EXEC_BOUND] yields an OVERFLOW outcome; more
    than STEP_LIMIT node evaluations yields STEP_LIMIT. Never raises for a
    parseable program.
    """
    tokens = program.tokens
    rng = random.Random(seed)
    steps = 0

    def check(v: int) -> int:
        if v < -EXEC_BOUND or v > EXEC_BOUND:
            raise _Abort(ExecStatus.OVERFLOW)
        return v

    def eval_at(idx: int) -> tuple[int, int]:
        nonlocal steps
        steps += 1
        if steps > STEP_LIMIT:
            raise _Abort(ExecStatus.STEP_LIMIT)
        if idx >= len(tokens):
            raise _Abort(ExecStatus.ILLEGAL_TOKEN)
        tok = tokens[idx]
        if tok == "X":
            return check(input_value.payload), idx + 1
        if tok in CONSTANT_TOKENS:
            return CONSTANT_TOKENS[tok], idx + 1
        if tok == "COIN":
            return rng.getrandbits(1), idx + 1
        if tok == "NEG":
            v, nxt = eval_at(idx + 1)
            return check(-v), nxt
        if tok in ("ADD", "SUB", "MUL", "MIN", "MAX"):
            a, mid = eval_at(idx + 1)
            b, nxt = eval_at(mid)
            if tok == "ADD":
                v = a + b
            elif tok == "SUB":
                v = a - b
            elif tok == "MUL":
                v = a * b
            elif tok == "MIN":
                v = min(a, b)
            else:
                v = max(a, b)
            return check(v), nxt
        if tok == "IFPOS":
            cond, b_idx = eval_at(idx + 1)
            c_idx = _subtree_end(tokens, b_idx)
            if cond > 0:
                v, _ = eval_at(b_idx)
            else:
                v, _ = eval_at(c_idx)
            return v, _subtree_end(tokens, c_idx)
        raise _Abort(ExecStatus.ILLEGAL_TOKEN)

    try:
        v, nxt = eval_at(0)
        if nxt != len(tokens):
            raise _Abort(ExecStatus.ILLEGAL_TOKEN)
        return ExecOutcome(ExecStatus.OK, int_value(v), steps)
    except _Abort as abort:
        return ExecOutcome(abort.status, None, steps)


def evaluate_twice(program: Program, input_value: Value) -> ExecOutcome:
    """Run under two distinct seeds; NONDETERMINISTIC if the runs disagree."""
    first = evaluate(program, input_value, seed=_VALIDATION_SEEDS[0])
    second = evaluate(program, input_value, seed=_VALIDATION_SEEDS[1])
    if first != second:
        return ExecOutcome(ExecStatus.NONDETERMINISTIC, None, max(first.steps, second.steps))
    return first


@dataclass
class ValidationReport:
    """Outcome of the proposal validation pipeline. Failures are flags, not errors."""

    syntax_ok: bool
    safety_ok: bool
    deterministic: bool
    output_in_range: bool
    triplet: "object | None"  # tasks.Triplet when all four flags hold

    @property
    def passed(self) -> bool:
        return self.syntax_ok and self.safety_ok and self.deterministic and self.output_in_range


def validate_proposal(
    p_tokens: Sequence[str], input_value: Value, created_iter: int = 0
) -> ValidationReport:
    """Validate a proposed (program tokens, input) pair.

    Checks, in report-flag form: syntax (parses), safety (no COIN token),
    determinism (two executions under distinct seeds agree and succeed), and
    output range (result within the task literal range). A Triplet is
    attached iff all four checks pass.
    """
    if abs(input_value.payload) > TASK_BOUND:
        raise ValueError(f"proposal input {input_value.payload} outside task literal range")
    safety_ok = "COIN" not in p_tokens
    try:
        program = parse(p_tokens)
    except ProgramSyntaxError:
        return ValidationReport(False, safety_ok, False, False, None)
    outcome = evaluate_twice(program, input_value)
    deterministic = outcome.ok
    output_in_range = outcome.ok and abs(outcome.value.payload) <= TASK_BOUND
    triplet = None
    if safety_ok and deterministic and output_in_range:
        from .tasks import Triplet  # deferred: tasks depends on this module

        triplet = Triplet(program, input_value, outcome.value, created_iter)
    return ValidationReport(True, safety_ok, deterministic, output_in_range, triplet)
