"""Task construction, verification and buffering for the three reasoning modes.

A validated (program, input, output) triplet is the unit of the curriculum.
Deduction asks for the output given program and input, abduction asks for any
input that reproduces the output, and induction asks for a program that fits
two visible input/output pairs and is additionally checked on two held-out
pairs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

from . import vocab
from .dsl import (
    TASK_BOUND,
    Program,
    ProgramSyntaxError,
    Value,
    evaluate,
    int_value,
    parse,
)

BUFFER_CAPACITY = 512
INDUCTION_PAIRS = 4
INDUCTION_VISIBLE = 2
INDUCTION_MAX_ATTEMPTS = 50

# Seed for answer verification; only matters for programs containing COIN,
# which the validator already rejects from the curriculum.
_VERIFY_SEED = 0


class TaskMode(Enum):
    DEDUCTION = "deduction"
    ABDUCTION = "abduction"
    INDUCTION = "induction"

    @property
    def prefix_token(self) -> int:
        return _MODE_PREFIX[self]


_MODE_PREFIX = {
    TaskMode.DEDUCTION: vocab.MODE_DED,
    TaskMode.ABDUCTION: vocab.MODE_ABD,
    TaskMode.INDUCTION: vocab.MODE_IND,
}


class Difficulty(Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"

    @property
    def token(self) -> int:
        return _DIFF_TOKEN[self]


_DIFF_TOKEN = {
    Difficulty.EASY: vocab.DIFF_E,
    Difficulty.MEDIUM: vocab.DIFF_M,
    Difficulty.HARD: vocab.DIFF_H,
}


def difficulty_for_rate(solve_rate: float) -> Difficulty:
    """Bucket a solve rate: >=0.75 easy, <=0.25 hard, medium in between."""
    if solve_rate >= 0.75:
        return Difficulty.EASY
    if solve_rate <= 0.25:
        return Difficulty.HARD
    return Difficulty.MEDIUM


@dataclass
class Triplet:
    """A validated task record: evaluate(program, input) == Ok(output)."""

    program: Program
    input: Value
    output: Value
    created_iter: int = 0
    difficulty: Difficulty = Difficulty.MEDIUM

    @property
    def key(self) -> tuple[tuple[str, ...], int]:
        return (self.program.tokens, self.input.payload)


def zero_triplet() -> Triplet:
    """The trivial identity task used to seed every buffer."""
    return Triplet(Program(("X",)), int_value(0), int_value(0), created_iter=0)


class InductionInfeasible(Exception):
    """Raised when four valid distinct induction inputs cannot be found."""


@dataclass
class TaskInstance:
    mode: TaskMode
    prompt_tokens: tuple[int, ...]
    gold: Triplet
    visible_pairs: tuple[tuple[Value, Value], ...] = ()
    holdout_pairs: tuple[tuple[Value, Value], ...] = ()


class Buffer:
    """Per-mode FIFO triplet store, deduplicated by (program tokens, input)."""

    def __init__(self, mode: TaskMode, capacity: int = BUFFER_CAPACITY):
        self.mode = mode
        self.capacity = capacity
        self._items: dict[tuple, Triplet] = {}

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Triplet]:
        return iter(self._items.values())

    def add(self, triplet: Triplet) -> bool:
        """Insert unless a duplicate key exists; evict oldest beyond capacity."""
        if triplet.key in self._items:
            return False
        self._items[triplet.key] = triplet
        while len(self._items) > self.capacity:
            oldest = next(iter(self._items))
            del self._items[oldest]
        return True

    def sample(self, rng: random.Random) -> Triplet:
        return rng.choice(list(self._items.values()))

    def save(self, path: Path) -> None:
        lines = [
            f"{t.program} | {t.input.payload} | {t.output.payload} | {t.created_iter}"
            for t in self
        ]
        path.write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, mode: TaskMode, path: Path, capacity: int = BUFFER_CAPACITY) -> "Buffer":
        buf = cls(mode, capacity)
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            program = parse(parts[0].split())
            buf.add(
                Triplet(program, int_value(int(parts[1])), int_value(int(parts[2])), int(parts[3]))
            )
        return buf


def seed_buffers() -> dict[TaskMode, Buffer]:
    """One buffer per mode, each seeded with the zero triplet."""
    buffers = {}
    for mode in TaskMode:
        buf = Buffer(mode)
        buf.add(zero_triplet())
        buffers[mode] = buf
    return buffers


def _program_prompt_ids(program: Program) -> list[int]:
    return [vocab.token_id(tok) for tok in program.tokens]


def make_task(mode: TaskMode, triplet: Triplet, rng: random.Random) -> TaskInstance:
    """Present a triplet to the solver in its mode-specific prompt form.

    Deduction encodes (program, input); abduction encodes (program, output);
    induction samples four distinct inputs with valid in-range outputs, shows
    two pairs in the prompt and holds two out. Raises InductionInfeasible
    after INDUCTION_MAX_ATTEMPTS failed draws.
    """
    if mode is TaskMode.DEDUCTION:
        prompt = (
            [vocab.MODE_DED]
            + _program_prompt_ids(triplet.program)
            + [vocab.SEP, vocab.literal_id(triplet.input.payload), vocab.GO]
        )
        return TaskInstance(mode, tuple(prompt), triplet)
    if mode is TaskMode.ABDUCTION:
        prompt = (
            [vocab.MODE_ABD]
            + _program_prompt_ids(triplet.program)
            + [vocab.SEP, vocab.literal_id(triplet.output.payload), vocab.GO]
        )
        return TaskInstance(mode, tuple(prompt), triplet)

    for _ in range(INDUCTION_MAX_ATTEMPTS):
        inputs = rng.sample(range(-TASK_BOUND, TASK_BOUND + 1), INDUCTION_PAIRS)
        pairs = []
        for x in inputs:
            outcome = evaluate(triplet.program, int_value(x), seed=_VERIFY_SEED)
            if not outcome.ok or abs(outcome.value.payload) > TASK_BOUND:
                break
            pairs.append((int_value(x), outcome.value))
        if len(pairs) != INDUCTION_PAIRS:
            continue
        visible = tuple(pairs[:INDUCTION_VISIBLE])
        holdout = tuple(pairs[INDUCTION_VISIBLE:])
        prompt = [vocab.MODE_IND]
        for i, (x, y) in enumerate(visible):
            if i:
                prompt.append(vocab.SEP)
            prompt += [vocab.literal_id(x.payload), vocab.SEP, vocab.literal_id(y.payload)]
        prompt.append(vocab.GO)
        return TaskInstance(mode, tuple(prompt), triplet, visible, holdout)
    raise InductionInfeasible(f"no 4 valid distinct inputs for {triplet.program}")


def verify_answer(task: TaskInstance, payload: Sequence[int]) -> bool:
    """Check a format-parsed answer payload (vocab token ids) against the task.

    Deduction: the literal must equal the gold output under type-aware
    equality. Abduction: the literal, run through the gold program, must
    reproduce the gold output. Induction: the payload must parse as a program
    that matches every visible and held-out pair.
    """
    if task.mode is TaskMode.DEDUCTION:
        answer = int_value(vocab.literal_value(payload[0]))
        return answer == task.gold.output
    if task.mode is TaskMode.ABDUCTION:
        candidate = int_value(vocab.literal_value(payload[0]))
        outcome = evaluate(task.gold.program, candidate, seed=_VERIFY_SEED)
        return outcome.ok and outcome.value == task.gold.output
    try:
        candidate = parse([vocab.token_name(tid) for tid in payload])
    except ProgramSyntaxError:
        return False
    for x, y in task.visible_pairs + task.holdout_pairs:
        outcome = evaluate(candidate, x, seed=_VERIFY_SEED)
        if not outcome.ok or outcome.value != y:
            return False
    return True


def backfill(
    new_triplets: Sequence[Triplet], buffer: Buffer, want: int, rng: random.Random
) -> list[Triplet]:
    """Top a batch up to exactly `want` triplets.

    Fresh valid proposals come first; the remainder is drawn uniformly (with
    replacement) from the buffer, which is never empty.
    """
    if want < 1:
        raise ValueError("want must be >= 1")
    out = list(new_triplets[:want])
    while len(out) < want:
        out.append(buffer.sample(rng))
    return out
