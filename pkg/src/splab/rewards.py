"""Reward functions and completion classification for both roles.

The proposer earns a learnability reward shaped by the solver's Monte-Carlo
solve rate on the proposed task; the solver earns a binary correctness
reward. Both are composed with a format-aware penalty: a passable completion
keeps its role reward, a well-formatted but wrong/invalid one is penalized
at -0.5, and a formatting error at -1.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from . import vocab
from .dsl import ProgramSyntaxError, int_value, parse, validate_proposal
from .policy import PolicyParams, SampleTrace, sample
from .tasks import (
    TaskInstance,
    TaskMode,
    Triplet,
    difficulty_for_rate,
    make_task,
    verify_answer,
)


class Passability(Enum):
    """Format-aware completion classes shared by both roles."""

    PASSABLE = "passable"
    WRONG_WELL_FORMATTED = "wrong_well_formatted"
    FORMAT_ERROR = "format_error"


class SolveOutcome(Enum):
    FORMAT_ERROR = "format_error"
    WRONG_BUT_FORMATTED = "wrong_but_formatted"
    CORRECT = "correct"

    @property
    def passability(self) -> Passability:
        if self is SolveOutcome.CORRECT:
            return Passability.PASSABLE
        if self is SolveOutcome.WRONG_BUT_FORMATTED:
            return Passability.WRONG_WELL_FORMATTED
        return Passability.FORMAT_ERROR


class ProposalOutcome(Enum):
    FORMAT_ERROR = "format_error"
    INVALID = "invalid"  # parsed, but rejected by the validation pipeline
    VALID = "valid"

    @property
    def passability(self) -> Passability:
        if self is ProposalOutcome.VALID:
            return Passability.PASSABLE
        if self is ProposalOutcome.INVALID:
            return Passability.WRONG_WELL_FORMATTED
        return Passability.FORMAT_ERROR


@dataclass
class RewardConfig:
    proposer_variant: str = "learnability"  # or "peak_half"
    n_mc: int = 8
    format_penalty: float = -1.0
    wrong_penalty: float = -0.5

    def __post_init__(self):
        if self.proposer_variant not in ("learnability", "peak_half"):
            raise ValueError(f"unknown proposer variant {self.proposer_variant!r}")
        if self.n_mc < 2:
            raise ValueError("n_mc must be >= 2")

    def propose_reward(self, solve_rate: float) -> float:
        if self.proposer_variant == "learnability":
            return propose_reward_learnability(solve_rate)
        return propose_reward_peak(solve_rate)


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"solve rate {rate} outside [0, 1]")


def propose_reward_learnability(rate: float) -> float:
    """0 at solve rates 0 and 1, otherwise 1 - rate."""
    _check_rate(rate)
    if rate == 0.0 or rate == 1.0:
        return 0.0
    return 1.0 - rate


def propose_reward_peak(rate: float) -> float:
    """0 at solve rates 0 and 1, otherwise peaked at 0.5: 1 - 2|rate - 0.5|."""
    _check_rate(rate)
    if rate == 0.0 or rate == 1.0:
        return 0.0
    return 1.0 - 2.0 * abs(rate - 0.5)


def solve_reward(outcome: SolveOutcome) -> float:
    """Binary correctness indicator, before format composition."""
    return 1.0 if outcome is SolveOutcome.CORRECT else 0.0


def compose_reward(role_reward: float, passability: Passability, cfg: RewardConfig) -> float:
    if passability is Passability.PASSABLE:
        return role_reward
    if passability is Passability.WRONG_WELL_FORMATTED:
        return cfg.wrong_penalty
    return cfg.format_penalty


def split_answer_payload(trace: SampleTrace) -> tuple[int, ...] | None:
    """Extract the payload from an `ANSWER payload END` completion, else None."""
    completion = trace.completion
    if trace.truncated or len(completion) < 3:
        return None
    if completion[0] != vocab.ANSWER or completion[-1] != vocab.END:
        return None
    payload = completion[1:-1]
    if not payload:
        return None
    return payload


def classify_solver_completion(trace: SampleTrace, task: TaskInstance) -> SolveOutcome:
    """Format-check a solver trace, then verify its payload against the task."""
    payload = split_answer_payload(trace)
    if payload is None:
        return SolveOutcome.FORMAT_ERROR
    if task.mode in (TaskMode.DEDUCTION, TaskMode.ABDUCTION):
        if len(payload) != 1 or not vocab.is_literal(payload[0]):
            return SolveOutcome.FORMAT_ERROR
    else:
        names = [vocab.token_name(t) for t in payload]
        try:
            parse(names)
        except ProgramSyntaxError:
            return SolveOutcome.FORMAT_ERROR
    return SolveOutcome.CORRECT if verify_answer(task, payload) else SolveOutcome.WRONG_BUT_FORMATTED


def split_proposer_completion(trace: SampleTrace) -> tuple[list[str], int] | None:
    """Extract (program token names, input value) from `program SEP literal END`."""
    completion = trace.completion
    if trace.truncated or len(completion) < 4:
        return None
    if completion[-1] != vocab.END or completion[-3] != vocab.SEP:
        return None
    if not vocab.is_literal(completion[-2]):
        return None
    program_part = completion[:-3]
    program_ids = set(vocab.PROGRAM_IDS)
    if not program_part or any(t not in program_ids for t in program_part):
        return None
    names = [vocab.token_name(t) for t in program_part]
    return names, vocab.literal_value(completion[-2])


def classify_proposal(
    trace: SampleTrace, created_iter: int = 0
) -> tuple[ProposalOutcome, Triplet | None]:
    """Classify a proposer trace and build its triplet when fully valid.

    An unparsable completion or program is a FORMAT_ERROR; a program that
    parses but fails safety, determinism or range checks is INVALID.
    """
    split = split_proposer_completion(trace)
    if split is None:
        return ProposalOutcome.FORMAT_ERROR, None
    names, input_val = split
    report = validate_proposal(names, int_value(input_val), created_iter)
    if not report.syntax_ok:
        return ProposalOutcome.FORMAT_ERROR, None
    if not report.passed:
        return ProposalOutcome.INVALID, None
    return ProposalOutcome.VALID, report.triplet


@dataclass
class SolverRollout:
    trace: SampleTrace
    outcome: SolveOutcome
    reward: float


@dataclass
class ProposalEvaluation:
    """A proposed task with its Monte-Carlo solve rate and proposer reward."""

    triplet: Triplet
    solve_rate: float
    propose_reward: float
    rollouts: list[SolverRollout]


def evaluate_proposal(
    triplet: Triplet,
    mode: TaskMode,
    params: PolicyParams,
    cfg: RewardConfig,
    rng: random.Random,
) -> ProposalEvaluation:
    """Estimate a task's solve rate with n_mc solver rollouts and score it.

    Also refreshes the triplet's difficulty bucket from the observed rate.
    Raises InductionInfeasible (from make_task) for unusable induction tasks.
    """
    task = make_task(mode, triplet, rng)
    rollouts = []
    correct = 0
    for _ in range(cfg.n_mc):
        trace = sample(params, task.prompt_tokens, rng)
        outcome = classify_solver_completion(trace, task)
        if outcome is SolveOutcome.CORRECT:
            correct += 1
        reward = compose_reward(solve_reward(outcome), outcome.passability, cfg)
        rollouts.append(SolverRollout(trace, outcome, reward))
    rate = correct / cfg.n_mc
    triplet.difficulty = difficulty_for_rate(rate)
    composed = compose_reward(cfg.propose_reward(rate), Passability.PASSABLE, cfg)
    return ProposalEvaluation(triplet, rate, composed, rollouts)
