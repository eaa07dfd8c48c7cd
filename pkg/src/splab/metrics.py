"""Analysis instruments: policy entropy, update sparsity, pass@k, difficulty
probes and the base-support audit.

Entropy is the Monte-Carlo estimate over sampled completions (mean over
prompts of the per-token mean negative log-probability, in nats/token).
Update sparsity is the fraction of parameters unchanged between two
checkpoints. pass@k is the unbiased estimator 1 - C(n-c, k) / C(n, k),
computed in overflow-safe product form.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Iterable, Sequence

from . import vocab
from .policy import (
    CompletionMachine,
    PolicyParams,
    Role,
    SampleTrace,
    SnapshotTable,
    sample,
)
from .rewards import RewardConfig, SolveOutcome, classify_solver_completion
from .tasks import TaskInstance
from .vocab import ALLOWED, ALLOWED_SET, PositionKind

EPSILON_GRID = (1e-3, 1e-4, 1e-5)


@dataclass
class MetricsRecord:
    """Per-iteration snapshot written as one metrics.jsonl line."""

    iter: int
    policy_entropy: float
    proposer_entropy: float
    solver_entropy: float
    solve_rate_deduction: float
    solve_rate_abduction: float
    solve_rate_induction: float
    response_len_proposer: float
    response_len_solver: float
    reward_deduction_propose: float
    reward_deduction_solve: float
    reward_abduction_propose: float
    reward_abduction_solve: float
    reward_induction_propose: float
    reward_induction_solve: float
    proposals_valid: int
    proposals_formatted: int
    backfilled: int
    tokens_generated: int
    off_support_tokens: int
    epsilon_support_mass: float
    epsilon_support_mass_1e4: float
    epsilon_support_mass_1e5: float
    schema_version: int = 1


# ---------------------------------------------------------------------------
# Policy entropy
# ---------------------------------------------------------------------------


def policy_entropy(
    params: PolicyParams,
    prompts: Sequence[Sequence[int]],
    samples_per_prompt: int,
    rng: random.Random,
) -> float:
    """Mean per-token negative log-probability of sampled completions.

    Averages `samples_per_prompt` completions per prompt, then averages over
    prompts with equal weight. Always evaluates the pure policy (no
    exploration mix).
    """
    if not prompts:
        raise ValueError("eval set must be nonempty")
    pure = params.pure()
    per_prompt = []
    for prompt in prompts:
        vals = []
        for _ in range(samples_per_prompt):
            trace = sample(pure, prompt, rng)
            vals.append(-fmean(trace.logprobs))
        per_prompt.append(fmean(vals))
    return fmean(per_prompt)


def role_entropy(
    params: PolicyParams,
    prompts: Sequence[Sequence[int]],
    role: Role,
    samples_per_prompt: int,
    rng: random.Random,
) -> float:
    """policy_entropy restricted to prompts of a single role."""
    for prompt in prompts:
        if CompletionMachine(prompt).role is not role:
            raise ValueError(f"prompt {prompt!r} is not a {role.value} prompt")
    return policy_entropy(params, prompts, samples_per_prompt, rng)


# ---------------------------------------------------------------------------
# Update sparsity
# ---------------------------------------------------------------------------


@dataclass
class SparsityReport:
    total_params: int
    unchanged: int
    sparsity: float
    tolerance: float


class IncompatibleSnapshots(ValueError):
    pass


def update_sparsity(a: SnapshotTable, b: SnapshotTable, tolerance: float = 0.0) -> SparsityReport:
    """Fraction of parameters unchanged between two checkpoints.

    The parameter universe is the union of materialized cells; an absent
    cell reads as logit 0.0. A cell counts as changed when the absolute
    difference exceeds `tolerance` (default exact equality). Symmetric in
    its arguments; an empty universe reports sparsity 1.0.
    """
    if (a.context_order, a.vocab_size, a.vocab_hash) != (b.context_order, b.vocab_size, b.vocab_hash):
        raise IncompatibleSnapshots("snapshot headers disagree (vocab or context order)")
    universe = set(a.cells) | set(b.cells)
    changed = sum(
        1
        for cell in universe
        if abs(a.cells.get(cell, 0.0) - b.cells.get(cell, 0.0)) > tolerance
    )
    n = len(universe)
    sparsity = 1.0 if n == 0 else 1.0 - changed / n
    return SparsityReport(n, n - changed, sparsity, tolerance)


def read_raw_float_array(path: Path) -> tuple[float, ...]:
    """A flat little-endian float64 file, for diffing external checkpoints."""
    data = Path(path).read_bytes()
    if len(data) % 8 != 0:
        raise IncompatibleSnapshots(f"{path}: size {len(data)} is not a multiple of 8")
    return struct.unpack(f"<{len(data) // 8}d", data)


def raw_array_sparsity(path_a: Path, path_b: Path, tolerance: float = 0.0) -> SparsityReport:
    a = read_raw_float_array(path_a)
    b = read_raw_float_array(path_b)
    if len(a) != len(b):
        raise IncompatibleSnapshots(f"array lengths differ: {len(a)} vs {len(b)}")
    changed = sum(1 for x, y in zip(a, b) if abs(x - y) > tolerance)
    n = len(a)
    sparsity = 1.0 if n == 0 else 1.0 - changed / n
    return SparsityReport(n, n - changed, sparsity, tolerance)


# ---------------------------------------------------------------------------
# pass@k
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PassAtKQuery:
    n: int
    c: int
    k: int

    def __post_init__(self):
        if not 0 <= self.c <= self.n:
            raise ValueError(f"need 0 <= c <= n, got c={self.c}, n={self.n}")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k from n samples with c correct: 1 - C(n-c, k) / C(n, k)."""
    PassAtKQuery(n, c, k)
    if c == 0:
        return 0.0
    if c > n - k:
        return 1.0
    ratio = 1.0
    for i in range(k):
        ratio *= (n - c - i) / (n - i)
    return 1.0 - ratio


# ---------------------------------------------------------------------------
# Difficulty probe
# ---------------------------------------------------------------------------


@dataclass
class ProbeBucket:
    questions: int
    mean_response_len: float
    mean_solve_rate: float


def difficulty_probe(
    question_set: Sequence[tuple[TaskInstance, int]],
    params: PolicyParams,
    rng: random.Random,
    n: int = 8,
    reward_cfg: RewardConfig | None = None,
) -> dict[int, ProbeBucket]:
    """Per creation-iteration bucket: mean response length and solve rate.

    Each question gets `n` solver rollouts under the given parameters.
    """
    cfg = reward_cfg or RewardConfig()
    lens: dict[int, list[float]] = {}
    rates: dict[int, list[float]] = {}
    for task, created_iter in question_set:
        correct = 0
        lengths = []
        for _ in range(n):
            trace = sample(params, task.prompt_tokens, rng)
            lengths.append(trace.response_len)
            if classify_solver_completion(trace, task) is SolveOutcome.CORRECT:
                correct += 1
        lens.setdefault(created_iter, []).append(fmean(lengths))
        rates.setdefault(created_iter, []).append(correct / n)
    return {
        bucket: ProbeBucket(len(lens[bucket]), fmean(lens[bucket]), fmean(rates[bucket]))
        for bucket in sorted(lens)
    }


# ---------------------------------------------------------------------------
# Support audit
# ---------------------------------------------------------------------------


@dataclass
class SupportAudit:
    """Counters for the base-support preservation check.

    `off_support_tokens` counts generated tokens with base probability
    exactly zero (outside the mask); `epsilon_mass` holds, per epsilon, the
    sampling distribution's probability mass on tokens whose base probability
    is at most epsilon, averaged over visited contexts.
    """

    off_support_tokens: int
    tokens_seen: int
    epsilon_mass: dict[float, float] = field(default_factory=dict)


def support_audit(traces: Iterable[SampleTrace], params: PolicyParams) -> SupportAudit:
    gamma = params.gamma_explore
    off = 0
    seen = 0
    mass_acc = {eps: 0.0 for eps in EPSILON_GRID}
    for trace in traces:
        machine = CompletionMachine(trace.tokens[: trace.prompt_len])
        for token in trace.completion:
            kind = machine.expected_kind()
            if kind is None:
                break
            seen += 1
            allowed_n = len(ALLOWED[kind])
            if token not in ALLOWED_SET[kind]:
                off += 1
            # Base distribution is uniform over the mask, so every on-mask
            # token has probability 1/allowed_n and every other token 0.
            off_mask_mass = gamma * (vocab.VOCAB_SIZE - allowed_n) / vocab.VOCAB_SIZE
            on_mask_mass = (1.0 - gamma) + gamma * allowed_n / vocab.VOCAB_SIZE
            for eps in EPSILON_GRID:
                total = off_mask_mass
                if 1.0 / allowed_n <= eps:
                    total += on_mask_mass
                mass_acc[eps] += total
            machine.advance(token)
    epsilon_mass = {eps: (mass_acc[eps] / seen if seen else 0.0) for eps in EPSILON_GRID}
    return SupportAudit(off, seen, epsilon_mass)
