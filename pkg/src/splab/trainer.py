"""Self-play training loop: propose, validate, backfill, solve, reward, update.

One iteration runs, for each task mode, a batch of proposer rollouts whose
valid proposals are topped up from the buffer, then estimates every task's
solve rate with Monte-Carlo solver rollouts. All episodes are scored with
format-composed rewards and turned into a single REINFORCE update with
task-relative baselines: running reward statistics kept separately for each
of the six (mode, role) cells.
"""

from __future__ import annotations

import json
import math
import platform
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Iterable

from . import __version__, vocab
from .metrics import MetricsRecord, support_audit
from .policy import (
    Context,
    PolicyParams,
    Role,
    SampleTrace,
    grad_logprob,
    proposer_prompt,
    sample,
    save_snapshot,
)
from .rewards import (
    Passability,
    ProposalOutcome,
    RewardConfig,
    classify_proposal,
    compose_reward,
    evaluate_proposal,
)
from .tasks import (
    Buffer,
    Difficulty,
    InductionInfeasible,
    TaskMode,
    Triplet,
    backfill,
    make_task,
    seed_buffers,
    zero_triplet,
)

ADVANTAGE_STD_FLOOR = 0.1
_FALLBACK_TRIES = 20


class NonFiniteGradient(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 200
    batch_per_mode: int = 8
    learning_rate: float = 0.05
    gamma_explore: float = 0.0
    clip_ratio: float | None = None
    frozen_proposer: bool = False
    seed: int = 0
    advantage_norm: str = "mean_std"  # or "mean_only"
    snapshot_every: int = 25
    entropy_prompts_per_role: int = 32
    entropy_samples_per_prompt: int = 4

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_per_mode < 1:
            raise ValueError("batch_per_mode must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.gamma_explore < 1.0:
            raise ValueError("gamma_explore must be in [0, 1)")
        if self.advantage_norm not in ("mean_only", "mean_std"):
            raise ValueError(f"unknown advantage_norm {self.advantage_norm!r}")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")


@dataclass
class _BaselineCell:
    mean: float = 0.0
    m2: float = 0.0
    count: int = 0

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / self.count) if self.count else 0.0


class BaselineTable:
    """Running mean/variance of composed rewards per (mode, role): six cells."""

    def __init__(self):
        self._cells = {(mode, role): _BaselineCell() for mode in TaskMode for role in Role}

    def cell(self, mode: TaskMode, role: Role) -> _BaselineCell:
        return self._cells[(mode, role)]

    def advantage(self, mode: TaskMode, role: Role, reward: float, norm: str) -> float:
        cell = self._cells[(mode, role)]
        centered = reward - cell.mean
        if norm == "mean_only":
            return centered
        return centered / max(cell.std, ADVANTAGE_STD_FLOOR)

    def update(self, mode: TaskMode, role: Role, rewards: Iterable[float]) -> None:
        cell = self._cells[(mode, role)]
        for reward in rewards:
            cell.count += 1
            delta = reward - cell.mean
            cell.mean += delta / cell.count
            cell.m2 += delta * (reward - cell.mean)


@dataclass
class Episode:
    trace: SampleTrace
    mode: TaskMode
    role: Role
    reward: float


@dataclass
class IterationStats:
    iteration: int
    reward_means: dict[tuple[TaskMode, Role], float]
    solve_rates: dict[TaskMode, float]
    response_lens: dict[Role, float]
    proposals_valid: dict[TaskMode, int]
    proposals_formatted: dict[TaskMode, int]
    backfilled: dict[TaskMode, int]
    tokens_generated: int


@dataclass
class TrainState:
    params: PolicyParams
    buffers: dict[TaskMode, Buffer]
    baselines: BaselineTable
    rng: random.Random
    iteration: int = 0


def init_state(cfg: TrainConfig) -> TrainState:
    params = PolicyParams(
        gamma_explore=cfg.gamma_explore,
        role_update_mask="solver_only" if cfg.frozen_proposer else "both",
    )
    return TrainState(
        params=params,
        buffers=seed_buffers(),
        baselines=BaselineTable(),
        rng=random.Random(f"{cfg.seed}:train"),
    )


def apply_update(
    params: PolicyParams,
    grad: dict[tuple[Context, int], float],
    lr: float,
    gamma_explore: float,
) -> PolicyParams:
    """Tilt logits along the accumulated gradient: theta <- theta + lr * grad.

    Only touched cells change; a touched cell materializes in the sparse
    table even when its delta is exactly zero. Exploration mixing happens in
    the sampler, never in the logits.
    """
    for (ctx, token), g in grad.items():
        if not math.isfinite(g):
            raise NonFiniteGradient(
                f"gradient {g!r} at context {tuple(vocab.token_name(t) for t in ctx)}, "
                f"token {vocab.token_name(token)}"
            )
    for (ctx, token), g in grad.items():
        row = params.logits.setdefault(ctx, {})
        row[token] = row.get(token, 0.0) + lr * g
    params.gamma_explore = gamma_explore
    return params


def update_from_episodes(
    params: PolicyParams,
    baselines: BaselineTable,
    episodes: list[Episode],
    cfg: TrainConfig,
) -> dict[tuple[Context, int], float]:
    """Score one batch of episodes and apply a single policy update.

    Advantages use the pre-update baselines; the baselines absorb this
    batch's rewards only afterwards. Proposer episodes are skipped entirely
    when the proposer is frozen. Returns the accumulated gradient.
    """
    frozen = cfg.frozen_proposer or params.role_update_mask == "solver_only"
    grad: dict[tuple[Context, int], float] = {}
    for ep in episodes:
        if frozen and ep.role is Role.PROPOSER:
            continue
        advantage = baselines.advantage(ep.mode, ep.role, ep.reward, cfg.advantage_norm)
        for cell, value in grad_logprob(params, ep.trace).items():
            grad[cell] = grad.get(cell, 0.0) + advantage * value
    # With one update per batch the importance ratio is evaluated at the
    # rollout parameters and is identically 1, so clip_ratio never binds.
    apply_update(params, grad, cfg.learning_rate, cfg.gamma_explore)

    for mode in TaskMode:
        for role in Role:
            rewards = [ep.reward for ep in episodes if ep.mode is mode and ep.role is role]
            baselines.update(mode, role, rewards)
    return grad


def _evaluate_with_fallback(
    triplet: Triplet,
    mode: TaskMode,
    state: TrainState,
    reward_cfg: RewardConfig,
):
    """Evaluate a task; on InductionInfeasible fall back to another triplet."""
    current = triplet
    for _ in range(_FALLBACK_TRIES):
        try:
            return evaluate_proposal(current, mode, state.params, reward_cfg, state.rng), current
        except InductionInfeasible:
            current = state.buffers[mode].sample(state.rng)
    current = zero_triplet()
    return evaluate_proposal(current, mode, state.params, reward_cfg, state.rng), current


def train_iteration(
    state: TrainState, cfg: TrainConfig, reward_cfg: RewardConfig
) -> tuple[IterationStats, list[Episode]]:
    """One self-play step over all three modes, ending in a single update."""
    state.iteration += 1
    it = state.iteration
    rng = state.rng
    episodes: list[Episode] = []
    solve_rates: dict[TaskMode, float] = {}
    proposals_valid: dict[TaskMode, int] = {}
    proposals_formatted: dict[TaskMode, int] = {}
    backfilled: dict[TaskMode, int] = {}

    for mode in TaskMode:
        pending: list[tuple[SampleTrace, ProposalOutcome, Triplet | None]] = []
        for _ in range(cfg.batch_per_mode):
            reference = state.buffers[mode].sample(rng)
            prompt = proposer_prompt(mode.prefix_token, reference.difficulty.token)
            trace = sample(state.params, prompt, rng)
            outcome, triplet = classify_proposal(trace, created_iter=it)
            if outcome is ProposalOutcome.VALID and mode is TaskMode.INDUCTION:
                # Validated induction proposals must also admit four valid
                # distinct inputs, or no task can be built from them.
                try:
                    make_task(mode, triplet, rng)
                except InductionInfeasible:
                    outcome, triplet = ProposalOutcome.INVALID, None
            pending.append((trace, outcome, triplet))

        valid = [t for _, outcome, t in pending if outcome is ProposalOutcome.VALID]
        task_triplets = backfill(valid, state.buffers[mode], cfg.batch_per_mode, rng)
        for t in valid:
            state.buffers[mode].add(t)

        propose_reward_of: dict[int, float] = {}
        mode_rates = []
        for t in task_triplets:
            evaluation, evaluated = _evaluate_with_fallback(t, mode, state, reward_cfg)
            mode_rates.append(evaluation.solve_rate)
            for rollout in evaluation.rollouts:
                episodes.append(Episode(rollout.trace, mode, Role.SOLVER, rollout.reward))
            if evaluated is t:
                propose_reward_of[id(t)] = evaluation.propose_reward

        for trace, outcome, triplet in pending:
            if outcome is ProposalOutcome.VALID and id(triplet) in propose_reward_of:
                reward = propose_reward_of[id(triplet)]
            elif outcome is ProposalOutcome.VALID:
                # Validated but unusable (evaluation fell back to another task).
                reward = compose_reward(0.0, Passability.WRONG_WELL_FORMATTED, reward_cfg)
            else:
                reward = compose_reward(0.0, outcome.passability, reward_cfg)
            episodes.append(Episode(trace, mode, Role.PROPOSER, reward))

        solve_rates[mode] = fmean(mode_rates)
        proposals_valid[mode] = len(valid)
        proposals_formatted[mode] = sum(
            1 for _, outcome, _ in pending if outcome is not ProposalOutcome.FORMAT_ERROR
        )
        backfilled[mode] = cfg.batch_per_mode - len(valid)

    update_from_episodes(state.params, state.baselines, episodes, cfg)

    reward_means = {
        (mode, role): fmean([ep.reward for ep in episodes if ep.mode is mode and ep.role is role])
        for mode in TaskMode
        for role in Role
    }
    response_lens = {
        role: fmean([ep.trace.response_len for ep in episodes if ep.role is role])
        for role in Role
    }
    stats = IterationStats(
        iteration=it,
        reward_means=reward_means,
        solve_rates=solve_rates,
        response_lens=response_lens,
        proposals_valid=proposals_valid,
        proposals_formatted=proposals_formatted,
        backfilled=backfilled,
        tokens_generated=sum(ep.trace.response_len for ep in episodes),
    )
    return stats, episodes


def _entropy_eval(
    state: TrainState, cfg: TrainConfig, iteration: int
) -> tuple[float, float, float]:
    """(policy, proposer, solver) entropy in nats/token at the current params.

    Uses a per-iteration derived RNG stream so measurement never perturbs the
    training stream. The policy entropy over the union of both role sets is
    the equal-weight mean of the per-prompt values.
    """
    rng = random.Random(f"{cfg.seed}:entropy:{iteration}")
    modes = list(TaskMode)
    difficulties = list(Difficulty)
    pure = state.params.pure()

    def mean_neg_logprob(prompt) -> float:
        vals = []
        for _ in range(cfg.entropy_samples_per_prompt):
            trace = sample(pure, prompt, rng)
            vals.append(-fmean(trace.logprobs))
        return fmean(vals)

    proposer_vals = []
    for j in range(cfg.entropy_prompts_per_role):
        mode = modes[j % len(modes)]
        diff = rng.choice(difficulties)
        proposer_vals.append(mean_neg_logprob(proposer_prompt(mode.prefix_token, diff.token)))

    solver_vals = []
    for j in range(cfg.entropy_prompts_per_role):
        mode = modes[j % len(modes)]
        task = None
        for _ in range(_FALLBACK_TRIES):
            triplet = state.buffers[mode].sample(rng)
            try:
                task = make_task(mode, triplet, rng)
                break
            except InductionInfeasible:
                continue
        if task is None:
            task = make_task(mode, zero_triplet(), rng)
        solver_vals.append(mean_neg_logprob(task.prompt_tokens))

    return (
        fmean(proposer_vals + solver_vals),
        fmean(proposer_vals),
        fmean(solver_vals),
    )


def _record_for(
    stats: IterationStats, entropies: tuple[float, float, float], audit
) -> MetricsRecord:
    policy_h, proposer_h, solver_h = entropies
    return MetricsRecord(
        iter=stats.iteration,
        policy_entropy=policy_h,
        proposer_entropy=proposer_h,
        solver_entropy=solver_h,
        solve_rate_deduction=stats.solve_rates[TaskMode.DEDUCTION],
        solve_rate_abduction=stats.solve_rates[TaskMode.ABDUCTION],
        solve_rate_induction=stats.solve_rates[TaskMode.INDUCTION],
        response_len_proposer=stats.response_lens[Role.PROPOSER],
        response_len_solver=stats.response_lens[Role.SOLVER],
        reward_deduction_propose=stats.reward_means[(TaskMode.DEDUCTION, Role.PROPOSER)],
        reward_deduction_solve=stats.reward_means[(TaskMode.DEDUCTION, Role.SOLVER)],
        reward_abduction_propose=stats.reward_means[(TaskMode.ABDUCTION, Role.PROPOSER)],
        reward_abduction_solve=stats.reward_means[(TaskMode.ABDUCTION, Role.SOLVER)],
        reward_induction_propose=stats.reward_means[(TaskMode.INDUCTION, Role.PROPOSER)],
        reward_induction_solve=stats.reward_means[(TaskMode.INDUCTION, Role.SOLVER)],
        proposals_valid=sum(stats.proposals_valid.values()),
        proposals_formatted=sum(stats.proposals_formatted.values()),
        backfilled=sum(stats.backfilled.values()),
        tokens_generated=stats.tokens_generated,
        off_support_tokens=audit.off_support_tokens,
        epsilon_support_mass=audit.epsilon_mass[1e-3],
        epsilon_support_mass_1e4=audit.epsilon_mass[1e-4],
        epsilon_support_mass_1e5=audit.epsilon_mass[1e-5],
    )


def run(
    cfg: TrainConfig,
    reward_cfg: RewardConfig,
    out_dir: Path,
    config_echo: dict | None = None,
    verbose: bool = False,
) -> dict:
    """Execute a full training run and write its artifacts under out_dir.

    Writes manifest.json, metrics.jsonl (one record per iteration, appended
    crash-safe), snapshots/iter_N.bin at the snapshot cadence plus the
    initial and final parameters, and buffers/<mode>.txt. Fully reproducible
    from (config, seed).
    """
    out_dir = Path(out_dir)
    (out_dir / "snapshots").mkdir(parents=True, exist_ok=True)
    (out_dir / "buffers").mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()

    state = init_state(cfg)
    save_snapshot(state.params, out_dir / "snapshots" / "iter_0.bin")
    snapshots_written = {0}

    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w") as fh:
        for _ in range(cfg.iterations):
            stats, episodes = train_iteration(state, cfg, reward_cfg)
            audit = support_audit((ep.trace for ep in episodes), state.params)
            entropies = _entropy_eval(state, cfg, state.iteration)
            record = _record_for(stats, entropies, audit)
            fh.write(json.dumps(record.__dict__, separators=(",", ":")) + "\n")
            fh.flush()
            if state.iteration % cfg.snapshot_every == 0:
                save_snapshot(state.params, out_dir / "snapshots" / f"iter_{state.iteration}.bin")
                snapshots_written.add(state.iteration)
                if verbose:
                    print(
                        f"iter {state.iteration}/{cfg.iterations}: "
                        f"policy entropy {record.policy_entropy:.3f} nats/token, "
                        f"solve rates "
                        f"ded {record.solve_rate_deduction:.2f} "
                        f"abd {record.solve_rate_abduction:.2f} "
                        f"ind {record.solve_rate_induction:.2f}"
                    )
    if cfg.iterations not in snapshots_written:
        save_snapshot(state.params, out_dir / "snapshots" / f"iter_{cfg.iterations}.bin")

    for mode, buffer in state.buffers.items():
        buffer.save(out_dir / "buffers" / f"{mode.value}.txt")

    wall = time.perf_counter() - t_start
    manifest = {
        "schema_version": 1,
        "kind": "splab-run-manifest",
        "seed": cfg.seed,
        "config": config_echo or default_config_echo(cfg, reward_cfg, out_dir),
        "vocab": vocab.vocab_table(),
        "code_version": __version__,
        "hardware": f"{platform.platform()} / Python {platform.python_version()}",
        "wall_time_s": round(wall, 3),
        "iterations_completed": cfg.iterations,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if verbose:
        print(f"run complete in {wall:.1f}s -> {out_dir}")
    return manifest


def default_config_echo(cfg: TrainConfig, reward_cfg: RewardConfig, out_dir: Path) -> dict:
    echo = {k: v for k, v in cfg.__dict__.items()}
    echo.update(reward_cfg.__dict__)
    echo["output_dir"] = str(out_dir)
    return echo
