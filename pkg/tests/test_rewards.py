"""Reward function and completion classification tests."""

from __future__ import annotations

import math
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from splab import vocab
from splab.dsl import int_value
from splab.policy import PolicyParams, Role, SampleTrace, proposer_prompt, sample
from splab.rewards import (
    Passability,
    ProposalOutcome,
    RewardConfig,
    SolveOutcome,
    classify_proposal,
    classify_solver_completion,
    compose_reward,
    evaluate_proposal,
    propose_reward_learnability,
    propose_reward_peak,
    solve_reward,
    split_proposer_completion,
)
from splab.tasks import TaskMode, Triplet, make_task
from splab.dsl import parse, evaluate

CFG = RewardConfig()


def solver_trace(prompt, completion, truncated=False):
    return SampleTrace(
        role=Role.SOLVER,
        mode_token=prompt[0],
        prompt_len=len(prompt),
        tokens=tuple(prompt) + tuple(completion),
        logprobs=tuple(0.0 for _ in completion),
        truncated=truncated,
    )


def proposer_trace(completion, truncated=False):
    prompt = proposer_prompt(vocab.MODE_DED, vocab.DIFF_M)
    return SampleTrace(
        role=Role.PROPOSER,
        mode_token=vocab.MODE_DED,
        prompt_len=len(prompt),
        tokens=prompt + tuple(completion),
        logprobs=tuple(0.0 for _ in completion),
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# Proposer reward functions
# ---------------------------------------------------------------------------


def test_learnability_closed_form_on_grid():
    for k in range(9):
        rate = k / 8
        expected = 0.0 if rate in (0.0, 1.0) else 1.0 - rate
        assert propose_reward_learnability(rate) == expected


def test_peak_closed_form_on_grid():
    for k in range(9):
        rate = k / 8
        expected = 0.0 if rate in (0.0, 1.0) else 1.0 - 2.0 * abs(rate - 0.5)
        assert propose_reward_peak(rate) == expected
    assert propose_reward_peak(0.5) == 1.0
    assert propose_reward_peak(0.25) == 0.5


def test_reward_domain_errors():
    for fn in (propose_reward_learnability, propose_reward_peak):
        with pytest.raises(ValueError):
            fn(-0.01)
        with pytest.raises(ValueError):
            fn(1.01)


@given(st.integers(1, 64), st.integers(0, 64))
def test_reward_properties(n, k):
    if k > n:
        return
    rate = k / n
    learn = propose_reward_learnability(rate)
    peak = propose_reward_peak(rate)
    if rate in (0.0, 1.0):
        assert learn == 0.0 and peak == 0.0
    else:
        assert learn > 0.0 and peak >= 0.0
        # Learnability is strictly decreasing inside (0, 1).
        if 0.0 < rate - 1 / n:
            assert propose_reward_learnability(rate - 1 / n) > learn
        # The peaked variant is symmetric around 0.5.
        mirrored = (n - k) / n
        if mirrored not in (0.0, 1.0):
            assert math.isclose(peak, propose_reward_peak(mirrored), abs_tol=1e-12)


def test_solve_reward_indicator():
    assert solve_reward(SolveOutcome.CORRECT) == 1.0
    assert solve_reward(SolveOutcome.WRONG_BUT_FORMATTED) == 0.0
    assert solve_reward(SolveOutcome.FORMAT_ERROR) == 0.0


def test_compose_reward_branches():
    assert compose_reward(1.0, Passability.PASSABLE, CFG) == 1.0
    assert compose_reward(0.25, Passability.PASSABLE, CFG) == 0.25
    assert compose_reward(1.0, Passability.WRONG_WELL_FORMATTED, CFG) == -0.5
    assert compose_reward(1.0, Passability.FORMAT_ERROR, CFG) == -1.0


def test_compose_ordering():
    for role_reward in (0.0, 0.25, 0.5, 1.0):
        passable = compose_reward(role_reward, Passability.PASSABLE, CFG)
        wrong = compose_reward(role_reward, Passability.WRONG_WELL_FORMATTED, CFG)
        fmt = compose_reward(role_reward, Passability.FORMAT_ERROR, CFG)
        assert passable > wrong > fmt


# ---------------------------------------------------------------------------
# Completion classification
# ---------------------------------------------------------------------------


def test_classify_solver_outcomes():
    t = Triplet(parse(["ADD", "X", "C1"]), int_value(3), int_value(4))
    task = make_task(TaskMode.DEDUCTION, t, random.Random(0))
    ok = solver_trace(task.prompt_tokens, (vocab.ANSWER, vocab.literal_id(4), vocab.END))
    wrong = solver_trace(task.prompt_tokens, (vocab.ANSWER, vocab.literal_id(5), vocab.END))
    truncated = solver_trace(task.prompt_tokens, (vocab.ANSWER, vocab.literal_id(4)), truncated=True)
    assert classify_solver_completion(ok, task) is SolveOutcome.CORRECT
    assert classify_solver_completion(wrong, task) is SolveOutcome.WRONG_BUT_FORMATTED
    assert classify_solver_completion(truncated, task) is SolveOutcome.FORMAT_ERROR


def test_classify_induction_unparsable_payload_is_format_error():
    t = Triplet(parse(["X"]), int_value(0), int_value(0))
    task = make_task(TaskMode.INDUCTION, t, random.Random(1))
    bad = solver_trace(
        task.prompt_tokens,
        (vocab.ANSWER, vocab.token_id("ADD"), vocab.token_id("X"), vocab.END),
    )
    assert classify_solver_completion(bad, task) is SolveOutcome.FORMAT_ERROR


def test_split_proposer_completion():
    completion = (
        vocab.token_id("ADD"), vocab.token_id("X"), vocab.token_id("C1"),
        vocab.SEP, vocab.literal_id(3), vocab.END,
    )
    names, input_val = split_proposer_completion(proposer_trace(completion))
    assert names == ["ADD", "X", "C1"] and input_val == 3
    assert split_proposer_completion(proposer_trace(completion[:-1], truncated=True)) is None


def test_classify_proposal_paths():
    valid = (
        vocab.token_id("ADD"), vocab.token_id("X"), vocab.token_id("C1"),
        vocab.SEP, vocab.literal_id(3), vocab.END,
    )
    outcome, triplet = classify_proposal(proposer_trace(valid), created_iter=5)
    assert outcome is ProposalOutcome.VALID
    assert triplet.output == int_value(4) and triplet.created_iter == 5

    coin = (vocab.token_id("COIN"), vocab.SEP, vocab.literal_id(0), vocab.END)
    outcome, triplet = classify_proposal(proposer_trace(coin))
    assert outcome is ProposalOutcome.INVALID and triplet is None

    out_of_range = tuple(
        vocab.token_id(t) for t in ("MUL", "X", "MUL", "X", "MUL", "X", "X")
    ) + (vocab.SEP, vocab.literal_id(9), vocab.END)
    outcome, triplet = classify_proposal(proposer_trace(out_of_range))
    assert outcome is ProposalOutcome.INVALID and triplet is None

    unparsable = (
        vocab.token_id("ADD"), vocab.token_id("X"),
        vocab.SEP, vocab.literal_id(3), vocab.END,
    )
    outcome, triplet = classify_proposal(proposer_trace(unparsable))
    assert outcome is ProposalOutcome.FORMAT_ERROR and triplet is None

    truncated = (vocab.token_id("ADD"), vocab.token_id("X"))
    outcome, _ = classify_proposal(proposer_trace(truncated, truncated=True))
    assert outcome is ProposalOutcome.FORMAT_ERROR


# ---------------------------------------------------------------------------
# evaluate_proposal
# ---------------------------------------------------------------------------


def delta_params_for_deduction_answer(correct_value, wrong_every=None):
    """Policy that answers deduction questions with a fixed literal."""
    params = PolicyParams()
    for lit in range(-9, 10):
        ctx = (vocab.literal_id(lit), vocab.GO, vocab.ANSWER)
        params.logits[ctx] = {vocab.literal_id(correct_value): 60.0}
    return params


def test_evaluate_proposal_extremes_and_counts():
    t = Triplet(parse(["ADD", "X", "C1"]), int_value(3), int_value(4))
    rng = random.Random(2)

    always_right = delta_params_for_deduction_answer(4)
    ev = evaluate_proposal(t, TaskMode.DEDUCTION, always_right, CFG, rng)
    assert ev.solve_rate == 1.0
    assert ev.propose_reward == 0.0  # passable proposal, zero role reward
    assert len(ev.rollouts) == CFG.n_mc
    assert all(r.reward == 1.0 for r in ev.rollouts)

    always_wrong = delta_params_for_deduction_answer(5)
    ev = evaluate_proposal(t, TaskMode.DEDUCTION, always_wrong, CFG, rng)
    assert ev.solve_rate == 0.0
    assert ev.propose_reward == 0.0
    assert all(r.reward == -0.5 for r in ev.rollouts)


def test_evaluate_proposal_solve_rate_is_exact_fraction():
    t = Triplet(parse(["ADD", "X", "C1"]), int_value(3), int_value(4))
    rng = random.Random(3)
    for _ in range(20):
        ev = evaluate_proposal(t, TaskMode.DEDUCTION, PolicyParams(), CFG, rng)
        assert Fraction(ev.solve_rate).limit_denominator(CFG.n_mc).denominator <= CFG.n_mc
        assert ev.solve_rate * CFG.n_mc == int(ev.solve_rate * CFG.n_mc)


def test_evaluate_proposal_peak_variant():
    cfg = RewardConfig(proposer_variant="peak_half", n_mc=8)
    t = Triplet(parse(["ADD", "X", "C1"]), int_value(3), int_value(4))
    # 4-of-8 correct: alternate right and wrong answers across rollouts is
    # hard to stage exactly, so check the reward map on the rate instead.
    assert cfg.propose_reward(0.5) == 1.0
    assert cfg.propose_reward(0.25) == 0.5
    ev = evaluate_proposal(t, TaskMode.DEDUCTION, delta_params_for_deduction_answer(4), cfg, random.Random(4))
    assert ev.solve_rate == 1.0 and ev.propose_reward == 0.0


def test_evaluate_proposal_updates_difficulty_bucket():
    from splab.tasks import Difficulty

    t = Triplet(parse(["ADD", "X", "C1"]), int_value(3), int_value(4))
    evaluate_proposal(t, TaskMode.DEDUCTION, delta_params_for_deduction_answer(4), CFG, random.Random(5))
    assert t.difficulty is Difficulty.EASY
    evaluate_proposal(t, TaskMode.DEDUCTION, delta_params_for_deduction_answer(5), CFG, random.Random(6))
    assert t.difficulty is Difficulty.HARD


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(proposer_variant="nonsense")
    with pytest.raises(ValueError):
        RewardConfig(n_mc=1)
