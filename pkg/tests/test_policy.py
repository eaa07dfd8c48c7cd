"""Sampling, scoring and gradient tests for the trigram policy.

The naive dense oracle computes log-probabilities over the full vocabulary
with -inf masking and explicit logsumexp; it exists so logprob_of has an
independent recomputation to match.
"""

from __future__ import annotations

import math
import random
from collections import Counter

import pytest

from splab import vocab
from splab.policy import (
    CompletionMachine,
    MAX_COMPLETION_TOKENS,
    OffSupportError,
    PolicyParams,
    Role,
    SampleTrace,
    context_at,
    context_from_id,
    context_id,
    grad_logprob,
    load_snapshot,
    logprob_of,
    params_from_snapshot,
    proposer_prompt,
    sample,
    save_snapshot,
)
from splab.vocab import ALLOWED, ALLOWED_SET, PositionKind

from helpers import (
    ABD_PROMPT,
    DED_PROMPT,
    IND_PROMPT,
    PROP_PROMPT,
    finite_difference_check,
    random_params,
)


# ---------------------------------------------------------------------------
# Dense oracle
# ---------------------------------------------------------------------------


def dense_logprob(params: PolicyParams, prompt, completion) -> float:
    """Full-table softmax recomputation of logprob_of."""
    machine = CompletionMachine(prompt)
    seq = list(prompt)
    total = 0.0
    for token in completion:
        kind = machine.expected_kind()
        assert kind is not None
        row = params.logits.get(context_at(seq, len(seq)), {})
        dense = [
            row.get(t, 0.0) if t in ALLOWED_SET[kind] else -math.inf
            for t in range(vocab.VOCAB_SIZE)
        ]
        m = max(dense)
        logz = m + math.log(sum(math.exp(v - m) for v in dense if v != -math.inf))
        assert dense[token] != -math.inf
        total += dense[token] - logz
        seq.append(token)
        machine.advance(token)
    return total


# ---------------------------------------------------------------------------
# Completion machine
# ---------------------------------------------------------------------------


def test_machine_roles_and_plans():
    assert CompletionMachine(PROP_PROMPT).role is Role.PROPOSER
    assert CompletionMachine(DED_PROMPT).role is Role.SOLVER
    machine = CompletionMachine(DED_PROMPT)
    assert machine.expected_kind() is PositionKind.ANSWER
    machine.advance(vocab.ANSWER)
    assert machine.expected_kind() is PositionKind.LITERAL
    machine.advance(vocab.literal_id(3))
    assert machine.expected_kind() is PositionKind.END
    machine.advance(vocab.END)
    assert machine.expected_kind() is None


def test_machine_tracks_program_arity():
    machine = CompletionMachine(PROP_PROMPT)
    for name in ("ADD", "X", "C1"):
        assert machine.expected_kind() is PositionKind.PROGRAM
        machine.advance(vocab.token_id(name))
    assert machine.expected_kind() is PositionKind.SEP


def test_machine_rejects_bad_prompt():
    with pytest.raises(ValueError):
        CompletionMachine((vocab.GO,))


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def test_uniform_two_way_choice_has_half_probability():
    # Sharpen all literals except two, making the answer a near-coin-flip;
    # then check the exact two-token uniform case via direct logits.
    params = PolicyParams()
    prompt = DED_PROMPT
    ctx = context_at(list(prompt) + [vocab.ANSWER], len(prompt) + 1)
    row = params.logits.setdefault(ctx, {})
    keep = (vocab.literal_id(0), vocab.literal_id(1))
    for t in ALLOWED[PositionKind.LITERAL]:
        if t not in keep:
            row[t] = -1e9
    rng = random.Random(1)
    counts = Counter()
    for _ in range(2000):
        trace = sample(params, prompt, rng)
        counts[trace.completion[1]] += 1
        assert math.isclose(trace.logprobs[1], math.log(0.5), abs_tol=1e-12)
    assert set(counts) == set(keep)
    assert 800 < counts[keep[0]] < 1200


def test_softmax_saturation():
    params = PolicyParams()
    prompt = DED_PROMPT
    ctx = context_at(list(prompt) + [vocab.ANSWER], len(prompt) + 1)
    params.logits[ctx] = {vocab.literal_id(5): 20.0}
    rng = random.Random(2)
    hits = sum(
        1 for _ in range(1000) if sample(params, prompt, rng).completion[1] == vocab.literal_id(5)
    )
    assert hits == 1000  # p > 0.999


def test_seeded_replay_identical():
    params = PolicyParams()
    for rep in range(100):
        a = sample(params, PROP_PROMPT, random.Random(rep))
        b = sample(params, PROP_PROMPT, random.Random(rep))
        assert a == b


def test_sampled_logprobs_nonpositive_and_finite():
    params = random_params(random.Random(3))
    rng = random.Random(4)
    for _ in range(50):
        trace = sample(params, IND_PROMPT, rng)
        assert len(trace.logprobs) == trace.response_len
        assert all(lp <= 0.0 and math.isfinite(lp) for lp in trace.logprobs)


def test_structural_tokens_are_forced():
    rng = random.Random(5)
    for _ in range(50):
        trace = sample(PolicyParams(), DED_PROMPT, rng)
        completion = trace.completion
        assert completion[0] == vocab.ANSWER and completion[-1] == vocab.END
        assert len(completion) == 3
        assert not trace.truncated


def test_truncation_on_runaway_program():
    # A proposer policy that loves IFPOS never finishes its program: seed the
    # lead-in contexts and the absorbing (IFPOS, IFPOS, IFPOS) context.
    params = PolicyParams()
    ifpos = vocab.token_id("IFPOS")
    for ctx in (
        (vocab.MODE_DED, vocab.DIFF_M, vocab.GO),
        (vocab.DIFF_M, vocab.GO, ifpos),
        (vocab.GO, ifpos, ifpos),
        (ifpos, ifpos, ifpos),
    ):
        params.logits[ctx] = {ifpos: 50.0}
    trace = sample(params, PROP_PROMPT, random.Random(7))
    assert trace.truncated
    assert trace.response_len == MAX_COMPLETION_TOKENS


# ---------------------------------------------------------------------------
# logprob_of
# ---------------------------------------------------------------------------


def test_logprob_uniform_three_tokens():
    # ANSWER and END are forced (logprob 0); the literal contributes ln(1/19).
    completion = (vocab.ANSWER, vocab.literal_id(0), vocab.END)
    lp = logprob_of(PolicyParams(), DED_PROMPT, completion)
    assert math.isclose(lp, math.log(1 / 19), rel_tol=0, abs_tol=1e-15)


def test_logprob_matches_sample_bitwise():
    params = random_params(random.Random(8))
    rng = random.Random(9)
    for prompt in (DED_PROMPT, ABD_PROMPT, IND_PROMPT, PROP_PROMPT):
        for _ in range(25):
            trace = sample(params, prompt, rng)
            if trace.truncated:
                continue
            assert logprob_of(params, prompt, trace.completion) == sum(trace.logprobs)


def test_logprob_matches_dense_oracle():
    rng = random.Random(10)
    for rep in range(30):
        params = random_params(rng, n_contexts=10, scale=3.0)
        prompt = rng.choice([DED_PROMPT, ABD_PROMPT, IND_PROMPT, PROP_PROMPT])
        trace = sample(params, prompt, rng)
        if trace.truncated:
            continue
        got = logprob_of(params, prompt, trace.completion)
        want = dense_logprob(params, prompt, trace.completion)
        assert math.isclose(got, want, rel_tol=0, abs_tol=1e-12)


def test_logprob_off_support():
    completion = (vocab.ANSWER, vocab.token_id("ADD"), vocab.END)  # ADD is not a literal
    with pytest.raises(OffSupportError) as err:
        logprob_of(PolicyParams(), DED_PROMPT, completion)
    assert err.value.position == 1


def test_normalization_over_random_contexts():
    from splab.policy import distribution

    rng = random.Random(11)
    params = random_params(rng, scale=5.0)
    for ctx in list(params.logits) + [(vocab.PAD, vocab.PAD, vocab.GO)]:
        for kind in PositionKind:
            _, probs, logprobs = distribution(params, ctx, kind)
            assert math.isclose(sum(probs), 1.0, rel_tol=0, abs_tol=1e-12)
            assert all(math.isclose(math.exp(lp), p, abs_tol=1e-12) for lp, p in zip(logprobs, probs))


# ---------------------------------------------------------------------------
# grad_logprob
# ---------------------------------------------------------------------------


def test_grad_single_position_uniform_pair():
    # Exactly two allowed tokens, uniform: grad is +1/2 for the sampled one,
    # -1/2 for the other.
    params = PolicyParams()
    prompt = DED_PROMPT
    ctx_lit = context_at(list(prompt) + [vocab.ANSWER], len(prompt) + 1)
    row = params.logits.setdefault(ctx_lit, {})
    keep = (vocab.literal_id(0), vocab.literal_id(1))
    for t in ALLOWED[PositionKind.LITERAL]:
        if t not in keep:
            row[t] = -1e9
    trace = SampleTrace(
        role=Role.SOLVER,
        mode_token=vocab.MODE_DED,
        prompt_len=len(prompt),
        tokens=prompt + (vocab.ANSWER, keep[0], vocab.END),
        logprobs=(0.0, math.log(0.5), 0.0),
        truncated=False,
    )
    grad = grad_logprob(params, trace)
    assert math.isclose(grad[(ctx_lit, keep[0])], 0.5, abs_tol=1e-12)
    assert math.isclose(grad[(ctx_lit, keep[1])], -0.5, abs_tol=1e-12)


def test_grad_has_no_masked_entries():
    params = random_params(random.Random(12))
    rng = random.Random(13)
    for prompt in (DED_PROMPT, PROP_PROMPT, IND_PROMPT):
        trace = sample(params, prompt, rng)
        machine = CompletionMachine(prompt)
        seq = list(prompt)
        kinds = {}
        for token in trace.completion:
            kinds[context_at(seq, len(seq))] = machine.expected_kind()
            seq.append(token)
            machine.advance(token)
        for (ctx, token) in grad_logprob(params, trace):
            assert token in ALLOWED_SET[kinds[ctx]]


def test_grad_matches_finite_differences():
    rng = random.Random(14)
    checked = 0
    while checked < 100:
        params = random_params(rng, n_contexts=6)
        prompt = rng.choice([DED_PROMPT, ABD_PROMPT, IND_PROMPT, PROP_PROMPT])
        trace = sample(params, prompt, rng)
        if trace.truncated or trace.response_len > 10:
            continue
        assert finite_difference_check(params, trace) < 1e-6
        checked += 1


# ---------------------------------------------------------------------------
# Snapshot round trip
# ---------------------------------------------------------------------------


def test_context_id_round_trip():
    rng = random.Random(15)
    for _ in range(200):
        ctx = tuple(rng.randrange(vocab.VOCAB_SIZE) for _ in range(3))
        assert context_from_id(context_id(ctx)) == ctx


def test_snapshot_round_trip(tmp_path):
    params = random_params(random.Random(16))
    path = tmp_path / "snap.bin"
    save_snapshot(params, path)
    table = load_snapshot(path)
    assert table.vocab_hash == vocab.VOCAB_HASH
    restored = params_from_snapshot(table)
    assert restored.logits == params.logits


def test_snapshot_bytes_deterministic(tmp_path):
    params = random_params(random.Random(17))
    save_snapshot(params, tmp_path / "a.bin")
    save_snapshot(params, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
