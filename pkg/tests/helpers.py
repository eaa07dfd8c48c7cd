"""Shared fixtures-in-spirit: prompts, random policies and oracle helpers."""

from __future__ import annotations

import math
import random

from splab import vocab
from splab.policy import (
    CompletionMachine,
    PolicyParams,
    context_at,
    distribution,
    grad_logprob,
    logprob_of,
    proposer_prompt,
    sample,
)
from splab.vocab import ALLOWED, PositionKind

DED_PROMPT = (vocab.MODE_DED, vocab.token_id("X"), vocab.SEP, vocab.literal_id(0), vocab.GO)
ABD_PROMPT = (vocab.MODE_ABD, vocab.token_id("X"), vocab.SEP, vocab.literal_id(0), vocab.GO)
IND_PROMPT = (
    vocab.MODE_IND,
    vocab.literal_id(0), vocab.SEP, vocab.literal_id(0), vocab.SEP,
    vocab.literal_id(1), vocab.SEP, vocab.literal_id(1),
    vocab.GO,
)
PROP_PROMPT = proposer_prompt(vocab.MODE_DED, vocab.DIFF_M)
ALL_PROMPTS = (DED_PROMPT, ABD_PROMPT, IND_PROMPT, PROP_PROMPT)


def ded_prompt(program_tokens, x):
    return (
        (vocab.MODE_DED,)
        + tuple(vocab.token_id(t) for t in program_tokens)
        + (vocab.SEP, vocab.literal_id(x), vocab.GO)
    )


def literal_context(prompt):
    """Context of the answer-literal position for a ded/abd prompt."""
    return context_at(list(prompt) + [vocab.ANSWER], len(prompt) + 1)


def random_params(rng: random.Random, n_contexts=40, scale=2.0) -> PolicyParams:
    """Random logits over contexts that actually occur in rollouts."""
    params = PolicyParams()
    probe = PolicyParams()
    contexts = []
    for _ in range(n_contexts):
        trace = sample(probe, rng.choice(ALL_PROMPTS), rng)
        machine = CompletionMachine(trace.tokens[: trace.prompt_len])
        seq = list(trace.tokens[: trace.prompt_len])
        for token in trace.completion:
            kind = machine.expected_kind()
            contexts.append((context_at(seq, len(seq)), kind))
            seq.append(token)
            machine.advance(token)
    for ctx, kind in contexts:
        row = {t: rng.uniform(-scale, scale) for t in ALLOWED[kind] if rng.random() < 0.7}
        if row:
            params.logits[ctx] = row
    return params


def finite_difference_check(params, trace, h=1e-5):
    """Max relative error between analytic gradient and central differences."""
    prompt = trace.tokens[: trace.prompt_len]
    grad = grad_logprob(params, trace)
    worst = 0.0
    for (ctx, token), analytic in grad.items():
        row = params.logits.setdefault(ctx, {})
        base = row.get(token, 0.0)
        row[token] = base + h
        up = logprob_of(params, prompt, trace.completion)
        row[token] = base - h
        down = logprob_of(params, prompt, trace.completion)
        row[token] = base
        numeric = (up - down) / (2 * h)
        scale = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst


def exact_answer_entropy(params, prompt):
    """Enumerate all completions of a ded/abd prompt: mean and variance of the
    per-token mean negative log-probability under the policy."""
    _, probs, logprobs = distribution(params, literal_context(prompt), PositionKind.LITERAL)
    mean = sum(p * (-lp / 3.0) for p, lp in zip(probs, logprobs))
    var = sum(p * ((-lp / 3.0) - mean) ** 2 for p, lp in zip(probs, logprobs))
    return mean, var


def exponential_smooth(values, factor=0.9):
    smoothed = []
    s = values[0]
    for v in values:
        s = factor * s + (1.0 - factor) * v
        smoothed.append(s)
    return smoothed
