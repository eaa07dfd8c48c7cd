"""Exact sparse trigram softmax policy with grammar-constrained decoding.

The policy conditions each generated token on the previous three tokens of
the full sequence (prompt included). Logits live in a sparse table that
defaults to 0.0, so a fresh policy is uniform over the base support mask:
the set of tokens the grammar allows at each position kind. Probabilities,
log-probabilities and score-function gradients are all exact, which lets the
support-preservation property be asserted rather than estimated.
"""

from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from . import vocab
from .vocab import ALLOWED, ALLOWED_INDEX, ALLOWED_SET, UNIFORM_LOGPROB, PositionKind

CONTEXT_ORDER = 3
MAX_COMPLETION_TOKENS = 64

Context = tuple[int, int, int]

SNAPSHOT_MAGIC = b"SPLSNAP1"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<8sIIIQQ")  # magic, version, order, vocab size, vocab hash, n records
_RECORD = struct.Struct("<QId")  # context id, token id, logit


class Role(Enum):
    PROPOSER = "proposer"
    SOLVER = "solver"


class OffSupportError(Exception):
    """A completion token falls outside the base support mask."""

    def __init__(self, position: int, token: int):
        super().__init__(f"token {vocab.token_name(token)} off support at position {position}")
        self.position = position
        self.token = token


class CompletionMachine:
    """Tracks the position kind expected at each step of one completion.

    The plan is derived from the prompt's first token: PROPOSE prompts emit
    `program SEP literal END`, deduction/abduction prompts emit
    `ANSWER literal END`, induction prompts emit `ANSWER program END`.
    Off-mask tokens (possible only under an exploration mix) leave the state
    unchanged, so classification stays well-defined for any token sequence.
    """

    _PROPOSER_PLAN = (PositionKind.PROGRAM, PositionKind.SEP, PositionKind.LITERAL, PositionKind.END)
    _SOLVER_LITERAL_PLAN = (PositionKind.ANSWER, PositionKind.LITERAL, PositionKind.END)
    _SOLVER_PROGRAM_PLAN = (PositionKind.ANSWER, PositionKind.PROGRAM, PositionKind.END)

    def __init__(self, prompt: Sequence[int]):
        if not prompt:
            raise ValueError("prompt must be nonempty")
        first = prompt[0]
        if first == vocab.PROPOSE:
            if len(prompt) < 2 or prompt[1] not in (vocab.MODE_DED, vocab.MODE_ABD, vocab.MODE_IND):
                raise ValueError("proposer prompt must carry a mode token")
            self.role = Role.PROPOSER
            self.mode_token = prompt[1]
            self._plan = self._PROPOSER_PLAN
        elif first in (vocab.MODE_DED, vocab.MODE_ABD):
            self.role = Role.SOLVER
            self.mode_token = first
            self._plan = self._SOLVER_LITERAL_PLAN
        elif first == vocab.MODE_IND:
            self.role = Role.SOLVER
            self.mode_token = first
            self._plan = self._SOLVER_PROGRAM_PLAN
        else:
            raise ValueError(f"prompt must start with PROPOSE or a mode token, got {vocab.token_name(first)}")
        self._stage = 0
        self._needed = 1 if self._plan[0] is PositionKind.PROGRAM else 0

    def expected_kind(self) -> PositionKind | None:
        if self._stage >= len(self._plan):
            return None
        return self._plan[self._stage]

    def advance(self, token: int) -> None:
        kind = self.expected_kind()
        if kind is None or token not in ALLOWED_SET[kind]:
            return
        if kind is PositionKind.PROGRAM:
            self._needed += vocab.ARITY_BY_ID[token] - 1
            if self._needed > 0:
                return
        self._stage += 1
        if self._stage < len(self._plan) and self._plan[self._stage] is PositionKind.PROGRAM:
            self._needed = 1


@dataclass
class PolicyParams:
    """Sparse logit table plus decoding configuration.

    The base support mask lives in :mod:`splab.vocab` and is immutable; the
    table only reweights tokens inside it. `gamma_explore` > 0 makes the
    sampler mix a uniform distribution over the full vocabulary into every
    step — the only mechanism that can emit off-mask tokens.
    """

    context_order: int = CONTEXT_ORDER
    logits: dict[Context, dict[int, float]] = field(default_factory=dict)
    gamma_explore: float = 0.0
    role_update_mask: str = "both"  # or "solver_only"

    def copy(self) -> "PolicyParams":
        return replace(self, logits={ctx: dict(row) for ctx, row in self.logits.items()})

    def pure(self) -> "PolicyParams":
        """A no-exploration view sharing this table (read-only use)."""
        return replace(self, gamma_explore=0.0)

    def cell_count(self) -> int:
        return sum(len(row) for row in self.logits.values())


@dataclass(frozen=True)
class SampleTrace:
    """One autoregressive rollout; `tokens` includes the prompt."""

    role: Role
    mode_token: int
    prompt_len: int
    tokens: tuple[int, ...]
    logprobs: tuple[float, ...]
    truncated: bool

    @property
    def completion(self) -> tuple[int, ...]:
        return self.tokens[self.prompt_len :]

    @property
    def response_len(self) -> int:
        return len(self.tokens) - self.prompt_len


def context_at(tokens: Sequence[int], pos: int) -> Context:
    """The trigram context for the token at `pos` (PAD-padded on the left)."""
    window = [vocab.PAD] * max(0, CONTEXT_ORDER - pos) + list(tokens[max(0, pos - CONTEXT_ORDER) : pos])
    return tuple(window)


def distribution(
    params: PolicyParams, ctx: Context, kind: PositionKind
) -> tuple[tuple[int, ...], list[float], list[float]]:
    """Masked softmax at one context: (allowed ids, probabilities, logprobs).

    Shared by sampling, scoring and gradients so all three agree bitwise.
    """
    allowed = ALLOWED[kind]
    row = params.logits.get(ctx)
    if not row:
        n = len(allowed)
        return allowed, [1.0 / n] * n, [UNIFORM_LOGPROB[kind]] * n
    vals = [row.get(t, 0.0) for t in allowed]
    m = max(vals)
    weights = [math.exp(v - m) for v in vals]
    total = sum(weights)
    log_total = math.log(total)
    probs = [w / total for w in weights]
    logprobs = [(v - m) - log_total for v in vals]
    return allowed, probs, logprobs


def sample(params: PolicyParams, prompt: Sequence[int], rng: random.Random) -> SampleTrace:
    """Autoregressively sample a completion for `prompt`.

    Generation stops at END or after MAX_COMPLETION_TOKENS tokens
    (`truncated` is set when no END was emitted). With gamma_explore == 0
    every token is drawn from the masked softmax and `logprobs` are exact
    policy log-probabilities; with gamma_explore > 0 the recorded values are
    log-probabilities of the actual sampling mixture.
    """
    machine = CompletionMachine(prompt)
    tokens = list(prompt)
    logprobs: list[float] = []
    gamma = params.gamma_explore
    truncated = True
    for _ in range(MAX_COMPLETION_TOKENS):
        kind = machine.expected_kind()
        if kind is None:
            break
        ctx = context_at(tokens, len(tokens))
        allowed, probs, lps = distribution(params, ctx, kind)
        if gamma > 0.0 and rng.random() < gamma:
            token = rng.randrange(vocab.VOCAB_SIZE)
        else:
            r = rng.random()
            acc = 0.0
            token = allowed[-1]
            for i, p in enumerate(probs):
                acc += p
                if r < acc:
                    token = allowed[i]
                    break
        if gamma > 0.0:
            idx = ALLOWED_INDEX[kind].get(token)
            base = probs[idx] if idx is not None else 0.0
            logprobs.append(math.log((1.0 - gamma) * base + gamma / vocab.VOCAB_SIZE))
        else:
            logprobs.append(lps[ALLOWED_INDEX[kind][token]])
        tokens.append(token)
        machine.advance(token)
        if token == vocab.END:
            truncated = False
            break
    return SampleTrace(
        role=machine.role,
        mode_token=machine.mode_token,
        prompt_len=len(prompt),
        tokens=tuple(tokens),
        logprobs=tuple(logprobs),
        truncated=truncated,
    )


def logprob_of(params: PolicyParams, prompt: Sequence[int], completion: Sequence[int]) -> float:
    """Exact policy log-probability of `completion` given `prompt`.

    Raises OffSupportError at the first completion token outside the base
    mask (probability exactly zero). Matches the logprobs recorded by
    `sample` bitwise when gamma_explore == 0.
    """
    machine = CompletionMachine(prompt)
    tokens = list(prompt)
    total = 0.0
    for pos, token in enumerate(completion):
        kind = machine.expected_kind()
        if kind is None or token not in ALLOWED_SET[kind]:
            raise OffSupportError(pos, token)
        ctx = context_at(tokens, len(tokens))
        _, _, lps = distribution(params, ctx, kind)
        total += lps[ALLOWED_INDEX[kind][token]]
        tokens.append(token)
        machine.advance(token)
    return total


def grad_logprob(params: PolicyParams, trace: SampleTrace) -> dict[tuple[Context, int], float]:
    """Score-function gradient of the trace's completion log-probability.

    For each generated position with context c and sampled token s the entry
    for every allowed token t is (1[t == s] - pi(t | c)); masked tokens get
    no entry. Positions whose sampled token is off-mask (exploration mix)
    contribute nothing, since the mixture there does not depend on logits.
    """
    machine = CompletionMachine(trace.tokens[: trace.prompt_len])
    grad: dict[tuple[Context, int], float] = {}
    tokens = list(trace.tokens[: trace.prompt_len])
    for token in trace.completion:
        kind = machine.expected_kind()
        if kind is None:
            break
        if token not in ALLOWED_SET[kind]:
            machine.advance(token)
            tokens.append(token)
            continue
        ctx = context_at(tokens, len(tokens))
        allowed, probs, _ = distribution(params, ctx, kind)
        for i, t in enumerate(allowed):
            key = (ctx, t)
            delta = (1.0 if t == token else 0.0) - probs[i]
            grad[key] = grad.get(key, 0.0) + delta
        tokens.append(token)
        machine.advance(token)
    return grad


def context_id(ctx: Context) -> int:
    a, b, c = ctx
    return (a * vocab.VOCAB_SIZE + b) * vocab.VOCAB_SIZE + c


def context_from_id(cid: int) -> Context:
    c = cid % vocab.VOCAB_SIZE
    cid //= vocab.VOCAB_SIZE
    b = cid % vocab.VOCAB_SIZE
    a = cid // vocab.VOCAB_SIZE
    return (a, b, c)


@dataclass
class SnapshotTable:
    """Decoded parameter snapshot: header fields plus (context id, token) cells."""

    context_order: int
    vocab_size: int
    vocab_hash: int
    cells: dict[tuple[int, int], float]


def save_snapshot(params: PolicyParams, path: Path) -> None:
    records = sorted(
        (context_id(ctx), token, logit)
        for ctx, row in params.logits.items()
        for token, logit in row.items()
    )
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                SNAPSHOT_MAGIC,
                SNAPSHOT_VERSION,
                params.context_order,
                vocab.VOCAB_SIZE,
                vocab.VOCAB_HASH,
                len(records),
            )
        )
        for cid, token, logit in records:
            fh.write(_RECORD.pack(cid, token, logit))


class SnapshotFormatError(ValueError):
    pass


def load_snapshot(path: Path) -> SnapshotTable:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise SnapshotFormatError(f"{path}: too short for a snapshot header")
    magic, version, order, vsize, vhash, n = _HEADER.unpack_from(data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"{path}: unsupported snapshot version {version}")
    expected = _HEADER.size + n * _RECORD.size
    if len(data) != expected:
        raise SnapshotFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    cells = {}
    for i in range(n):
        cid, token, logit = _RECORD.unpack_from(data, _HEADER.size + i * _RECORD.size)
        cells[(cid, token)] = logit
    return SnapshotTable(order, vsize, vhash, cells)


def params_from_snapshot(table: SnapshotTable) -> PolicyParams:
    if table.vocab_hash != vocab.VOCAB_HASH or table.vocab_size != vocab.VOCAB_SIZE:
        raise SnapshotFormatError("snapshot was written under a different vocabulary")
    params = PolicyParams(context_order=table.context_order)
    for (cid, token), logit in table.cells.items():
        params.logits.setdefault(context_from_id(cid), {})[token] = logit
    return params


def proposer_prompt(mode_token: int, difficulty_token: int) -> tuple[int, ...]:
    return (vocab.PROPOSE, mode_token, difficulty_token, vocab.GO)
