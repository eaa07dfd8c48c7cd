"""Fixed token vocabulary shared by prompts, programs and the policy.

Token ids are stable for a given package version and are serialized into the
run manifest so artifacts stay self-describing. Programs serialize as
space-separated token names.
"""

from __future__ import annotations

import hashlib
import math
from enum import Enum

from .dsl import PROGRAM_TOKENS, TASK_BOUND

STRUCTURAL_TOKENS = ("PAD", "SEP", "GO", "ANSWER", "END")
CONTROL_TOKENS = (
    "PROPOSE",
    "MODE_DED",
    "MODE_ABD",
    "MODE_IND",
    "DIFF_E",
    "DIFF_M",
    "DIFF_H",
)
LITERAL_TOKENS = tuple(f"LIT_{v}" for v in range(-TASK_BOUND, TASK_BOUND + 1))

TOKEN_NAMES: tuple[str, ...] = STRUCTURAL_TOKENS + CONTROL_TOKENS + PROGRAM_TOKENS + LITERAL_TOKENS

_ID_BY_NAME = {name: i for i, name in enumerate(TOKEN_NAMES)}

VOCAB_SIZE = len(TOKEN_NAMES)

PAD = _ID_BY_NAME["PAD"]
SEP = _ID_BY_NAME["SEP"]
GO = _ID_BY_NAME["GO"]
ANSWER = _ID_BY_NAME["ANSWER"]
END = _ID_BY_NAME["END"]
PROPOSE = _ID_BY_NAME["PROPOSE"]
MODE_DED = _ID_BY_NAME["MODE_DED"]
MODE_ABD = _ID_BY_NAME["MODE_ABD"]
MODE_IND = _ID_BY_NAME["MODE_IND"]
DIFF_E = _ID_BY_NAME["DIFF_E"]
DIFF_M = _ID_BY_NAME["DIFF_M"]
DIFF_H = _ID_BY_NAME["DIFF_H"]

PROGRAM_IDS: tuple[int, ...] = tuple(_ID_BY_NAME[name] for name in PROGRAM_TOKENS)
LITERAL_IDS: tuple[int, ...] = tuple(_ID_BY_NAME[name] for name in LITERAL_TOKENS)

# Arity keyed by token id, for the completion state machine.
from .dsl import ARITY as _ARITY_BY_NAME  # noqa: E402

ARITY_BY_ID = {_ID_BY_NAME[name]: _ARITY_BY_NAME[name] for name in PROGRAM_TOKENS}

# 64-bit digest of the token table; snapshot headers carry it so analysis
# tools can refuse snapshots from a different vocabulary.
VOCAB_HASH = int.from_bytes(
    hashlib.sha256("\n".join(TOKEN_NAMES).encode()).digest()[:8], "big"
)


def token_id(name: str) -> int:
    return _ID_BY_NAME[name]


def token_name(tid: int) -> str:
    return TOKEN_NAMES[tid]


def literal_id(value: int) -> int:
    if abs(value) > TASK_BOUND:
        raise ValueError(f"no literal token for {value}")
    return _ID_BY_NAME[f"LIT_{value}"]


def literal_value(tid: int) -> int:
    name = TOKEN_NAMES[tid]
    if not name.startswith("LIT_"):
        raise ValueError(f"{name} is not a literal token")
    return int(name[4:])


def is_literal(tid: int) -> bool:
    return TOKEN_NAMES[tid].startswith("LIT_")


def vocab_table() -> list[list[object]]:
    """[[id, name], ...] rows for the run manifest."""
    return [[i, name] for i, name in enumerate(TOKEN_NAMES)]


class PositionKind(Enum):
    """What kind of token the grammar expects at a completion position."""

    PROGRAM = "program"
    LITERAL = "literal"
    SEP = "sep"
    ANSWER = "answer"
    END = "end"


# The base support mask: tokens q0 allows at each position kind. Immutable.
ALLOWED: dict[PositionKind, tuple[int, ...]] = {
    PositionKind.PROGRAM: tuple(sorted(PROGRAM_IDS)),
    PositionKind.LITERAL: tuple(sorted(LITERAL_IDS)),
    PositionKind.SEP: (SEP,),
    PositionKind.ANSWER: (ANSWER,),
    PositionKind.END: (END,),
}
ALLOWED_SET: dict[PositionKind, frozenset[int]] = {
    kind: frozenset(ids) for kind, ids in ALLOWED.items()
}
# Index of each token inside its kind's allowed tuple.
ALLOWED_INDEX: dict[PositionKind, dict[int, int]] = {
    kind: {tid: i for i, tid in enumerate(ids)} for kind, ids in ALLOWED.items()
}
UNIFORM_LOGPROB: dict[PositionKind, float] = {
    kind: -math.log(len(ids)) for kind, ids in ALLOWED.items()
}
