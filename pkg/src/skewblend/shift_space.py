"""Truncated bi-sequences over a finite alphabet and the nu-metric on them.

A point of the full shift is never stored. A ``TruncatedSequence`` keeps a
past block (coordinates -k..-1, oldest first) and a future block
(coordinates 0..j-1) and stands for the cylinder of every bi-sequence that
agrees with it there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

DEFAULT_DEPTH = 64

Word = tuple[int, ...]


def as_word(symbols: Iterable[int]) -> Word:
    word = tuple(int(s) for s in symbols)
    if any(s < 1 for s in word):
        raise InputError(f"symbols are positive integers, got {word}")
    return word


def parse_word(text: str) -> Word:
    """Parse ``"2,1,3"`` or ``"[2, 1, 3]"``."""
    body = text.strip().strip("[]()").strip()
    if not body:
        return ()
    try:
        return as_word(int(tok) for tok in body.split(","))
    except ValueError as exc:
        raise InputError(f"cannot parse word {text!r}") from exc


def format_word(word: Sequence[int]) -> str:
    return "[" + ",".join(str(s) for s in word) + "]"


@dataclass(frozen=True)
class TruncatedSequence:
    """Past block ``(xi_{-k}, ..., xi_{-1})`` and future block ``(xi_0, ..., xi_{j-1})``."""

    past: Word = ()
    future: Word = ()
    depth: int = DEFAULT_DEPTH

    def __post_init__(self):
        object.__setattr__(self, "past", as_word(self.past))
        object.__setattr__(self, "future", as_word(self.future))
        if self.depth < 1:
            raise InputError("depth must be >= 1")
        # storage grows on demand; depth is the nominal resolution
        if len(self.past) > self.depth or len(self.future) > self.depth:
            object.__setattr__(self, "depth", max(len(self.past), len(self.future)))

    def has(self, i: int) -> bool:
        return -len(self.past) <= i < len(self.future)

    def __getitem__(self, i: int) -> int:
        if 0 <= i < len(self.future):
            return self.future[i]
        if -len(self.past) <= i < 0:
            return self.past[len(self.past) + i]
        raise InputError(f"coordinate {i} not stored (past {len(self.past)}, future {len(self.future)})")

    def window(self, lo: int, hi: int) -> Word:
        """Coordinates ``lo..hi`` inclusive."""
        return tuple(self[i] for i in range(lo, hi + 1))

    def shift(self, n: int = 1) -> "TruncatedSequence":
        """Apply the shift ``n`` times (negative ``n`` shifts backwards)."""
        if n >= 0:
            if n > len(self.future):
                raise InputError(f"cannot shift by {n}: only {len(self.future)} future symbols")
            return TruncatedSequence(self.past + self.future[:n], self.future[n:], self.depth)
        k = -n
        if k > len(self.past):
            raise InputError(f"cannot shift by {n}: only {len(self.past)} past symbols")
        cut = len(self.past) - k
        return TruncatedSequence(self.past[:cut], self.past[cut:] + self.future, self.depth)

    def to_dict(self) -> dict:
        return {"past": list(self.past), "future": list(self.future), "depth": self.depth}

    @classmethod
    def from_dict(cls, data: dict) -> "TruncatedSequence":
        return cls(tuple(data.get("past", ())), tuple(data.get("future", ())), int(data.get("depth", DEFAULT_DEPTH)))

    def __str__(self) -> str:
        return f"past={format_word(self.past)}, future={format_word(self.future)}"


@dataclass(frozen=True)
class SigmaDistance:
    """Distance value plus whether it is exact or only an upper bound."""

    value: float
    exact: bool
    agreement: int = field(default=0)

    def __float__(self) -> float:
        return self.value


def agreement_depth(xi: TruncatedSequence, zeta: TruncatedSequence) -> tuple[int, bool]:
    """First index ``l`` with ``xi_l != zeta_l`` or ``xi_-l != zeta_-l``.

    Returns ``(l, True)`` when a disagreement is found among stored
    coordinates and ``(k, False)`` when they agree on all ``k`` jointly
    stored rings.
    """
    reach_f = min(len(xi.future), len(zeta.future))
    reach_p = min(len(xi.past), len(zeta.past))
    limit = min(xi.depth, max(reach_f, reach_p + 1))
    for i in range(limit):
        if i >= reach_f or (i > 0 and i > reach_p):
            return i, False
        if xi.future[i] != zeta.future[i]:
            return i, True
        if i > 0 and xi[-i] != zeta[-i]:
            return i, True
    return limit, False


def sigma_distance(xi: TruncatedSequence, zeta: TruncatedSequence, nu: float) -> SigmaDistance:
    """``nu**l`` for the first disagreement ring ``l``; a bound when none is stored."""
    if xi.depth != zeta.depth:
        raise InputError(f"depth mismatch: {xi.depth} vs {zeta.depth}")
    if not 0.0 < nu < 1.0:
        raise InputError("nu must lie in (0, 1)")
    ell, exact = agreement_depth(xi, zeta)
    return SigmaDistance(float(nu) ** ell, exact, ell)


def cylinder_membership(xi: TruncatedSequence, kind: str, s: int) -> bool:
    """Horizontal cylinder: ``xi_0 == s``. Vertical cylinder: ``xi_-1 == s``."""
    if kind in ("horizontal", "H"):
        return bool(xi.future) and xi.future[0] == s
    if kind in ("vertical", "V"):
        return bool(xi.past) and xi.past[-1] == s
    raise InputError(f"unknown cylinder kind {kind!r}")


def prepend_block(xi: TruncatedSequence, alpha: Sequence[int]) -> TruncatedSequence:
    """Put ``alpha`` in front of the past block (further into the past)."""
    past = as_word(alpha) + xi.past
    return TruncatedSequence(past, xi.future, max(xi.depth, len(past)))


def random_sequence(rng: np.random.Generator, d: int, m: int = DEFAULT_DEPTH) -> TruncatedSequence:
    past = tuple(int(s) for s in rng.integers(1, d + 1, size=m))
    future = tuple(int(s) for s in rng.integers(1, d + 1, size=m))
    return TruncatedSequence(past, future, m)


def perturb_from(rng: np.random.Generator, xi: TruncatedSequence, d: int, ring: int) -> TruncatedSequence:
    """Copy of ``xi`` agreeing on rings ``< ring`` and differing at ring ``ring``.

    Coordinates beyond ``ring`` are resampled.
    """
    m = xi.depth
    fut = list(xi.future)
    pas = list(xi.past)
    for i in range(ring, len(fut)):
        fut[i] = int(rng.integers(1, d + 1))
    for i in range(max(ring, 1), len(pas) + 1):
        pas[len(pas) - i] = int(rng.integers(1, d + 1))
    # force a disagreement exactly at the ring
    if ring < len(fut) and (ring == 0 or rng.random() < 0.5 or ring > len(pas)):
        fut[ring] = xi.future[ring] % d + 1
    elif 0 < ring <= len(pas):
        pas[len(pas) - ring] = xi.past[len(pas) - ring] % d + 1
    return TruncatedSequence(tuple(pas), tuple(fut), m)
