"""Horizontal discs, nested refinement towards an unstable-set point, and transverse Hoelder bounds.

Refinement keeps a past word and grows it block by block.  At each step the
set still to be placed (the pull-back of the disc values over the current
cylinder) is summarized by a center and a radius; the least block whose
image holds that ball is prepended.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .blending import Block, CoveringCertificate
from .errors import InputError, VerificationFailure
from .regions import Region
from .shift_space import TruncatedSequence, agreement_depth, as_word, perturb_from
from .skewproduct import SkewSystem, word_map


@dataclass(frozen=True, eq=False)
class HorizontalDisc:
    """Graph over the local stable set of ``base``: a point for every past.

    The value depends on the last ``table_depth`` past symbols only.
    ``table`` maps those suffixes to points; an empty table means the
    constant disc at ``center``.
    """

    base: TruncatedSequence
    center: np.ndarray
    radius: float
    C: float = 0.0
    alpha: float = 1.0
    table: dict = field(default_factory=dict)
    table_depth: int = 0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))
        tab = {as_word(k): np.asarray(v, dtype=float).reshape(-1) for k, v in self.table.items()}
        object.__setattr__(self, "table", tab)
        if tab and any(len(k) != self.table_depth for k in tab):
            raise InputError("table keys must all have length table_depth")
        if not self.radius > 0:
            raise InputError("disc radius must be positive")

    @classmethod
    def constant(cls, base: TruncatedSequence, x0, radius: float) -> "HorizontalDisc":
        return cls(base, x0, radius)

    @classmethod
    def from_rule(cls, base: TruncatedSequence, rule: Callable[[tuple], np.ndarray], depth: int, d: int,
                  radius: float, C: float, alpha: float = 1.0) -> "HorizontalDisc":
        table = {w: rule(w) for w in itertools.product(range(1, d + 1), repeat=depth)}
        x0 = rule(base.past[-depth:]) if len(base.past) >= depth else next(iter(table.values()))
        return cls(base, x0, radius, C, alpha, table, depth)

    def value(self, past: Sequence[int]) -> np.ndarray:
        if not self.table:
            return self.center
        k = self.table_depth
        if len(past) < k:
            raise InputError(f"disc needs {k} past symbols")
        return self.table[tuple(past[len(past) - k:])]

    def values_over(self, suffix: Sequence[int], d: int) -> np.ndarray:
        """Every disc value over pasts ending with ``suffix``."""
        if not self.table:
            return self.center[None, :]
        free = max(0, self.table_depth - len(suffix))
        return np.array([self.value(tuple(p) + tuple(suffix))
                         for p in itertools.product(range(1, d + 1), repeat=free)])

    def check(self, nu: float, d: int) -> dict:
        """Disc condition ``C nu^alpha < radius`` plus sampled graph checks."""
        vals = self.values_over((), d)
        spread = float(np.max(np.linalg.norm(vals - self.center, axis=-1)))
        worst = 0.0
        if self.table:
            keys = list(self.table)
            for a, b in itertools.combinations(keys, 2):
                ell = next(i for i in range(1, len(a) + 1) if a[-i] != b[-i])
                dist = nu ** (self.alpha * ell)
                worst = max(worst, float(np.linalg.norm(self.table[a] - self.table[b])) / dist)
        return {"disc_condition_slack": self.radius - self.C * nu ** self.alpha,
                "center_spread": spread, "center_slack": self.radius - spread,
                "holder_observed": worst, "holder_slack": self.C - worst}

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "center": self.center.tolist(), "radius": self.radius,
                "C": self.C, "alpha": self.alpha, "table_depth": self.table_depth,
                "table": [{"suffix": list(k), "value": v.tolist()} for k, v in self.table.items()]}

    @classmethod
    def from_dict(cls, data: dict) -> "HorizontalDisc":
        base = TruncatedSequence.from_dict(data.get("base", {}))
        table = {tuple(r["suffix"]): r["value"] for r in data.get("table", [])}
        return cls(base, data["center"], float(data["radius"]), float(data.get("C", 0.0)),
                   float(data.get("alpha", 1.0)), table, int(data.get("table_depth", 0)))


@dataclass(frozen=True)
class RefinementStep:
    n: int
    block: Block
    m: int
    delta_bound: float
    diam_V: float
    diam_A: float
    pullback_bound: float
    center_A: tuple[float, ...]
    depth_margin: float
    orbit_margin: float

    def to_dict(self) -> dict:
        return dict(self.__dict__, block=list(self.block), center_A=list(self.center_A))


@dataclass(frozen=True, eq=False)
class RefinementTrace:
    word: tuple[Block, ...]
    steps: tuple[RefinementStep, ...]
    sequence: TruncatedSequence
    point: np.ndarray
    error_radius: float
    lebesgue_lower: float
    mode: str = "cs"

    @property
    def chosen(self) -> tuple[int, ...]:
        """Symbols in the order their inverses are applied to the disc value."""
        return tuple(s for b in reversed(self.word) for s in (reversed(b) if self.mode == "cs" else b))

    @property
    def boundaries(self) -> tuple[int, ...]:
        return tuple(st.m for st in self.steps)

    @property
    def valid(self) -> bool:
        return all(st.diam_V <= st.delta_bound * (1 + 1e-12) + 1e-15 and st.diam_A < self.lebesgue_lower
                   and st.orbit_margin > 0 for st in self.steps)

    def to_dict(self) -> dict:
        return {"kind": "refinement", "valid": self.valid, "word": [list(b) for b in self.word],
                "chosen": list(self.chosen), "sequence": self.sequence.to_dict(), "point": self.point.tolist(),
                "error_radius": self.error_radius, "steps": [s.to_dict() for s in self.steps]}


def _pullback_word(cert: CoveringCertificate, word: Sequence[Block]):
    """``f_{b_1} o ... o f_{b_n}`` for chronological blocks; its inverse pulls disc values back."""
    f = None
    for blk in reversed(word):
        g = word_map(cert.system, blk)
        if cert.mode == "cu":
            g = g.inverse()
        f = g if f is None else g.then(f)
    return f


def refine_intersection(cert: CoveringCertificate, disc: HorizontalDisc, N: int) -> RefinementTrace:
    """Nested refinement of a horizontal disc along the covering of ``cert``.

    Returns the past word, per-step diameters and the approximate point of
    the unstable set on the disc.
    """
    if N < 1:
        raise InputError("N must be >= 1")
    sys = cert.system
    if not sys.one_step:
        raise InputError("refinement is implemented for one-step systems")
    B = cert.B
    nu, alpha, gamma = sys.nu, sys.alpha, sys.gamma
    C = disc.C
    info = disc.check(nu, sys.d)
    vals0 = disc.values_over((), sys.d)
    in_B = np.atleast_1d(B.signed_distance(vals0))
    if info["disc_condition_slack"] <= 0 or info["center_slack"] <= 0:
        raise InputError(f"disc violates its defining inequalities: {info}")
    if np.min(in_B) <= 0:
        raise InputError("disc values are not inside B")
    if disc.radius >= cert.delta_max:
        raise InputError(f"disc radius {disc.radius} is not below delta_max {cert.delta_max}")

    word: list[Block] = []
    past: tuple[int, ...] = ()
    steps = []
    m = 0
    for n in range(1, N + 1):
        vals = disc.values_over(past, sys.d)
        F = _pullback_word(cert, word)
        pulled = vals if F is None else F.inverse_apply(vals)
        center = pulled.mean(axis=0)
        rad = float(np.max(np.linalg.norm(pulled - center, axis=-1)))
        depths = cert.depths(center)[:, 0]
        ok = np.flatnonzero(depths > rad + cert.correction)
        if ok.size == 0:
            raise VerificationFailure("no block covers the current set", {
                "step": n, "center": center.tolist(), "radius": rad, "best_depth": float(depths.max())},
                stage="refinement")
        k = int(ok[0])
        blk = cert.symbols[k]
        word.insert(0, blk)
        # storage order: the newest block is furthest in the past
        stored = blk if cert.mode == "cs" else tuple(reversed(blk))
        past = stored + past
        m += len(blk)
        vals_n = disc.values_over(past, sys.d)
        diam_V = _diameter(vals_n)
        Fn = _pullback_word(cert, word)
        A_n = Fn.inverse_apply(vals_n)
        diam_A = _diameter(A_n)
        # intermediate images along the block stay in D; block boundary lands in B
        orbit = _orbit_margin(cert, word, vals_n)
        steps.append(RefinementStep(
            n=n, block=blk, m=m, delta_bound=C * nu ** (m * alpha), diam_V=diam_V, diam_A=diam_A,
            pullback_bound=C * (nu ** alpha / gamma) ** m, center_A=tuple(A_n.mean(axis=0)),
            depth_margin=float(depths[k] - rad - cert.correction), orbit_margin=orbit))
    vals_N = disc.values_over(past, sys.d)
    point = vals_N.mean(axis=0)
    err = max(_diameter(vals_N), C * nu ** (m * alpha))
    if cert.mode == "cs":
        seq = TruncatedSequence(past, disc.base.future, max(disc.base.depth, len(past), 1))
    else:
        seq = TruncatedSequence(disc.base.past, tuple(reversed(past)), max(disc.base.depth, len(past), 1))
    return RefinementTrace(tuple(word), tuple(steps), seq, point, float(err), cert.lebesgue_lower, cert.mode)


def _diameter(pts: np.ndarray) -> float:
    if pts.shape[0] < 2:
        return 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.max(np.linalg.norm(diff, axis=-1)))


def _orbit_margin(cert: CoveringCertificate, word: Sequence[Block], vals: np.ndarray) -> float:
    """Min margin of the backward orbit: inside D along blocks, inside B at boundaries."""
    pts = vals
    best = float(np.min(cert.B.signed_distance(pts)))
    for blk in reversed(word):
        seq = blk if cert.mode == "cs" else tuple(reversed(blk))
        for j, s in enumerate(reversed(seq)):
            f = cert.system.symbol_map(s)
            pts = f.inverse_apply(pts) if cert.mode == "cs" else f(pts)
            region = cert.B if j == len(seq) - 1 else cert.D
            best = min(best, float(np.min(np.atleast_1d(region.signed_distance(pts)))))
    return best


def lex_least_admissible(cert: CoveringCertificate, x0, length: int) -> tuple[Block, ...] | None:
    """Brute force: lexicographically least block sequence whose pull-backs of ``x0`` stay in B."""
    for combo in itertools.product(cert.symbols, repeat=length):
        x = np.asarray(x0, dtype=float)
        ok = True
        for blk in combo:
            x = cert.pull(x, blk)
            if not cert.B.signed_distance(x) > 0:
                ok = False
                break
        if ok:
            return combo
    return None


def holder_transverse_bound(sys: SkewSystem, agreement: int, n: int) -> float:
    """``C0 nu^{-alpha n} sum_{j<n} (gamma^{-1} nu^alpha)^j d^alpha`` with ``d = nu^agreement``."""
    if n < 1:
        raise InputError("n must be >= 1")
    q = sys.nu ** sys.alpha / sys.gamma
    d_alpha = sys.nu ** (sys.alpha * agreement)
    return float(sys.C0 * sys.nu ** (-sys.alpha * n) * sum(q ** j for j in range(n)) * d_alpha)


def holder_transverse_spread(sys: SkewSystem, cylinder: TruncatedSequence, x, n: int, pairs: int,
                             rng: np.random.Generator, D: Region | None = None) -> dict:
    """Empirical ``|phi^{-i}_xi(x) - phi^{-i}_zeta(x)|`` against the bound, for ``i <= n``.

    Pairs extend ``cylinder`` at random and first disagree beyond ring
    ``n``, so both backward orbits read the same symbols.  Returns the
    worst spread, the worst spread/bound ratio and the bound at the
    shallowest admissible agreement.
    """
    x = np.asarray(x, dtype=float)
    w = sys.window
    need = n + w + 2
    lo = n + 1
    worst = 0.0
    worst_ratio = 0.0
    for _ in range(pairs):
        past = tuple(int(s) for s in rng.integers(1, sys.d + 1, size=need))
        fut = tuple(int(s) for s in rng.integers(1, sys.d + 1, size=need))
        cp, cf = cylinder.past[-need:], cylinder.future[:need]
        past = past[:need - len(cp)] + cp
        fut = cf + fut[len(cf):]
        xi = TruncatedSequence(past, fut, need)
        zeta = perturb_from(rng, xi, sys.d, int(rng.integers(lo, need)))
        ell, _ = agreement_depth(xi, zeta)
        a = sys.backward_orbit(xi, n, x)
        b = sys.backward_orbit(zeta, n, x)
        if D is not None:
            esc = np.flatnonzero(np.minimum(D.signed_distance(a), D.signed_distance(b)) < 0)
            if esc.size:
                raise VerificationFailure("backward orbit leaves D", {"step": int(esc[0])}, stage="holder")
        for i in range(1, n + 1):
            spread = float(np.linalg.norm(a[i] - b[i]))
            bound = holder_transverse_bound(sys, ell, i)
            worst = max(worst, spread)
            if bound > 0:
                worst_ratio = max(worst_ratio, spread / bound)
            elif spread > 0:
                worst_ratio = np.inf
    return {"spread": worst, "bound": holder_transverse_bound(sys, lo, n), "agreement": lo,
            "max_ratio": float(worst_ratio)}


@dataclass(frozen=True)
class LambdaUReport:
    ok: bool
    margin: float
    boundaries: tuple[int, ...]
    witness: dict

    def to_dict(self) -> dict:
        return {"ok": self.ok, "margin": self.margin, "boundaries": list(self.boundaries), "witness": self.witness}


def verify_lambda_u(sys: SkewSystem, point: tuple[TruncatedSequence, np.ndarray], B: Region, depth: int,
                    blocks: Sequence[int] = (1,), boundaries: Sequence[int] | None = None) -> LambdaUReport:
    """Backward images at block boundaries stay in B (up to ``depth``).

    Without explicit ``boundaries`` the max-min chain with gaps in
    ``blocks`` is searched by dynamic programming.
    """
    xi, x = point
    if depth > len(xi.past):
        raise InputError(f"depth {depth} exceeds stored past {len(xi.past)}")
    orbit = sys.backward_orbit(xi, depth, x)
    sd = np.atleast_1d(B.signed_distance(orbit))
    if boundaries is not None:
        bd = (0,) + tuple(int(b) for b in boundaries if 0 < b <= depth)
        margin = float(np.min(sd[list(bd)]))
        if margin <= 0:
            bad = bd[int(np.argmin(sd[list(bd)]))]
            return LambdaUReport(False, margin, bd, {"step": bad, "point": orbit[bad].tolist()})
        return LambdaUReport(True, margin, bd, {})
    gaps = sorted(set(int(b) for b in blocks))
    best = np.full(depth + 1, -np.inf)
    prev = np.full(depth + 1, -1)
    best[0] = sd[0]
    for m in range(1, depth + 1):
        for g in gaps:
            if m - g >= 0 and best[m - g] > 0:
                cand = min(best[m - g], sd[m])
                if cand > best[m]:
                    best[m], prev[m] = cand, m - g
    tail = [m for m in range(max(0, depth - max(gaps) + 1), depth + 1) if best[m] > 0]
    if not tail:
        reach = [m for m in range(depth + 1) if best[m] > 0]
        stop = max(reach) if reach else 0
        return LambdaUReport(False, float(np.max(best[max(0, depth - max(gaps) + 1):])), (),
                             {"last_boundary": stop, "point": orbit[min(stop + 1, depth)].tolist()})
    end = max(tail, key=lambda m: best[m])
    chain = []
    while end >= 0:
        chain.append(end)
        end = prev[end] if end > 0 else -1
    chain = tuple(reversed(chain))
    return LambdaUReport(True, float(best[chain[-1]]), chain, {})
