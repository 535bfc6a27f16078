"""Transitions, robust cycles, tangent directions and the tangency pipeline."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .blending import (
    CoveringCertificate,
    build_translation_family,
    verify_covering,
)
from .cones import Cone, plane_ball_in_cone, verify_stable_cone, verify_unstable_cone
from .errors import CertificateInvalid, InputError, SkewBlendError, VerificationFailure
from .grassmann import (
    LiftedSystem,
    Plane,
    PlaneBall,
    PlaneCoveringCertificate,
    graph_distances,
    lift_system,
    lifted_lipschitz_empirical,
    verify_plane_covering,
)
from .intersect import verify_lambda_u
from .regions import Ball, Box, Region
from .shift_space import TruncatedSequence, Word
from .skewproduct import FiberMap, SkewSystem, word_map

# -- transitions -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransitionWitness:
    word: Word
    T: FiberMap
    source: np.ndarray
    image: np.ndarray
    margin: float
    source_margin: float
    plane: Plane | None = None
    image_plane: Plane | None = None

    @property
    def valid(self) -> bool:
        return self.margin > 0 and self.source_margin > 0

    def to_dict(self) -> dict:
        out = {"word": list(self.word), "source": self.source.tolist(), "image": self.image.tolist(),
               "target_margin": self.margin, "source_margin": self.source_margin,
               "map": self.T.to_dict()}
        if self.plane is not None:
            out["plane"] = self.plane.to_dict()
            out["image_plane"] = self.image_plane.to_dict()
        return out


def source_points(region: Region) -> np.ndarray:
    """Centroid followed by the inside points of a 3-per-axis lattice at quarter widths."""
    lo, hi = region.bounds()
    center = region.center
    if region.dim <= 6:
        offs = np.array(list(itertools.product((-1, 0, 1), repeat=region.dim)), dtype=float)
    else:
        offs = np.vstack([np.zeros(region.dim), np.eye(region.dim), -np.eye(region.dim)])
    pts = center + offs * (hi - lo) / 4
    pts = pts[np.atleast_1d(region.signed_distance(pts)) > 0]
    rest = pts[np.any(np.abs(pts - center) > 0, axis=1)]
    return np.vstack([center[None], rest])


def _iddfs(symbols: Sequence[int], max_depth: int, state0, step: Callable, leaf: Callable):
    """First word in (length, lex) order whose state has a positive margin.

    ``leaf(state)`` returns the margins of every one-symbol extension, one
    row per symbol.  Returns ``(word, state, margins)`` or
    ``(None, best_word, best_margin)``.
    """
    best = (-np.inf, None)
    for length in range(1, max_depth + 1):
        # depth-first, pushed in reverse so the smallest symbols pop first
        stack = [((), state0)]
        while stack:
            word, st = stack.pop()
            if len(word) == length - 1:
                rows = leaf(st)
                tops = rows.max(axis=1)
                hit = np.flatnonzero(tops > 0)
                if hit.size:
                    s = symbols[int(hit[0])]
                    return word + (s,), step(st, s), rows[hit[0]]
                k = int(np.argmax(tops))
                if tops[k] > best[0]:
                    best = (float(tops[k]), word + (symbols[k],))
                continue
            for s in reversed(symbols):
                stack.append((word + (s,), step(st, s)))
    return None, best[1], best[0]


def _stacked(sys: SkewSystem, syms: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([sys.symbol_map(s).A for s in syms]), np.array([sys.symbol_map(s).b for s in syms]))


def find_transition(sys: SkewSystem, source, target: Region, max_depth: int,
                    symbols: Sequence[int] | None = None) -> TransitionWitness:
    """Shortest, then lexicographically least, word carrying a source point into ``target``."""
    if max_depth < 1:
        raise InputError("max_depth must be >= 1")
    if isinstance(source, Region):
        pts, src_region = source_points(source), source
    else:
        pts, src_region = np.atleast_2d(np.asarray(source, dtype=float)), None
    syms = list(symbols) if symbols is not None else list(range(1, sys.d + 1))
    maps = {s: sys.symbol_map(s) for s in syms}
    A, b = _stacked(sys, syms)

    def leaf(X):
        Y = np.einsum("kab,nb->kna", A, X) + b[:, None]
        return np.asarray(target.signed_distance(Y.reshape(-1, X.shape[1]))).reshape(len(syms), -1)

    word, st, m = _iddfs(syms, max_depth, pts, lambda X, s: maps[s](X), leaf)
    if word is None:
        raise VerificationFailure(f"no transition of length <= {max_depth}",
                                  {"near_miss_distance": -m, "best_word": list(st) if st else None},
                                  stage="transition")
    i = int(np.argmax(m))
    src_margin = float(src_region.signed_distance(pts[i])) if src_region is not None else np.inf
    return TransitionWitness(word, word_map(sys, word), pts[i].copy(), st[i].copy(), float(m[i]), src_margin)


def find_lifted_transition(lift: LiftedSystem, source: Region, source_plane: Plane, target: Region,
                           target_planes: PlaneBall, max_depth: int,
                           symbols: Sequence[int] | None = None) -> TransitionWitness:
    """Transition for the lifted maps; margins are ``min(point margin, plane margin)``."""
    sys = lift.base
    pts = source_points(source)
    syms = list(symbols) if symbols is not None else list(range(1, sys.d + 1))
    maps = {s: sys.symbol_map(s) for s in syms}

    def step(st, s):
        X, F = st
        return maps[s](X), maps[s].A @ F

    A, b = _stacked(sys, syms)

    def leaf(st):
        X, F = st
        Y = np.einsum("kab,nb->kna", A, X) + b[:, None]
        mx = np.asarray(target.signed_distance(Y.reshape(-1, X.shape[1]))).reshape(len(syms), -1)
        mg = target_planes.radius - graph_distances(target_planes, A @ F)
        return np.minimum(mx, mg[:, None])

    word, st, m = _iddfs(syms, max_depth, (pts, source_plane.frame), step, leaf)
    if word is None:
        raise VerificationFailure(f"no lifted transition of length <= {max_depth}",
                                  {"near_miss_distance": -m, "best_word": list(st) if st else None},
                                  stage="transition")
    i = int(np.argmax(m))
    return TransitionWitness(word, word_map(sys, word), pts[i].copy(), st[0][i].copy(), float(m[i]),
                             float(source.signed_distance(pts[i])), source_plane, Plane.span(st[1]))


# -- cycles ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BlenderSpec:
    """A covering certificate together with the cs-index of its hyperbolic model."""

    cert: CoveringCertificate
    index: int

    def to_dict(self) -> dict:
        return {"index": self.index, **self.cert.to_dict()}


def _parts_disjoint(p, q) -> bool:
    if isinstance(p, Box) and isinstance(q, Box):
        return bool(np.any((p.hi <= q.lo) | (q.hi <= p.lo)))
    if isinstance(p, Ball) and isinstance(q, Ball):
        return bool(np.linalg.norm(p.center - q.center) >= p.radius + q.radius)
    ball, box = (p, q) if isinstance(p, Ball) else (q, p)
    gap = np.maximum(np.maximum(box.lo - ball.center, ball.center - box.hi), 0.0)
    return bool(np.linalg.norm(gap) >= ball.radius)


def regions_disjoint(R1: Region, R2: Region) -> bool:
    return all(_parts_disjoint(p, q) for p in R1.parts for q in R2.parts)


@dataclass(frozen=True, eq=False)
class CycleCertificate:
    cs: BlenderSpec
    cu: BlenderSpec
    t12: TransitionWitness
    t21: TransitionWitness
    co_index: int
    margins: dict

    @property
    def system(self) -> SkewSystem:
        return self.cs.cert.system

    @property
    def slack(self) -> float:
        return float(min(self.margins.values()))

    @property
    def valid(self) -> bool:
        return self.slack > 0 and self.co_index >= 0

    def to_dict(self) -> dict:
        return {"kind": "cycle", "valid": self.valid, "co_index": self.co_index, "slack": self.slack,
                "margins": self.margins, "cs_blender": self.cs.to_dict(), "cu_blender": self.cu.to_dict(),
                "t12": self.t12.to_dict(), "t21": self.t21.to_dict()}


def replay_covering(cert: CoveringCertificate, sys: SkewSystem | None = None, exact: bool = True
                    ) -> CoveringCertificate:
    """Re-run a covering check; with ``exact`` the slack must match the stored one."""
    fresh = verify_covering(sys or cert.system, cert.symbols, cert.B, cert.D, cert.h, cert.mode)
    if exact and sys is None and abs(fresh.slack - cert.slack) > 1e-12:
        raise CertificateInvalid("stored covering certificate is stale",
                                 {"stored": cert.slack, "replayed": fresh.slack}, stage="replay")
    return fresh


def _witness_margins(sys: SkewSystem, w: TransitionWitness, src: Region, dst: Region) -> tuple[float, float]:
    image = word_map(sys, w.word)(w.source)
    return float(src.signed_distance(w.source)), float(dst.signed_distance(image))


def verify_cycle(cs: BlenderSpec, cu: BlenderSpec, t12: TransitionWitness | None,
                 t21: TransitionWitness | None, sys: SkewSystem | None = None) -> CycleCertificate:
    """Replay both coverings and both transitions (cs-region to cu-region and back).

    With ``sys`` given (a perturbed system) the coverings are re-verified
    from scratch and the witness words are replayed on the new maps.
    """
    if t12 is None or t21 is None:
        raise InputError("a cycle needs transitions in both directions")
    if cs.cert.mode != "cs" or cu.cert.mode != "cu":
        raise InputError("expected a cs-blender and a cu-blender")
    if cs.cert.system is not cu.cert.system:
        raise InputError("the two blenders belong to different systems")
    if not regions_disjoint(cs.cert.D, cu.cert.D):
        raise InputError("the superposition regions D of the two blenders overlap")
    c1 = replay_covering(cs.cert, sys)
    c2 = replay_covering(cu.cert, sys)
    base = sys or cs.cert.system
    s12, m12 = _witness_margins(base, t12, cs.cert.B, cu.cert.B)
    s21, m21 = _witness_margins(base, t21, cu.cert.B, cs.cert.B)
    margins = {"cs_covering": c1.slack, "cu_covering": c2.slack, "t12_source": s12, "t12_target": m12,
               "t21_source": s21, "t21_target": m21}
    bad = {k: v for k, v in margins.items() if v <= 0}
    if bad:
        raise VerificationFailure("cycle transition fails on replay", bad, stage="transition")
    return CycleCertificate(BlenderSpec(c1, cs.index), BlenderSpec(c2, cu.index), t12, t21,
                            abs(cs.index - cu.index), margins)


# -- model families ----------------------------------------------------------------


def _rates(c: int, stable: Sequence[int], center: Sequence[int], strong: Sequence[int], a: float
           ) -> np.ndarray:
    r = np.ones(c)
    r[list(stable)] = np.exp(-a)
    r[list(center)] = np.exp(a)
    r[list(strong)] = np.exp(2 * a)
    return r


def _affine_about(p: np.ndarray, A: np.ndarray) -> FiberMap:
    return FiberMap.affine(A, p - A @ p)


def declared_system(maps: Sequence[FiberMap], labels: dict | None = None) -> SkewSystem:
    """Tight constants for the maps and a base rate giving bunching with room to spare."""
    g = min(m.lower_lipschitz for m in maps)
    gh = 1.0 / max(m.upper_lipschitz for m in maps)
    return SkewSystem(tuple(maps), nu=0.5 * g * gh, alpha=1.0, gamma=g, gamma_hat=gh, labels=labels or {})


def build_cycle_scenario(c: int, i1: int, i2: int, eps: float, rate: float = 1.0,
                         max_depth: int = 2) -> tuple[SkewSystem, CycleCertificate]:
    """A cs-blender of index ``i1`` and a cu-blender of cs-index ``i2`` joined by translations.

    Both come from translation families of diagonal hyperbolic models; the
    cu side is the inverse of a cs construction for the inverse model.
    """
    if not (0 < i1 < c and 0 < i2 < c):
        raise InputError("indices must satisfy 0 < i < c")
    if not eps > 0:
        raise InputError("eps must be positive")
    a = rate * eps
    A1 = np.diag(_rates(c, range(i1), range(i1, c), (), a))
    # inverse model of the second blender: its unstable block contracts
    A2inv = np.diag(_rates(c, range(i2, c), range(i2), (), a))
    fam1 = build_translation_family(_affine_about(np.zeros(c), A1), np.zeros(c), eps)
    fam2 = build_translation_family(_affine_about(np.zeros(c), A2inv), np.zeros(c), eps)
    half = max(np.max(fam1.D.bounds()[1]), np.max(fam2.D.bounds()[1]))
    s = 1.25 * half
    p1, p2 = -s * np.eye(c)[0], s * np.eye(c)[0]
    maps1 = [FiberMap.translation(-p1).then(m).then(FiberMap.translation(p1)) for m in fam1.maps]
    maps2 = [FiberMap.translation(-p2).then(m).then(FiberMap.translation(p2)).inverse() for m in fam2.maps]
    maps = maps1 + maps2 + [FiberMap.translation(p2 - p1), FiberMap.translation(p1 - p2)]
    n1, n2 = len(maps1), len(maps2)
    sys = declared_system(maps,
                           {"family_1": [1, n1], "family_2": [n1 + 1, n1 + n2],
                            "transitions": [n1 + n2 + 1, n1 + n2 + 2]})
    B1 = Region.box(fam1.B.bounds()[0] + p1, fam1.B.bounds()[1] + p1)
    D1 = Region.box(fam1.D.bounds()[0] + p1, fam1.D.bounds()[1] + p1)
    B2 = Region.box(fam2.B.bounds()[0] + p2, fam2.B.bounds()[1] + p2)
    D2 = Region.box(fam2.D.bounds()[0] + p2, fam2.D.bounds()[1] + p2)
    h = fam1.delta / (40 if c <= 2 else 25)
    cs = verify_covering(sys, range(1, n1 + 1), B1, D1, h, "cs")
    cu = verify_covering(sys, range(n1 + 1, n1 + n2 + 1), B2, D2, h, "cu")
    t12 = find_transition(sys, B1, B2, max_depth)
    t21 = find_transition(sys, B2, B1, max_depth)
    return sys, verify_cycle(BlenderSpec(cs, i1), BlenderSpec(cu, i2), t12, t21)


# -- tangent directions -------------------------------------------------------------


def fit_rate(ns: np.ndarray, norms: np.ndarray, lo: int = 5) -> float:
    """``exp`` of the least-squares slope of ``log norm`` against ``|n|`` for ``|n| >= lo``."""
    ns = np.abs(np.asarray(ns))
    keep = ns >= lo if np.any(ns >= lo) else ns >= 1
    if keep.sum() < 2:
        return float("nan")
    slope = np.polyfit(ns[keep], np.log(np.maximum(norms[keep], 1e-300)), 1)[0]
    return float(np.exp(slope))


@dataclass(frozen=True, eq=False)
class TangentDirectionReport:
    xi: TruncatedSequence
    x: np.ndarray
    vectors: np.ndarray
    ns: np.ndarray
    norms: np.ndarray
    lam: float
    C: float
    N: int
    max_ratio: np.ndarray
    passed: np.ndarray
    d_T: int
    rates_forward: np.ndarray
    rates_backward: np.ndarray

    @property
    def horizon_too_small(self) -> bool:
        return self.N < 5

    def to_dict(self) -> dict:
        return {"kind": "tangent_directions", "d_T": self.d_T, "N": self.N, "lambda": self.lam, "C": self.C,
                "horizon_too_small": self.horizon_too_small, "vectors": self.vectors.tolist(),
                "passed": self.passed.tolist(), "max_ratio": self.max_ratio.tolist(),
                "rates_forward": self.rates_forward.tolist(), "rates_backward": self.rates_backward.tolist(),
                "point": {"sequence": self.xi.to_dict(), "x": self.x.tolist()}}


def detect_tangent_directions(sys: SkewSystem, point: tuple[TruncatedSequence, np.ndarray], candidates,
                              N: int, lam: float, Cbound: float, rank_tol: float = 1e-8
                              ) -> TangentDirectionReport:
    """Check ``|D phi^n v| <= C lam^|n|`` for ``|n| <= N`` and count independent passing vectors."""
    xi, x = point
    V = np.atleast_2d(np.asarray(candidates, dtype=float))
    if np.any(np.linalg.norm(V, axis=1) == 0):
        raise InputError("candidate vectors must be nonzero")
    if N < 0:
        raise InputError("horizon must be >= 0")
    ns = np.arange(-N, N + 1)
    norms = np.empty((len(V), len(ns)))
    D = {0: np.eye(sys.c)}
    for n in range(1, N + 1):
        D[n] = sys.symbol_map(xi[n - 1]).A @ D[n - 1]
        D[-n] = sys.symbol_map(xi[-n]).collapsed.A_inv @ D[-n + 1]
    for j, n in enumerate(ns):
        norms[:, j] = np.linalg.norm(V @ D[int(n)].T, axis=1)
    bounds = Cbound * lam ** np.abs(ns)
    ratio = (norms / bounds).max(axis=1)
    passed = ratio <= 1.0
    d_T = int(np.linalg.matrix_rank(V[passed], tol=rank_tol)) if passed.any() else 0
    fwd = ns > 0
    bwd = ns < 0
    rf = np.array([fit_rate(ns[fwd], r[fwd]) for r in norms])
    rb = np.array([fit_rate(ns[bwd], r[bwd]) for r in norms])
    return TangentDirectionReport(xi, np.asarray(x, dtype=float), V, ns, norms, float(lam), float(Cbound),
                                  int(N), ratio, passed, d_T, rf, rb)


def tangency_codimension(c: int, i1: int, i2: int, ell: int) -> tuple[int, int]:
    lo, hi = max(0, i2 - i1), min(c - i1, i2)
    if ell <= lo:
        raise InputError(f"ell={ell} violates the lower bound ell > max(0, i2 - i1) = {lo}")
    if ell > hi:
        raise InputError(f"ell={ell} violates the upper bound ell <= min(c - i1, i2) = {hi}")
    return ell, c - ((c - i1) + i2 - ell)


# -- lifted coverings ---------------------------------------------------------------


def _box_vertices(B: Region, pad: float) -> np.ndarray:
    lo, hi = B.bounds()
    lo, hi = lo - pad, hi + pad
    return np.array([np.where(bits, hi, lo) for bits in itertools.product((0, 1), repeat=B.dim)])


@dataclass(frozen=True, eq=False)
class LiftedCoveringCertificate:
    """Covering of ``B x G`` by lifted images, derived from a point and a plane covering.

    Each lifted symbol is compared to a reference symbol of the point
    covering and one of the plane covering; the depth of the symbol is at
    least its reference depth rescaled, minus the sup distance between the
    two pullbacks.
    """

    mode: str
    symbols: tuple[int, ...]
    x_cert: CoveringCertificate
    plane_cert: PlaneCoveringCertificate
    x_margin: float
    g_margin: float
    image_margin: float
    lebesgue_lower: float
    delta_max: float
    Ainv: np.ndarray
    shift: np.ndarray
    gammas: np.ndarray
    Tinv: np.ndarray
    plane_gammas: np.ndarray

    @property
    def B(self) -> Region:
        return self.x_cert.B

    @property
    def G(self) -> PlaneBall:
        return self.plane_cert.ball

    @property
    def slack(self) -> float:
        return float(min(self.x_margin, self.g_margin, self.image_margin, self.x_cert.slack))

    @property
    def valid(self) -> bool:
        return self.slack > 0

    def depths(self, x, frame) -> np.ndarray:
        """Lifted depth of ``(x, span frame)`` for every symbol."""
        pre = np.einsum("kab,kb->ka", self.Ainv, np.asarray(x)[None] - self.shift)
        dx = self.gammas * np.atleast_1d(self.B.signed_distance(pre))
        dg = self.plane_gammas * (self.G.radius - graph_distances(self.G, self.Tinv @ frame))
        return np.minimum(dx, dg)

    def pull(self, k: int, x, frame) -> tuple[np.ndarray, np.ndarray]:
        """Pullback of ``(x, frame)`` under the covering map of ``symbols[k]``."""
        y = self.Ainv[k] @ (np.asarray(x) - self.shift[k])
        F = self.Tinv[k] @ frame
        q, r = np.linalg.qr(F)
        return y, q * np.sign(np.diag(r))

    def to_dict(self) -> dict:
        return {"kind": "lifted_covering", "mode": self.mode, "valid": self.valid, "slack": self.slack,
                "symbols": len(self.symbols), "x_margin": self.x_margin, "plane_margin": self.g_margin,
                "image_margin": self.image_margin, "lebesgue_lower": self.lebesgue_lower,
                "delta_max": self.delta_max, "point_covering": self.x_cert.to_dict(),
                "plane_covering": self.plane_cert.to_dict()}


def verify_lifted_covering(lift: LiftedSystem, symbols: Sequence[int], B: Region, D: Region, G: PlaneBall,
                           mode: str, x_ref: dict, g_ref: dict, h_x: float, h_g: float
                           ) -> LiftedCoveringCertificate:
    sys = lift.base
    symbols = tuple(int(s) for s in symbols)
    xr = sorted(set(x_ref[s] for s in symbols))
    gr = sorted(set(g_ref[s] for s in symbols))
    pairs = {(x_ref[s], g_ref[s]) for s in symbols}
    missing = [(i, j) for i in xr for j in gr if (i, j) not in pairs]
    if missing:
        raise InputError(f"lifted symbols do not realize every reference pair, e.g. {missing[0]}")
    x_cert = verify_covering(sys, xr, B, D, h_x, mode)
    # covering maps y = A x + b, stacked over symbols
    A = np.array([sys.symbol_map(s).A for s in symbols])
    b = np.array([sys.symbol_map(s).b for s in symbols])
    if mode == "cu":
        A = np.linalg.inv(A)
        b = -np.einsum("kab,kb->ka", A, b)
    Ainv = np.linalg.inv(A)
    pos = {s: k for k, s in enumerate(symbols)}
    xi = np.array([pos[x_ref[s]] for s in symbols])
    gi = np.array([pos[g_ref[s]] for s in symbols])
    plane_cert = verify_plane_covering([A[pos[j]] for j in gr], G, h_g, labels=gr)
    gx = dict(zip([w[0] for w in x_cert.symbols], x_cert.gammas))
    gp = dict(zip(gr, plane_cert.gammas))
    gx_ref = np.array([gx[x_ref[s]] for s in symbols])
    gp_ref = np.array([gp[g_ref[s]] for s in symbols])
    corr, m_x, m_g = x_cert.correction, x_cert.cover_margin, plane_cert.cover_margin
    verts = _box_vertices(B, corr)
    sv = np.linalg.svd(A, compute_uv=False)
    gam = sv[:, -1]
    pgam = sv[:, -1] / sv[:, 0]

    def pre(k):
        return np.einsum("kab,kvb->kva", Ainv[k], verts[None] - b[k][:, None])

    dx = np.linalg.norm(pre(slice(None)) - pre(xi), axis=2).max(axis=1)
    x_margin = float(np.min(gam * ((corr + m_x) / gx_ref - dx) - corr))
    img = np.linalg.norm(np.einsum("kab,vb->kva", A - A[xi], verts) + (b - b[xi])[:, None], axis=2).max(axis=1)
    image_margin = float(x_cert.image_margin - img.max())
    # plane distance moves by at most |dT^-1| / sigma_min(T^-1)
    dg = np.linalg.norm(Ainv - Ainv[gi], 2, axis=(1, 2)) * sv[:, 0]
    g_margin = float(np.min(pgam * (m_g / gp_ref - dg)))
    shift = b
    L = float(min(x_margin, g_margin))
    cert = LiftedCoveringCertificate(mode, symbols, x_cert, plane_cert, float(x_margin), float(g_margin),
                                     image_margin, L, lift.lower_bound * L / 2, Ainv, shift, gam, Ainv, pgam)
    if not cert.valid:
        raise VerificationFailure("lifted covering fails", {"x_margin": cert.x_margin, "plane_margin": cert.g_margin,
                                                            "image_margin": cert.image_margin},
                                  stage=f"lifted_covering_{mode}")
    return cert


@dataclass(frozen=True)
class LiftedTrace:
    word: tuple[int, ...]
    points: np.ndarray
    frames: tuple[np.ndarray, ...]
    margins: tuple[float, ...]

    @property
    def margin(self) -> float:
        return float(min(self.margins)) if self.margins else float("inf")


def refine_lifted(cert: LiftedCoveringCertificate, x, frame, steps: int) -> LiftedTrace:
    """Repeatedly pull back by the least symbol whose lifted depth reaches the Lebesgue bound.

    Every point of the closed product region has such a symbol, so the
    orbit never leaves it; the word is the symbolic itinerary.
    """
    thr = cert.lebesgue_lower * (1 - 1e-9)
    x = np.asarray(x, dtype=float)
    F = np.asarray(frame, dtype=float)
    word, pts, frames, margins = [], [x], [F], []
    for n in range(steps):
        dep = cert.depths(x, F)
        ok = np.flatnonzero(dep >= thr)
        if ok.size == 0:
            raise VerificationFailure("lifted refinement found no admissible symbol",
                                      {"step": n, "best_depth": float(dep.max()), "threshold": thr},
                                      stage=f"refinement_{cert.mode}")
        k = int(ok[0])
        margins.append(float(dep[k]))
        x, F = cert.pull(k, x, F)
        word.append(cert.symbols[k])
        pts.append(x)
        frames.append(F)
    return LiftedTrace(tuple(word), np.array(pts), tuple(frames), tuple(margins))


# -- tangency scenarios -----------------------------------------------------------------


def twist_lattice(c: int, ell: int, step: float, n: int = 5) -> list[np.ndarray]:
    """Rotations ``exp(K_S)`` moving the last-``ell`` coordinate plane by graph coordinates ``S``.

    ``S`` runs over the lattice ``step * {-(n-1)/2, ..., (n-1)/2}`` in each of
    the ``ell (c - ell)`` entries, in lexicographic order.
    """
    m = c - ell
    vals = step * (np.arange(n) - (n - 1) / 2)
    out = []
    for entries in itertools.product(vals, repeat=m * ell):
        S = np.array(entries).reshape(m, ell)
        K = np.zeros((c, c))
        K[:m, m:] = S
        K[m:, :m] = -S.T
        out.append(expm(K))
    return out


@dataclass(frozen=True, eq=False)
class TwistedFamily:
    """Maps ``x -> p + R_j A (x - p) + v_i`` (translation ``i`` outer, twist ``j`` inner)."""

    maps: tuple[FiberMap, ...]
    A: np.ndarray
    p: np.ndarray
    B: Region
    D: Region
    G: PlaneBall
    n_trans: int
    n_twist: int
    center_twist: int
    twist_norm: float
    delta: float

    def x_ref(self, k: int) -> int:
        return (k // self.n_twist) * self.n_twist + self.center_twist

    def g_ref(self, k: int) -> int:
        return k % self.n_twist


def build_twisted_family(A: np.ndarray, p, eps: float, ell: int, radius: float, n_twist: int = 5,
                         twist_frac: float = 0.4) -> TwistedFamily:
    c = A.shape[0]
    p = np.asarray(p, dtype=float)
    fam = build_translation_family(FiberMap.affine(A), np.zeros(c), eps)
    G = PlaneBall(Plane.coordinate(c, range(c - ell, c)), radius)
    twists = twist_lattice(c, ell, twist_frac * G.graph_radius, n_twist)
    maps = []
    for v in fam.offsets:
        for R in twists:
            M = R @ A
            maps.append(FiberMap.affine(M, p - M @ p + v))
    lo, hi = fam.B.bounds()
    dlo, dhi = fam.D.bounds()
    tn = max(float(np.linalg.norm(R - np.eye(c), 2)) for R in twists)
    # twisting moves images of B by at most tn |A| delta sqrt(c); D keeps a further tenth of delta
    pad = tn * np.linalg.norm(A, 2) * fam.delta * np.sqrt(c) + 0.1 * fam.delta
    return TwistedFamily(tuple(maps), A, p, Region.box(lo + p, hi + p),
                         Region.box(dlo - pad + p, dhi + pad + p), G,
                         len(fam.offsets), len(twists), (len(twists) - 1) // 2, tn, fam.delta)


def _cone_for(c: int, ell: int, rho: float) -> Cone:
    order = list(range(c - ell, c)) + list(range(c - ell))
    return Cone(ell, rho, np.eye(c)[:, order])


@dataclass(frozen=True, eq=False)
class TangencyScenario:
    c: int
    i1: int
    i2: int
    ell: int
    eps: float
    rate: float
    system: SkewSystem
    fam1: tuple[int, ...]
    fam2: tuple[int, ...]
    t12: int
    t21: int
    x_ref: dict
    g_ref: dict
    B1: Region
    D1: Region
    G1: PlaneBall
    B2: Region
    D2: Region
    G2: PlaneBall
    cone1: Cone
    cone2: Cone
    lam_cone: float
    h_x: float
    h_g: float
    horizon: int
    lam_detect: float
    C_detect: float
    design_rate: float
    steps: int
    twist_norm: float
    params: dict = field(default_factory=dict)

    def describe(self) -> dict:
        return {"params": self.params, "c": self.c, "i1": self.i1, "i2": self.i2, "ell": self.ell, "eps": self.eps, "rate": self.rate,
                "alphabet": self.system.d, "family_1": [self.fam1[0], self.fam1[-1]],
                "family_2": [self.fam2[0], self.fam2[-1]], "t12": self.t12, "t21": self.t21,
                "B1": self.B1.to_dict(), "D1": self.D1.to_dict(), "G1": self.G1.to_dict(),
                "B2": self.B2.to_dict(), "D2": self.D2.to_dict(), "G2": self.G2.to_dict(),
                "cone_1": self.cone1.to_dict(), "cone_2": self.cone2.to_dict(), "lambda_cone": self.lam_cone,
                "grid_x": self.h_x, "grid_planes": self.h_g, "horizon": self.horizon,
                "lambda_detect": self.lam_detect, "C_detect": self.C_detect,
                "design_rate": self.design_rate, "refinement_steps": self.steps,
                "twist_norm": self.twist_norm}


def make_tangency_scenario(c: int, i1: int, i2: int, ell: int, eps: float, rate: float = 1.0,
                           radius: float = 0.03, horizon: int = 20, steps: int = 64,
                           n_twist: int = 5, rho: float = 0.3) -> TangencyScenario:
    """One-step model with a cs-blender (index ``i1``) and a cu-blender (cs-index ``i2``).

    Family 1 is ``diag`` with rates ``e^{-a}`` on ``[0, i1)``, ``e^{a}`` on
    ``[i1, c-ell)`` and ``e^{2a}`` on the strong block ``[c-ell, c)``
    (``a = rate * eps``), translated over its contracting block and twisted
    by rotations that move the strong plane.  Family 2 is the inverse of
    the same construction for the inverse of a model with stable block
    ``[0, i2-ell)``, unstable block ``[i2-ell, c-ell)`` and strong stable
    block ``[c-ell, c)``.  Two translations join the regions.
    """
    tangency_codimension(c, i1, i2, ell)
    if not eps > 0:
        raise InputError("eps must be positive: at eps = 0 every map is the identity and hyperbolicity fails")
    a = rate * eps
    A1 = np.diag(_rates(c, range(i1), range(i1, c - ell), range(c - ell, c), a))
    # the inverse of family 2's model
    A2inv = np.diag(_rates(c, range(i2 - ell, c - ell), range(i2 - ell), range(c - ell, c), a))
    f1 = build_twisted_family(A1, np.zeros(c), eps, ell, radius, n_twist)
    f2 = build_twisted_family(A2inv, np.zeros(c), eps, ell, radius, n_twist)
    s = 1.25 * max(np.max(f1.D.bounds()[1]), np.max(f2.D.bounds()[1]))
    p1, p2 = -s * np.eye(c)[0], s * np.eye(c)[0]
    f1 = build_twisted_family(A1, p1, eps, ell, radius, n_twist)
    f2 = build_twisted_family(A2inv, p2, eps, ell, radius, n_twist)
    maps = list(f1.maps) + [m.inverse() for m in f2.maps]
    n1, n2 = len(f1.maps), len(f2.maps)
    maps += [FiberMap.translation(p2 - p1), FiberMap.translation(p1 - p2)]
    fam1 = tuple(range(1, n1 + 1))
    fam2 = tuple(range(n1 + 1, n1 + n2 + 1))
    sys = declared_system(maps, {"family_1": [1, n1], "family_2": [n1 + 1, n1 + n2],
                                  "transitions": [n1 + n2 + 1, n1 + n2 + 2]})
    x_ref, g_ref = {}, {}
    for k in range(n1):
        x_ref[k + 1] = f1.x_ref(k) + 1
        g_ref[k + 1] = f1.g_ref(k) + 1
    for k in range(n2):
        x_ref[n1 + k + 1] = n1 + f2.x_ref(k) + 1
        g_ref[n1 + k + 1] = n1 + f2.g_ref(k) + 1
    design = float(np.exp(-2 * a))
    return TangencyScenario(
        c, i1, i2, ell, float(eps), float(rate), sys, fam1, fam2, n1 + n2 + 1, n1 + n2 + 2, x_ref, g_ref,
        f1.B, f1.D, f1.G, f2.B, f2.D, f2.G, _cone_for(c, ell, rho), _cone_for(c, ell, rho),
        float(np.exp(-a)), f1.delta / (8 if c >= 4 else 20), f1.G.graph_radius / 100, horizon, float(np.exp(-1.5 * a)), 2.0,
        design, max(steps, horizon + 1), max(f1.twist_norm, f2.twist_norm),
        {"c": c, "i1": i1, "i2": i2, "ell": ell, "eps": float(eps), "rate": float(rate), "radius": float(radius),
         "horizon": int(horizon), "steps": int(steps), "n_twist": int(n_twist), "rho": float(rho)})


@dataclass(frozen=True, eq=False)
class TangencyCertificate:
    scenario: dict
    stages: dict
    failed_stage: str | None = None
    witness: dict = field(default_factory=dict)
    c_T: int | None = None
    d_T: int | None = None
    point: TruncatedSequence | None = None
    x: np.ndarray | None = None
    plane: Plane | None = None
    rates: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)
    report: TangentDirectionReport | None = None
    runtime: float = 0.0
    source: TangencyScenario | None = field(default=None, repr=False)

    @property
    def valid(self) -> bool:
        return self.failed_stage is None and self.slack > 0

    @property
    def slack(self) -> float:
        return float(min(self.margins.values())) if self.margins else float("-inf")

    def to_dict(self) -> dict:
        out = {"kind": "tangency", "valid": self.valid, "failed_stage": self.failed_stage,
               "witness": self.witness, "scenario": self.scenario, "stages": self.stages,
               "c_T": self.c_T, "d_T": self.d_T, "rates": self.rates, "margins": self.margins,
               "slack": self.slack if self.margins else None, "runtime_s": self.runtime}
        if self.point is not None:
            out["point"] = {"sequence": self.point.to_dict(), "x": self.x.tolist(),
                            "plane": self.plane.to_dict()}
        return out


def certify_tangency(scn: TangencyScenario, system: SkewSystem | None = None) -> TangencyCertificate:
    """Run every verification stage; the first failing stage is recorded with its witness."""
    t0 = time.perf_counter()
    sys = scn.system if system is None else system
    stages: dict = {}
    margins: dict = {}
    ctx: dict = {}

    def fail(name: str, err: Exception) -> TangencyCertificate:
        wit = getattr(err, "witness", None) or {}
        return TangencyCertificate(scn.describe(), stages, name, {"message": str(err), **_jsonable(wit)},
                                   margins=margins, runtime=time.perf_counter() - t0, source=scn)

    plan = [
        ("constants", lambda: _stage_constants(sys, stages, margins)),
        ("lift", lambda: ctx.__setitem__("lift", _stage_lift(sys, scn, stages, margins))),
        ("cone_unstable", lambda: _stage_cone(sys, scn, True, stages, margins)),
        ("cone_stable", lambda: _stage_cone(sys, scn, False, stages, margins)),
        ("cone_containment", lambda: _stage_containment(scn, stages, margins)),
        ("lifted_covering_cs", lambda: ctx.__setitem__("L1", _stage_lifted(ctx["lift"], scn, "cs", stages,
                                                                             margins))),
        ("lifted_covering_cu", lambda: ctx.__setitem__("L2", _stage_lifted(ctx["lift"], scn, "cu", stages,
                                                                             margins))),
        ("transition", lambda: ctx.__setitem__("T", _stage_transition(ctx["lift"], scn, stages, margins))),
        ("refinement", lambda: ctx.update(_stage_refine(sys, scn, ctx, stages, margins))),
        ("tangency", lambda: ctx.__setitem__("R", _stage_detect(sys, scn, ctx, stages))),
    ]
    for name, run in plan:
        try:
            run()
        except (SkewBlendError, np.linalg.LinAlgError) as err:
            return fail(name, err)
    rep: TangentDirectionReport = ctx["R"]
    E = ctx["plane"]
    in_E = np.arange(scn.ell)
    rates = {"design": scn.design_rate,
             "forward": rep.rates_forward[in_E].tolist(), "backward": rep.rates_backward[in_E].tolist()}
    errs = [abs(r - scn.design_rate) / scn.design_rate for r in rates["forward"] + rates["backward"]]
    rates["max_relative_error"] = float(max(errs))
    _, c_T = tangency_codimension(scn.c, scn.i1, scn.i2, scn.ell)
    return TangencyCertificate(scn.describe(), stages, None, {}, c_T, rep.d_T, ctx["xi"], ctx["y"], E, rates,
                               margins, rep, time.perf_counter() - t0, scn)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _stage_constants(sys, stages, margins):
    rep = sys.verify_constants()
    if not rep.phs_ok or not rep.bunched_ok:
        raise VerificationFailure("partial hyperbolicity or bunching fails",
                                  {"phs_slacks": list(rep.phs_slacks)}, stage="constants")
    stages["constants"] = rep.to_dict()
    margins["phs"] = float(min(rep.phs_slacks))


def _stage_lift(sys, scn, stages, margins):
    lift = lift_system(sys, scn.ell)
    rng = np.random.default_rng(0)
    emp = lifted_lipschitz_empirical(lift, 200, rng, scn.B1, scale=0.05)
    if emp > lift.upper_bound + 1e-6:
        raise VerificationFailure("empirical lifted Lipschitz ratio exceeds the bound",
                                  {"empirical": emp, "bound": lift.upper_bound}, stage="lift")
    stages["lift"] = {**lift.to_dict(), "empirical_ratio": emp}
    margins["lift"] = float(min(lift.slack_bunching, sys.nu ** -sys.alpha - lift.upper_bound))
    return lift


def _stage_cone(sys, scn, unstable, stages, margins):
    if unstable:
        cert = verify_unstable_cone(sys, scn.cone1, scn.B1, scn.lam_cone, symbols=scn.fam1)
    else:
        cert = verify_stable_cone(sys, scn.cone2, scn.B2, scn.lam_cone, symbols=scn.fam2)
    d = cert.to_dict()
    d.pop("per_symbol")
    stages[cert.kind + "_cone"] = d
    margins[cert.kind + "_cone"] = cert.slack


def _stage_containment(scn, stages, margins):
    m1 = plane_ball_in_cone(scn.cone1, scn.G1)
    m2 = plane_ball_in_cone(scn.cone2, scn.G2)
    stages["cone_containment"] = {"G1_in_unstable_cone": m1, "G2_in_stable_cone": m2}
    if min(m1, m2) <= 0:
        raise VerificationFailure("plane region not inside its cone", {"margins": [m1, m2]},
                                  stage="cone_containment")
    margins["cone_containment"] = float(min(m1, m2))


def _stage_lifted(lift, scn, mode, stages, margins):
    if mode == "cs":
        cert = verify_lifted_covering(lift, scn.fam1, scn.B1, scn.D1, scn.G1, "cs", scn.x_ref, scn.g_ref,
                                      scn.h_x, scn.h_g)
    else:
        cert = verify_lifted_covering(lift, scn.fam2, scn.B2, scn.D2, scn.G2, "cu", scn.x_ref, scn.g_ref,
                                      scn.h_x, scn.h_g)
    stages[f"lifted_covering_{mode}"] = cert.to_dict()
    margins[f"lifted_covering_{mode}"] = cert.slack
    return cert


def _stage_transition(lift, scn, stages, margins):
    w = find_lifted_transition(lift, scn.B1, scn.G1.center, scn.B2, scn.G2, max_depth=2)
    stages["transition"] = w.to_dict()
    margins["transition"] = float(min(w.margin, w.source_margin))
    return w


def _stage_refine(sys, scn, ctx, stages, margins):
    w: TransitionWitness = ctx["T"]
    L1, L2 = ctx["L1"], ctx["L2"]
    y, E = w.source, w.plane.frame
    past = refine_lifted(L1, y, E, scn.steps)
    DT = w.T.A
    fut = refine_lifted(L2, w.image, DT @ E, scn.steps)
    xi = TruncatedSequence(tuple(reversed(past.word)), tuple(w.word) + fut.word, scn.steps + len(w.word))
    # the projected past is an unstable-set point of the base system
    lu = verify_lambda_u(sys, (xi, y), scn.B1, scn.steps, boundaries=range(1, scn.steps + 1))
    if not lu.ok:
        raise VerificationFailure("projected past leaves B1", lu.witness, stage="refinement")
    stages["refinement"] = {"past_word_head": list(past.word[:8]), "future_word_head": list(fut.word[:8]),
                            "past_margin": past.margin, "future_margin": fut.margin,
                            "lambda_u_margin": lu.margin}
    margins["refinement"] = float(min(past.margin, fut.margin, lu.margin))
    return {"xi": xi, "y": y, "plane": Plane(E)}


def _stage_detect(sys, scn, ctx, stages):
    E: Plane = ctx["plane"]
    rng = np.random.default_rng(0)
    comp = E.complement()
    cands = np.vstack([E.frame.T, comp.T, rng.standard_normal((2, scn.c))])
    rep = detect_tangent_directions(sys, (ctx["xi"], ctx["y"]), cands, scn.horizon, scn.lam_detect,
                                    scn.C_detect)
    stages["tangency"] = rep.to_dict()
    if rep.d_T != scn.ell or not rep.passed[: scn.ell].all():
        raise VerificationFailure("tangent directions do not span the carried plane",
                                  {"d_T": rep.d_T, "passed": rep.passed.tolist()}, stage="tangency")
    return rep


def build_tangency_scenario(c: int, i1: int, i2: int, ell: int, eps: float, **kw
                            ) -> tuple[SkewSystem, TangencyCertificate]:
    scn = make_tangency_scenario(c, i1, i2, ell, eps, **kw)
    return scn.system, certify_tangency(scn)


# -- robustness probes --------------------------------------------------------------


@dataclass(frozen=True)
class ProbeReport:
    eta: float
    trials: int
    passed: int
    min_slack: float
    failures: tuple[dict, ...]

    @property
    def all_passed(self) -> bool:
        return self.passed == self.trials

    def to_dict(self) -> dict:
        return {"kind": "probe", "eta": self.eta, "trials": self.trials, "passed": self.passed,
                "min_slack": self.min_slack, "failures": list(self.failures)}


def perturb_system(sys: SkewSystem, eta: float, rng: np.random.Generator) -> SkewSystem:
    """Add a random linear part (operator norm <= eta) and translation (norm <= eta) to every map.

    The declared constants are widened by ``eta`` so they stay valid bounds.
    """
    c, d = sys.c, sys.d
    N = rng.standard_normal((d, c, c))
    L = (eta * rng.random(d) / np.linalg.norm(N, 2, axis=(1, 2)))[:, None, None] * N
    t = rng.standard_normal((d, c))
    t *= (eta * rng.random(d) / np.linalg.norm(t, axis=1))[:, None]
    maps = [FiberMap.affine(sys.symbol_map(s).A + L[s - 1], sys.symbol_map(s).b + t[s - 1])
            for s in range(1, d + 1)]
    return sys.replace_maps(maps, gamma=sys.gamma - eta, gamma_hat=1.0 / (1.0 / sys.gamma_hat + eta))


def robustness_probe(cert, eta: float, trials: int, seed: int = 0) -> ProbeReport:
    """Replay the whole certificate on randomly perturbed systems."""
    if eta < 0:
        raise InputError("eta must be >= 0")
    rng = np.random.default_rng(seed)
    failures, slacks = [], []
    for t in range(trials):
        if isinstance(cert, CycleCertificate):
            sys = perturb_system(cert.system, eta, rng) if eta > 0 else cert.system
            try:
                res = verify_cycle(cert.cs, cert.cu, cert.t12, cert.t21, sys=sys if eta > 0 else None)
                slacks.append(res.slack)
            except SkewBlendError as err:
                failures.append({"trial": t, "stage": getattr(err, "stage", None) or "cycle", "message": str(err)})
        else:
            scn = cert.source
            if scn is None:
                raise InputError("tangency certificate carries no scenario to replay")
            sys = perturb_system(scn.system, eta, rng) if eta > 0 else scn.system
            res = certify_tangency(scn, sys)
            if res.valid:
                slacks.append(res.slack)
            else:
                failures.append({"trial": t, "stage": res.failed_stage,
                                 "message": res.witness.get("message", "")})
    return ProbeReport(float(eta), trials, trials - len(failures),
                       float(min(slacks)) if slacks else float("nan"), tuple(failures))
