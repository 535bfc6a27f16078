"""Covering-property verification, translation families and block-cone hyperbolicity checks.

Images ``f_s(B)`` are never built.  Membership ``x in f_s(B)`` is decided
through the preimage, and the depth of ``x`` inside ``f_s(B)`` is bounded
below by ``gamma_s * sd(B, f_s^{-1}(x))`` with ``gamma_s`` the lower
Lipschitz constant of ``f_s``.  Each such depth function is 1-Lipschitz,
which is what turns a finite grid into a statement about the closure of B.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import InputError, ResourceError, VerificationFailure
from .regions import GRID_CAP, Region, cover_grid
from .skewproduct import ConstantsReport, FiberMap, SkewSystem, word_map

Block = tuple[int, ...]


def normalize_blocks(symbols) -> tuple[Block, ...]:
    """Symbols or blocks (words) to a sorted tuple of words."""
    out = []
    for s in symbols:
        out.append(tuple(int(t) for t in s) if isinstance(s, (tuple, list)) else (int(s),))
    if not out or any(len(w) == 0 for w in out):
        raise InputError("symbol set must be nonempty and words nonempty")
    return tuple(sorted(set(out)))


def covering_map(sys: SkewSystem, block: Block, mode: str) -> FiberMap:
    """The map whose images must cover B: ``phi_w`` (cs) or ``phi_w^{-1}`` (cu)."""
    f = word_map(sys, block)
    if mode == "cs":
        return f
    if mode == "cu":
        return f.inverse()
    raise InputError(f"mode must be 'cs' or 'cu', got {mode!r}")


def jung_factor(c: int) -> float:
    """Diameter over circumradius lower bound: a set of diameter D sits in a ball of radius D/factor."""
    return float(np.sqrt(2.0 * (c + 1) / c))


@dataclass(frozen=True, eq=False)
class CoveringCertificate:
    """Outcome of a covering check.  Every inequality carries its slack."""

    mode: str
    symbols: tuple[Block, ...]
    system: SkewSystem
    B: Region
    D: Region
    h: float
    correction: float
    cover_margin: float
    depth_bound: float
    lebesgue_radius: float
    lebesgue_lower: float
    holder_bound: float
    delta_max: float
    image_margin: float
    closure_margin: float
    intermediate_margin: float
    gammas: tuple[float, ...]
    grid_points: int
    constants: ConstantsReport
    runtime: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def holder_slack(self) -> float:
        return self.lebesgue_lower - self.holder_bound

    @property
    def slack(self) -> float:
        return float(min(self.cover_margin, self.image_margin, self.closure_margin,
                         self.intermediate_margin, self.holder_slack))

    @property
    def valid(self) -> bool:
        return self.slack > 0 and self.delta_max > 0 and self.constants.phs_ok

    def maps(self) -> list[FiberMap]:
        return [covering_map(self.system, w, self.mode) for w in self.symbols]

    def depths(self, x) -> np.ndarray:
        """Exact preimage depths, one row per block, at points ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack([g * np.atleast_1d(self.B.signed_distance(f.inverse_apply(x)))
                         for g, f in zip(self.gammas, self.maps())])

    def pull(self, x, block: Block) -> np.ndarray:
        """Preimage of ``x`` under the covering map of ``block``."""
        return covering_map(self.system, block, self.mode).inverse_apply(x)

    def inequalities(self) -> list[dict]:
        rows = [
            ("closure(B) covered by images (min max-depth > grid correction)",
             self.correction, self.cover_margin + self.correction),
            ("images inside D", 0.0, self.image_margin),
            ("closure(B) inside D", 0.0, self.closure_margin),
            ("intermediate block images inside D", 0.0, self.intermediate_margin),
            ("C < Lebesgue lower bound", self.holder_bound, self.lebesgue_lower),
        ]
        return [{"name": n, "lhs": float(l), "rhs": float(r), "slack": float(r - l)} for n, l, r in rows]

    def to_dict(self) -> dict:
        return {
            "kind": "covering", "mode": self.mode, "valid": self.valid,
            "symbols": [list(w) for w in self.symbols],
            "B": self.B.to_dict(), "D": self.D.to_dict(), "h": self.h, "grid_correction": self.correction,
            "grid_points": self.grid_points, "cover_margin": self.cover_margin,
            "depth_bound": self.depth_bound, "lebesgue_radius": self.lebesgue_radius,
            "lebesgue_lower": self.lebesgue_lower, "holder_bound": self.holder_bound,
            "delta_max": self.delta_max, "image_margin": self.image_margin,
            "closure_margin": self.closure_margin, "intermediate_margin": self.intermediate_margin,
            "gammas": list(self.gammas), "slack": self.slack, "constants": self.constants.to_dict(),
            "inequalities": self.inequalities(), "runtime_s": self.runtime, **self.extra,
        }


def default_spacing(B: Region, cap: int = GRID_CAP) -> float:
    """``inradius/200``, coarsened until the lattice fits under ``cap``."""
    h = B.inradius / 200
    lo, hi = B.bounds()
    while np.prod(np.floor((hi - lo) / h) + 2) > cap:
        h *= 1.25
    return h


def verify_covering(sys: SkewSystem, symbols, B: Region, D: Region, h: float | None = None,
                    mode: str = "cs", cap: int = GRID_CAP) -> CoveringCertificate:
    """Certify ``closure(B) in union f_s(B)`` on a grid and bound the Lebesgue number.

    Raises ``VerificationFailure`` with a witness when a grid point is not
    covered, an image leaves D, or ``C >= L``.
    """
    t0 = time.perf_counter()
    blocks = normalize_blocks(symbols)
    if B.dim != sys.c or D.dim != sys.c:
        raise InputError("regions and system have different dimensions")
    constants = sys.verify_constants()
    if not constants.phs_ok:
        raise VerificationFailure("partial hyperbolicity fails for the declared constants",
                                  {"phs_slacks": list(constants.phs_slacks)}, stage="constants")
    h = default_spacing(B, cap) if h is None else float(h)
    grid = cover_grid(B, h, cap)
    corr = grid.correction
    lattice = grid.lattice_points()
    mask = grid.mask.ravel()
    pts = lattice[mask]

    closure_margin = float(np.min(D.signed_distance(pts))) - corr
    if closure_margin <= 0:
        raise VerificationFailure("closure of B is not inside D", {"margin": closure_margin}, stage="covering")

    maps = [covering_map(sys, w, mode) for w in blocks]
    gammas = tuple(f.lower_lipschitz for f in maps)
    best = np.full(pts.shape[0], -np.inf)
    best_idx = np.zeros(pts.shape[0], dtype=int)
    rho = np.full(pts.shape[0], -np.inf)
    image_margin = np.inf
    inter_margin = np.inf
    for k, (f, g) in enumerate(zip(maps, gammas)):
        depth = g * B.signed_distance(f.inverse_apply(pts))
        better = depth > best
        best_idx[better] = k
        best = np.maximum(best, depth)
        # distance to grid points the image may miss, a bound for the relative depth
        missed = np.zeros(lattice.shape[0], dtype=bool)
        missed[mask] = depth <= corr
        if missed.any():
            dist = ndimage.distance_transform_edt(~missed.reshape(grid.shape), sampling=h).ravel()[mask]
            rel = np.maximum(depth, dist - corr)
        else:
            # one image holds everything: any subset of the closure fits
            lo, hi = B.bounds()
            rel = np.full(pts.shape[0], float(np.linalg.norm(hi - lo)))
        rho = np.maximum(rho, rel)
        image_margin = min(image_margin, float(np.min(D.signed_distance(f(pts)))) - f.upper_lipschitz * corr)
        w = blocks[k]
        for j in range(1, len(w)):
            part = covering_map(sys, w[:j], mode)
            inter_margin = min(inter_margin,
                               float(np.min(D.signed_distance(part(pts)))) - part.upper_lipschitz * corr)

    if not np.isfinite(inter_margin):
        inter_margin = float(closure_margin)
    worst = int(np.argmin(best))
    if best[worst] <= corr:
        raise VerificationFailure(
            "closure of B is not covered by the images",
            {"point": pts[worst].tolist(), "best_depth": float(best[worst]), "grid_correction": corr,
             "best_block": list(blocks[best_idx[worst]])}, stage="covering")
    if image_margin <= 0:
        raise VerificationFailure("an image of B leaves D", {"margin": image_margin}, stage="covering")
    if inter_margin <= 0:
        raise VerificationFailure("an intermediate block image leaves D", {"margin": inter_margin},
                                  stage="covering")

    cover_margin = float(best[worst] - corr)
    depth_bound = cover_margin
    radius = float(np.min(rho)) - corr
    lebesgue = radius * (jung_factor(sys.c) if B.convex else 1.0)
    holder = sys.holder_spread_constant
    gamma = sys.gamma
    cert = CoveringCertificate(
        mode=mode, symbols=blocks, system=sys, B=B, D=D, h=h, correction=corr,
        cover_margin=cover_margin, depth_bound=depth_bound, lebesgue_radius=radius, lebesgue_lower=lebesgue,
        holder_bound=holder, delta_max=gamma * lebesgue / 2, image_margin=float(image_margin),
        closure_margin=float(closure_margin), intermediate_margin=float(inter_margin), gammas=gammas,
        grid_points=int(pts.shape[0]), constants=constants, runtime=time.perf_counter() - t0)
    if holder >= lebesgue:
        raise VerificationFailure("Hoelder spread constant is not below the Lebesgue bound",
                                  {"C": holder, "L": lebesgue}, stage="covering")
    return cert


# -- translation families ---------------------------------------------------------


def _diagonal_split(A: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    if np.max(np.abs(A - np.diag(np.diag(A)))) > tol:
        raise InputError("translation families are built for diagonal linear parts")
    rates = np.diag(A)
    contracting = np.flatnonzero(np.abs(rates) < 1.0)
    return rates, contracting


def translation_offsets(rho: float, overlap: float = 0.4) -> np.ndarray:
    """Offsets (in units of delta) whose translates of ``(-rho, rho)`` cover ``[-1, 1]``.

    Neighbouring translates overlap on a fraction ``overlap`` of their length.
    """
    if not 0 < rho < 1:
        raise InputError(f"contraction rate {rho} is not in (0, 1)")
    step = 2 * rho * (1 - overlap)
    n = int(np.ceil(2 * (1 - rho) / step - 1e-12)) + 1
    return step * (np.arange(n) - (n - 1) / 2)


@dataclass(frozen=True, eq=False)
class TranslationFamily:
    maps: tuple[FiberMap, ...]
    offsets: np.ndarray
    B: Region
    D: Region
    delta: float
    cs_coords: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.maps)


def build_translation_family(phi: FiberMap, x_star, eps: float, overlap: float = 0.4,
                             max_maps: int = 4096) -> TranslationFamily:
    """Translates ``T_v o phi`` with ``v = delta * u`` on a lattice of the contracting coordinates.

    ``phi`` must be affine with a diagonal linear part and fix ``x_star``.
    The returned ``B`` is a box (an interval in one dimension) of
    half-width ``delta`` around ``x_star``; the first map is ``phi``
    itself when the lattice contains the origin, and ``D`` holds every
    image with a tenth of ``delta`` to spare.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    A = phi.A
    if np.linalg.norm(phi(x_star) - x_star) > 1e-9 * max(1.0, np.linalg.norm(x_star)):
        raise InputError("x_star is not a fixed point of phi")
    rates, cs = _diagonal_split(A)
    if cs.size == 0:
        raise InputError("phi has no contracting coordinate")
    c = A.shape[0]
    if np.any(np.abs(rates[np.setdiff1d(np.arange(c), cs)]) < 1.0):
        raise InputError("phi is not contracting on the targeted block")
    per_axis = [translation_offsets(abs(rates[k]), overlap) for k in cs]
    count = int(np.prod([len(o) for o in per_axis]))
    if count > max_maps:
        raise ResourceError(f"translation family needs {count} maps, cap is {max_maps}")
    mesh = np.meshgrid(*per_axis, indexing="ij")
    units = np.zeros((count, c))
    for j, k in enumerate(cs):
        units[:, k] = mesh[j].ravel()
    # the untranslated map first, then lexicographic
    order = np.lexsort(units.T[::-1])
    units = units[order]
    zero = np.flatnonzero(np.all(np.abs(units) < 1e-15, axis=1))
    if zero.size:
        units = np.vstack([units[zero], np.delete(units, zero, axis=0)])
    reach = np.ones(c)
    for j, k in enumerate(cs):
        reach[k] = np.max(np.abs(per_axis[j])) + abs(rates[k])
    for k in np.setdiff1d(np.arange(c), cs):
        reach[k] = max(1.0, abs(rates[k]))
    ext = reach + 0.1
    delta = min(eps / 2, 1.9 * eps / (np.sqrt(c) * np.max(ext)))
    maps = tuple(phi.then(FiberMap.translation(delta * u)) for u in units)
    B = Region.box(x_star - delta, x_star + delta)
    D = Region.box(x_star - delta * ext, x_star + delta * ext)
    return TranslationFamily(maps, delta * units, B, D, float(delta), tuple(int(k) for k in cs))


# -- block hyperbolicity ----------------------------------------------------------


@dataclass(frozen=True)
class ConleyMoserCertificate:
    cs_dims: tuple[int, ...]
    cu_dims: tuple[int, ...]
    cs_index: int
    contraction_cs: float
    contraction_cu: float
    margin_cs: float
    margin_cu: float
    per_symbol: tuple[dict, ...]

    @property
    def slack(self) -> float:
        return min(1 - self.contraction_cs, 1 - self.contraction_cu, self.margin_cs, self.margin_cu)

    @property
    def valid(self) -> bool:
        return self.slack > 0

    def to_dict(self) -> dict:
        return {"kind": "conley_moser", "valid": self.valid, "cs_dims": list(self.cs_dims),
                "cu_dims": list(self.cu_dims), "cs_index": self.cs_index,
                "contraction_cs": self.contraction_cs, "contraction_cu": self.contraction_cu,
                "margin_cs": self.margin_cs, "margin_cu": self.margin_cu, "slack": self.slack,
                "per_symbol": list(self.per_symbol)}


def _image_margin(region: Region, M: np.ndarray, offset: np.ndarray) -> float:
    """Worst depth of ``M y + offset`` inside ``region`` over ``y`` in the closed region."""
    if len(region.parts) != 1:
        raise InputError("block regions must be a single ball or box")
    p = region.parts[0]
    if hasattr(p, "lo"):
        # signed distance to a convex set is concave, so the minimum sits at a vertex
        corners = np.array(np.meshgrid(*zip(p.lo, p.hi), indexing="ij")).reshape(p.lo.size, -1).T
        return float(np.min(region.signed_distance(corners @ M.T + offset)))
    center = M @ p.center + offset
    return float(p.radius - np.linalg.norm(center - p.center) - np.linalg.norm(M, 2) * p.radius)


def verify_conley_moser(sys: SkewSystem, symbols, D_cs: Region, D_cu: Region,
                        cs_dims: Sequence[int] | None = None) -> ConleyMoserCertificate:
    """Block contraction checks: cs-block of each map and cu-block of each inverse map.

    With ``cs_dims`` omitted the first ``D_cs.dim`` coordinates form the cs-block.
    """
    blocks = normalize_blocks(symbols)
    c = sys.c
    cs = tuple(range(D_cs.dim)) if cs_dims is None else tuple(int(k) for k in cs_dims)
    cu = tuple(k for k in range(c) if k not in cs)
    if len(cs) != D_cs.dim or len(cu) != D_cu.dim:
        raise InputError("block regions do not match the coordinate split")
    rows = []
    worst_cs = worst_cu = 0.0
    m_cs = m_cu = np.inf
    for w in blocks:
        f = word_map(sys, w)
        A, b = f.A, f.b
        if max(np.max(np.abs(A[np.ix_(cs, cu)]), initial=0), np.max(np.abs(A[np.ix_(cu, cs)]), initial=0)) > 1e-12:
            raise InputError(f"map of {list(w)} is not block diagonal for the declared split")
        Acs = A[np.ix_(cs, cs)]
        Ai = np.linalg.inv(A)
        Acu_inv = Ai[np.ix_(cu, cu)]
        s_cs = float(np.linalg.norm(Acs, 2))
        s_cu = float(np.linalg.norm(Acu_inv, 2))
        bi = -Ai @ b
        mc = _image_margin(D_cs, Acs, b[list(cs)])
        mu = _image_margin(D_cu, Acu_inv, bi[list(cu)])
        rows.append({"block": list(w), "contraction_cs": s_cs, "contraction_cu": s_cu,
                     "margin_cs": mc, "margin_cu": mu})
        worst_cs, worst_cu = max(worst_cs, s_cs), max(worst_cu, s_cu)
        m_cs, m_cu = min(m_cs, mc), min(m_cu, mu)
        if s_cs >= 1 or s_cu >= 1:
            raise VerificationFailure("block is not contracting",
                                      {"block": list(w), "singular_value": max(s_cs, s_cu)}, stage="conley_moser")
        if mc <= 0 or mu <= 0:
            raise VerificationFailure("block image is not inside its domain",
                                      {"block": list(w), "margin_cs": mc, "margin_cu": mu}, stage="conley_moser")
    return ConleyMoserCertificate(cs, cu, len(cs), worst_cs, worst_cu, float(m_cs), float(m_cu), tuple(rows))
