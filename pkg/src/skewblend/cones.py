"""Standard l-cones, invariance and expansion checks, and the induced plane sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, VerificationFailure
from .grassmann import Plane, PlaneBall
from .regions import Region
from .shift_space import TruncatedSequence
from .skewproduct import SkewSystem

RAYS_PER_PLANE = 64


@dataclass(frozen=True, eq=False)
class Cone:
    """``{B (v, w) : |w| <= rho |v|}`` with ``v`` in R^ell."""

    ell: int
    rho: float
    basis: np.ndarray | None = None

    def __post_init__(self):
        if not self.rho > 0:
            raise InputError("cone aperture must be positive")
        if self.basis is not None:
            B = np.asarray(self.basis, dtype=float)
            if B.ndim != 2 or B.shape[0] != B.shape[1] or np.linalg.matrix_rank(B) < B.shape[0]:
                raise InputError("cone basis must be an invertible square matrix")
            if not 0 < self.ell < B.shape[0]:
                raise InputError("cone rank must lie strictly between 0 and c")
            object.__setattr__(self, "basis", B)

    @classmethod
    def standard(cls, c: int, ell: int, rho: float) -> "Cone":
        return cls(ell, rho, np.eye(c))

    @property
    def c(self) -> int:
        return self.basis.shape[0]

    @property
    def basis_inv(self) -> np.ndarray:
        return np.linalg.inv(self.basis)

    def split(self, x) -> tuple[np.ndarray, np.ndarray]:
        y = np.asarray(x, dtype=float) @ self.basis_inv.T
        return y[..., : self.ell], y[..., self.ell:]

    def margin(self, x) -> np.ndarray | float:
        v, w = self.split(x)
        m = self.rho * np.linalg.norm(v, axis=-1) - np.linalg.norm(w, axis=-1)
        return float(m) if np.ndim(m) == 0 else m

    def to_dict(self) -> dict:
        return {"rank": self.ell, "aperture": self.rho, "basis": self.basis.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Cone":
        return cls(int(data["rank"]), float(data["aperture"]), np.asarray(data["basis"], dtype=float))


def cone_contains(C: Cone, x, strict: bool = True) -> tuple[bool, float]:
    x = np.asarray(x, dtype=float)
    m = C.margin(x)
    if strict:
        v, _ = C.split(x)
        return bool(m > 0 and np.linalg.norm(v) > 0), m
    return bool(m >= 0), m


def _sphere(k: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    u = rng.standard_normal((n * k, k))
    return np.vstack([np.eye(k), -np.eye(k), u / np.linalg.norm(u, axis=1, keepdims=True)])


def cone_rays(C: Cone, rng: np.random.Generator | None = None, fractions=(0.5, 1.0)) -> np.ndarray:
    """Unit vectors of the cone: extreme rays plus interior fractions of the aperture."""
    rng = np.random.default_rng(0) if rng is None else rng
    n = RAYS_PER_PLANE * max(1, C.c // 2)
    V = _sphere(C.ell, n, rng)
    W = _sphere(C.c - C.ell, n, rng)
    rows = [np.hstack([V, np.zeros((len(V), C.c - C.ell))])]
    for t in fractions:
        if t == 0:
            continue
        vv = np.repeat(V, len(W), axis=0)
        ww = np.tile(W, (len(V), 1)) * (t * C.rho)
        rows.append(np.hstack([vv, ww]))
    Y = np.vstack(rows) @ C.basis.T
    return Y / np.linalg.norm(Y, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ConeCertificate:
    kind: str
    cone: Cone
    lam: float
    min_margin: float
    min_expansion: float
    analytic: bool
    per_symbol: tuple[dict, ...] = ()
    witness: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.min_margin > 0 and self.min_expansion >= 1.0 / self.lam

    @property
    def slack(self) -> float:
        return min(self.min_margin, self.min_expansion - 1.0 / self.lam)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "valid": self.valid, "cone": self.cone.to_dict(), "lambda": self.lam,
                "min_margin": self.min_margin, "min_expansion": self.min_expansion,
                "analytic": self.analytic, "per_symbol": list(self.per_symbol), "witness": self.witness}


def _block_bounds(C: Cone, M: np.ndarray) -> dict | None:
    """Analytic margin and expansion bounds in an orthonormal cone basis.

    Write ``M' = diag(U, S) + E`` in cone coordinates.  For a unit cone
    vector ``(v, w)`` we have ``|v| >= 1/sqrt(1+rho^2)``; the block part has
    image margin at least ``rho |v| (smin(U) - smax(S))`` and norm at least
    ``smin(U) |v|``.  The margin is ``(rho+1)``-Lipschitz, so ``E`` costs
    at most ``(rho+1)|E|`` of margin and ``|E|`` of expansion.
    """
    if not np.allclose(C.basis.T @ C.basis, np.eye(C.c), atol=1e-12):
        return None
    Mp = C.basis.T @ M @ C.basis
    l = C.ell
    E = Mp.copy()
    E[:l, :l] = 0.0
    E[l:, l:] = 0.0
    e = float(np.linalg.norm(E, 2))
    su = float(np.linalg.svd(Mp[:l, :l], compute_uv=False)[-1])
    ss = float(np.linalg.svd(Mp[l:, l:], compute_uv=False)[0])
    vmin = 1.0 / np.sqrt(1 + C.rho ** 2)
    gap = su - ss
    return {"sigma_min_upper": su, "sigma_max_lower": ss, "off_block": e,
            "margin": C.rho * gap * (vmin if gap >= 0 else 1.0) - (C.rho + 1) * e,
            "expansion": su * vmin - e}


def _check_matrices(kind: str, items: Sequence[tuple], C: Cone, lam: float,
                    rng: np.random.Generator | None, raise_on_fail: bool = True,
                    sample: bool = False) -> ConeCertificate:
    """``items`` are ``(symbol, x, M)``; checks ``M C`` inside ``int C`` and ``|M u| >= |u| / lam``."""
    if not 0 < lam < 1:
        raise InputError("lambda must lie in (0, 1)")
    rays = None
    worst_m, worst_e = np.inf, np.inf
    w_margin: dict = {}
    w_exp: dict = {}
    rows = []
    all_analytic = True
    seen = {}
    for s, x, M in items:
        key = M.tobytes()
        if key in seen:
            continue
        seen[key] = True
        ana = _block_bounds(C, M)
        if ana is not None and ana["margin"] > 0 and ana["expansion"] >= 1 / lam and not sample:
            m_cert, e_cert = ana["margin"], ana["expansion"]
            m = e = None
            i = j = None
        else:
            if rays is None:
                rays = cone_rays(C, rng)
            img = rays @ M.T
            margins = C.margin(img)
            norms = np.linalg.norm(img, axis=1)
            i, j = int(np.argmin(margins)), int(np.argmin(norms))
            m, e = float(margins[i]), float(norms[j])
            if ana is not None and ana["margin"] > 0 and ana["expansion"] >= 1 / lam:
                # rigorous lower bounds; the sampled values are kept for reporting
                m_cert, e_cert = ana["margin"], ana["expansion"]
            else:
                all_analytic = False
                m_cert, e_cert = m, e
        rows.append({"symbol": s, "sampled_margin": m, "sampled_expansion": e, "analytic": ana})
        if m_cert < worst_m:
            worst_m = m_cert
            w_margin = {"symbol": s, "x": np.asarray(x).tolist(),
                        "v": None if i is None else rays[i].tolist(), "margin": m_cert}
        if e_cert < worst_e:
            worst_e = e_cert
            w_exp = {"symbol": s, "x": np.asarray(x).tolist(),
                     "v": None if j is None else rays[j].tolist(), "expansion": e_cert}
    witness = w_margin if worst_m <= 0 or worst_e >= 1 / lam else w_exp
    cert = ConeCertificate(kind, C, float(lam), float(worst_m), float(worst_e), all_analytic, tuple(rows), witness)
    if raise_on_fail and not cert.valid:
        what = "invariance" if cert.min_margin <= 0 else "expansion"
        raise VerificationFailure(f"{kind} cone fails {what}", witness, stage=f"{kind}_cone")
    return cert


def _jacobian_items(sys: SkewSystem, region: Region, samples: int, rng: np.random.Generator,
                    inverse: bool, symbols: Sequence[int] | None) -> list[tuple]:
    # fiber maps are affine, so one base point per symbol already gives every derivative
    pts = region.sample(rng, max(1, samples))
    items = []
    for s in symbols if symbols is not None else range(1, sys.d + 1):
        f = sys.symbol_map(s)
        for x in pts:
            M = f.collapsed.A_inv if inverse else f.jacobian(x)
            items.append((s, x, np.asarray(M, dtype=float)))
    return items


def verify_unstable_cone(sys: SkewSystem, C: Cone, region: Region, lam: float, samples: int = 1,
                         rng: np.random.Generator | None = None, raise_on_fail: bool = True,
                         symbols: Sequence[int] | None = None, sample: bool = False) -> ConeCertificate:
    """``Dphi C`` inside ``int C`` with expansion ``1/lam`` for every symbol.

    Analytic bounds are used when the derivative is close to block diagonal
    in an orthonormal cone basis; otherwise (or with ``sample``) extreme and
    interior rays are swept.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if C.c != sys.c:
        raise InputError("cone and system dimensions differ")
    items = _jacobian_items(sys, region, samples, rng, False, symbols)
    return _check_matrices("unstable", items, C, lam, rng, raise_on_fail, sample)


def verify_stable_cone(sys: SkewSystem, C: Cone, region: Region, lam: float, samples: int = 1,
                       rng: np.random.Generator | None = None, raise_on_fail: bool = True,
                       symbols: Sequence[int] | None = None, sample: bool = False) -> ConeCertificate:
    """Stable cone of ``sys``: an unstable cone for the inverse fiber maps."""
    rng = np.random.default_rng(0) if rng is None else rng
    if C.c != sys.c:
        raise InputError("cone and system dimensions differ")
    items = _jacobian_items(sys, region, samples, rng, True, symbols)
    return _check_matrices("stable", items, C, lam, rng, raise_on_fail, sample)


def inverse_system(sys: SkewSystem) -> SkewSystem:
    """One-step system of inverse fiber maps with swapped constants."""
    if not sys.one_step:
        raise InputError("inverse system only for one-step systems")
    return sys.replace_maps([sys.symbol_map(s).inverse() for s in range(1, sys.d + 1)],
                            gamma=sys.gamma_hat, gamma_hat=sys.gamma)


@dataclass(frozen=True)
class ContractionReport:
    ok: bool
    lam: float
    fitted_rate: float
    worst_ratio: float
    norms: tuple[tuple[float, ...], ...]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "lambda": self.lam, "fitted_rate": self.fitted_rate,
                "worst_ratio": self.worst_ratio}


def backward_contraction_check(sys: SkewSystem, C: Cone, orbit: tuple[TruncatedSequence, np.ndarray, int],
                               lam: float, vectors=None, region: Region | None = None) -> ContractionReport:
    """Check ``|D phi^{-k} v| <= lam^k |v|`` for ``1 <= k <= n`` and fit the decay rate."""
    xi, x, n = orbit
    if region is not None:
        pts = sys.backward_orbit(xi, n, x)
        out = np.atleast_1d(region.signed_distance(pts)) < 0
        if out.any():
            raise VerificationFailure("orbit leaves the cone region", {"k": int(np.argmax(out))},
                                      stage="precondition")
    V = np.atleast_2d(np.asarray(vectors, dtype=float)) if vectors is not None else C.basis[:, : C.ell].T
    for v in V:
        if not cone_contains(C, v, strict=False)[0]:
            raise InputError(f"vector {v.tolist()} is not in the cone")
    V = V / np.linalg.norm(V, axis=1, keepdims=True)
    norms = np.empty((n + 1, len(V)))
    for k in range(n + 1):
        D = sys.derivative_cocycle(xi, -k, x)
        norms[k] = np.linalg.norm(V @ D.T, axis=1)
    ks = np.arange(1, n + 1)
    ratios = norms[1:] / lam ** ks[:, None]
    logs = np.log(np.maximum(norms[1:], 1e-300)).mean(axis=1)
    rate = float(np.exp(np.polyfit(ks, logs, 1)[0])) if n >= 2 else float(np.exp(logs[0])) if n else 1.0
    worst = float(ratios.max()) if n else 0.0
    return ContractionReport(bool(worst <= 1 + 1e-12), float(lam), rate, worst,
                             tuple(tuple(r) for r in norms.T))


def cone_to_grassmann(C: Cone, E: Plane, rng: np.random.Generator | None = None) -> tuple[bool, float]:
    """Whether every unit vector of ``E`` lies strictly in ``C``; returns the sampled min margin."""
    if E.ell != C.ell or E.c != C.c:
        raise InputError("plane and cone ranks differ")
    rng = np.random.default_rng(0) if rng is None else rng
    U = _sphere(E.ell, RAYS_PER_PLANE * max(1, C.c // 2), rng)
    vecs = U @ E.frame.T
    m = np.atleast_1d(C.margin(vecs))
    v, _ = C.split(vecs)
    ok = bool(np.all(m > 0) and np.all(np.linalg.norm(v, axis=1) > 0))
    return ok, float(m.min())


def plane_ball_in_cone(C: Cone, G: PlaneBall, rng: np.random.Generator | None = None) -> float:
    """Lower bound for the cone margin of unit vectors of planes in the closed ball ``G``.

    A unit ``f`` in such a plane splits as ``f0 + f1`` with ``f0`` in the
    center plane, ``|f1| <= r`` and ``|f0| >= sqrt(1 - r^2)``; the margin is
    ``(rho + 1) |B^-1|``-Lipschitz.  Positive means every plane of ``G``
    lies in the cone.
    """
    _, m0 = cone_to_grassmann(C, G.center, rng)
    r = G.radius
    return float(m0 * np.sqrt(1 - r * r) - (C.rho + 1) * np.linalg.norm(C.basis_inv, 2) * r)
