"""Planes in R^c, the projection metric, linear actions and the Grassmannian lift.

``plane_distance(E, F)`` is ``sigma_max((I - P_F) E)``: the largest
distance from a unit vector of E to the subspace F.  It is computed one
way round exactly as written; for planes of equal dimension it coincides
with the gap ``||P_E - P_F||`` and is therefore symmetric.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, VerificationFailure
from .regions import GRID_CAP, Region
from .skewproduct import SkewSystem

ORTHO_TOL = 1e-10


def orthonormal_frame(vectors) -> np.ndarray:
    """QR with a positive diagonal, so equal inputs give equal frames."""
    Y = np.asarray(vectors, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    Q, R = np.linalg.qr(Y)
    d = np.diag(R)
    if np.any(np.abs(d) < 1e-14 * max(1.0, np.abs(Y).max())):
        raise InputError("vectors do not span a plane of full rank")
    return Q * np.sign(d)


@dataclass(frozen=True, eq=False)
class Plane:
    frame: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.frame, dtype=float)
        if F.ndim == 1:
            F = F[:, None]
        c, ell = F.shape
        if not 0 < ell < c:
            raise InputError(f"plane dimension {ell} must lie strictly between 0 and {c}")
        if np.max(np.abs(F.T @ F - np.eye(ell))) > ORTHO_TOL:
            F = orthonormal_frame(F)
        F.setflags(write=False)
        object.__setattr__(self, "frame", F)

    @classmethod
    def span(cls, vectors) -> "Plane":
        return cls(orthonormal_frame(vectors))

    @classmethod
    def coordinate(cls, c: int, coords: Sequence[int]) -> "Plane":
        return cls(np.eye(c)[:, list(coords)])

    @property
    def c(self) -> int:
        return self.frame.shape[0]

    @property
    def ell(self) -> int:
        return self.frame.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.frame @ self.frame.T

    def complement(self) -> np.ndarray:
        """Orthonormal basis of the orthogonal complement."""
        u, _, _ = np.linalg.svd(self.frame, full_matrices=True)
        return orthonormal_frame(u[:, self.ell:]) if self.c - self.ell else np.zeros((self.c, 0))

    def to_dict(self) -> dict:
        # column-major: one list per frame column
        return {"frame_columns": self.frame.T.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Plane":
        return cls(np.asarray(data["frame_columns"], dtype=float).T)


def plane_distance(E: Plane, F: Plane) -> float:
    if E.c != F.c or E.ell != F.ell:
        raise InputError("planes live in different Grassmannians")
    R = E.frame - F.frame @ (F.frame.T @ E.frame)
    return float(min(1.0, np.linalg.norm(R, 2)))


def sup_inf_distance(E: Plane, F: Plane, sweep: int = 256, rng: np.random.Generator | None = None) -> float:
    """Slow oracle: ``sup_{e in E, |e|=1} inf_{f in F} |f - e|``.

    The inner infimum is a least-squares residual against a scrambled basis
    of F; the outer supremum is a dense sweep of the unit sphere of E
    (angles for planes of dimension 1 and 2, random starts otherwise)
    polished by a bounded scalar or local optimization.
    """
    from scipy.optimize import minimize, minimize_scalar

    rng = np.random.default_rng(0) if rng is None else rng
    basis = F.frame @ (np.eye(F.ell) + 0.3 * rng.standard_normal((F.ell, F.ell)))

    def residual(u):
        e = E.frame @ (u / np.linalg.norm(u))
        coef, *_ = np.linalg.lstsq(basis, e, rcond=None)
        return float(np.linalg.norm(basis @ coef - e))

    if E.ell == 1:
        return residual(np.ones(1))
    if E.ell == 2:
        f = lambda t: -residual(np.array([np.cos(t), np.sin(t)]))
        grid = np.linspace(0.0, np.pi, sweep, endpoint=False)
        es = E.frame @ np.stack([np.cos(grid), np.sin(grid)])
        coef, *_ = np.linalg.lstsq(basis, es, rcond=None)
        vals = -np.linalg.norm(basis @ coef - es, axis=0)
        k = int(np.argmin(vals))
        step = np.pi / sweep
        res = minimize_scalar(f, bounds=(grid[k] - step, grid[k] + step), method="bounded",
                              options={"xatol": 1e-12})
        return max(-res.fun, -vals[k])
    best = 0.0
    for _ in range(sweep // 8):
        u0 = rng.standard_normal(E.ell)
        res = minimize(lambda u: -residual(u), u0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        best = max(best, -res.fun)
    return best


def apply_linear(T, E: Plane) -> Plane:
    T = np.asarray(T, dtype=float)
    if T.shape != (E.c, E.c):
        raise InputError("matrix and plane dimensions differ")
    if np.linalg.matrix_rank(T) < E.c:
        raise InputError("matrix is singular")
    return Plane(orthonormal_frame(T @ E.frame))


def condition_number(T) -> float:
    s = np.linalg.svd(np.asarray(T, dtype=float), compute_uv=False)
    return float(s[0] / s[-1])


def random_plane(rng: np.random.Generator, c: int, ell: int) -> Plane:
    return Plane(orthonormal_frame(rng.standard_normal((c, ell))))


def bilipschitz_check(T, samples: int, rng: np.random.Generator | None = None,
                      ell: int | None = None, near: float | None = 0.5) -> dict:
    """Max observed ``d(TE, TF) / d(E, F)`` over random plane pairs.

    Half the pairs are independent planes, half are small rotations of one
    another (scale ``near``), where the ratio is largest.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    T = np.asarray(T, dtype=float)
    c = T.shape[0]
    bound = condition_number(T)
    worst = 0.0
    for k in range(samples):
        ll = ell if ell is not None else int(rng.integers(1, c))
        E = random_plane(rng, c, ll)
        if near is not None and k % 2:
            F = Plane(orthonormal_frame(E.frame + near * rng.random() * rng.standard_normal((c, ll))))
        else:
            F = random_plane(rng, c, ll)
        dEF = plane_distance(E, F)
        if dEF < 1e-9:
            continue
        worst = max(worst, plane_distance(apply_linear(T, E), apply_linear(T, F)) / dEF)
    return {"observed": worst, "bound": bound, "ok": worst <= bound + 1e-9}


# -- lifted system ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LiftedSystem:
    """``(x, E) -> (phi_xi(x), Dphi_xi(x) E)`` over the same shift, with product metric."""

    base: SkewSystem
    ell: int
    upper_bound: float
    lower_bound: float
    slack_bunching: float
    slack_derivative: float

    @property
    def c(self) -> int:
        return self.base.c

    def apply(self, s: int, x, E: Plane) -> tuple[np.ndarray, Plane]:
        f = self.base.symbol_map(s)
        return f(x), apply_linear(f.jacobian(x), E)

    def apply_inverse(self, s: int, x, E: Plane) -> tuple[np.ndarray, Plane]:
        f = self.base.symbol_map(s)
        y = f.inverse_apply(x)
        return y, apply_linear(f.collapsed.A_inv, E)

    def distance(self, p, q) -> float:
        return float(np.linalg.norm(np.asarray(p[0]) - np.asarray(q[0])) + plane_distance(p[1], q[1]))

    @property
    def phs_slacks(self) -> tuple[float, float, float, float]:
        na = self.base.nu ** self.base.alpha
        return (self.lower_bound - na, 1.0 - self.lower_bound if self.lower_bound < 1 else 0.0,
                self.upper_bound - 1.0, 1.0 / na - self.upper_bound)

    def to_dict(self) -> dict:
        return {"kind": "lift", "ell": self.ell, "lifted_upper_bound": self.upper_bound,
                "lifted_lower_bound": self.lower_bound, "nu^-alpha": self.base.nu ** -self.base.alpha,
                "slack_upper": self.base.nu ** -self.base.alpha - self.upper_bound,
                "slack_bunching": self.slack_bunching, "slack_derivative": self.slack_derivative}


def lifted_bound(gamma: float, gamma_hat: float, L_D: float) -> float:
    return max(1.0 / gamma_hat + L_D / gamma, 1.0 / (gamma * gamma_hat))


def lift_system(sys: SkewSystem, ell: int) -> LiftedSystem:
    """Lift to the bundle of ``ell``-planes, refusing when the lift would leave the hyperbolic class."""
    if not 0 < ell < sys.c:
        raise InputError(f"ell must satisfy 0 < ell < {sys.c}")
    sys.verify_constants()
    na = sys.nu ** sys.alpha
    g, gh, L = sys.gamma, sys.gamma_hat, sys.L_D
    s_bunch = g * gh - na
    s_der = g * (1.0 / na - 1.0 / gh) - L
    if s_bunch <= 0:
        raise VerificationFailure("lift refused: not fiber bunched",
                                  {"nu^alpha": na, "gamma*gamma_hat": g * gh}, stage="lift")
    if s_der <= 0:
        raise VerificationFailure("lift refused: derivative Lipschitz constant too large",
                                  {"L_D": L, "limit": g * (1.0 / na - 1.0 / gh)}, stage="lift")
    upper = lifted_bound(g, gh, L)
    # the inverse maps have lower constant gamma_hat and upper gamma^-1
    lower = 1.0 / lifted_bound(gh, g, L)
    return LiftedSystem(sys, ell, upper, lower, s_bunch, s_der)


def lifted_lipschitz_empirical(lift: LiftedSystem, samples: int, rng: np.random.Generator | None = None,
                               region: Region | None = None, scale: float = 0.3) -> float:
    """Max of ``d(phi(p), phi(q)) / d(p, q)`` over random nearby lifted points."""
    rng = np.random.default_rng(0) if rng is None else rng
    c, ell = lift.c, lift.ell
    worst = 0.0
    for _ in range(samples):
        s = int(rng.integers(1, lift.base.d + 1))
        x = region.sample(rng, 1)[0] if region is not None else rng.standard_normal(c)
        y = x + scale * rng.random() * rng.standard_normal(c)
        E = random_plane(rng, c, ell)
        F = Plane(orthonormal_frame(E.frame + scale * rng.random() * rng.standard_normal((c, ell))))
        d0 = lift.distance((x, E), (y, F))
        if d0 < 1e-12:
            continue
        d1 = lift.distance(lift.apply(s, x, E), lift.apply(s, y, F))
        worst = max(worst, d1 / d0)
    return float(worst)


# -- plane balls and their coverings ------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlaneBall:
    """Open ball ``{E : d(E, center) < radius}`` with ``radius < 1``."""

    center: Plane
    radius: float

    def __post_init__(self):
        if not 0 < self.radius < 1:
            raise InputError("plane-ball radius must lie in (0, 1)")

    @property
    def graph_radius(self) -> float:
        r = self.radius
        return r / np.sqrt(1 - r * r)

    @property
    def dim(self) -> int:
        return self.center.ell * (self.center.c - self.center.ell)

    def signed_distance(self, E: Plane) -> float:
        return self.radius - plane_distance(E, self.center)

    def to_dict(self) -> dict:
        return {"center": self.center.to_dict(), "radius": self.radius}

    @classmethod
    def from_dict(cls, data: dict) -> "PlaneBall":
        return cls(Plane.from_dict(data["center"]), float(data["radius"]))


def _graph_distance_ab(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plane distance to the center from batch-last components.

    ``a`` (ell, ell, ...) and ``b`` (m, ell, ...) are the center-frame and
    complement components of a basis; the plane is the graph of
    ``M = b a^{-1}`` and its distance is ``s / sqrt(1 + s^2)`` with
    ``s = |M|``.  Small index loops keep the batch axis contiguous.
    """
    ell, m = a.shape[0], b.shape[0]
    if ell == 1:
        det = a[0, 0]
    elif ell == 2:
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    else:
        det = np.linalg.det(np.moveaxis(a, (0, 1), (-2, -1)))
    ok = np.abs(det) > 1e-14
    safe = np.where(ok, det, 1.0)
    if ell == 1:
        inv = [[1.0 / safe]]
    elif ell == 2:
        inv = [[a[1, 1] / safe, -a[0, 1] / safe], [-a[1, 0] / safe, a[0, 0] / safe]]
    else:
        A = np.moveaxis(a, (0, 1), (-2, -1))
        inv_arr = np.moveaxis(np.linalg.inv(np.where(ok[..., None, None], A, np.eye(ell))), (-2, -1), (0, 1))
        inv = [[inv_arr[p, j] for j in range(ell)] for p in range(ell)]
    M = [[sum(b[i, p] * inv[p][j] for p in range(ell)) for j in range(ell)] for i in range(m)]
    if ell == 1:
        s2 = sum(M[i][0] ** 2 for i in range(m))
    elif ell == 2:
        g00 = sum(M[i][0] ** 2 for i in range(m))
        g11 = sum(M[i][1] ** 2 for i in range(m))
        g01 = sum(M[i][0] * M[i][1] for i in range(m))
        s2 = 0.5 * (g00 + g11 + np.sqrt((g00 - g11) ** 2 + 4 * g01 ** 2))
    else:
        Mt = np.moveaxis(np.array(M), (0, 1), (-2, -1))
        s2 = np.linalg.eigvalsh(np.swapaxes(Mt, -1, -2) @ Mt)[..., -1]
    s2 = np.maximum(s2, 0.0)
    return np.where(ok, np.sqrt(s2 / (1 + s2)), 1.0)


def graph_distances(ball: PlaneBall, Y: np.ndarray) -> np.ndarray:
    """``d(span Y, center)`` for a batch of (c, ell) bases ``Y`` (any leading shape)."""
    a = np.moveaxis(ball.center.frame.T @ Y, (-2, -1), (0, 1))
    b = np.moveaxis(ball.center.complement().T @ Y, (-2, -1), (0, 1))
    return _graph_distance_ab(a, b)


def graph_planes(ball: PlaneBall, coords: np.ndarray) -> np.ndarray:
    """Bases ``E0 + Q M`` for graph coordinates ``M`` (flattened row-major)."""
    E0 = ball.center.frame
    Q = ball.center.complement()
    ell = E0.shape[1]
    M = coords.reshape(-1, Q.shape[1], ell)
    return E0[None] + Q @ M


@dataclass(frozen=True, eq=False)
class PlaneCoveringCertificate:
    ball: PlaneBall
    matrices: tuple[np.ndarray, ...]
    labels: tuple
    h: float
    correction: float
    cover_margin: float
    gammas: tuple[float, ...]
    grid_points: int
    runtime: float = 0.0

    @property
    def valid(self) -> bool:
        return self.cover_margin > 0

    def depths(self, E: Plane) -> np.ndarray:
        Y = np.stack([np.linalg.solve(T, E.frame) for T in self.matrices])
        return np.asarray(self.gammas) * (self.ball.radius - graph_distances(self.ball, Y))

    def to_dict(self) -> dict:
        return {"kind": "plane_covering", "valid": self.valid, "ball": self.ball.to_dict(), "h": self.h,
                "grid_correction": self.correction, "cover_margin": self.cover_margin,
                "cells": self.grid_points, "runtime_s": self.runtime}


class _PlaneDepths:
    """Vectorized depths ``gamma_k (r - d(T_k^{-1} E_M, center))`` over graph coordinates ``M``."""

    def __init__(self, ball: PlaneBall, inverses: Sequence[np.ndarray], gammas):
        self.ball = ball
        Ti = np.stack(inverses)
        self.E0 = ball.center.frame
        self.Q = ball.center.complement()
        self.Pa = self.E0.T @ Ti
        self.Pb = self.Q.T @ Ti
        self.g = np.asarray(gammas)
        self.ell = self.E0.shape[1]

    def _planes(self, coords: np.ndarray) -> np.ndarray:
        # batch-last bases (c, ell, N)
        M = coords.reshape(-1, self.Q.shape[1], self.ell).transpose(1, 2, 0)
        return self.E0[:, :, None] + np.tensordot(self.Q, M, axes=(1, 0))

    def best(self, coords: np.ndarray, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
        val = np.empty(coords.shape[0])
        arg = np.empty(coords.shape[0], dtype=int)
        for lo in range(0, coords.shape[0], chunk):
            Y = self._planes(coords[lo:lo + chunk])
            a = np.moveaxis(np.tensordot(self.Pa, Y, axes=(2, 0)), 0, 2)
            b = np.moveaxis(np.tensordot(self.Pb, Y, axes=(2, 0)), 0, 2)
            dep = self.g[:, None] * (self.ball.radius - _graph_distance_ab(a, b))
            arg[lo:lo + chunk] = np.argmax(dep, axis=0)
            val[lo:lo + chunk] = np.max(dep, axis=0)
        return val, arg

    def single(self, coords: np.ndarray, idx: np.ndarray) -> np.ndarray:
        Y = self._planes(coords)
        Pa = self.Pa[idx].transpose(1, 2, 0)
        Pb = self.Pb[idx].transpose(1, 2, 0)
        a = (Pa[:, :, None, :] * Y[None]).sum(axis=1)
        b = (Pb[:, :, None, :] * Y[None]).sum(axis=1)
        return self.g[idx] * (self.ball.radius - _graph_distance_ab(a, b))


def _best_depths(ball: PlaneBall, inverses: Sequence[np.ndarray], gammas, coords: np.ndarray) -> np.ndarray:
    return _PlaneDepths(ball, inverses, gammas).best(coords)[0]


def verify_plane_covering(matrices: Sequence, ball: PlaneBall, h: float, labels: Sequence | None = None,
                          cap: int = GRID_CAP, target: float | None = None) -> PlaneCoveringCertificate:
    """Certify that the closed plane ball lies in the union of ``T_k(ball)``.

    Depths are ``(r - d(T_k^{-1} E, center)) / cond(T_k)``, which are
    1-Lipschitz for the plane metric.  Graph coordinates ``M`` over the
    center plane bound the metric by the Frobenius norm of ``dM``, so a
    cube of half-width ``w`` around ``M_c`` in ``k`` graph coordinates is
    certified once the best depth at ``M_c`` exceeds ``w sqrt(k) + target``.
    Cubes are bisected until that holds or their width drops below ``h``.
    ``target`` defaults to 0.15 of the smallest best depth seen on a coarse
    pre-scan; the reported margin is the smallest certified
    ``best - w sqrt(k)`` over leaves.
    """
    t0 = time.perf_counter()
    mats = tuple(np.asarray(T, dtype=float) for T in matrices)
    labels = tuple(range(1, len(mats) + 1)) if labels is None else tuple(labels)
    inverses = [np.linalg.inv(T) for T in mats]
    gammas = tuple(1.0 / condition_number(T) for T in mats)
    k = ball.dim
    R = ball.graph_radius
    if target is None:
        axis = np.linspace(-R, R, 5)
        probe = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1).reshape(-1, k)
        inside = ball.radius - graph_distances(ball, graph_planes(ball, probe)) >= 0
        target = max(0.0, 0.15 * float(_best_depths(ball, inverses, gammas, probe[inside]).min()))
    depths = _PlaneDepths(ball, inverses, gammas)
    signs = np.array(list(np.ndindex(*([2] * k)))) * 2 - 1
    centers = np.zeros((1, k))
    hint = np.full(1, -1)
    half = R
    margin = np.inf
    evaluated = 0
    while centers.shape[0]:
        rad = half * np.sqrt(k)
        evaluated += centers.shape[0]
        if evaluated > cap:
            raise VerificationFailure(f"plane covering needs more than {cap} cells", {"h": h},
                                      stage="plane_covering")
        sd = ball.radius - graph_distances(ball, graph_planes(ball, centers))
        near = sd >= -rad
        centers, hint = centers[near], hint[near]
        # a cell needs one certifying map: try the parent's best map first
        best = np.full(centers.shape[0], -np.inf)
        has = hint >= 0
        if has.any():
            best[has] = depths.single(centers[has], hint[has])
        redo = best - rad <= target
        if redo.any():
            best[redo], hint[redo] = depths.best(centers[redo])
        done = best - rad > target
        if done.any():
            margin = min(margin, float((best[done] - rad).min()))
        todo = ~done
        if todo.any() and 2 * half <= h:
            i = int(np.flatnonzero(todo)[np.argmin(best[todo])])
            raise VerificationFailure("plane ball is not covered by the plane images", {
                "graph_point": centers[i].tolist(), "best_depth": float(best[i]),
                "cell_radius": float(rad), "target": target}, stage="plane_covering")
        half /= 2
        centers = (centers[todo][:, None, :] + half * signs[None]).reshape(-1, k)
        hint = np.repeat(hint[todo], len(signs))
    if not np.isfinite(margin):
        margin = float(target)
    return PlaneCoveringCertificate(ball, mats, labels, float(h), float(half * np.sqrt(k)), margin, gammas,
                                    evaluated, time.perf_counter() - t0)
