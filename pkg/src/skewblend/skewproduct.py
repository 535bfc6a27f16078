"""Affine fiber maps, symbolic skew-products over the shift, and their constants.

The fiber map over ``xi`` is chosen by ``xi_0`` (one-step mode) or, in
window mode, by ``xi_0`` plus a translation summed over the coordinates
``xi_i`` with ``1 <= |i| <= w``.  Window mode is what makes the Hoelder
constant ``C0`` positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import CertificateInvalid, InputError
from .shift_space import TruncatedSequence, as_word

TOL = 1e-12


def _as_matrix(a, c: int | None = None) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise InputError(f"matrix must be square, got shape {m.shape}")
    if c is not None and m.shape[0] != c:
        raise InputError(f"matrix dimension {m.shape[0]} != {c}")
    return m


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``x -> A x + b``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if b.shape[0] != A.shape[0]:
            raise InputError("offset and matrix dimensions disagree")
        s = np.linalg.svd(A, compute_uv=False)
        if s[-1] <= 1e-14 * max(s[0], 1.0):
            raise InputError("affine map is not invertible")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def __call__(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.A.T + self.b

    @cached_property
    def A_inv(self) -> np.ndarray:
        return np.linalg.inv(self.A)

    def inverse(self) -> "AffineMap":
        return AffineMap(self.A_inv, -self.A_inv @ self.b)

    def then(self, other: "AffineMap") -> "AffineMap":
        """``other o self``."""
        return AffineMap(other.A @ self.A, other.A @ self.b + other.b)


@dataclass(frozen=True, eq=False)
class FiberMap:
    """Composition of invertible affine pieces, applied first to last.

    ``lip_derivative`` is the declared Lipschitz constant of ``x -> Dphi(x)``;
    affine pieces contribute zero.
    """

    pieces: tuple[AffineMap, ...]
    lip_derivative: float = 0.0

    def __post_init__(self):
        pieces = tuple(self.pieces)
        if not pieces:
            raise InputError("a fiber map needs at least one piece")
        if len({p.dim for p in pieces}) != 1:
            raise InputError("pieces have inconsistent dimensions")
        object.__setattr__(self, "pieces", pieces)

    @classmethod
    def affine(cls, A, b=None) -> "FiberMap":
        A = _as_matrix(A)
        b = np.zeros(A.shape[0]) if b is None else b
        return cls((AffineMap(A, b),))

    @classmethod
    def translation(cls, v) -> "FiberMap":
        v = np.asarray(v, dtype=float).reshape(-1)
        return cls.affine(np.eye(v.size), v)

    @cached_property
    def collapsed(self) -> AffineMap:
        out = self.pieces[0]
        for p in self.pieces[1:]:
            out = out.then(p)
        return out

    @property
    def dim(self) -> int:
        return self.pieces[0].dim

    @property
    def A(self) -> np.ndarray:
        return self.collapsed.A

    @property
    def b(self) -> np.ndarray:
        return self.collapsed.b

    def __call__(self, x) -> np.ndarray:
        return self.collapsed(x)

    def inverse_apply(self, y) -> np.ndarray:
        c = self.collapsed
        return (np.asarray(y, dtype=float) - c.b) @ c.A_inv.T

    def inverse(self) -> "FiberMap":
        return FiberMap(tuple(p.inverse() for p in reversed(self.pieces)), self.lip_derivative)

    def jacobian(self, x=None) -> np.ndarray:
        return self.collapsed.A

    def then(self, other: "FiberMap") -> "FiberMap":
        """``other o self`` keeping the piece structure."""
        return FiberMap(self.pieces + other.pieces, self.lip_derivative + other.lip_derivative)

    @cached_property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.collapsed.A, compute_uv=False)

    @property
    def lower_lipschitz(self) -> float:
        return float(self.singular_values[-1])

    @property
    def upper_lipschitz(self) -> float:
        return float(self.singular_values[0])

    def to_dict(self) -> dict:
        return {
            "pieces": [{"A": p.A.tolist(), "b": p.b.tolist()} for p in self.pieces],
            "lip_derivative": self.lip_derivative,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FiberMap":
        if "pieces" in data:
            pieces = tuple(AffineMap(p["A"], p.get("b", np.zeros(len(p["A"])))) for p in data["pieces"])
        else:
            A = _as_matrix(data["A"])
            pieces = (AffineMap(A, data.get("b", np.zeros(A.shape[0]))),)
        return cls(pieces, float(data.get("lip_derivative", 0.0)))


@dataclass(frozen=True)
class ConstantsReport:
    gamma: float
    gamma_hat: float
    C0: float
    nu: float
    alpha: float
    L_D: float
    phs_slacks: tuple[float, float, float, float]
    bunching_slack: float
    tight_gamma: float
    tight_gamma_hat_inv: float

    @property
    def phs_ok(self) -> bool:
        return all(s > 0 for s in self.phs_slacks)

    @property
    def bunched_ok(self) -> bool:
        return self.bunching_slack > 0

    def inequalities(self) -> list[dict]:
        na = self.nu ** self.alpha
        gi = 1.0 / self.gamma_hat
        rows = [
            ("nu^alpha < gamma", na, self.gamma),
            ("gamma < 1", self.gamma, 1.0),
            ("1 < gamma_hat^-1", 1.0, gi),
            ("gamma_hat^-1 < nu^-alpha", gi, 1.0 / na),
            ("nu^alpha < gamma*gamma_hat", na, self.gamma * self.gamma_hat),
        ]
        return [{"name": n, "lhs": l, "rhs": r, "slack": r - l} for n, l, r in rows]

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma, "gamma_hat": self.gamma_hat, "C0": self.C0, "nu": self.nu,
            "alpha": self.alpha, "L_D": self.L_D, "phs_ok": self.phs_ok, "bunched_ok": self.bunched_ok,
            "phs_slacks": list(self.phs_slacks), "bunching_slack": self.bunching_slack,
            "tight_gamma": self.tight_gamma, "tight_gamma_hat_inv": self.tight_gamma_hat_inv,
            "inequalities": self.inequalities(),
        }


@dataclass(frozen=True, eq=False)
class SkewSystem:
    """Skew-product ``(xi, x) -> (shift xi, phi_xi(x))`` on ``Sigma x R^c``.

    ``maps[s-1]`` is the fiber map over the horizontal cylinder of symbol
    ``s``.  With ``window > 0``, ``shifts`` has shape ``(2*window, d, c)``;
    row ``k`` belongs to offset ``(-window..-1, 1..window)[k]`` and the fiber
    map over ``xi`` is followed by the translation
    ``sum_i shifts[i][xi_i - 1]``.
    """

    maps: tuple[FiberMap, ...]
    nu: float
    alpha: float
    gamma: float
    gamma_hat: float
    C0: float = 0.0
    L_D: float = 0.0
    window: int = 0
    shifts: np.ndarray | None = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        maps = tuple(self.maps)
        object.__setattr__(self, "maps", maps)
        if len(maps) < 2:
            raise InputError("alphabet size must be >= 2")
        if len({m.dim for m in maps}) != 1:
            raise InputError("fiber maps have inconsistent dimensions")
        if not 0.0 < self.nu < 1.0:
            raise InputError("nu must lie in (0, 1)")
        if not 0.0 < self.alpha <= 1.0:
            raise InputError("alpha must lie in (0, 1]")
        if self.gamma <= 0 or self.gamma_hat <= 0:
            raise InputError("gamma and gamma_hat must be positive")
        if self.C0 < 0 or self.L_D < 0:
            raise InputError("C0 and L_D must be nonnegative")
        if self.window:
            sh = np.asarray(self.shifts, dtype=float)
            if sh.shape != (2 * self.window, len(maps), maps[0].dim):
                raise InputError(f"shifts must have shape {(2 * self.window, len(maps), maps[0].dim)}, got {sh.shape}")
            sh.setflags(write=False)
            object.__setattr__(self, "shifts", sh)
        else:
            object.__setattr__(self, "shifts", None)
            if self.C0 != 0.0:
                raise InputError("one-step systems have C0 = 0")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def with_tight_constants(cls, maps: Sequence[FiberMap], nu: float, alpha: float = 1.0, **kw) -> "SkewSystem":
        """Declare ``gamma`` and ``gamma_hat`` equal to the tight singular-value bounds."""
        gamma = min(m.lower_lipschitz for m in maps)
        gamma_hat = 1.0 / max(m.upper_lipschitz for m in maps)
        kw.setdefault("L_D", max(m.lip_derivative for m in maps))
        return cls(tuple(maps), nu, alpha, gamma, gamma_hat, **kw)

    def replace_maps(self, maps: Sequence[FiberMap], **changes) -> "SkewSystem":
        kw = dict(nu=self.nu, alpha=self.alpha, gamma=self.gamma, gamma_hat=self.gamma_hat, C0=self.C0,
                  L_D=self.L_D, window=self.window, shifts=self.shifts, labels=dict(self.labels))
        kw.update(changes)
        return SkewSystem(tuple(maps), **kw)

    @property
    def d(self) -> int:
        return len(self.maps)

    @property
    def c(self) -> int:
        return self.maps[0].dim

    @property
    def one_step(self) -> bool:
        return self.window == 0

    @property
    def offsets(self) -> tuple[int, ...]:
        w = self.window
        return tuple(range(-w, 0)) + tuple(range(1, w + 1))

    def symbol_map(self, s: int) -> FiberMap:
        if not 1 <= s <= self.d:
            raise InputError(f"symbol {s} outside alphabet 1..{self.d}")
        return self.maps[s - 1]

    def _translation(self, xi: TruncatedSequence, k: int) -> np.ndarray:
        t = np.zeros(self.c)
        for row, i in enumerate(self.offsets):
            t += self.shifts[row, xi[k + i] - 1]
        return t

    def fiber_map(self, xi: TruncatedSequence, k: int = 0) -> FiberMap:
        """Fiber map over ``shift^k xi``."""
        base = self.symbol_map(xi[k])
        if self.one_step:
            return base
        return base.then(FiberMap.translation(self._translation(xi, k)))

    def _affine_at(self, xi: TruncatedSequence, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        base = self.symbol_map(xi[k]).collapsed
        b = base.b if self.one_step else base.b + self._translation(xi, k)
        return base.A, b, base.A_inv

    def _need(self, xi: TruncatedSequence, lo: int, hi: int):
        w = self.window
        if not (xi.has(lo - w) and xi.has(hi + w)):
            raise InputError(f"sequence stores too few coordinates for indices {lo - w}..{hi + w}")

    # -- iterates ---------------------------------------------------------------

    def compose_forward(self, xi: TruncatedSequence, n: int, x) -> np.ndarray:
        """``phi_{shift^{n-1} xi} o ... o phi_xi (x)``."""
        x = np.asarray(x, dtype=float)
        if n < 0:
            raise InputError("n must be >= 0")
        if n:
            self._need(xi, 0, n - 1)
        for k in range(n):
            A, b, _ = self._affine_at(xi, k)
            x = x @ A.T + b
        return x

    def compose_backward(self, xi: TruncatedSequence, n: int, x) -> np.ndarray:
        """``phi^{-1}_{shift^{-n} xi} o ... o phi^{-1}_{shift^{-1} xi} (x)``."""
        x = np.asarray(x, dtype=float)
        if n < 0:
            raise InputError("n must be >= 0")
        if n:
            self._need(xi, -n, -1)
        for k in range(1, n + 1):
            A, b, Ai = self._affine_at(xi, -k)
            x = (x - b) @ Ai.T
        return x

    def backward_orbit(self, xi: TruncatedSequence, n: int, x) -> np.ndarray:
        """Rows ``phi^{-k}_xi(x)`` for ``k = 0..n``."""
        out = [np.asarray(x, dtype=float)]
        if n:
            self._need(xi, -n, -1)
        for k in range(1, n + 1):
            A, b, Ai = self._affine_at(xi, -k)
            out.append((out[-1] - b) @ Ai.T)
        return np.array(out)

    def derivative_cocycle(self, xi: TruncatedSequence, n: int, x=None) -> np.ndarray:
        """Jacobian of ``phi^n_xi`` (negative ``n`` gives the backward iterate)."""
        D = np.eye(self.c)
        if n > 0:
            self._need(xi, 0, n - 1)
            for k in range(n):
                D = self.symbol_map(xi[k]).A @ D
        elif n < 0:
            self._need(xi, n, -1)
            for k in range(1, -n + 1):
                D = self.symbol_map(xi[-k]).collapsed.A_inv @ D
        return D

    # -- constants --------------------------------------------------------------

    def tight_holder_constant(self) -> float:
        """Smallest C0 that the window translations allow (sup-norm, both directions)."""
        if self.one_step:
            return 0.0
        spread = {}
        for row, i in enumerate(self.offsets):
            t = self.shifts[row]
            diffs = np.linalg.norm(t[:, None, :] - t[None, :, :], axis=-1)
            spread[abs(i)] = spread.get(abs(i), 0.0) + float(diffs.max())
        inv_norm = max(1.0, max(1.0 / m.lower_lipschitz for m in self.maps))
        best = 0.0
        for ell in range(1, self.window + 1):
            tail = sum(v for r, v in spread.items() if r >= ell)
            best = max(best, inv_norm * tail / self.nu ** (self.alpha * ell))
        return best

    def verify_constants(self) -> ConstantsReport:
        tight_g = min(m.lower_lipschitz for m in self.maps)
        tight_gi = max(m.upper_lipschitz for m in self.maps)
        for s, m in enumerate(self.maps, start=1):
            if self.gamma > m.lower_lipschitz * (1 + TOL):
                raise CertificateInvalid(
                    f"declared gamma={self.gamma} exceeds the lower Lipschitz constant {m.lower_lipschitz} of map {s}",
                    {"symbol": s, "declared": self.gamma, "tight": m.lower_lipschitz}, stage="constants")
            if 1.0 / self.gamma_hat < m.upper_lipschitz * (1 - TOL):
                raise CertificateInvalid(
                    f"declared gamma_hat^-1={1 / self.gamma_hat} is below the upper Lipschitz constant "
                    f"{m.upper_lipschitz} of map {s}",
                    {"symbol": s, "declared": 1 / self.gamma_hat, "tight": m.upper_lipschitz}, stage="constants")
        tight_c0 = self.tight_holder_constant()
        if self.C0 < tight_c0 * (1 - 1e-9):
            raise CertificateInvalid(f"declared C0={self.C0} is below the window bound {tight_c0}",
                                     {"declared": self.C0, "tight": tight_c0}, stage="constants")
        tight_ld = max(m.lip_derivative for m in self.maps)
        if self.L_D < tight_ld:
            raise CertificateInvalid(f"declared L_D={self.L_D} is below a map's declared value {tight_ld}",
                                     {"declared": self.L_D, "tight": tight_ld}, stage="constants")
        na = self.nu ** self.alpha
        gi = 1.0 / self.gamma_hat
        slacks = (self.gamma - na, 1.0 - self.gamma, gi - 1.0, 1.0 / na - gi)
        return ConstantsReport(self.gamma, self.gamma_hat, self.C0, self.nu, self.alpha, self.L_D,
                               slacks, self.gamma * self.gamma_hat - na, tight_g, tight_gi)

    @property
    def holder_spread_constant(self) -> float:
        """``C0 / (1 - gamma^-1 nu^alpha)``, the transverse Hoelder constant of unstable leaves."""
        q = self.nu ** self.alpha / self.gamma
        if q >= 1:
            return float("inf")
        return self.C0 / (1.0 - q)

    def holder_constant_estimate(self, region, samples: int, rng: np.random.Generator | None = None) -> float:
        """Empirical lower bound for C0 from sampled sequence pairs sharing ``xi_0``."""
        if self.one_step:
            return 0.0
        rng = np.random.default_rng(0) if rng is None else rng
        w = self.window
        best = 0.0
        pts = region.sample(rng, samples)
        for j in range(samples):
            ell = int(rng.integers(1, w + 1))
            past = tuple(int(s) for s in rng.integers(1, self.d + 1, size=w))
            fut = tuple(int(s) for s in rng.integers(1, self.d + 1, size=w + 1))
            pas2, fut2 = list(past), list(fut)
            for i in range(ell, w + 1):
                fut2[i] = int(rng.integers(1, self.d + 1))
                pas2[w - i] = int(rng.integers(1, self.d + 1))
            # make ring ell a genuine disagreement
            fut2[ell] = fut[ell] % self.d + 1
            xi = TruncatedSequence(past, fut, w + 1)
            zeta = TruncatedSequence(tuple(pas2), tuple(fut2), w + 1)
            x = pts[j]
            f, g = self.fiber_map(xi), self.fiber_map(zeta)
            diff = max(np.linalg.norm(f(x) - g(x)), np.linalg.norm(f.inverse_apply(x) - g.inverse_apply(x)))
            best = max(best, diff / self.nu ** (self.alpha * ell))
        return float(best)

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "alphabet": self.d, "dimension": self.c, "nu": self.nu, "alpha": self.alpha,
            "gamma": self.gamma, "gamma_hat": self.gamma_hat, "C0": self.C0, "L_D": self.L_D,
            "window": self.window, "maps": [m.to_dict() for m in self.maps],
        }
        if self.window:
            out["shifts"] = self.shifts.tolist()
        if self.labels:
            out["labels"] = self.labels
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SkewSystem":
        try:
            maps = tuple(FiberMap.from_dict(m) for m in data["maps"])
            nu, alpha = float(data["nu"]), float(data.get("alpha", 1.0))
            if "gamma" in data and "gamma_hat" in data:
                return cls(maps, nu, alpha, float(data["gamma"]), float(data["gamma_hat"]),
                           C0=float(data.get("C0", 0.0)), L_D=float(data.get("L_D", 0.0)),
                           window=int(data.get("window", 0)), shifts=data.get("shifts"),
                           labels=dict(data.get("labels", {})))
            return cls.with_tight_constants(maps, nu, alpha, C0=float(data.get("C0", 0.0)),
                                            window=int(data.get("window", 0)), shifts=data.get("shifts"))
        except KeyError as exc:
            raise InputError(f"system description lacks field {exc.args[0]!r}") from exc


def one_step_system(maps: Sequence[FiberMap], nu: float, alpha: float = 1.0,
                    gamma: float | None = None, gamma_hat: float | None = None) -> SkewSystem:
    """One-step system; missing constants default to the tight values."""
    maps = tuple(maps)
    g = min(m.lower_lipschitz for m in maps) if gamma is None else gamma
    gh = 1.0 / max(m.upper_lipschitz for m in maps) if gamma_hat is None else gamma_hat
    return SkewSystem(maps, nu, alpha, g, gh, L_D=max(m.lip_derivative for m in maps))


def word_map(sys: SkewSystem, word: Sequence[int]) -> FiberMap:
    """``phi_{w_k} o ... o phi_{w_1}`` for a one-step system (first symbol applied first)."""
    word = as_word(word)
    if not word:
        raise InputError("empty word")
    out = sys.symbol_map(word[0])
    for s in word[1:]:
        out = out.then(sys.symbol_map(s))
    return out
