"""Finite unions of balls and boxes in R^c with signed distance and grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, ResourceError

GRID_CAP = 10_000_000


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if not self.radius > 0:
            raise InputError("ball radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return self.radius - np.linalg.norm(x - self.center, axis=-1)

    def to_dict(self):
        return {"ball": {"center": self.center.tolist(), "radius": self.radius}}


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise InputError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def bounds(self):
        return self.lo, self.hi

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        below = self.lo - x
        above = x - self.hi
        excess = np.maximum(np.maximum(below, above), 0.0)
        outside = np.linalg.norm(excess, axis=-1)
        inside = np.min(np.minimum(x - self.lo, self.hi - x), axis=-1)
        return np.where(outside > 0, -outside, inside)

    def to_dict(self):
        return {"box": {"lo": self.lo.tolist(), "hi": self.hi.tolist()}}


Part = Ball | Box


@dataclass(frozen=True, eq=False)
class Region:
    """Open set given as a union of balls and boxes."""

    parts: tuple[Part, ...]

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise InputError("a region needs at least one part")
        if len({p.dim for p in parts}) != 1:
            raise InputError("region parts have inconsistent dimensions")
        object.__setattr__(self, "parts", parts)

    @classmethod
    def ball(cls, center, radius) -> "Region":
        return cls((Ball(center, radius),))

    @classmethod
    def box(cls, lo, hi) -> "Region":
        return cls((Box(lo, hi),))

    @classmethod
    def interval(cls, lo: float, hi: float) -> "Region":
        return cls.box([lo], [hi])

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    @property
    def convex(self) -> bool:
        return len(self.parts) == 1

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        los, his = zip(*(p.bounds() for p in self.parts))
        return np.min(los, axis=0), np.max(his, axis=0)

    @property
    def center(self) -> np.ndarray:
        p = self.parts[0]
        return p.center.copy() if isinstance(p, Ball) else (p.lo + p.hi) / 2

    @property
    def inradius(self) -> float:
        return float(max(p.radius if isinstance(p, Ball) else np.min(p.hi - p.lo) / 2 for p in self.parts))

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise InputError(f"point dimension {x.shape[-1]} != region dimension {self.dim}")
        return x

    def signed_distance(self, x) -> np.ndarray | float:
        """Positive inside (depth), negative outside (distance to the union).

        Inside the union the value is the largest per-part depth, a lower
        bound for the depth of the union that is exact for a single part
        and, in dimension one, replaced by the exact value after merging
        overlapping intervals.
        """
        x = self._check(x)
        if self.dim == 1 and len(self.parts) > 1 and all(isinstance(p, Box) for p in self.parts):
            out = _merged_interval_distance(self.parts, x[..., 0])
        else:
            out = np.max(np.stack([p.signed_distance(x) for p in self.parts]), axis=0)
        return float(out) if np.ndim(out) == 0 else out

    def contains(self, x) -> np.ndarray | bool:
        return self.contains_with_margin(x, 0.0)

    def contains_with_margin(self, x, margin: float = 0.0):
        sd = self.signed_distance(x)
        return bool(sd > margin) if np.ndim(sd) == 0 else sd > margin

    def sample(self, rng: np.random.Generator, n: int, closed: bool = True) -> np.ndarray:
        """Uniform rejection samples from the bounding box."""
        lo, hi = self.bounds()
        out = np.empty((0, self.dim))
        while out.shape[0] < n:
            cand = rng.uniform(lo, hi, size=(max(2 * n, 64), self.dim))
            sd = np.atleast_1d(self.signed_distance(cand))
            keep = sd >= 0 if closed else sd > 0
            out = np.vstack([out, cand[keep]])
        return out[:n]

    def to_dict(self) -> dict:
        return {"parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, data) -> "Region":
        items = data["parts"] if isinstance(data, dict) and "parts" in data else data
        if isinstance(items, dict):
            items = [items]
        parts = []
        for item in items:
            if "ball" in item:
                parts.append(Ball(item["ball"]["center"], item["ball"]["radius"]))
            elif "box" in item:
                parts.append(Box(item["box"]["lo"], item["box"]["hi"]))
            elif "center" in item:
                parts.append(Ball(item["center"], item["radius"]))
            elif "lo" in item:
                parts.append(Box(item["lo"], item["hi"]))
            else:
                raise InputError(f"unknown region part {item!r}")
        return cls(tuple(parts))


def _merged_interval_distance(parts: Sequence[Box], x: np.ndarray) -> np.ndarray:
    spans = sorted((float(p.lo[0]), float(p.hi[0])) for p in parts)
    merged = [list(spans[0])]
    for lo, hi in spans[1:]:
        # open intervals touching at a point leave that point out
        if lo < merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    per = [np.where((x > lo) & (x < hi), np.minimum(x - lo, hi - x), -np.maximum(np.maximum(lo - x, x - hi), 0.0))
           for lo, hi in merged]
    return np.max(np.stack(per), axis=0)


@dataclass(frozen=True, eq=False)
class Grid:
    """Lattice of spacing ``h`` whose cells cover the closure of ``region``.

    ``axes`` are the full bounding-box lattice coordinates; ``mask`` marks
    lattice points within ``h*sqrt(c)/2`` of the closed region, so that
    every point of the closure has a marked point within that distance.
    """

    region: Region
    h: float
    axes: tuple[np.ndarray, ...]
    mask: np.ndarray

    @property
    def correction(self) -> float:
        return self.h * np.sqrt(self.region.dim) / 2

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    def lattice_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def points(self) -> np.ndarray:
        return self.lattice_points()[self.mask.ravel()]

    def __len__(self) -> int:
        return int(self.mask.sum())


def cover_grid(region: Region, h: float, cap: int = GRID_CAP) -> Grid:
    if not h > 0:
        raise InputError("grid spacing must be positive")
    lo, hi = region.bounds()
    counts = np.floor((hi - lo) / h + 1e-9).astype(int) + 1
    # extend by one node when the last node falls short of hi
    short = lo + (counts - 1) * h < hi - 1e-12
    counts = counts + short
    total = float(np.prod(counts.astype(float)))
    if total > cap:
        raise ResourceError(f"grid of spacing {h} needs {int(total)} points, cap is {cap}")
    axes = tuple(lo[k] + h * np.arange(counts[k]) for k in range(region.dim))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    corr = h * np.sqrt(region.dim) / 2
    mask = (np.atleast_1d(region.signed_distance(pts)) >= -corr).reshape(tuple(counts))
    return Grid(region, float(h), axes, mask)
