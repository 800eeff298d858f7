"""Boxes, lexicographic ordering, affine interpolation, reflection folding and
segment-box exit points.

Everything here is deterministic and vectorised over point arrays of shape
(k, d).  Boxes are closed: a point exactly on a face counts as inside.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned cube of side length `side` centred at `center`."""

    side: float
    center: tuple[float, ...]

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError(f"box side must be positive, got {self.side}")

    @classmethod
    def centered(cls, side: float, dim: int) -> "BoxSpec":
        return cls(float(side), (0.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lo(self) -> Array:
        return np.asarray(self.center, dtype=float) - self.side / 2.0

    @property
    def hi(self) -> Array:
        return np.asarray(self.center, dtype=float) + self.side / 2.0

    @property
    def volume(self) -> float:
        return float(self.side) ** self.dim

    def grow(self, margin: float) -> "BoxSpec":
        """Concentric box with side increased by 2*margin."""
        return replace(self, side=self.side + 2.0 * margin)

    def contains(self, points: Array) -> Array:
        """Boolean mask of points inside the closed box."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def sample_uniform(self, k: int, rng: np.random.Generator) -> Array:
        return rng.uniform(self.lo, self.hi, size=(k, self.dim))


@dataclass
class Configuration:
    """Finite point pattern together with its sampling window.

    `window=None` tags a pattern cut from a larger (whole-space) sample, for
    which no box provenance is claimed.  Multiset semantics: duplicate rows
    are allowed.
    """

    points: Array
    window: BoxSpec | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.size == 0:
            d = self.window.dim if self.window is not None else 1
            self.points = self.points.reshape(0, d)
        if self.points.ndim != 2:
            raise ValueError("points must be a (k, d) array")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must have finite coordinates")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def restrict(self, box: BoxSpec) -> "Configuration":
        """Points inside the closed box, re-windowed to it."""
        return Configuration(self.points[box.contains(self.points)], box)


def _check_same_dim(x: Array, y: Array) -> tuple[Array, Array]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    return x, y


def lex_less(x: Array, y: Array) -> bool:
    """Strict lexicographic order on coordinate vectors; False on equality."""
    x, y = _check_same_dim(x, y)
    for a, b in zip(x.ravel(), y.ravel()):
        if a < b:
            return True
        if a > b:
            return False
    return False


def label_lex(points: Array) -> Array:
    """Sort points lexicographically (first coordinate is most significant).

    The sort is stable, so exactly equal points keep their input order; under
    continuous models ties have probability zero.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        return pts
    order = np.lexsort(tuple(pts[:, j] for j in range(pts.shape[1] - 1, -1, -1)))
    return pts[order]


def geo(x: Array, y: Array, t: float) -> Array:
    """Affine interpolation x + t*(y - x) for t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation time must lie in [0, 1], got {t}")
    x, y = _check_same_dim(x, y)
    return x + t * (y - x)


def triangle_fold(u: Array, side: float) -> Array:
    """Periodic triangle wave mapping the line onto [-side/2, side/2].

    Identity on [-side/2, side/2], period 2*side, with the wave hitting its
    extremes +-side/2 at the box faces.  Implemented by modular reduction to
    one period plus two linear branches, so arbitrarily distant excursions
    fold exactly (no iterated-reflection loop).
    """
    u = np.asarray(u, dtype=float)
    n = float(side)
    y = np.mod(u + n / 2.0, 2.0 * n)
    return np.where(y <= n, y - n / 2.0, 3.0 * n / 2.0 - y)


def fold_reflect(box: BoxSpec, anchor: Array, p: Array) -> Array:
    """Fold a free-path position into the box copy anchored at `anchor`.

    `anchor` is the lattice offset z such that the path started in z + box;
    the result is z + center + fold(p - z - center), coordinatewise, and it
    always lies in the closed shifted box.
    """
    p = np.asarray(p, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    c = np.asarray(box.center, dtype=float)
    return anchor + c + triangle_fold(p - anchor - c, box.side)


def anchor_cell(box: BoxSpec, p: Array) -> Array:
    """Offset z on the (side * Z)^d lattice with p in z + box (ties rounded)."""
    p = np.asarray(p, dtype=float)
    c = np.asarray(box.center, dtype=float)
    return box.side * np.round((p - c) / box.side)


def exit_point(x: Array, y: Array, box: BoxSpec) -> tuple[float, Array]:
    """Last time and position at which the segment x -> y is inside the box.

    Requires x inside the closed box.  Returns (t_star, z) with
    z = x + t_star*(y - x); t_star = 1 and z = y whenever y is inside.
    The returned z lies on the closed box boundary or equals y.
    """
    x, y = _check_same_dim(x, y)
    x = x.ravel()
    y = y.ravel()
    if not bool(box.contains(x)[0]):
        raise ValueError("segment start must lie inside the closed box")
    lo, hi = box.lo, box.hi
    delta = y - x
    t_star = 1.0
    for i in range(len(delta)):
        if delta[i] > 0:
            t_star = min(t_star, (hi[i] - x[i]) / delta[i])
        elif delta[i] < 0:
            t_star = min(t_star, (lo[i] - x[i]) / delta[i])
    t_star = max(t_star, 0.0)
    return t_star, x + t_star * delta


def exit_points(x: Array, y: Array, box: BoxSpec) -> tuple[Array, Array]:
    """Vectorised `exit_point` over aligned (k, d) arrays."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if not np.all(box.contains(x)):
        raise ValueError("all segment starts must lie inside the closed box")
    delta = y - x
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(delta > 0, (box.hi - x) / delta, np.inf)
        t_lo = np.where(delta < 0, (box.lo - x) / delta, np.inf)
    t_star = np.minimum(np.min(np.minimum(t_hi, t_lo), axis=1), 1.0)
    t_star = np.maximum(t_star, 0.0)
    return t_star, x + t_star[:, None] * delta
