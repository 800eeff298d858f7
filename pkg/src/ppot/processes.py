"""Samplers for the canonical stationary point patterns and their analytic
log-densities relative to the unit Poisson process.

Conventions used throughout:

* Unit cells are ``g + [0,1)^d`` for integer ``g``; a grid pattern puts one
  point per cell at ``g + 1/2 + X_g`` with the perturbation ``X_g`` drawn from
  a density supported in the centred unit cell.  Boxes of even integer side
  are then exact unions of cells, which keeps the grid log-density formula
  exact on the boxes the experiments use.
* Sampling a stationary model "on a box" internally samples an enlarged
  window (one cell of margin, or ``6*sqrt(t)`` extra for heated models) and
  restricts, so boundary-straddling structure is preserved.
* All samplers are pure functions of (model, window, rng).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from scipy import stats
from scipy.integrate import quad

from .geometry import BoxSpec, Configuration
from .streams import mean_and_se

Array = np.ndarray

_NEG_INF = float("-inf")


# ---------------------------------------------------------------------------
# density families on the centred unit cell
# ---------------------------------------------------------------------------


class DensityFamily:
    """One-dimensional density on [-1/2, 1/2]; d-dim variants are products.

    Closed enum of families with exact gradients where they exist, so Fisher
    integrands and entropy oracles never rely on numerical differentiation.
    """

    kind: ClassVar[str] = ""
    smooth: ClassVar[bool] = False

    def pdf1(self, x: Array) -> Array:
        raise NotImplementedError

    def dpdf1(self, x: Array) -> Array:
        raise NotImplementedError(f"{self.kind} has no differentiable density")

    def sample1(self, size, rng: np.random.Generator) -> Array:
        raise NotImplementedError

    # product extensions -----------------------------------------------------

    def logpdf(self, points: Array) -> Array:
        pts = np.atleast_2d(points)
        with np.errstate(divide="ignore"):
            return np.sum(np.log(self.pdf1(pts)), axis=1)

    def sample(self, k: int, dim: int, rng: np.random.Generator) -> Array:
        return self.sample1((k, dim), rng)

    def check_normalised(self, tol: float = 1e-8) -> None:
        total, err = quad(lambda u: float(self.pdf1(np.array([u]))[0]), -0.5, 0.5, limit=200)
        if abs(total - 1.0) > max(tol, 10 * err):
            raise ValueError(f"{self.kind} density integrates to {total}, not 1")

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class UniformCell(DensityFamily):
    """Uniform on the centred cell of side eps; eps=0 degenerates to the
    exact lattice (sampler only, no density)."""

    eps: float = 1.0

    kind: ClassVar[str] = "uniform_cell"
    smooth: ClassVar[bool] = False

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("uniform_cell width must lie in [0, 1]")

    @property
    def degenerate(self) -> bool:
        return self.eps == 0.0

    def pdf1(self, x: Array) -> Array:
        if self.degenerate:
            raise ValueError("uniform_cell(0) is a point mass; no density")
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= self.eps / 2.0, 1.0 / self.eps, 0.0)

    def sample1(self, size, rng: np.random.Generator) -> Array:
        if self.degenerate:
            return np.zeros(size)
        return rng.uniform(-self.eps / 2.0, self.eps / 2.0, size=size)

    def to_json(self) -> dict:
        return {"kind": self.kind, "eps": self.eps}


class CosineBump(DensityFamily):
    """f(x) = 1 + cos(2 pi x) on [-1/2, 1/2]; vanishes at the cell faces."""

    kind: ClassVar[str] = "cosine_bump"
    smooth: ClassVar[bool] = True

    def __init__(self):
        # inverse-CDF table; F(x) = x + sin(2 pi x)/(2 pi) + 1/2
        grid = np.linspace(-0.5, 0.5, 1 << 14)
        cdf = grid + np.sin(2 * np.pi * grid) / (2 * np.pi) + 0.5
        self._cdf_grid = grid
        self._cdf_vals = cdf

    def pdf1(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= 0.5
        return np.where(inside, 1.0 + np.cos(2 * np.pi * x), 0.0)

    def dpdf1(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= 0.5
        return np.where(inside, -2 * np.pi * np.sin(2 * np.pi * x), 0.0)

    def sample1(self, size, rng: np.random.Generator) -> Array:
        u = rng.uniform(0.0, 1.0, size=size)
        return np.interp(u, self._cdf_vals, self._cdf_grid)

    def to_json(self) -> dict:
        return {"kind": self.kind}

    def __eq__(self, other):
        return isinstance(other, CosineBump)

    def __hash__(self):
        return hash(self.kind)


@dataclass(frozen=True)
class TruncatedGaussian(DensityFamily):
    """Centred Gaussian truncated to [-1/2, 1/2] and renormalised."""

    sigma: float = 0.1

    kind: ClassVar[str] = "truncated_gaussian"
    smooth: ClassVar[bool] = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def _dist(self):
        a = -0.5 / self.sigma
        return stats.truncnorm(a, -a, loc=0.0, scale=self.sigma)

    def pdf1(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= 0.5
        return np.where(inside, self._dist.pdf(np.clip(x, -0.5, 0.5)), 0.0)

    def dpdf1(self, x: Array) -> Array:
        return self.pdf1(x) * (-np.asarray(x, dtype=float) / self.sigma**2)

    def sample1(self, size, rng: np.random.Generator) -> Array:
        u = rng.uniform(0.0, 1.0, size=size)
        return self._dist.ppf(u)

    def to_json(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma}


def density_from_json(spec: dict) -> DensityFamily:
    kind = spec["kind"]
    if kind == "uniform_cell":
        return UniformCell(float(spec.get("eps", 1.0)))
    if kind == "cosine_bump":
        return CosineBump()
    if kind == "truncated_gaussian":
        return TruncatedGaussian(float(spec.get("sigma", 0.1)))
    raise ValueError(f"unknown density family {kind!r}")


# ---------------------------------------------------------------------------
# process models
# ---------------------------------------------------------------------------


class ProcessModel:
    """Declarative sampler description; see the concrete subclasses."""

    has_analytic_density: bool = False
    has_fisher: bool = False

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Poisson(ProcessModel):
    intensity: float = 1.0

    has_analytic_density: ClassVar[bool] = True
    has_fisher: ClassVar[bool] = True  # density does not depend on the points

    def __post_init__(self):
        if self.intensity <= 0:
            raise ValueError("intensity must be positive")

    def to_json(self) -> dict:
        return {"kind": "poisson", "intensity": self.intensity}


@dataclass(frozen=True)
class Grid(ProcessModel):
    """One point per unit cell at centre + perturbation; optional global
    uniform shift restores stationarity (at the price of the analytic
    density, which is only available for the lattice-aligned variant)."""

    density: DensityFamily = UniformCell(0.0)
    stationarized: bool = False

    @property
    def has_analytic_density(self) -> bool:
        return (
            not self.stationarized
            and not (isinstance(self.density, UniformCell) and self.density.degenerate)
        )

    @property
    def has_fisher(self) -> bool:
        return self.density.smooth and not self.stationarized

    def to_json(self) -> dict:
        return {
            "kind": "perturbed_grid",
            "density": self.density.to_json(),
            "stationarized": self.stationarized,
        }


def lattice_grid(stationarized: bool = False) -> Grid:
    return Grid(UniformCell(0.0), stationarized)


@dataclass(frozen=True)
class Binomial(ProcessModel):
    """Exactly k i.i.d. uniform points on its box (Poisson conditioned on k)."""

    box: BoxSpec
    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("point count must be nonnegative")

    def to_json(self) -> dict:
        return {
            "kind": "binomial",
            "side": self.box.side,
            "dim": self.box.dim,
            "k": self.k,
        }


@dataclass(frozen=True)
class Tiled(ProcessModel):
    """Independent copies of `base` (sampled on a side-`tile_side` box) glued
    on the tile lattice; `stationarized=True` adds the global uniform shift."""

    base: ProcessModel
    tile_side: float
    stationarized: bool = False

    def to_json(self) -> dict:
        return {
            "kind": "stationarized" if self.stationarized else "tiled",
            "base": self.base.to_json(),
            "tile_side": self.tile_side,
        }


@dataclass(frozen=True)
class Heated(ProcessModel):
    """`base` with every point displaced by an independent N(0, t I)."""

    base: ProcessModel
    t: float

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("heating time must be nonnegative")

    def to_json(self) -> dict:
        return {"kind": "heated", "base": self.base.to_json(), "t": self.t}


@dataclass(frozen=True)
class Mixture(ProcessModel):
    """Law alpha * a + (1 - alpha) * b; analytic when both components are."""

    a: ProcessModel
    b: ProcessModel
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("mixture weight must lie in (0, 1)")

    @property
    def has_analytic_density(self) -> bool:
        return self.a.has_analytic_density and self.b.has_analytic_density

    def to_json(self) -> dict:
        return {
            "kind": "mixture",
            "a": self.a.to_json(),
            "b": self.b.to_json(),
            "alpha": self.alpha,
        }


def model_from_json(spec: dict) -> ProcessModel:
    kind = spec["kind"]
    if kind == "poisson":
        return Poisson(float(spec.get("intensity", 1.0)))
    if kind in ("perturbed_grid", "lattice_grid"):
        density = (
            density_from_json(spec["density"]) if "density" in spec else UniformCell(0.0)
        )
        return Grid(density, bool(spec.get("stationarized", False)))
    if kind == "binomial":
        box = BoxSpec.centered(float(spec["side"]), int(spec["dim"]))
        return Binomial(box, int(spec["k"]))
    if kind in ("tiled", "stationarized"):
        return Tiled(
            model_from_json(spec["base"]),
            float(spec["tile_side"]),
            stationarized=(kind == "stationarized"),
        )
    if kind == "heated":
        return Heated(model_from_json(spec["base"]), float(spec["t"]))
    if kind == "mixture":
        return Mixture(
            model_from_json(spec["a"]), model_from_json(spec["b"]), float(spec["alpha"])
        )
    raise ValueError(f"unknown model kind {kind!r}")


def intensity_of(model: ProcessModel) -> float:
    if isinstance(model, Poisson):
        return model.intensity
    if isinstance(model, Grid):
        return 1.0
    if isinstance(model, Binomial):
        return model.k / model.box.volume
    if isinstance(model, Tiled):
        if isinstance(model.base, Binomial):
            if model.base.box.side != model.tile_side:
                raise ValueError("tile side must equal the binomial base box side")
            return model.base.k / model.base.box.volume
        return intensity_of(model.base)
    if isinstance(model, Heated):
        return intensity_of(model.base)
    if isinstance(model, Mixture):
        return model.alpha * intensity_of(model.a) + (1 - model.alpha) * intensity_of(model.b)
    raise TypeError(f"unknown model {model!r}")


def expected_count(model: ProcessModel, box: BoxSpec) -> float:
    if isinstance(model, Binomial) and box == model.box:
        return float(model.k)
    return intensity_of(model) * box.volume


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def _grid_cells_near(window: BoxSpec, shift: Array) -> Array:
    """Integer anchors g of cells whose (shifted) point can land in window."""
    lo = np.floor(window.lo - shift - 1.0).astype(int)
    hi = np.ceil(window.hi - shift + 1.0).astype(int)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1).astype(float)


def _sample_grid_points(model: Grid, window: BoxSpec, rng: np.random.Generator) -> Array:
    d = window.dim
    shift = rng.uniform(-0.5, 0.5, size=d) if model.stationarized else np.zeros(d)
    anchors = _grid_cells_near(window, shift)
    perturb = model.density.sample(anchors.shape[0], d, rng)
    return anchors + 0.5 + shift + perturb


def sample_poisson(box: BoxSpec, intensity: float, rng: np.random.Generator) -> Configuration:
    """Homogeneous Poisson sample on the box."""
    if intensity <= 0:
        raise ValueError("intensity must be positive")
    count = int(rng.poisson(intensity * box.volume))
    return Configuration(box.sample_uniform(count, rng), box)


def sample_binomial(box: BoxSpec, k: int, rng: np.random.Generator) -> Configuration:
    """Exactly k i.i.d. uniform points on the box."""
    if k < 0:
        raise ValueError("point count must be nonnegative")
    return Configuration(box.sample_uniform(k, rng), box)


def sample_perturbed_grid(
    box: BoxSpec,
    density: DensityFamily,
    stationarized: bool,
    rng: np.random.Generator,
) -> Configuration:
    """Grid sample restricted to the box (one-cell margin sampled internally)."""
    pts = _sample_grid_points(Grid(density, stationarized), box, rng)
    return Configuration(pts, box).restrict(box)


def tile(base: ProcessModel, tile_side: float, target: BoxSpec, rng: np.random.Generator) -> Configuration:
    """Independent base copies glued on the (tile_side * Z)^d lattice."""
    pts = _tiled_points(base, tile_side, target, rng, shift=np.zeros(target.dim))
    return Configuration(pts, target).restrict(target)


def stationarize(base: ProcessModel, tile_side: float, target: BoxSpec, rng: np.random.Generator) -> Configuration:
    """Tiled configuration shifted by an independent uniform on the tile box."""
    d = target.dim
    shift = rng.uniform(-tile_side / 2.0, tile_side / 2.0, size=d)
    pts = _tiled_points(base, tile_side, target, rng, shift=shift)
    return Configuration(pts, target).restrict(target)


def _tiled_points(
    base: ProcessModel,
    tile_side: float,
    target: BoxSpec,
    rng: np.random.Generator,
    shift: Array,
) -> Array:
    d = target.dim
    tile_box = BoxSpec.centered(tile_side, d)
    lo = np.floor((target.lo - shift - tile_side / 2.0) / tile_side).astype(int)
    hi = np.ceil((target.hi - shift + tile_side / 2.0) / tile_side).astype(int)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    anchors = np.stack([m.ravel() for m in mesh], axis=1).astype(float) * tile_side
    chunks = []
    for z in anchors:
        copy = sample(base, tile_box, rng)
        if len(copy):
            chunks.append(copy.points + z + shift)
    if not chunks:
        return np.zeros((0, d))
    return np.concatenate(chunks, axis=0)


def sample(model: ProcessModel, window: BoxSpec, rng: np.random.Generator) -> Configuration:
    """Draw one realisation of the model restricted to the window."""
    if isinstance(model, Poisson):
        return sample_poisson(window, model.intensity, rng)
    if isinstance(model, Grid):
        return sample_perturbed_grid(window, model.density, model.stationarized, rng)
    if isinstance(model, Binomial):
        cfg = sample_binomial(model.box, model.k, rng)
        if window == model.box:
            return cfg
        return cfg.restrict(window)
    if isinstance(model, Tiled):
        if model.stationarized:
            return stationarize(model.base, model.tile_side, window, rng)
        return tile(model.base, model.tile_side, window, rng)
    if isinstance(model, Heated):
        margin = 1.0 + 6.0 * math.sqrt(model.t)
        base_cfg = sample(model.base, window.grow(margin), rng)
        moved = base_cfg.points + rng.normal(0.0, math.sqrt(model.t), size=base_cfg.points.shape)
        return Configuration(moved, window).restrict(window)
    if isinstance(model, Mixture):
        pick_a = rng.uniform() < model.alpha
        return sample(model.a if pick_a else model.b, window, rng)
    raise TypeError(f"no sampler for {model!r}")


def sample_shared_grid_pair(
    model_a: Grid,
    model_b: Grid,
    window: BoxSpec,
    rng: np.random.Generator,
) -> tuple[Array, Array]:
    """Joint grid sample with shared global shift and shared cells.

    Returns aligned source/target arrays: the pair for cell g is
    (centre_g + shift + X^a_g, centre_g + shift + X^b_g).  This realises the
    cellwise coupling of two grid patterns with common stationarising shift.
    """
    if not isinstance(model_a, Grid) or not isinstance(model_b, Grid):
        raise ValueError("shared-grid coupling needs two grid models")
    if model_a.stationarized != model_b.stationarized:
        raise ValueError("shared-grid coupling requires matching stationarization flags")
    d = window.dim
    shift = rng.uniform(-0.5, 0.5, size=d) if model_a.stationarized else np.zeros(d)
    anchors = _grid_cells_near(window, shift)
    centres = anchors + 0.5 + shift
    xa = model_a.density.sample(anchors.shape[0], d, rng)
    xb = model_b.density.sample(anchors.shape[0], d, rng)
    return centres + xa, centres + xb


# ---------------------------------------------------------------------------
# log-densities relative to the unit Poisson process
# ---------------------------------------------------------------------------


def _aligned_cells(box: BoxSpec) -> tuple[Array, int]:
    lo = box.lo
    side = box.side
    if not float(side).is_integer():
        raise ValueError("grid density needs an integer box side")
    if not np.allclose(lo, np.round(lo)):
        raise ValueError(
            "grid density needs a cell-aligned box (even integer side for centred boxes)"
        )
    return np.round(lo).astype(int), int(round(side))


def log_density_wrt_poisson(model: ProcessModel, config: Configuration, box: BoxSpec) -> float:
    """log of the Radon-Nikodym derivative of the model's law on the box.

    Out-of-support configurations return -inf explicitly.
    """
    pts = config.points[box.contains(config.points)] if len(config) else config.points
    k = pts.shape[0]
    d = box.dim
    if isinstance(model, Poisson):
        lam = model.intensity
        return (1.0 - lam) * box.volume + k * math.log(lam)
    if isinstance(model, Grid):
        if not model.has_analytic_density:
            raise ValueError("grid density available only for the lattice-aligned smooth case")
        lo_int, side_int = _aligned_cells(box)
        n_cells = side_int**d
        if k != n_cells:
            return _NEG_INF
        cell_idx = np.floor(pts).astype(int) - lo_int
        if np.any(cell_idx < 0) or np.any(cell_idx >= side_int):
            return _NEG_INF
        flat = np.ravel_multi_index(tuple(cell_idx.T), (side_int,) * d)
        if np.unique(flat).size != n_cells:
            return _NEG_INF
        offsets = pts - np.floor(pts) - 0.5
        logf = model.density.logpdf(offsets)
        total = float(np.sum(logf))
        if not np.isfinite(total):
            return _NEG_INF
        return n_cells + total
    if isinstance(model, Mixture):
        la = log_density_wrt_poisson(model.a, config, box)
        lb = log_density_wrt_poisson(model.b, config, box)
        return float(
            np.logaddexp(math.log(model.alpha) + la, math.log(1.0 - model.alpha) + lb)
        )
    raise ValueError(f"model {model!r} has no analytic density")


def count_log_pmf(model: ProcessModel, box: BoxSpec, k) -> Array:
    """log P(model has k points in box), for models with known count law."""
    k = np.asarray(k)
    if isinstance(model, Poisson):
        lam = model.intensity * box.volume
        return stats.poisson.logpmf(k, lam)
    if isinstance(model, Grid) and not model.stationarized:
        _, side_int = _aligned_cells(box)
        n_cells = side_int**box.dim
        return np.where(k == n_cells, 0.0, _NEG_INF)
    raise ValueError(f"no analytic count law for {model!r}")


# ---------------------------------------------------------------------------
# Laplace functionals
# ---------------------------------------------------------------------------


def laplace_mc(
    model: ProcessModel,
    level: float,
    region: BoxSpec,
    trials: int,
    rng: np.random.Generator,
    window: BoxSpec | None = None,
) -> tuple[float, float]:
    """Monte Carlo E[exp(-level * N(region))] with standard error."""
    window = window or region
    vals = np.empty(trials)
    for i in range(trials):
        cfg = sample(model, window, rng)
        inside = int(np.sum(region.contains(cfg.points))) if len(cfg) else 0
        vals[i] = math.exp(-level * inside)
    return mean_and_se(vals)


def laplace_poisson_exact(intensity: float, level: float, region: BoxSpec) -> float:
    """Closed form E[exp(-level * N(region))] for the Poisson process."""
    return math.exp(-intensity * region.volume * (1.0 - math.exp(-level)))
