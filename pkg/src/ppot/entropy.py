"""Relative entropy on boxes, specific entropy per volume, specific Fisher
information, and the entropy-convexity check along 1D displacement
interpolations.

Entropy is computed only for models with analytic densities; there is no
nonparametric entropy estimation.  Fisher values are produced by two
independent numerical routes (a per-cell fixed-order tensor quadrature and an
adaptive quadrature of the closed-form integrand) so they can cross-check
each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .geometry import BoxSpec
from .processes import (
    DensityFamily,
    Grid,
    Mixture,
    Poisson,
    ProcessModel,
    count_log_pmf,
    log_density_wrt_poisson,
    sample,
)
from .streams import RngStream, mean_and_se, run_trials

Array = np.ndarray


@dataclass(frozen=True)
class EntropyEstimate:
    box_side: float
    ent_per_volume: float
    std_error: float
    trials: int


@dataclass(frozen=True)
class FisherEstimate:
    box_side: float
    fisher_per_volume: float
    method: str  # closed_form | quadrature | k_sum


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------


def adaptive_quad(fn: Callable[[float], float], a: float, b: float, tol: float = 1e-10) -> float:
    val, _ = quad(fn, a, b, epsabs=tol, epsrel=tol, limit=400)
    return float(val)


def composite_gauss_legendre(
    fn: Callable[[Array], Array], a: float, b: float, panels: int = 16, order: int = 16
) -> float:
    """Fixed composite Gauss-Legendre rule (independent of adaptive_quad)."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = (lo + hi) / 2.0
        half = (hi - lo) / 2.0
        total += half * float(np.sum(weights * fn(mid + half * nodes)))
    return total


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def cell_entropy_1d(family: DensityFamily, rule: str = "adaptive") -> float:
    """Integral of f log f over the unit cell for one coordinate."""

    def integrand(x):
        v = family.pdf1(np.atleast_1d(np.asarray(x, dtype=float)))
        out = np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)
        return out if np.ndim(x) else float(out[0])

    if rule == "adaptive":
        return adaptive_quad(lambda u: integrand(u), -0.5, 0.5)
    return composite_gauss_legendre(integrand, -0.5, 0.5)


def entropy_box_exact(model: ProcessModel, box: BoxSpec) -> float:
    """Exact box relative entropy for Poisson and lattice-aligned grids."""
    if isinstance(model, Poisson):
        lam = model.intensity
        return (lam * math.log(lam) - lam + 1.0) * box.volume
    if isinstance(model, Grid) and model.has_analytic_density:
        side = box.side
        if not float(side).is_integer() or not np.allclose(box.lo, np.round(box.lo)):
            raise ValueError("grid entropy needs a cell-aligned box")
        cells = int(round(side)) ** box.dim
        per_cell = 1.0 + box.dim * cell_entropy_1d(model.density)
        return cells * per_cell
    raise ValueError(f"no closed-form entropy for {model!r}")


def specific_entropy_exact(model: ProcessModel, dim: int) -> float:
    """Per-volume limit of the box entropies, where available in closed form."""
    if isinstance(model, Poisson):
        lam = model.intensity
        return lam * math.log(lam) - lam + 1.0
    if isinstance(model, Grid) and model.has_analytic_density:
        return 1.0 + dim * cell_entropy_1d(model.density)
    if isinstance(model, Mixture):
        return model.alpha * specific_entropy_exact(model.a, dim) + (
            1.0 - model.alpha
        ) * specific_entropy_exact(model.b, dim)
    raise ValueError(f"no closed-form specific entropy for {model!r}")


# ---------------------------------------------------------------------------
# Monte Carlo box entropy
# ---------------------------------------------------------------------------


def _entropy_trial(trial: int, stream: RngStream, model: ProcessModel, box: BoxSpec) -> float:
    rng = stream.generator()
    cfg = sample(model, box, rng)
    return log_density_wrt_poisson(model, cfg, box) / box.volume


def rel_entropy_box(
    model: ProcessModel,
    n: float,
    dim: int,
    trials: int = 1000,
    stream: RngStream = RngStream(0),
    workers: int | None = None,
) -> EntropyEstimate:
    """Monte Carlo box entropy per volume: mean log-density under the model."""
    if not model.has_analytic_density:
        raise ValueError(f"model {model!r} lacks an analytic density")
    box = BoxSpec.centered(float(n), dim)
    vals = run_trials(_entropy_trial, trials, stream, model, box, workers=workers)
    mean, se = mean_and_se(vals)
    return EntropyEstimate(float(n), mean, se, trials)


def specific_entropy_profile(
    model: ProcessModel,
    n_list: Sequence[float],
    dim: int,
    trials: int = 1000,
    stream: RngStream = RngStream(0),
    workers: int | None = None,
) -> dict:
    """Box-entropy sequence over n with the running max as the sup-form value."""
    estimates = [
        rel_entropy_box(model, n, dim, trials, stream.child(j), workers=workers)
        for j, n in enumerate(n_list)
    ]
    running = np.maximum.accumulate([e.ent_per_volume for e in estimates])
    return {
        "estimates": estimates,
        "sup_form": [float(v) for v in running],
    }


def entropy_disintegrate(
    model: ProcessModel,
    n: float,
    dim: int,
    trials: int = 2000,
    stream: RngStream = RngStream(0),
) -> dict:
    """Split the box entropy into count-marginal and conditional parts.

    The count part is the KL divergence of the empirical count distribution
    from the Poisson count law; the conditional part subtracts the analytic
    count-likelihood ratio from the full log-density per sample.  The two
    parts sum to the plain Monte Carlo entropy up to sampling error.
    """
    if not model.has_analytic_density:
        raise ValueError(f"model {model!r} lacks an analytic density")
    box = BoxSpec.centered(float(n), dim)
    ref_lam = box.volume
    totals = np.empty(trials)
    conditionals = np.empty(trials)
    counts = np.empty(trials, dtype=int)
    for i in range(trials):
        rng = stream.child(i).generator()
        cfg = sample(model, box, rng)
        k = len(cfg)
        ld = log_density_wrt_poisson(model, cfg, box)
        count_ratio = float(count_log_pmf(model, box, k) - _poisson_count_logpmf(k, ref_lam))
        totals[i] = ld
        conditionals[i] = ld - count_ratio
        counts[i] = k
    uniq, freq = np.unique(counts, return_counts=True)
    p_hat = freq / trials
    count_part = float(
        np.sum(p_hat * (np.log(p_hat) - _poisson_count_logpmf(uniq, ref_lam)))
    )
    cond_mean, cond_se = mean_and_se(conditionals)
    total_mean, total_se = mean_and_se(totals)
    return {
        "number_stat_entropy": count_part,
        "conditional_entropy_mean": cond_mean,
        "conditional_se": cond_se,
        "total": total_mean,
        "total_se": total_se,
        "parts_sum": count_part + cond_mean,
    }


def _poisson_count_logpmf(k, lam: float):
    from scipy.stats import poisson as poisson_dist

    return poisson_dist.logpmf(k, lam)


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------


def fisher_integrand_1d(family: DensityFamily) -> Callable[[Array], Array]:
    """|f'|^2 / f with the convention 0 outside the support."""
    if not family.smooth:
        raise ValueError(f"{family.kind} has no differentiable density; Fisher undefined")

    def integrand(x: Array) -> Array:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        f = family.pdf1(x)
        df = family.dpdf1(x)
        out = np.zeros_like(f)
        ok = f > 1e-300
        out[ok] = df[ok] ** 2 / f[ok]
        return out

    return integrand


def fisher_closed_form_grid(family: DensityFamily, dim: int = 1) -> float:
    """Adaptive quadrature of the per-cell Fisher integral of a grid pattern.

    For a product density over coordinates the integral is dim times the
    one-dimensional value.
    """
    integrand = fisher_integrand_1d(family)
    one_dim = adaptive_quad(lambda u: float(integrand(np.array([u]))[0]), -0.5, 0.5, tol=1e-11)
    return dim * one_dim


def fisher_box(model: ProcessModel, n: float, dim: int) -> FisherEstimate:
    """Per-volume box Fisher information via the count-conditional reduction.

    For the lattice-aligned grid the product structure over cells reduces the
    sum over point counts to a single-cell integral, evaluated here with a
    fixed composite Gauss-Legendre rule (independent of the adaptive route in
    `fisher_closed_form_grid`).
    """
    if isinstance(model, Poisson):
        return FisherEstimate(float(n), 0.0, "closed_form")
    if isinstance(model, Grid) and model.has_fisher:
        integrand = fisher_integrand_1d(model.density)
        one_dim = composite_gauss_legendre(integrand, -0.5, 0.5, panels=32, order=24)
        return FisherEstimate(float(n), dim * one_dim, "k_sum")
    raise ValueError(f"Fisher information unavailable for {model!r}")


# ---------------------------------------------------------------------------
# entropy along a 1D displacement interpolation
# ---------------------------------------------------------------------------


def entropy_along_interpolation_1p(
    rho0: Callable[[Array], Array],
    rho1: Callable[[Array], Array],
    times: Sequence[float],
    box: BoxSpec | None = None,
    grid_size: int = 4001,
) -> list[float]:
    """Entropy of the quantile-transport interpolation against the uniform law.

    Both densities live on a 1D box and must integrate to 1 (checked).  The
    interpolant's entropy is evaluated through the quantile parametrisation:
    with x_q, y_q the two quantile functions, the density of the interpolant
    at (1-t) x_q + t y_q is 1 / ((1-t)/rho0(x_q) + t/rho1(y_q)).
    """
    box = box or BoxSpec.centered(1.0, 1)
    lo, hi = float(box.lo[0]), float(box.hi[0])
    xs = np.linspace(lo, hi, grid_size)
    r0 = np.clip(np.asarray(rho0(xs), dtype=float), 0.0, None)
    r1 = np.clip(np.asarray(rho1(xs), dtype=float), 0.0, None)
    for name, r in (("rho0", r0), ("rho1", r1)):
        total = np.trapezoid(r, xs)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"{name} integrates to {total}, not 1")
    q = (np.arange(grid_size - 1) + 0.5) / (grid_size - 1)
    cdf0 = _cdf_from_density(xs, r0)
    cdf1 = _cdf_from_density(xs, r1)
    x_q = np.interp(q, cdf0, xs)
    y_q = np.interp(q, cdf1, xs)
    d0 = np.maximum(np.interp(x_q, xs, r0), 1e-300)
    d1 = np.maximum(np.interp(y_q, xs, r1), 1e-300)
    length = hi - lo
    out = []
    for t in times:
        if not 0.0 <= t <= 1.0:
            raise ValueError("interpolation times must lie in [0, 1]")
        inv_density = (1.0 - t) / d0 + t / d1
        out.append(float(np.mean(-np.log(inv_density)) + math.log(length)))
    return out


def _cdf_from_density(xs: Array, density: Array) -> Array:
    steps = np.diff(xs) * (density[:-1] + density[1:]) / 2.0
    cdf = np.concatenate([[0.0], np.cumsum(steps)])
    return cdf / cdf[-1]
