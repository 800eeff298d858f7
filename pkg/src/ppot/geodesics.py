"""Displacement interpolation of matched configurations and empirical
verification of the constant-speed property.

All times reuse the *same* realisation and the same matching: the
interpolating curve is defined pathwise from one coupling, so per-trial
differences between interpolation distances are strongly variance-reduced.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import BoxSpec, Configuration, geo
from .streams import RngStream, mean_and_se, run_trials
from .transport import CostParams, Matching, PairSampler, optimal_matching, window_cost

Array = np.ndarray


@dataclass
class GeodesicSample:
    """One matched realisation interpolated at a list of times."""

    times: list[float]
    configs: list[Configuration]
    matching: Matching


def displacement_interpolate(m: Matching, t: float) -> Configuration:
    """Point pattern {geo(x, y, t)} over the pairs of the matching."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation time must lie in [0, 1], got {t}")
    if len(m) == 0:
        return Configuration(m.sources.copy())
    return Configuration(geo(m.sources, m.targets, t))


def geodesic_sample(m: Matching, times: Sequence[float]) -> GeodesicSample:
    return GeodesicSample(
        [float(t) for t in times],
        [displacement_interpolate(m, t) for t in times],
        m,
    )


def _speed_trial(
    trial: int,
    stream: RngStream,
    pair_sampler: PairSampler,
    s: float,
    t: float,
    box: BoxSpec,
    params: CostParams,
) -> float:
    rng = stream.generator()
    src, tgt = pair_sampler(rng, box)
    config_s = Configuration(geo(src, tgt, s))
    config_t = Configuration(geo(src, tgt, t))
    return window_cost(config_s, config_t, box, params) / box.volume


def _estimate_interpolation_distance(
    pair_sampler, s, t, box, params, trials, stream, workers
) -> tuple[float, float]:
    """Distance between the interpolants at s and t with a delta-method SE."""
    if s == t:
        return 0.0, 0.0
    vals = run_trials(_speed_trial, trials, stream, pair_sampler, s, t, box, params,
                      workers=workers)
    cost_mean, cost_se = mean_and_se(vals)
    w = max(cost_mean, 0.0) ** (1.0 / params.p)
    if w == 0.0:
        return 0.0, cost_se
    return w, cost_se / (params.p * w ** (params.p - 1.0))


def constant_speed_profile(
    pair_sampler: PairSampler,
    times: Sequence[float],
    box: BoxSpec,
    params: CostParams = CostParams(),
    trials: int = 200,
    stream: RngStream = RngStream(0),
    workers: int | None = None,
) -> list[dict]:
    """Estimated interpolation distances against the constant-speed line.

    For every s < t in `times`, the distance between the interpolants at s
    and t is estimated on its own realisations (fresh box-optimal matchings
    each trial; Monte Carlo of both sides) and compared with (t-s) times the
    endpoint distance.  `std_error` combines the delta-method errors of the
    two independent estimates.
    """
    ts = sorted(set(float(t) for t in times))
    if not all(0.0 <= t <= 1.0 for t in ts):
        raise ValueError("interpolation times must lie in [0, 1]")
    time_pairs = [(s, t) for i, s in enumerate(ts) for t in ts[i + 1 :]]
    w_base, w_base_se = _estimate_interpolation_distance(
        pair_sampler, 0.0, 1.0, box, params, trials, stream.child(10**6), workers
    )
    rows = []
    for j, (s, t) in enumerate(time_pairs):
        if (s, t) == (0.0, 1.0):
            w_hat, w_se = w_base, w_base_se
        else:
            w_hat, w_se = _estimate_interpolation_distance(
                pair_sampler, s, t, box, params, trials, stream.child(j), workers
            )
        expected = (t - s) * w_base
        combined_se = float(np.hypot(w_se, (t - s) * w_base_se))
        rows.append(
            {
                "s": s,
                "t": t,
                "w_hat": w_hat,
                "expected": expected,
                "abs_gap": abs(w_hat - expected),
                "std_error": combined_se,
            }
        )
    return rows


def midpoint_collinearity(
    pair_sampler: PairSampler,
    box: BoxSpec,
    t: float = 0.5,
    params: CostParams = CostParams(),
    stream: RngStream = RngStream(0),
) -> float:
    """Max deviation from collinearity when re-matching through the midpoint.

    On one realisation, optimal matchings source -> interpolant and
    interpolant -> target are composed through the shared middle pattern;
    each composed triple (x, m, y) is checked against m = geo(x, y, t).
    Returns the largest |m - geo(x, y, t)| over triples with x in the box.
    """
    rng = stream.generator()
    src, tgt = pair_sampler(rng, box)
    mids = geo(src, tgt, t)
    keep = box.contains(src)
    if not np.any(keep):
        return 0.0
    first = optimal_matching(src[keep], mids[keep], params)
    second = optimal_matching(mids[keep], tgt[keep], params)
    mid_index = {m.tobytes(): i for i, m in enumerate(second.sources)}
    worst = 0.0
    for x, m in zip(first.sources, first.targets):
        i = mid_index[m.tobytes()]
        y = second.targets[i]
        dev = float(np.linalg.norm(m - geo(x, y, t)))
        worst = max(worst, dev)
    return worst
