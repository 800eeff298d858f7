"""Box entropies, Fisher information, interpolation convexity."""

import math

import numpy as np
import pytest

from ppot.entropy import (
    cell_entropy_1d,
    entropy_along_interpolation_1p,
    entropy_box_exact,
    entropy_disintegrate,
    fisher_box,
    fisher_closed_form_grid,
    rel_entropy_box,
    specific_entropy_exact,
    specific_entropy_profile,
)
from ppot.geometry import BoxSpec
from ppot.processes import (
    CosineBump,
    Grid,
    Mixture,
    Poisson,
    TruncatedGaussian,
    UniformCell,
    log_density_wrt_poisson,
    stationarize,
)
from ppot.streams import RngStream

TWO_LOG_TWO_MINUS_ONE = 2.0 * math.log(2.0) - 1.0
FOUR_PI_SQ = 4.0 * math.pi**2


def test_poisson_reference_entropy_zero():
    est = rel_entropy_box(Poisson(1.0), 8, 1, 300, RngStream(70))
    assert est.ent_per_volume == 0.0 and est.std_error == 0.0


def test_poisson2_entropy_value():
    est = rel_entropy_box(Poisson(2.0), 8, 1, 4000, RngStream(71))
    assert abs(est.ent_per_volume - TWO_LOG_TWO_MINUS_ONE) <= 4.0 * est.std_error


def test_full_cell_grid_entropy_is_one():
    est = rel_entropy_box(Grid(UniformCell(1.0)), 8, 1, 100, RngStream(72))
    assert est.ent_per_volume == pytest.approx(1.0)
    assert est.std_error == pytest.approx(0.0)


def test_entropy_requires_analytic_density():
    with pytest.raises(ValueError):
        rel_entropy_box(Grid(UniformCell(1.0), stationarized=True), 4, 1, 10)


def test_entropy_box_exact_values():
    assert entropy_box_exact(Poisson(2.0), BoxSpec.centered(3.0, 1)) == pytest.approx(
        3 * TWO_LOG_TWO_MINUS_ONE
    )
    assert entropy_box_exact(Grid(UniformCell(1.0)), BoxSpec.centered(4.0, 2)) == pytest.approx(16.0)
    val = specific_entropy_exact(Grid(CosineBump()), 1)
    assert val == pytest.approx(1.0 + cell_entropy_1d(CosineBump()))
    assert cell_entropy_1d(CosineBump()) == pytest.approx(1.0 - math.log(2.0), abs=1e-9)


def test_specific_entropy_profile_sup_form():
    profile = specific_entropy_profile(Poisson(1.0), [2, 4, 8], 1, 100, RngStream(73))
    assert all(e.ent_per_volume == 0.0 for e in profile["estimates"])
    assert profile["sup_form"] == [0.0, 0.0, 0.0]
    profile2 = specific_entropy_profile(Grid(CosineBump()), [2, 4], 1, 150, RngStream(74))
    sup = profile2["sup_form"]
    assert sup == sorted(sup)  # running max is nondecreasing by construction
    target = specific_entropy_exact(Grid(CosineBump()), 1)
    for est in profile2["estimates"]:
        assert abs(est.ent_per_volume - target) <= 4.0 * max(est.std_error, 1e-12)


def test_entropy_disintegrate_poisson():
    res = entropy_disintegrate(Poisson(1.0), 1, 1, 500, RngStream(75))
    assert res["conditional_entropy_mean"] == pytest.approx(0.0, abs=1e-12)
    res2 = entropy_disintegrate(Poisson(2.0), 1, 1, 8000, RngStream(76))
    assert res2["conditional_entropy_mean"] == pytest.approx(0.0, abs=1e-9)
    assert abs(res2["number_stat_entropy"] - TWO_LOG_TWO_MINUS_ONE) <= 0.05
    # parts sum to the plain Monte Carlo entropy within noise
    assert abs(res2["parts_sum"] - res2["total"]) <= 4.0 * res2["total_se"] + 0.05


def test_entropy_disintegrate_grid_sum_property():
    res = entropy_disintegrate(Grid(UniformCell(1.0)), 2, 1, 2000, RngStream(77))
    assert abs(res["parts_sum"] - res["total"]) <= 4.0 * max(res["total_se"], 1e-9) + 0.05


def test_mixture_affinity_with_decaying_label_term():
    """Per-volume entropy of a mixture approaches the affine combination,
    with a gap bounded by the mixing entropy over the volume."""
    mix = Mixture(Poisson(2.0), Poisson(1.0), 0.5)
    affine = 0.5 * TWO_LOG_TWO_MINUS_ONE
    h_alpha = math.log(2.0)
    for n, trials in ((2, 4000), (4, 3000), (8, 2000)):
        est = rel_entropy_box(mix, n, 1, trials, RngStream(78, (n,)))
        gap = abs(est.ent_per_volume - affine)
        assert gap <= h_alpha / n + 4.0 * est.std_error, (n, gap)


def test_stationarization_bound_equality_for_poisson():
    """Tiled-and-shifted Poisson stays Poisson, so the per-volume entropy of
    the stationarized construction equals the box entropy per volume."""
    window = BoxSpec.centered(4.0, 1)
    stream = RngStream(79)
    vals = []
    for i in range(3000):
        cfg = stationarize(Poisson(2.0), 2.0, window, stream.child(i).generator())
        vals.append(log_density_wrt_poisson(Poisson(2.0), cfg, window) / window.volume)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    rhs = entropy_box_exact(Poisson(2.0), BoxSpec.centered(2.0, 1)) / 2.0
    assert mean <= rhs + 3.0 * se
    assert abs(mean - rhs) <= 3.0 * se  # equality case of the tiling bound


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------


def test_fisher_cosine_value_and_route_agreement():
    box_route = fisher_box(Grid(CosineBump()), 4, 1)
    closed = fisher_closed_form_grid(CosineBump(), 1)
    assert box_route.method == "k_sum"
    assert abs(closed - FOUR_PI_SQ) / FOUR_PI_SQ < 1e-9
    assert abs(box_route.fisher_per_volume - closed) / closed < 0.005


def test_fisher_truncated_gaussian_small_sigma():
    val = fisher_closed_form_grid(TruncatedGaussian(0.05), 1)
    assert abs(val - 1.0 / 0.05**2) / (1.0 / 0.05**2) < 0.02


def test_fisher_product_dimension_scaling():
    one = fisher_closed_form_grid(CosineBump(), 1)
    three = fisher_closed_form_grid(CosineBump(), 3)
    assert three == pytest.approx(3 * one)
    box3 = fisher_box(Grid(CosineBump()), 4, 3)
    assert box3.fisher_per_volume == pytest.approx(three, rel=1e-6)


def test_fisher_poisson_zero_and_uniform_rejected():
    assert fisher_box(Poisson(1.0), 4, 1).fisher_per_volume == 0.0
    with pytest.raises(ValueError):
        fisher_box(Grid(UniformCell(1.0)), 4, 1)
    with pytest.raises(ValueError):
        fisher_closed_form_grid(UniformCell(0.5), 1)


# ---------------------------------------------------------------------------
# entropy along 1D displacement interpolation
# ---------------------------------------------------------------------------


def test_interpolation_entropy_constant_for_equal_ends():
    cb = CosineBump()
    curve = entropy_along_interpolation_1p(cb.pdf1, cb.pdf1, [0.0, 0.5, 1.0])
    assert max(curve) - min(curve) < 1e-6


def test_interpolation_entropy_convex_with_known_endpoints():
    cb = CosineBump()
    flat = lambda x: np.ones_like(x)  # noqa: E731
    times = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0]
    curve = entropy_along_interpolation_1p(flat, cb.pdf1, times)
    assert curve[0] == pytest.approx(0.0, abs=1e-6)
    assert curve[-1] == pytest.approx(1.0 - math.log(2.0), abs=2e-3)
    second_diffs = np.diff(curve, 2)
    assert np.all(second_diffs >= -1e-3)
    assert curve[4] <= 0.5 * (curve[0] + curve[-1]) + 1e-9


def test_interpolation_entropy_rejects_unnormalised():
    with pytest.raises(ValueError):
        entropy_along_interpolation_1p(
            lambda x: 2.0 * np.ones_like(x), lambda x: np.ones_like(x), [0.5]
        )
