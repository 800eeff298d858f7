"""Exact matchings, partial matchings, cost estimation, tiled couplings."""

import itertools
import math

import numpy as np
import pytest

from ppot.geometry import BoxSpec, Configuration
from ppot.processes import Grid, Poisson, UniformCell, lattice_grid, sample
from ppot.streams import RngStream
from ppot.transport import (
    CostParams,
    IndependentMatchedPairs,
    Matching,
    SharedGridPairs,
    TargetsTooSparse,
    boundary_partial_matching,
    cost_sequence_diagnostics,
    estimate_cost_per_volume,
    make_pair_sampler,
    matching_cost,
    mtp_symmetry,
    optimal_matching,
    rect_partial_pairs,
    tile_and_shift_coupling,
    window_cost,
)


def brute_force_min(xs, ys, params):
    cost = params.cost_matrix(xs, ys)
    k = xs.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(k)):
        best = min(best, float(cost[np.arange(k), perm].sum()))
    return best


def test_optimal_matching_1d_example():
    xs = np.array([[0.0], [1.0]])
    ys = np.array([[0.1], [0.9]])
    m = optimal_matching(xs, ys, CostParams(2.0))
    assert matching_cost(m, CostParams(2.0)) == pytest.approx(0.02)
    order = np.argsort(m.sources[:, 0])
    assert np.allclose(m.targets[order], ys)


def test_optimal_matching_identity_zero_cost():
    xs = np.random.default_rng(0).uniform(size=(6, 2))
    m = optimal_matching(xs, xs.copy(), CostParams(2.0))
    assert matching_cost(m, CostParams(2.0)) == pytest.approx(0.0, abs=1e-15)


def test_optimal_matching_against_brute_force_k7():
    rng = RngStream(20).generator()
    params = CostParams(2.0)
    for _ in range(60):
        d = int(rng.integers(1, 4))
        xs = rng.uniform(-1, 1, size=(7, d))
        ys = rng.uniform(-1, 1, size=(7, d))
        m = optimal_matching(xs, ys, params)
        assert matching_cost(m, params) == pytest.approx(brute_force_min(xs, ys, params))


def test_optimal_matching_rejects_mismatch_and_oversize():
    with pytest.raises(ValueError):
        optimal_matching(np.zeros((2, 1)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        optimal_matching(np.zeros((5, 1)), np.zeros((5, 1)), max_size=4)


def test_matching_cost_window_examples():
    params = CostParams(2.0)
    m = Matching(np.array([[0.0, 0.0]]), np.array([[2.0, 0.0]]))
    assert matching_cost(m, params, BoxSpec.centered(2.0, 2)) == pytest.approx(4.0)
    far = BoxSpec(2.0, (10.0, 10.0))
    assert matching_cost(m, params, far) == 0.0


def test_matching_cost_matches_per_pair_sum():
    rng = RngStream(21).generator()
    params = CostParams(1.5)
    src = rng.uniform(-2, 2, size=(40, 2))
    tgt = rng.uniform(-2, 2, size=(40, 2))
    m = Matching(src, tgt)
    direct = sum(
        np.linalg.norm(a - b) ** 1.5 for a, b in zip(src, tgt)
    )
    assert matching_cost(m, params) == pytest.approx(direct)


def test_cyclical_monotonicity_swap_audit():
    rng = RngStream(22).generator()
    params = CostParams(2.0)
    audits = 0
    for _ in range(50):
        d = int(rng.integers(1, 4))
        k = int(rng.integers(4, 30))
        xs = rng.uniform(-2, 2, size=(k, d))
        ys = rng.uniform(-2, 2, size=(k, d))
        m = optimal_matching(xs, ys, params)
        pair_costs = params.pair_costs(m.sources, m.targets)
        idx = rng.integers(0, k, size=(200, 2))
        i, j = idx[:, 0], idx[:, 1]
        swapped = (
            params.pair_costs(m.sources[i], m.targets[j])
            + params.pair_costs(m.sources[j], m.targets[i])
        )
        original = pair_costs[i] + pair_costs[j]
        assert np.all(swapped >= original - 1e-10)
        audits += len(i)
    assert audits == 10000


def test_sorted_matching_optimal_in_1d():
    rng = RngStream(23).generator()
    for p in (1.0, 2.0, 3.0):
        params = CostParams(p)
        xs = rng.uniform(-3, 3, size=(25, 1))
        ys = rng.uniform(-3, 3, size=(25, 1))
        m = optimal_matching(xs, ys, params)
        sorted_cost = float(np.sum(params.pair_costs(np.sort(xs, axis=0), np.sort(ys, axis=0))))
        assert matching_cost(m, params) == pytest.approx(sorted_cost)


# ---------------------------------------------------------------------------
# boundary partial matching
# ---------------------------------------------------------------------------


def test_boundary_partial_matching_interior_targets_unchanged():
    box = BoxSpec.centered(2.0, 1)
    xi = Configuration(np.array([[0.0], [0.5]]), box)
    eta = Configuration(np.array([[0.1], [0.4], [0.9]]))
    m, eta_n = boundary_partial_matching(xi, eta, CostParams(2.0), box)
    assert len(eta_n) == 2
    assert set(np.round(eta_n.points[:, 0], 6)) <= {0.1, 0.4, 0.9}


def test_boundary_partial_matching_clips_exterior_target():
    box = BoxSpec.centered(2.0, 2)
    xi = Configuration(np.array([[0.0, 0.0]]), box)
    eta = Configuration(np.array([[3.0, 0.0]]))
    m, eta_n = boundary_partial_matching(xi, eta, CostParams(2.0), box)
    assert np.allclose(eta_n.points, [[1.0, 0.0]])
    assert np.all(box.contains(eta_n.points))


def test_boundary_partial_matching_never_increases_pair_cost():
    rng = RngStream(24).generator()
    box = BoxSpec.centered(2.0, 2)
    params = CostParams(2.0)
    for _ in range(40):
        k = int(rng.integers(1, 8))
        xi = Configuration(rng.uniform(-1, 1, size=(k, 2)), box)
        eta = Configuration(rng.uniform(-3, 3, size=(k + 6, 2)))
        unclipped_src, unclipped_tgt = rect_partial_pairs(xi.points, eta.points, params)
        unclipped = params.pair_costs(unclipped_src, unclipped_tgt)
        m, eta_n = boundary_partial_matching(xi, eta, params, box)
        clipped = params.pair_costs(m.sources, m.targets)
        # same source order (rect_partial_pairs sorts identically)
        assert np.all(clipped <= unclipped + 1e-12)
        assert np.all(box.contains(eta_n.points))
        assert len(eta_n) == k


def test_boundary_partial_matching_raises_when_sparse():
    box = BoxSpec.centered(2.0, 1)
    xi = Configuration(np.array([[0.0], [0.5], [-0.5]]), box)
    eta = Configuration(np.array([[0.1]]))
    with pytest.raises(TargetsTooSparse):
        boundary_partial_matching(xi, eta, CostParams(2.0), box)


# ---------------------------------------------------------------------------
# cost per volume
# ---------------------------------------------------------------------------


def test_estimate_comonotone_is_zero():
    est = estimate_cost_per_volume(
        Poisson(1.0), Poisson(1.0), "comonotone", [4.0], 1,
        trials=20, stream=RngStream(25),
    )[0]
    assert est.per_volume_mean == 0.0 and est.std_error == 0.0


def test_estimate_shared_grid_value():
    est = estimate_cost_per_volume(
        lattice_grid(True), Grid(UniformCell(0.5), True), "shared_grid", [8.0], 1,
        CostParams(2.0), trials=1500, stream=RngStream(26),
    )[0]
    assert abs(est.per_volume_mean - 0.5**2 / 12.0) <= 3.0 * est.std_error


def test_estimate_independent_stabilizes_d3():
    grid = Grid(UniformCell(0.5), True)
    est = estimate_cost_per_volume(
        Poisson(1.0), grid, "independent", [4.0, 6.0], 3,
        CostParams(2.0), trials=40, stream=RngStream(27),
    )
    assert all(np.isfinite(e.per_volume_mean) and e.per_volume_mean > 0 for e in est)
    gap = abs(est[1].per_volume_mean - est[0].per_volume_mean)
    assert gap <= 4.0 * math.hypot(est[0].std_error, est[1].std_error) + 0.05
    diag = cost_sequence_diagnostics(est)
    assert len(diag["increasing_steps"]) == 1


def test_triangle_inequality_at_estimator_level():
    grid_a = lattice_grid(True)
    grid_b = Grid(UniformCell(0.5), True)
    poisson = Poisson(1.0)
    kwargs = dict(trials=250, params=CostParams(2.0))
    ac = estimate_cost_per_volume(grid_a, poisson, "independent", [4.0], 1,
                                  stream=RngStream(28, (1,)), **kwargs)[0]
    ab = estimate_cost_per_volume(grid_a, grid_b, "shared_grid", [4.0], 1,
                                  stream=RngStream(28, (2,)), **kwargs)[0]
    bc = estimate_cost_per_volume(grid_b, poisson, "independent", [4.0], 1,
                                  stream=RngStream(28, (3,)), **kwargs)[0]

    def w(est):
        return math.sqrt(max(est.per_volume_mean, 0.0))

    def w_se(est):
        return est.std_error / (2.0 * max(w(est), 1e-9))

    combined = math.sqrt(w_se(ac) ** 2 + w_se(ab) ** 2 + w_se(bc) ** 2)
    assert w(ac) <= w(ab) + w(bc) + 4.0 * combined


def test_symmetry_under_same_coupling():
    """Distance read off the outgoing vs the incoming side of one
    shift-stationarised coupling (the window-anchored partial matching is
    *not* a stationary pair ensemble and is direction-biased)."""
    from ppot.processes import sample
    from ppot.transport import sample_covering_targets

    grid = Grid(UniformCell(0.5), True)
    tile_box = BoxSpec.centered(2.0, 2)
    params = CostParams(2.0)

    def box_matching(rng):
        xi = sample(grid, tile_box, rng)
        eta = sample_covering_targets(Poisson(1.0), tile_box, 4.0, rng)
        src, tgt = rect_partial_pairs(xi.points, eta.points, params)
        return Matching(src, tgt)

    window = BoxSpec.centered(2.0, 2)

    def tiled(rng):
        return tile_and_shift_coupling(box_matching, 2.0, window.grow(6.0), rng)

    sym = mtp_symmetry(tiled, window, params, trials=400, stream=RngStream(29))
    ab, ba = sym["outgoing"], sym["incoming"]

    def w(est):
        return math.sqrt(max(est.per_volume_mean, 0.0))

    def w_se(est):
        return est.std_error / (2.0 * max(w(est), 1e-9))

    tol = 3.0 * math.hypot(w_se(ab), w_se(ba))
    assert abs(w(ab) - w(ba)) <= tol


def test_unknown_coupling_rejected():
    with pytest.raises(ValueError):
        estimate_cost_per_volume(Poisson(1.0), Poisson(1.0), "weird", [2.0], 1, trials=2)
    with pytest.raises(ValueError):
        make_pair_sampler(Poisson(1.0), Poisson(1.0), "weird")


# ---------------------------------------------------------------------------
# tiled couplings and the mass transport principle
# ---------------------------------------------------------------------------


def _one_pair_box_matching(rng):
    # deterministic single pair inside the centred side-2 box
    return Matching(np.array([[0.25, 0.0]]), np.array([[0.45, 0.3]]))


def test_tile_and_shift_deterministic_pair_cost():
    params = CostParams(2.0)
    pair_cost = float(params.pair_costs(np.array([[0.25, 0.0]]), np.array([[0.45, 0.3]]))[0])
    target = BoxSpec.centered(8.0, 2)
    stream = RngStream(30)
    per_vol = []
    for i in range(300):
        m = tile_and_shift_coupling(_one_pair_box_matching, 2.0, target, stream.child(i).generator())
        per_vol.append(matching_cost(m, params, target) / target.volume)
    mean = float(np.mean(per_vol))
    se = float(np.std(per_vol, ddof=1) / math.sqrt(len(per_vol)))
    assert abs(mean - pair_cost / 2.0**2) <= 4.0 * se


def test_tile_and_shift_expected_cost_identity():
    params = CostParams(2.0)
    box = BoxSpec.centered(2.0, 2)
    stream = RngStream(31)

    def sampler(rng):
        xs = Configuration(box.sample_uniform(3, rng), box)
        ys = Configuration(box.sample_uniform(3, rng), box)
        return optimal_matching(xs, ys, params)

    box_costs = [
        matching_cost(sampler(stream.child(i).generator()), params) for i in range(400)
    ]
    target = BoxSpec.centered(6.0, 2)
    tiled_costs = [
        matching_cost(
            tile_and_shift_coupling(sampler, 2.0, target, stream.child(10**6 + i).generator()),
            params, target,
        ) / target.volume
        for i in range(400)
    ]
    lhs = float(np.mean(tiled_costs))
    rhs = float(np.mean(box_costs)) / box.volume
    se = math.hypot(
        np.std(tiled_costs, ddof=1) / 20.0, np.std(box_costs, ddof=1) / box.volume / 20.0
    )
    assert abs(lhs - rhs) <= 4.0 * se


def test_tile_and_shift_count_stationarity():
    from scipy import stats as sstats

    box = BoxSpec.centered(2.0, 1)
    stream = RngStream(32)

    def sampler(rng):
        xs = Configuration(box.sample_uniform(2, rng), box)
        ys = Configuration(box.sample_uniform(2, rng), box)
        return optimal_matching(xs, ys, CostParams(2.0))

    target = BoxSpec.centered(8.0, 1)
    windows = [BoxSpec(1.0, (c,)) for c in (-2.5, -0.5, 1.5)]
    counts = {i: [] for i in range(len(windows))}
    for i in range(600):
        m = tile_and_shift_coupling(sampler, 2.0, target, stream.child(i).generator())
        for j, win in enumerate(windows):
            counts[j].append(int(np.sum(win.contains(m.sources))))
    table = np.array([np.bincount(counts[j], minlength=4)[:4] for j in range(len(windows))])
    res = sstats.chi2_contingency(table + 1)
    assert res.pvalue > 1e-4


def test_mtp_symmetry_comonotone_zero():
    def sampler(rng):
        pts = rng.uniform(-2, 2, size=(8, 2))
        return Matching(pts, pts.copy())

    sym = mtp_symmetry(sampler, BoxSpec.centered(2.0, 2), trials=50, stream=RngStream(33))
    assert sym["outgoing"].per_volume_mean == 0.0
    assert sym["incoming"].per_volume_mean == 0.0


def test_mtp_symmetry_tiled_grid():
    pair = SharedGridPairs(lattice_grid(True), Grid(UniformCell(0.8), True))
    window = BoxSpec.centered(2.0, 2)

    def sampler(rng):
        src, tgt = pair(rng, window.grow(3.0))
        return Matching(src, tgt)

    sym = mtp_symmetry(sampler, window, trials=500, stream=RngStream(34))
    out_est, in_est = sym["outgoing"], sym["incoming"]
    tol = 3.0 * math.hypot(out_est.std_error, in_est.std_error)
    assert abs(out_est.per_volume_mean - in_est.per_volume_mean) <= tol
    oc, ic = sym["outgoing_count"], sym["incoming_count"]
    assert abs(oc[0] - ic[0]) <= 3.0 * math.hypot(oc[1], ic[1])


def test_independent_matched_pairs_cover_sources():
    sampler = IndependentMatchedPairs(Poisson(1.0), Poisson(1.0))
    box = BoxSpec.centered(4.0, 1)
    src, tgt = sampler(RngStream(35).generator(), box)
    assert src.shape == tgt.shape
    # every source inside the grown window is matched exactly once
    assert len(np.unique(tgt, axis=0)) == len(tgt)


def test_window_cost_zero_for_empty_window():
    box = BoxSpec.centered(2.0, 1)
    xi = Configuration(np.zeros((0, 1)), box)
    eta = Configuration(np.array([[0.3]]))
    assert window_cost(xi, eta, box) == 0.0
