"""Boundary layer construction, crossing bookkeeping, pair modification and
the layer-density correction."""

import math

import numpy as np
import pytest

from ppot.geometry import BoxSpec, Configuration
from ppot.modification import (
    boundary_cells,
    crossing_counts,
    entropy_reassembly_check,
    modification_ensemble,
    modified_log_density_correction,
    modify_pair,
)
from ppot.processes import Grid, Poisson, UniformCell, lattice_grid
from ppot.streams import RngStream
from ppot.transport import CostParams, Matching, SharedGridPairs


def test_boundary_cells_counts():
    layer1 = boundary_cells(4, 1)
    assert layer1.cell_count == 2  # one side-1/2 cell per end of the width-1/2 layer
    intervals = sorted((lo[0], hi[0]) for lo, hi in zip(layer1.lo, layer1.hi))
    assert intervals == [(-2.0, -1.5), (1.5, 2.0)]
    layer2 = boundary_cells(3, 2)
    assert layer2.cell_count == 20
    assert layer2.cell_count == (2 * 3) ** 2 - (2 * 3 - 2) ** 2


def test_boundary_cells_exact_cover():
    for n, d in ((4, 1), (3, 2), (4, 2), (4, 3)):
        layer = boundary_cells(n, d)
        volumes = np.prod(layer.hi - layer.lo, axis=1)
        layer_measure = float(n**d - (n - 1) ** d)
        assert np.sum(volumes) == pytest.approx(layer_measure)
        inner = BoxSpec.centered(n - 1.0, d)
        outer = BoxSpec.centered(float(n), d)
        centers = (layer.lo + layer.hi) / 2.0
        assert np.all(outer.contains(centers))
        assert not np.any(inner.contains(centers) & (np.min(np.abs(np.abs(centers) - (n - 1) / 2), axis=1) > 1e-9))
        # pairwise interior-disjoint: centre of one cell outside every other
        for i in range(layer.cell_count):
            inside_others = np.all(centers[i] > layer.lo, axis=1) & np.all(centers[i] < layer.hi, axis=1)
            assert np.sum(inside_others) == 1

    with pytest.raises(ValueError):
        boundary_cells(1, 1)


def test_locate_boundary_point():
    layer = boundary_cells(4, 2)
    # entry through the +x face at tangential coordinate 0.7
    cell = layer.locate_boundary_point(np.array([1.5, 0.7]))
    assert layer.lo[cell][0] == pytest.approx(1.5)
    assert layer.lo[cell][1] <= 0.7 <= layer.hi[cell][1]
    with pytest.raises(ValueError):
        layer.locate_boundary_point(np.array([0.0, 0.0]))


def test_crossing_counts_interior_only():
    layer = boundary_cells(4, 2)
    src = np.array([[0.0, 0.0], [1.0, -1.0]])
    tgt = np.array([[0.2, 0.1], [0.9, -1.1]])
    cc = crossing_counts(Matching(src, tgt), layer)
    assert cc.total_after == 2
    assert int(cc.entering.sum()) == 0 and int(cc.exiting.sum()) == 0


def test_crossing_counts_single_exit():
    layer = boundary_cells(4, 2)
    m = Matching(np.array([[0.0, 0.0]]), np.array([[2.6, 0.0]]))
    cc = crossing_counts(m, layer)
    assert cc.total_after == 1
    assert int(cc.exiting.sum()) == 1 and int(cc.entering.sum()) == 0
    cell = cc.exiting_pairs[0][1]
    assert layer.contains(cell, np.array([1.5, 0.0]))


def test_crossing_counts_bookkeeping_totals():
    layer = boundary_cells(4, 2)
    rng = RngStream(60).generator()
    src = rng.uniform(-2.6, 2.6, size=(60, 2))
    tgt = src + rng.normal(0.0, 0.8, size=src.shape)
    m = Matching(src, tgt)
    cc = crossing_counts(m, layer)
    inner = BoxSpec.centered(3.0, 2)
    src_in = inner.contains(src)
    tgt_in = inner.contains(tgt)
    assert int(cc.entering.sum()) == int(np.sum(~src_in & tgt_in))
    assert int(cc.exiting.sum()) == int(np.sum(src_in & ~tgt_in))
    assert cc.total_after == int(np.sum(src_in & tgt_in)) + int(cc.entering.sum()) + int(cc.exiting.sum())
    with pytest.raises(ValueError):
        crossing_counts(m, layer, crossing_rule="sometimes")


def test_modify_pair_no_crossings():
    rng = RngStream(61).generator()
    inner = BoxSpec.centered(3.0, 2)
    pts_a = inner.sample_uniform(5, rng) * 0.9
    pts_b = inner.sample_uniform(5, rng) * 0.9
    m = Matching(pts_a, pts_b)
    mod = modify_pair(Configuration(pts_a), Configuration(pts_b), m, 4, rng)
    assert len(mod.xi_tilde) == len(mod.eta_tilde) == 5
    assert np.array_equal(np.sort(mod.xi_tilde.points, axis=0), np.sort(pts_a, axis=0))
    assert len(mod.matching) == 5


def test_modify_pair_single_crossing_trace():
    rng = RngStream(62).generator()
    src = np.array([[0.0, 0.0], [2.7, 0.2]])  # second source outside inner box
    tgt = np.array([[0.1, 0.0], [1.2, 0.2]])  # matched inward
    m = Matching(src, tgt)
    mod = modify_pair(Configuration(src), Configuration(tgt), m, 4, rng)
    assert mod.total_count == 2
    assert int(mod.entering_counts.sum()) == 1
    assert len(mod.xi_added) == 1
    added, cell = mod.xi_added[0]
    assert mod.layer.contains(cell, added)
    # rewired pair: added point matched to the surviving interior endpoint
    assert any(np.allclose(s, added) and np.allclose(t, [1.2, 0.2])
               for s, t in zip(mod.matching.sources, mod.matching.targets))


def test_modify_pair_rejects_uncovered_interior():
    rng = RngStream(63).generator()
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    m = Matching(pts[:1], pts[:1])  # matching misses an interior point
    with pytest.raises(ValueError):
        modify_pair(Configuration(pts), Configuration(pts), m, 4, rng)


def test_correction_formula_examples():
    layer = boundary_cells(4, 2)
    n_cells = layer.cell_count
    # simplified unit-cell constant: empty layer and a (2,0,...) class
    empty = modified_log_density_correction(5, np.zeros(n_cells), 1.0, layer, cell_volume=1.0)
    assert empty == pytest.approx(n_cells)
    k = np.zeros(n_cells)
    k[0] = 2
    val = modified_log_density_correction(7, k, 0.5, layer, cell_volume=1.0)
    assert val == pytest.approx(n_cells + math.log(2.0) + math.log(0.5))
    # exact layer volume: v = 2^-d
    v = 0.25
    exact = modified_log_density_correction(7, k, 0.5, layer)
    assert exact == pytest.approx(n_cells * v - 2 * math.log(v) + math.log(2.0) + math.log(0.5))
    with pytest.raises(ValueError):
        modified_log_density_correction(1, np.zeros(n_cells), 0.0, layer)


def test_layer_density_normalisation_identity():
    """Under the Poisson layer law the exact-constant density of a fixed
    class law averages to one; the unit-cell constant does not."""
    layer = boundary_cells(4, 1)
    v = 0.5
    rng = RngStream(64).generator()
    from itertools import product

    ks = list(product(range(6), repeat=layer.cell_count))
    weights = np.array([math.exp(-0.7 * sum(k)) for k in ks])
    weights /= weights.sum()
    law = {k: float(w) for k, w in zip(ks, weights)}
    vals, vals_unit = [], []
    for _ in range(60000):
        kvec = tuple(int(x) for x in rng.poisson(v, size=layer.cell_count))
        if kvec in law:
            vals.append(math.exp(modified_log_density_correction(0, np.array(kvec), law[kvec], layer)))
            vals_unit.append(
                math.exp(modified_log_density_correction(0, np.array(kvec), law[kvec], layer,
                                                         cell_volume=1.0))
            )
        else:
            vals.append(0.0)
            vals_unit.append(0.0)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    assert abs(mean - 1.0) <= 4.0 * se
    assert abs(np.mean(vals_unit) - 1.0) > 10.0 * se


def test_modification_ensemble_invariants_and_cost_control():
    pair = SharedGridPairs(lattice_grid(True), Grid(UniformCell(0.3), True))
    params = CostParams(2.0)
    gaps = []
    for n in (4, 6, 8):
        rep = modification_ensemble(pair, n, 2, params, trials=150, stream=RngStream(65, (n,)))
        slack = 3.0 * n / n**2  # boundary-order allowance
        assert rep["cost_after"] <= rep["cost_before"] + slack
        gaps.append(rep["cost_after"] - rep["cost_before"])
        assert rep["intensity"] < 1.0  # layer points removed, deficit O(1/n)
    assert abs(gaps[2]) <= abs(gaps[0]) + 0.01


def test_entropy_reassembly_within_tolerance():
    res = entropy_reassembly_check(Poisson(2.0), Poisson(2.0), 4, 1, trials=4500,
                                   stream=RngStream(66))
    assert abs(res["gap"]) <= 4.0 * res["combined_se"]
    assert res["exact_interior"] == pytest.approx(3 * (2 * math.log(2) - 1))
