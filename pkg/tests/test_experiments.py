import math

import numpy as np
import pytest

from qtraj import experiments as ex
from qtraj.core import PhysicsParams, QubitState
from qtraj.engine import solve_master_equation


def test_projective_readout_examples():
    g = np.random.default_rng(0)
    assert all(ex.projective_readout((1, 0, 0), "x", g) == 1 for _ in range(200))
    assert all(ex.projective_readout(QubitState.from_bloch(0, 0, -1), "z", g) == -1 for _ in range(200))
    draws = np.array([ex.projective_readout((0.75, 0, 0), 0, g) for _ in range(20000)])
    assert abs(draws.mean() - 0.75) < 4 * draws.std() / math.sqrt(draws.size)
    mixed = np.array([ex.projective_readout((0, 0, 0), "y", g) for _ in range(20000)])
    assert abs(mixed.mean()) < 4 / math.sqrt(mixed.size)
    with pytest.raises(ValueError):
        ex.projective_readout((0, 0, 0), "w", g)


def test_readout_outcomes_are_seeded_per_trajectory():
    bloch = np.zeros((6, 3))
    a = ex.readout_outcomes(bloch, 3, range(6))
    b = ex.readout_outcomes(bloch[2:4], 3, [2, 3])
    assert np.array_equal(a[2:4], b)
    assert set(np.unique(a)) <= {-1.0, 1.0}


def test_ensemble_spec_invariants():
    p = PhysicsParams()
    with pytest.raises(ValueError):
        ex.EnsembleSpec(p, 0)
    with pytest.raises(ValueError):
        ex.EnsembleSpec(p, 5, outputs=())
    with pytest.raises(ValueError):
        ex.EnsembleSpec(p, 5, outputs=("movies",))
    with pytest.raises(ValueError):
        ex.EnsembleSpec(p, 5, subset="uw")


def test_presets_and_grid():
    a = ex.preset_params("fig2a")
    assert a.omega / (2 * math.pi) == pytest.approx(0.5)
    assert a.gamma_d == pytest.approx(0.2)
    b = ex.preset_params("fig2b")
    assert b.omega / (2 * math.pi) == pytest.approx(0.0625)
    assert b.gamma_d == pytest.approx(1.111, abs=1e-3)
    z = ex.preset_params("zeno")
    assert z == ex.preset_params("fig1")
    assert z.omega / (2 * math.pi) == pytest.approx(1 / 5.2)
    with pytest.raises(KeyError):
        ex.preset_params("fig9")
    grid = ex.config_grid(10)
    assert len(grid) == 30
    rabi = {s.params.omega / (2 * math.pi) for s in grid}
    gd = [s.params.gamma_d for s in grid]
    assert min(rabi) == 0 and max(rabi) == pytest.approx(0.5)
    assert min(gd) == pytest.approx(1 / 30) and max(gd) == pytest.approx(1 / 0.3)
    assert len({s.config_id for s in grid}) == 30


def test_raw_average_of_frozen_ground_state():
    p = PhysicsParams(omega=0.0, gamma_d=0.2, duration=3.0)
    ra = ex.raw_average_tomography(ex.EnsembleSpec(p, 3000, 7))
    assert ra.absent == ()
    assert np.allclose(ra.me, [0, 0, -1], atol=1e-12)
    assert ra.within(5).mean() >= 0.99
    # nothing but white noise: the measured spread is the predicted one
    ratio = ra.sem / ra.predicted_sem(p)
    assert np.all(np.abs(ratio - 1) < 0.1)


def test_raw_average_reports_absent_columns():
    p = PhysicsParams(omega=1.0, gamma_d=0.0, eta_f=0.0, duration=1.0)
    ra = ex.raw_average_tomography(ex.EnsembleSpec(p, 50, 1))
    assert ra.absent == ("u", "v", "w")
    assert np.all(np.isnan(ra.mean)) and not ra.within().any()


def test_raw_average_is_chunking_independent():
    p = ex.preset_params("fig2a").with_(duration=2.0)
    spec = ex.EnsembleSpec(p, 300, 5)
    a = ex.raw_average_tomography(spec, chunk_size=300)
    b = ex.raw_average_tomography(spec, chunk_size=300, workers=2)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.sem, b.sem)


def test_oscillation_period_of_a_damped_cosine():
    t = np.arange(0.05, 20, 0.1)
    y = -np.cos(2 * math.pi * t / 2.0) * np.exp(-t / 8)
    assert ex.oscillation_period(t, y) == pytest.approx(2.0, abs=0.01)


def test_bin_validation_on_a_calibrated_source():
    g = np.random.default_rng(1)
    c = g.uniform(-1, 1, 200_000)
    o = np.where(g.random(c.size) < (1 + c) / 2, 1.0, -1.0)
    vb = ex.bin_validation(c, o, "x", 1.0)
    assert len(vb.edges) == 201 and vb.edges[0] == -1 and vb.edges[-1] == 1
    assert vb.count.sum() == c.size
    assert abs(vb.fit.slope - 1) < 0.05 and abs(vb.fit.intercept) < 0.02
    k = int(np.floor((0.745 + 1) / 0.01))
    assert abs(vb.mean_outcome[k] - vb.centers[k]) < 4 * vb.sem[k]
    u = vb.used
    # Bernoulli variance of a +-1 outcome with mean c is 1 - c^2
    var = vb.sem[u] ** 2 * vb.count[u]
    assert np.all(np.abs(var - (1 - vb.centers[u] ** 2)) < 0.15)
    with pytest.raises(ValueError):
        ex.bin_validation(c, o, "x", 1.0, bin_width=0.3)


def test_validation_bins_report_empty_bins():
    c = np.full(500, 0.5)
    o = np.ones(500)
    vb = ex.bin_validation(c, o, "z", 1.0)
    assert vb.count.sum() == 500 and (vb.count == 0).sum() == 199
    assert vb.fit is None


def test_unit_efficiency_filter_tracks_the_truth():
    p = ex.preset_params("fig2a").with_(eta_f=1.0, eta_d=1.0, gamma_phi=0.0)
    data = ex.collect_validation_data(ex.EnsembleSpec(p, 4000, 2, outputs=("validation",)), 3.0)
    est = data.filter_final("uvw")
    # only the 0.1 us record binning separates the filter from the truth
    assert np.median(np.abs(est - data.truth)) < 0.06
    for a in range(3):
        vb = ex.bin_validation(est[:, a], data.outcomes[:, a], a, 3.0, bin_width=0.1, min_count=20)
        assert abs(vb.fit.slope - 1) < 3 * vb.fit.slope_se + 0.02


def test_efficiency_sweep_ordering_and_single_point():
    p = ex.preset_params("fig2a")
    data = ex.collect_validation_data(ex.EnsembleSpec(p, 4000, 3), 4.0)
    single = ex.efficiency_sweep(data, [0.14], [0.34])
    assert single.best == (0.14, 0.34) and single.region.all()
    two = ex.efficiency_sweep(data, [0.14, 0.24], [0.34])
    assert two.score[0, 0] < two.score[1, 0]
    assert two.best == (0.14, 0.34)
    with pytest.raises(ValueError):
        ex.efficiency_sweep(data, [0.14, 1.2], [0.34])
    with pytest.raises(ValueError):
        ex.efficiency_sweep(data, [], [0.34])
    assert list(ex.efficiency_grid(0.14, 0.02)) == [0.12, 0.13, 0.14, 0.15, 0.16]


def test_readout_deviance_prefers_the_truth():
    g = np.random.default_rng(4)
    c = g.uniform(-1, 1, (50_000, 3))
    o = np.where(g.random(c.shape) < (1 + c) / 2, 1.0, -1.0)
    assert ex.readout_deviance(c, o) < ex.readout_deviance(0.8 * c, o)
    assert ex.readout_deviance(np.ones(3), np.ones(3)) == pytest.approx(0.0)


def test_state_distribution_conservation_and_initial_bin():
    p = ex.preset_params("zeno").with_(duration=2.0)
    spec = ex.EnsembleSpec(p, 400, 9, subset="w", outputs=("histograms",))
    dist = ex.state_distribution(spec, [0.0, 1.0, 2.0], chunk_size=150)
    for g in dist.grids:
        assert g.total == 400 and g.counts.shape == (61, 61)
    start = dist.grid("xz", 0.0).counts
    i, j = np.unravel_index(np.argmax(start), start.shape)
    assert start[i, j] == 400
    assert dist.grid("xz", 0.0).edges[j] <= -1 + 2 / 61
    yz = dist.grid("yz", 2.0)
    y_zero = np.argmin(np.abs(yz.centers))
    assert yz.counts[y_zero].sum() == 400
    assert np.all(dist.snapshots[:, :, 1] == 0)
    times, bloch = dist.overlay(1.0, t_min=0.2)
    assert times[0] >= 0.2 - 1e-9 and times[-1] <= 1.0 + 1e-9 and bloch.shape == (len(times), 3)
    with pytest.raises(ValueError):
        ex.state_distribution(spec, [2.5])
    with pytest.raises(ValueError):
        ex.state_distribution(spec, [1.0], planes=("xw",))


def test_asymmetry_statistic_controls():
    g = np.random.default_rng(5)
    cloud = g.normal(0, 0.4, (40_000, 2))
    a = ex.asymmetry_statistic(cloud)
    assert abs(a.ratio - 1) < 3 * a.ratio_se
    squeezed = cloud.copy()
    squeezed[squeezed[:, 0] > 0, 1] *= 0.5
    b = ex.asymmetry_statistic(squeezed)
    assert b.ratio == pytest.approx(2, rel=0.05) and b.significance > 10
    flat = np.column_stack([g.uniform(-1, 1, 1000), np.zeros(1000)])
    c = ex.asymmetry_statistic(flat)
    assert c.std_pos == 0 and c.std_neg == 0
    grid = ex.HistogramGrid("xy", 1.0, np.linspace(-1, 1, 62), np.ones((61, 61), dtype=np.int64))
    assert ex.asymmetry_statistic(grid).ratio == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ex.asymmetry_statistic(cloud[np.abs(cloud[:, 0]) < 0.3])


def test_polar_modes_of_a_synthetic_bimodal_grid():
    edges = np.linspace(-1, 1, 62)
    counts = np.zeros((61, 61), dtype=np.int64)
    counts[30, 2] = 400
    counts[30, 58] = 600
    counts[10, 30] = 100
    m = ex.polar_modes(ex.HistogramGrid("xz", 6.5, edges, counts))
    assert m.bimodal()
    assert m.north_mass == pytest.approx(600 / 1100) and m.south_mass == pytest.approx(400 / 1100)
    with pytest.raises(ValueError):
        ex.polar_modes(ex.HistogramGrid("xy", 6.5, edges, counts))


def test_purity_curves_pairing():
    p = ex.preset_params("zeno").with_(duration=2.0)
    pc = ex.purity_curves(ex.EnsembleSpec(p, 300, 4), ("uv", "w"))
    assert pc.subsets == ("uvw", "uv", "w")
    d, se = pc.difference("uvw", 2.0)
    assert d == 0 and se == 0
    d, se = pc.difference("uv", 2.0)
    assert d > 0 and se > 0
    # conditioning on records can only add information over the unconditioned ME
    me = solve_master_equation(p).bloch
    assert np.all(pc.mean[0] >= (1 + np.sum(me**2, axis=1)) / 2 - 1e-9)
