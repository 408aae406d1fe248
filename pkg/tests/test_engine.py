import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtraj import rng
from qtraj.core import PhysicsParams, QubitState, backaction, bloch_components, bloch_of, build_channels
from qtraj.engine import (
    FilterModel,
    RecordSet,
    backaction_map,
    bin_averaged_master_equation,
    drift_map,
    generate,
    generate_batch,
    lindblad_rhs,
    lindblad_step,
    mean_purity,
    reconstruct,
    reconstruct_batch,
    sme_step,
    solve_master_equation,
)

FIG1 = PhysicsParams(omega=2 * math.pi / 5.2, gamma_d=1 / 0.9)


def _ball(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    return v / n * min(n, 1.0) if n > 0 else v


vec = st.tuples(*[st.floats(-1, 1)] * 3).map(_ball)


@given(vec, st.floats(0, 4), st.floats(0, 2), st.sampled_from(["uvw", "uv", "w", "none"]))
def test_bloch_maps_match_matrix_superoperators(r, omega, gamma_d, subset):
    p = PhysicsParams(omega=omega, gamma_d=gamma_d)
    chans = build_channels(p, subset)
    state = QubitState.from_bloch(*r)
    dm = drift_map(omega, chans)
    assert np.allclose(dm.A @ r + dm.c, bloch_components(lindblad_rhs(state.matrix(), omega, chans)), atol=1e-12)
    bm = backaction_map(chans.monitored)
    for k, ch in enumerate(chans.monitored):
        mean = bm.t0[k] + bm.T[k] @ r
        expect = bloch_components(backaction(ch.jump_operator, state))
        assert np.allclose(bm.b0[k] + bm.B[k] @ r - mean * r, expect, atol=1e-12)
        if ch.column is not None:
            coord = r[{"u": 0, "v": 1, "w": 2}[ch.label]]
            assert math.isclose(mean, ch.record_scale * coord, abs_tol=1e-12)


def test_lindblad_closed_forms():
    p = PhysicsParams(gamma_d=0.3, dt_int=0.01, duration=5.0, initial_state=QubitState.from_bloch(1, 0, 0))
    traj = solve_master_equation(p)
    t = traj.times
    assert np.allclose(traj.bloch[:, 0], np.exp(-p.gamma2 * t), rtol=1e-8)
    assert np.allclose(traj.bloch[:, 2], -1 + np.exp(-p.gamma1 * t), rtol=1e-8, atol=1e-12)
    assert lindblad_step(p.initial_state, p, 0.0) is p.initial_state


def test_lindblad_steady_state_of_driven_qubit():
    p = PhysicsParams(omega=1.0, gamma_d=0.5, duration=200.0, dt_int=0.05)
    r = solve_master_equation(p).bloch[-1]
    dm = drift_map(p.omega, build_channels(p, "none"))
    assert np.allclose(r, np.linalg.solve(dm.A, -dm.c), atol=1e-8)


def test_sme_step_without_noise_is_an_euler_step():
    p = PhysicsParams(omega=1.3, gamma_d=0.4)
    chans = build_channels(p, "uvw")
    s = QubitState.from_bloch(0.3, -0.2, 0.5)
    out = sme_step(s, chans, p.omega, 0.01, np.zeros(3))
    expect = s.matrix() + 0.01 * lindblad_rhs(s.matrix(), p.omega, chans)
    assert np.allclose(out.matrix(), expect, atol=1e-14)
    with pytest.raises(ValueError):
        sme_step(s, chans, p.omega, 0.01, np.zeros(2))
    with pytest.raises(ValueError):
        sme_step(s, chans, p.omega, 0.01, [0, np.nan, 0])


@given(vec, st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
def test_sme_step_keeps_states_physical(r, dw):
    p = PhysicsParams(omega=1.0, gamma_d=1.0, eta_f=0.5, eta_d=0.8)
    s = sme_step(QubitState.from_bloch(*r), build_channels(p, "uvw"), p.omega, 0.1, dw)
    assert abs(s.trace - 1) < 1e-12
    assert np.linalg.norm(bloch_of(s)) <= 1 + 1e-12


def test_generation_is_reproducible_and_batch_independent():
    p = FIG1.with_(duration=2.0)
    a = generate_batch(p, 42, range(6))
    b = generate_batch(p, 42, [4, 1])
    assert np.array_equal(a.records[[4, 1]], b.records)
    assert np.array_equal(a.omniscient[[4, 1]], b.omniscient)
    c = generate_batch(p, 43, range(2))
    assert not np.array_equal(a.records[:2], c.records)


def test_noise_blocks_concatenate():
    gens = rng.streams(9, [0, 1])
    whole = rng.normal_block(gens, (10, 3))
    gens = rng.streams(9, [0, 1])
    parts = np.concatenate([rng.normal_block(gens, (4, 3)), rng.normal_block(gens, (6, 3))], axis=1)
    assert np.array_equal(whole, parts)
    assert not np.array_equal(rng.stream(9, 0, rng.DYNAMICS).random(4), rng.stream(9, 0, rng.READOUT).random(4))


def test_ground_state_fluorescence_records_are_pure_noise():
    p = PhysicsParams(omega=0.0, gamma_d=0.0, duration=5.0)
    b = generate_batch(p, 1, range(400))
    uv = b.records[:, :, :2].ravel()
    se = math.sqrt(1 / p.dt_record / uv.size)
    assert abs(uv.mean()) < 5 * se
    assert uv.var() == pytest.approx(1 / p.dt_record, rel=0.03)
    assert np.allclose(b.omniscient[:, :, 2], -1)


def test_omniscient_state_stays_nearly_pure():
    p = FIG1.with_(eta_f=1.0, eta_d=1.0, duration=5.0, dt_int=0.001)
    b = generate_batch(p, 3, range(50))
    assert mean_purity(b.omniscient).min() > 0.98
    with pytest.raises(ValueError):
        generate_batch(p.with_(initial_state=QubitState.from_bloch(0, 0, 0)), 3, [0])


def test_filter_round_trip_and_record_set():
    p = FIG1.with_(duration=4.0)
    omni, recs, filt = generate(p, 5, index=2, corun="uvw", config_id="fig1")
    assert recs.trajectory_seed == (5, 2)
    assert recs.samples.shape == (40, 3)
    assert np.allclose(recs.times[:2], [0.05, 0.15])
    again = reconstruct(recs, p, "uvw")
    assert np.max(np.abs(again.bloch - filt.bloch)) < 1e-12
    assert np.all(omni.purity() <= 1 + 1e-12)
    with pytest.raises(ValueError):
        reconstruct(RecordSet(recs.samples, 0.2), p)
    with pytest.raises(ValueError):
        reconstruct(RecordSet(recs.samples[:-1], 0.1), p)


def test_w_only_filter_never_leaves_xz_plane():
    p = FIG1.with_(duration=5.0)
    b = generate_batch(p, 2, range(20))
    states = reconstruct_batch(b.records, p, "w")
    assert np.abs(states[:, :, 1]).max() == 0.0


def test_uvw_filter_is_purer_than_uv():
    p = FIG1.with_(duration=5.0)
    b = generate_batch(p, 8, range(300))
    full = mean_purity(reconstruct_batch(b.records, p, "uvw")[:, -1]).mean()
    uv = mean_purity(reconstruct_batch(b.records, p, "uv")[:, -1]).mean()
    assert full > uv


def test_filter_mean_tracks_master_equation():
    # a filter matched to the generating model is a martingale for the ME
    p = FIG1.with_(duration=4.0)
    b = generate_batch(p, 4, range(2000))
    me = solve_master_equation(p).bloch
    states = reconstruct_batch(b.records, p, "uvw")
    sem = states.std(axis=0) / math.sqrt(len(states))
    assert np.all(np.abs(states.mean(axis=0) - me) < 4 * sem + 0.01)
    sub = reconstruct_batch(b.records[:5], p, "uvw", FilterModel.build(p, "uvw", "substep"))
    assert np.all(np.linalg.norm(sub, axis=-1) <= 1 + 1e-12)
    with pytest.raises(ValueError):
        FilterModel.build(p, "uvw", "lump")


def test_reconstruct_rejects_bad_records():
    p = FIG1.with_(duration=1.0)
    with pytest.raises(ValueError):
        reconstruct_batch(np.zeros((1, 9, 3)), p, "uvw")
    bad = np.zeros((1, 10, 3))
    bad[0, 3, 1] = np.inf
    with pytest.raises(ValueError):
        reconstruct_batch(bad, p, "uvw")


def test_bin_averaged_reference_is_close_to_boundary_curve():
    p = PhysicsParams(omega=math.pi, gamma_d=0.2, duration=4.0)
    avg = bin_averaged_master_equation(p)
    assert avg.shape == (40, 3)
    fine = solve_master_equation(p.with_(dt_record=0.01)).bloch
    exact = np.array([np.trapezoid(fine[10 * k:10 * k + 11], dx=0.1, axis=0) for k in range(40)])
    # left-point quadrature on the 0.01 us grid: error below h * max|dr/dt| / 2
    assert np.max(np.abs(avg - exact)) < 0.01 * math.pi / 2
