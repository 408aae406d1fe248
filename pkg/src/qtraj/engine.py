"""Time evolution: Lindblad solver, Euler-Maruyama SME stepper, record generator and filter.

Single-state routines (``lindblad_step``, ``sme_step``) work on 2x2 matrices
through the superoperators in :mod:`qtraj.core`.  Ensemble work goes through
numba kernels acting on Bloch vectors; their coefficients are obtained by
evaluating the same matrix superoperators on the Pauli basis, so both routes
share one source of truth for the physics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.linalg import expm

from . import rng
from .core import (
    IDENTITY,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    ChannelSet,
    PhysicsParams,
    QubitState,
    backaction,
    bloch_components,
    bloch_of,
    build_channels,
    dissipator,
    drive_term,
    normalize_matrix,
)

_PAULI_HALF = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z]) / 2
_NOISE_BUDGET = 4_000_000  # doubles per noise block
ZERO3x3 = np.zeros((3, 3))
ZERO3 = np.zeros(3)
FILTER_SCHEMES = ("split", "substep")
INTEGRATORS = ("euler", "milstein")


class SimulationError(RuntimeError):
    pass


@dataclass
class RecordSet:
    """Bin-averaged records of one realization; ``samples[:, j]`` is u, v, w for j = 0, 1, 2."""

    samples: np.ndarray
    dt_record: float
    config_id: str = ""
    trajectory_seed: tuple[int, int] = (0, 0)

    @property
    def n_bins(self) -> int:
        return self.samples.shape[0]

    @property
    def u(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def w(self) -> np.ndarray:
        return self.samples[:, 2]

    @property
    def times(self) -> np.ndarray:
        """Bin centers."""
        return (np.arange(self.n_bins) + 0.5) * self.dt_record


@dataclass
class Trajectory:
    """Bloch vectors at every record-bin boundary, t = 0 included."""

    times: np.ndarray
    bloch: np.ndarray
    subset: str

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> QubitState:
        return QubitState.from_bloch(*self.bloch[i])

    def states(self) -> list[QubitState]:
        return [self.state(i) for i in range(len(self))]

    def purity(self) -> np.ndarray:
        return (1 + np.sum(self.bloch**2, axis=-1)) / 2


# ---------------------------------------------------------------------------
# matrix route


def lindblad_rhs(rho: np.ndarray, omega: float, channels) -> np.ndarray:
    out = drive_term(omega, rho)
    for ch in channels:
        out = out + dissipator(ch.jump_operator, rho)
    return out


def lindblad_step(state: QubitState, params: PhysicsParams, dt: float, channels=None) -> QubitState:
    """One classical Runge-Kutta step of the unconditioned master equation."""
    if dt == 0:
        return state
    if channels is None:
        channels = build_channels(params, "none")
    rho = state.matrix()
    k1 = lindblad_rhs(rho, params.omega, channels)
    k2 = lindblad_rhs(rho + 0.5 * dt * k1, params.omega, channels)
    k3 = lindblad_rhs(rho + 0.5 * dt * k2, params.omega, channels)
    k4 = lindblad_rhs(rho + dt * k3, params.omega, channels)
    return normalize_matrix(rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))


def sme_step(state: QubitState, channels: ChannelSet, omega: float, dt: float, noise) -> QubitState:
    """One Ito Euler-Maruyama step.

    ``noise`` holds one Wiener increment per monitored channel, in the order of
    ``channels.monitored``.  Every channel contributes its dissipator.
    """
    noise = np.asarray(noise, dtype=float).reshape(-1)
    monitored = channels.monitored
    if noise.shape[0] != len(monitored):
        raise ValueError(f"expected {len(monitored)} Wiener increments, got {noise.shape[0]}")
    if not np.all(np.isfinite(noise)):
        raise ValueError("non-finite Wiener increment")
    rho = state.matrix()
    drho = lindblad_rhs(rho, omega, channels) * dt
    for ch, dw in zip(monitored, noise):
        drho = drho + backaction(ch.jump_operator, rho) * dw
    return normalize_matrix(rho + drho)


# ---------------------------------------------------------------------------
# Bloch-vector coefficients


@dataclass(frozen=True)
class DriftMap:
    """Affine Bloch drift ``dr/dt = A r + c`` of drive plus all dissipators."""

    A: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class BackactionMap:
    """Backaction of K channels in Bloch form.

    For channel k, ``comp(M_k rho) = b0[k] + B[k] r - (t0[k] + T[k].r) r`` and
    the expected record increment per unit time is ``t0[k] + T[k].r``.
    """

    b0: np.ndarray
    B: np.ndarray
    t0: np.ndarray
    T: np.ndarray
    labels: tuple[str, ...]

    def __len__(self):
        return len(self.labels)


def drift_map(omega: float, channels) -> DriftMap:
    c = bloch_components(lindblad_rhs(IDENTITY / 2, omega, channels))
    A = np.stack(
        [bloch_components(lindblad_rhs(p, omega, channels)) for p in _PAULI_HALF],
        axis=1,
    )
    return DriftMap(np.ascontiguousarray(A), np.ascontiguousarray(c))


def backaction_map(channels) -> BackactionMap:
    b0, B, t0, T, labels = [], [], [], [], []
    for ch in channels:
        L = ch.jump_operator
        lin = lambda rho: L @ rho + rho @ L.conj().T  # noqa: E731
        b0.append(bloch_components(lin(IDENTITY / 2)))
        B.append(np.stack([bloch_components(lin(p)) for p in _PAULI_HALF], axis=1))
        t0.append(np.trace(lin(IDENTITY / 2)).real)
        T.append([np.trace(lin(p)).real for p in _PAULI_HALF])
        labels.append(ch.label)
    k = len(labels)
    return BackactionMap(
        np.ascontiguousarray(np.reshape(b0, (k, 3)), dtype=float),
        np.ascontiguousarray(np.reshape(B, (k, 3, 3)), dtype=float),
        np.ascontiguousarray(np.reshape(t0, (k,)), dtype=float),
        np.ascontiguousarray(np.reshape(T, (k, 3)), dtype=float),
        tuple(labels),
    )


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True, inline="always")
def _clip_store(r, x, y, z):
    n2 = x * x + y * y + z * z
    if n2 > 1.0:
        n = math.sqrt(n2)
        x /= n
        y /= n
        z /= n
    r[0] = x
    r[1] = y
    r[2] = z


@nb.njit(cache=True, inline="always")
def _euler_update(r, A, c, b0, B, t0, T, dw, h):
    x, y, z = r[0], r[1], r[2]
    nx = x + (A[0, 0] * x + A[0, 1] * y + A[0, 2] * z + c[0]) * h
    ny = y + (A[1, 0] * x + A[1, 1] * y + A[1, 2] * z + c[1]) * h
    nz = z + (A[2, 0] * x + A[2, 1] * y + A[2, 2] * z + c[2]) * h
    for k in range(b0.shape[0]):
        tr = t0[k] + T[k, 0] * x + T[k, 1] * y + T[k, 2] * z
        nx += (b0[k, 0] + B[k, 0, 0] * x + B[k, 0, 1] * y + B[k, 0, 2] * z - tr * x) * dw[k]
        ny += (b0[k, 1] + B[k, 1, 0] * x + B[k, 1, 1] * y + B[k, 1, 2] * z - tr * y) * dw[k]
        nz += (b0[k, 2] + B[k, 2, 0] * x + B[k, 2, 1] * y + B[k, 2, 2] * z - tr * z) * dw[k]
    _clip_store(r, nx, ny, nz)


@nb.njit(cache=True, inline="always")
def _milstein_update(r, A, c, b0, B, t0, T, dw, h, g):
    # commutative-noise Milstein: adds 1/2 sum_kl (g_l . grad) g_k (dW_k dW_l - delta_kl h).
    # The Jacobian of g_k is B_k - tr_k I - r T_k^T; Levy areas are dropped.
    x, y, z = r[0], r[1], r[2]
    K = b0.shape[0]
    Gx = 0.0
    Gy = 0.0
    Gz = 0.0
    for k in range(K):
        tr = t0[k] + T[k, 0] * x + T[k, 1] * y + T[k, 2] * z
        g[k, 0] = b0[k, 0] + B[k, 0, 0] * x + B[k, 0, 1] * y + B[k, 0, 2] * z - tr * x
        g[k, 1] = b0[k, 1] + B[k, 1, 0] * x + B[k, 1, 1] * y + B[k, 1, 2] * z - tr * y
        g[k, 2] = b0[k, 2] + B[k, 2, 0] * x + B[k, 2, 1] * y + B[k, 2, 2] * z - tr * z
        Gx += g[k, 0] * dw[k]
        Gy += g[k, 1] * dw[k]
        Gz += g[k, 2] * dw[k]
    mx = 0.0
    my = 0.0
    mz = 0.0
    for k in range(K):
        tr = t0[k] + T[k, 0] * x + T[k, 1] * y + T[k, 2] * z
        vx = Gx * dw[k] - g[k, 0] * h
        vy = Gy * dw[k] - g[k, 1] * h
        vz = Gz * dw[k] - g[k, 2] * h
        tv = T[k, 0] * vx + T[k, 1] * vy + T[k, 2] * vz
        mx += B[k, 0, 0] * vx + B[k, 0, 1] * vy + B[k, 0, 2] * vz - tr * vx - x * tv
        my += B[k, 1, 0] * vx + B[k, 1, 1] * vy + B[k, 1, 2] * vz - tr * vy - y * tv
        mz += B[k, 2, 0] * vx + B[k, 2, 1] * vy + B[k, 2, 2] * vz - tr * vz - z * tv
    nx = x + (A[0, 0] * x + A[0, 1] * y + A[0, 2] * z + c[0]) * h + Gx + 0.5 * mx
    ny = y + (A[1, 0] * x + A[1, 1] * y + A[1, 2] * z + c[1]) * h + Gy + 0.5 * my
    nz = z + (A[2, 0] * x + A[2, 1] * y + A[2, 2] * z + c[2]) * h + Gz + 0.5 * mz
    _clip_store(r, nx, ny, nz)


@nb.njit(cache=True, inline="always")
def _sde_update(r, A, c, b0, B, t0, T, dw, h, milstein, g):
    """Advance ``r`` by one Ito step; ``g`` is (K, 3) scratch for the diffusion vectors."""
    if milstein:
        _milstein_update(r, A, c, b0, B, t0, T, dw, h, g)
    else:
        _euler_update(r, A, c, b0, B, t0, T, dw, h)


@nb.njit(cache=True, inline="always")
def _filter_bin(r, A, c, b0, B, t0, T, col, samples, n, b, h, n_sub, milstein, dw, g):
    # innovation: record increment minus the filter's own prediction, per sub-step
    for s in range(n_sub):
        for k in range(b0.shape[0]):
            pred = t0[k] + T[k, 0] * r[0] + T[k, 1] * r[1] + T[k, 2] * r[2]
            dw[k] = (samples[n, b, col[k]] - pred) * h
        _sde_update(r, A, c, b0, B, t0, T, dw, h, milstein, g)


@nb.njit(cache=True, inline="always")
def _affine(r, P, q):
    x, y, z = r[0], r[1], r[2]
    for i in range(3):
        r[i] = P[i, 0] * x + P[i, 1] * y + P[i, 2] * z + q[i]


@nb.njit(cache=True, inline="always")
def _filter_bin_split(r, P, q, b0, B, t0, T, col, samples, n, b, dt_record, milstein, dw, g):
    # half-bin exact flow, one measurement update with the whole bin, half-bin flow
    _affine(r, P, q)
    for k in range(b0.shape[0]):
        pred = t0[k] + T[k, 0] * r[0] + T[k, 1] * r[1] + T[k, 2] * r[2]
        dw[k] = (samples[n, b, col[k]] - pred) * dt_record
    _sde_update(r, ZERO3x3, ZERO3, b0, B, t0, T, dw, dt_record, milstein, g)
    _affine(r, P, q)


@nb.njit(cache=True, inline="always")
def _generate_rows(r, fr, gm, read_idx, fm, fcol, split, fmil, xi, h, n_sub, gmil,
                   rec_out, omni_out, filt_out, corun):
    A, c, gb0, gB, gt0, gT = gm
    fA, fc, fP, fq, fb0, fB, ft0, fT = fm
    n_traj = r.shape[0]
    n_bins = rec_out.shape[1]
    K = gb0.shape[0]
    Kf = fb0.shape[0]
    sq = math.sqrt(h)
    dt_record = n_sub * h
    dw = np.empty(K)
    g = np.empty((K, 3))
    fdw = np.empty(Kf)
    fg = np.empty((Kf, 3))
    acc = np.empty(3)
    for n in range(n_traj):
        rn = r[n]
        fn = fr[n]
        for b in range(n_bins):
            acc[:] = 0.0
            for s in range(n_sub):
                row = b * n_sub + s
                for k in range(K):
                    dw[k] = xi[n, row, k] * sq
                for j in range(3):
                    k = read_idx[j]
                    mean = gt0[k] + gT[k, 0] * rn[0] + gT[k, 1] * rn[1] + gT[k, 2] * rn[2]
                    acc[j] += mean * h + dw[k]
                _sde_update(rn, A, c, gb0, gB, gt0, gT, dw, h, gmil, g)
            for j in range(3):
                rec_out[n, b, j] = acc[j] / dt_record
            if not (math.isfinite(rn[0]) and math.isfinite(rn[1]) and math.isfinite(rn[2])):
                return n * n_bins + b
            omni_out[n, b, 0] = rn[0]
            omni_out[n, b, 1] = rn[1]
            omni_out[n, b, 2] = rn[2]
            if corun:
                if split:
                    _filter_bin_split(fn, fP, fq, fb0, fB, ft0, fT, fcol, rec_out, n, b,
                                      dt_record, fmil, fdw, fg)
                else:
                    _filter_bin(fn, fA, fc, fb0, fB, ft0, fT, fcol, rec_out, n, b, h, n_sub,
                                fmil, fdw, fg)
                filt_out[n, b, 0] = fn[0]
                filt_out[n, b, 1] = fn[1]
                filt_out[n, b, 2] = fn[2]
    return -1


@nb.njit(cache=True)
def _generate_kernel(r, fr, gm, read_idx, fm, fcol, split, fmil, xi, h, n_sub, gmil,
                     rec_out, omni_out, filt_out, corun):
    # literal flags let numba prune the integrator branch out of the hot loop
    if gmil:
        return _generate_rows(r, fr, gm, read_idx, fm, fcol, split, fmil, xi, h, n_sub, True,
                              rec_out, omni_out, filt_out, corun)
    return _generate_rows(r, fr, gm, read_idx, fm, fcol, split, fmil, xi, h, n_sub, False,
                          rec_out, omni_out, filt_out, corun)


@nb.njit(cache=True, inline="always")
def _reconstruct_rows(r, fm, col, samples, h, n_sub, split, milstein, out):
    A, c, P, q, b0, B, t0, T = fm
    n_traj = samples.shape[0]
    n_bins = samples.shape[1]
    Kf = b0.shape[0]
    dw = np.empty(Kf)
    g = np.empty((Kf, 3))
    rn = np.empty(3)
    for n in range(n_traj):
        rn[:] = r[n]
        for b in range(n_bins):
            if split:
                _filter_bin_split(rn, P, q, b0, B, t0, T, col, samples, n, b, h * n_sub,
                                  milstein, dw, g)
            else:
                _filter_bin(rn, A, c, b0, B, t0, T, col, samples, n, b, h, n_sub, milstein, dw, g)
            if not (math.isfinite(rn[0]) and math.isfinite(rn[1]) and math.isfinite(rn[2])):
                return n * n_bins + b
            out[n, b, 0] = rn[0]
            out[n, b, 1] = rn[1]
            out[n, b, 2] = rn[2]
    return -1


@nb.njit(cache=True)
def _reconstruct_kernel(r, fm, col, samples, h, n_sub, split, milstein, out):
    if split:
        if milstein:
            return _reconstruct_rows(r, fm, col, samples, h, n_sub, True, True, out)
        return _reconstruct_rows(r, fm, col, samples, h, n_sub, True, False, out)
    if milstein:
        return _reconstruct_rows(r, fm, col, samples, h, n_sub, False, True, out)
    return _reconstruct_rows(r, fm, col, samples, h, n_sub, False, False, out)


# ---------------------------------------------------------------------------
# ensemble-level API


@dataclass
class FilterModel:
    """Compiled coefficients for filtering records with one detector subset.

    ``scheme="split"`` applies each bin's innovation in a single Ito increment
    between two exact half-bin flows of the master equation.  ``"substep"``
    spreads the innovation evenly over the integrator sub-steps; that keeps the
    drift on the fine grid but hands the filter only 1/n_sub of the bin's
    quadratic variation, which leaves it biased toward the mixed state.
    """

    subset: str
    scheme: str
    integrator: str
    drift: DriftMap
    half_flow: tuple[np.ndarray, np.ndarray]
    maps: BackactionMap
    columns: np.ndarray

    @classmethod
    def build(cls, params: PhysicsParams, subset: str, scheme: str = "split",
              integrator: str = "euler") -> FilterModel:
        if scheme not in FILTER_SCHEMES:
            raise ValueError(f"unknown filter scheme {scheme!r}; expected one of {FILTER_SCHEMES}")
        _check_integrator(integrator)
        chans = build_channels(params, subset)
        mon = chans.monitored
        drift = drift_map(params.omega, chans)
        return cls(
            subset,
            scheme,
            integrator,
            drift,
            affine_flow(drift, params.dt_record / 2),
            backaction_map(mon),
            np.array([ch.column for ch in mon], dtype=np.int64),
        )

    @property
    def split(self) -> bool:
        return self.scheme == "split"

    @property
    def milstein(self) -> bool:
        return self.integrator == "milstein"

    @property
    def packed(self) -> tuple:
        m = self.maps
        return (self.drift.A, self.drift.c, *self.half_flow, m.b0, m.B, m.t0, m.T)


def _check_integrator(name: str) -> None:
    if name not in INTEGRATORS:
        raise ValueError(f"unknown integrator {name!r}; expected one of {INTEGRATORS}")


def affine_flow(drift: DriftMap, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact propagator ``r -> P r + q`` of ``dr/dt = A r + c`` over time ``tau``."""
    aug = np.zeros((4, 4))
    aug[:3, :3] = drift.A
    aug[:3, 3] = drift.c
    prop = expm(aug * tau)
    return np.ascontiguousarray(prop[:3, :3]), np.ascontiguousarray(prop[:3, 3])


@dataclass
class GeneratedBatch:
    indices: np.ndarray
    records: np.ndarray  # (n, n_bins, 3)
    omniscient: np.ndarray  # (n, n_bins + 1, 3)
    filtered: np.ndarray | None  # (n, n_bins + 1, 3) from the co-run filter


def _initial_bloch(params: PhysicsParams, n: int) -> np.ndarray:
    return np.tile(np.array(bloch_of(params.initial_state), dtype=float), (n, 1))


def _raise_failure(code: int, n_bins: int, indices, what: str) -> None:
    if code >= 0:
        n, b = divmod(code, n_bins)
        raise SimulationError(f"{what}: non-finite state in trajectory {indices[n]} at bin {b}")


def generate_batch(
    params: PhysicsParams, master_seed: int, indices, corun: str | None = None,
    filter_model: FilterModel | None = None, integrator: str = "milstein",
) -> GeneratedBatch:
    """Generate omniscient trajectories and their u, v, w records.

    Every decoherence branch (read, loss and unread dephasing) is unraveled
    diffusively with its own Wiener increment, so the omniscient state of a
    pure initial state stays pure.  Read-channel samples use the very
    increments that drive the state.  With ``corun`` set to a detector subset a
    filter runs alongside, consuming each bin's samples as soon as the bin closes.
    """
    indices = np.asarray(indices, dtype=np.int64)
    x0, y0, z0 = bloch_of(params.initial_state)
    if abs(x0 * x0 + y0 * y0 + z0 * z0 - 1) > 1e-9:
        raise ValueError("record generation needs a pure initial state")
    full = build_channels(params, "uvw", omniscient=True)
    drift = drift_map(params.omega, full)
    gmap = backaction_map(full.monitored)
    read_idx = np.array([gmap.labels.index(lbl) for lbl in ("u", "v", "w")], dtype=np.int64)
    _check_integrator(integrator)
    fmodel = filter_model or FilterModel.build(params, corun or "uvw")

    n, n_bins, n_sub = len(indices), params.n_bins, params.n_sub
    h = params.dt_record / n_sub
    K = len(gmap)
    records = np.empty((n, n_bins, 3))
    omni = np.empty((n, n_bins + 1, 3))
    filt = np.empty((n, n_bins + 1, 3))
    r = _initial_bloch(params, n)
    fr = r.copy()
    omni[:, 0] = r
    filt[:, 0] = r

    gens = rng.streams(master_seed, indices, rng.DYNAMICS)
    bins_per_block = max(1, _NOISE_BUDGET // max(1, n * n_sub * K))
    for b0 in range(0, n_bins, bins_per_block):
        b1 = min(n_bins, b0 + bins_per_block)
        xi = rng.normal_block(gens, ((b1 - b0) * n_sub, K))
        code = _generate_kernel(
            r, fr, (drift.A, drift.c, gmap.b0, gmap.B, gmap.t0, gmap.T), read_idx,
            fmodel.packed, fmodel.columns, fmodel.split, fmodel.milstein,
            xi, h, n_sub, integrator == "milstein",
            records[:, b0:b1], omni[:, b0 + 1:b1 + 1], filt[:, b0 + 1:b1 + 1],
            corun is not None,
        )
        _raise_failure(code, b1 - b0, indices, "generate")
    return GeneratedBatch(indices, records, omni, filt if corun is not None else None)


def reconstruct_batch(samples: np.ndarray, params: PhysicsParams, subset: str,
                      model: FilterModel | None = None) -> np.ndarray:
    """Filter stacked records ``(n, n_bins, 3)``; returns Bloch vectors ``(n, n_bins + 1, 3)``."""
    samples = np.ascontiguousarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[None]
    if samples.shape[1] != params.n_bins or samples.shape[2] != 3:
        raise ValueError(
            f"records of shape {samples.shape[1:]} do not match ({params.n_bins}, 3) bins x columns"
        )
    if not np.all(np.isfinite(samples)):
        raise ValueError("non-finite record sample")
    if model is None:
        model = FilterModel.build(params, subset)
    n = samples.shape[0]
    out = np.empty((n, params.n_bins + 1, 3))
    r = _initial_bloch(params, n)
    out[:, 0] = r
    h = params.dt_record / params.n_sub
    code = _reconstruct_kernel(
        r, model.packed, model.columns, samples, h, params.n_sub, model.split, model.milstein, out[:, 1:],
    )
    _raise_failure(code, params.n_bins, np.arange(n), "reconstruct")
    return out


def record_times(params: PhysicsParams) -> np.ndarray:
    return np.arange(params.n_bins + 1) * params.dt_record


def generate(params: PhysicsParams, seed: int, index: int = 0, corun: str | None = None,
             config_id: str = "", **kwargs):
    """One realization: ``(omniscient Trajectory, RecordSet)``, plus the co-run filter if asked."""
    batch = generate_batch(params, seed, [index], corun=corun, **kwargs)
    t = record_times(params)
    traj = Trajectory(t, batch.omniscient[0], "omniscient")
    recs = RecordSet(batch.records[0], params.dt_record, config_id, (int(seed), int(index)))
    if corun is None:
        return traj, recs
    return traj, recs, Trajectory(t, batch.filtered[0], corun)


def reconstruct(records: RecordSet, params: PhysicsParams, subset: str = "uvw",
                model: FilterModel | None = None) -> Trajectory:
    if abs(records.dt_record - params.dt_record) > 1e-12:
        raise ValueError(f"record bin {records.dt_record} us does not match params {params.dt_record} us")
    if records.n_bins != params.n_bins:
        raise ValueError(f"record length {records.n_bins} does not match {params.n_bins} bins")
    bloch = reconstruct_batch(records.samples, params, subset, model)[0]
    return Trajectory(record_times(params), bloch, subset)


def solve_master_equation(params: PhysicsParams, substeps: bool = False) -> Trajectory:
    """Unconditioned evolution by RK4 at ``dt_int``.

    Returns states at record-bin boundaries, or at every integrator step when
    ``substeps`` is true.
    """
    chans = build_channels(params, "none")
    n_sub, n_bins = params.n_sub, params.n_bins
    h = params.dt_record / n_sub
    out = np.empty((n_bins * n_sub + 1, 3))
    state = params.initial_state
    out[0] = bloch_of(state)
    for i in range(1, n_bins * n_sub + 1):
        state = lindblad_step(state, params, h, chans)
        out[i] = bloch_of(state)
    if substeps:
        return Trajectory(np.arange(n_bins * n_sub + 1) * h, out, "none")
    return Trajectory(record_times(params), out[::n_sub], "none")


def bin_averaged_master_equation(params: PhysicsParams) -> np.ndarray:
    """Master-equation Bloch vector averaged over each record bin ``(n_bins, 3)``.

    Uses the integrator grid's left points, matching how a record sample
    accumulates the coordinate over its bin.
    """
    fine = solve_master_equation(params, substeps=True).bloch[:-1]
    return fine.reshape(params.n_bins, params.n_sub, 3).mean(axis=1)


def mean_purity(bloch: np.ndarray) -> np.ndarray:
    return (1 + np.sum(bloch**2, axis=-1)) / 2

