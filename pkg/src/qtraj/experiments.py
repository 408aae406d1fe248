"""Ensemble statistics over many simulated trajectories.

Every experiment runs through :func:`qtraj.batch.reduce_chunks`, so it can be
split across processes without changing a single output bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import partial
from importlib import resources

import numpy as np
from scipy.ndimage import uniform_filter

from . import batch, rng
from .core import SUBSETS, PhysicsParams, QubitState, bloch_of, build_channels
from .engine import (
    FilterModel,
    bin_averaged_master_equation,
    generate_batch,
    mean_purity,
    reconstruct_batch,
    record_times,
)

OUTPUTS = ("raw_average", "validation", "histograms", "purity_curve")
AXES = ("x", "y", "z")
PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}

HIST_BINS = 61
VALIDATION_BIN = 0.01
MIN_BIN_COUNT = 50
ASYMMETRY_X0 = 0.3
DELTA_CHI2_1SIGMA_2D = 2.30  # 68.3% region for two jointly fitted parameters


# ---------------------------------------------------------------------------
# presets


def load_presets() -> dict:
    with resources.files("qtraj").joinpath("presets.json").open() as fh:
        return json.load(fh)


def preset_params(name: str, base: PhysicsParams | None = None) -> PhysicsParams:
    named = load_presets()["named"]
    if name not in named:
        raise KeyError(f"unknown preset {name!r}; known presets: {sorted(named)}")
    entry = named[name]
    return (base or PhysicsParams()).with_(
        omega=2 * math.pi * entry["rabi_per_us"], gamma_d=entry["gamma_d_per_us"]
    )


@dataclass(frozen=True)
class EnsembleSpec:
    params: PhysicsParams
    n_traj: int
    master_seed: int = 0
    subset: str = "uvw"
    outputs: tuple[str, ...] = ("raw_average",)
    config_id: str = ""

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError(f"n_traj must be at least 1, got {self.n_traj}")
        if self.subset not in SUBSETS:
            raise ValueError(f"unknown detector subset {self.subset!r}")
        if not self.outputs:
            raise ValueError("an ensemble needs at least one requested output")
        bad = [o for o in self.outputs if o not in OUTPUTS]
        if bad:
            raise ValueError(f"unknown outputs {bad}; expected some of {OUTPUTS}")

    def with_(self, **changes) -> EnsembleSpec:
        return replace(self, **changes)


def config_grid(n_traj: int = 1000, master_seed: int = 0,
                base: PhysicsParams | None = None) -> list[EnsembleSpec]:
    """The 5 x 6 (drive, dephasing) grid from the bundled preset file."""
    grid = load_presets()["grid"]
    base = base or PhysicsParams()
    specs = []
    for i, rabi in enumerate(grid["rabi_per_us"]):
        for j, gd in enumerate(grid["gamma_d_per_us"]):
            p = base.with_(omega=2 * math.pi * rabi, gamma_d=gd)
            specs.append(EnsembleSpec(p, n_traj, master_seed, config_id=f"grid-{i}-{j}"))
    return specs


# ---------------------------------------------------------------------------
# raw-average tomography


@dataclass
class _Moments:
    n: int
    s1: np.ndarray
    s2: np.ndarray

    def __add__(self, other: _Moments) -> _Moments:
        return _Moments(self.n + other.n, self.s1 + other.s1, self.s2 + other.s2)

    @classmethod
    def of(cls, a: np.ndarray) -> _Moments:
        return cls(a.shape[0], a.sum(axis=0), (a * a).sum(axis=0))

    def mean(self) -> np.ndarray:
        return self.s1 / self.n

    def sem(self) -> np.ndarray:
        if self.n < 2:
            return np.full_like(self.s1, np.nan)
        var = (self.s2 - self.s1**2 / self.n) / (self.n - 1)
        return np.sqrt(np.maximum(var, 0) / self.n)


@dataclass
class RawAverage:
    """Rescaled record means ``(n_bins, 3)`` for columns u, v, w.

    Columns whose record scale is zero are absent: listed in ``absent`` and
    filled with NaN.
    """

    times: np.ndarray
    mean: np.ndarray
    sem: np.ndarray
    me: np.ndarray
    n_traj: int
    absent: tuple[str, ...]

    def within(self, n_se: float = 5.0) -> np.ndarray:
        """Boolean ``(n_bins, 3)``: |mean - ME| < n_se standard errors (False for absent)."""
        with np.errstate(invalid="ignore"):
            return np.abs(self.mean - self.me) < n_se * self.sem

    def predicted_sem(self, params: PhysicsParams) -> np.ndarray:
        """White-noise standard error of each rescaled column, ignoring state spread."""
        scales = _record_scales(params)
        with np.errstate(divide="ignore"):
            return 1 / (np.abs(scales) * math.sqrt(params.dt_record * self.n_traj))


def _record_scales(params: PhysicsParams) -> np.ndarray:
    chans = build_channels(params, "uvw")
    return np.array([chans[c].record_scale for c in ("u", "v", "w")])


def _record_moments(spec: EnsembleSpec, start: int, stop: int) -> _Moments:
    b = generate_batch(spec.params, spec.master_seed, range(start, stop))
    return _Moments.of(b.records)


def raw_average_tomography(spec: EnsembleSpec, workers: int = 1,
                           chunk_size: int = batch.CHUNK_SIZE) -> RawAverage:
    p = spec.params
    mom = batch.reduce_chunks(partial(_record_moments, spec), _add, spec.n_traj, workers, chunk_size)
    scales = _record_scales(p)
    absent = tuple(c for c, s in zip("uvw", scales) if s == 0)
    safe = np.where(scales == 0, np.nan, scales)
    mean = mom.mean() / safe
    sem = mom.sem() / np.abs(safe)
    times = (np.arange(p.n_bins) + 0.5) * p.dt_record
    return RawAverage(times, mean, sem, bin_averaged_master_equation(p), mom.n, absent)


def _add(a, b):
    return a + b


def oscillation_period(times: np.ndarray, signal: np.ndarray, t_max: float | None = None,
                       min_gap: float | None = None) -> float:
    """Period from the spacing of zero crossings.

    Crossings closer than ``min_gap`` (default: four samples) are merged, which
    suppresses noise chatter around each crossing.  The half-period is the slope
    of a straight line through crossing time versus crossing number.
    """
    t = np.asarray(times, dtype=float)
    s = np.asarray(signal, dtype=float)
    if t_max is not None:
        keep = t <= t_max
        t, s = t[keep], s[keep]
    if min_gap is None:
        min_gap = 4 * float(np.median(np.diff(t)))
    idx = np.nonzero(np.signbit(s[:-1]) != np.signbit(s[1:]))[0]
    crossings = t[idx] - s[idx] * (t[idx + 1] - t[idx]) / (s[idx + 1] - s[idx])
    merged: list[list[float]] = []
    for c in crossings:
        if merged and c - merged[-1][-1] < min_gap:
            merged[-1].append(c)
        else:
            merged.append([c])
    if len(merged) < 2:
        raise ValueError("fewer than two zero crossings; cannot estimate a period")
    centres = np.array([np.mean(m) for m in merged])
    half = np.polyfit(np.arange(len(centres)), centres, 1)[0]
    return 2 * half


# ---------------------------------------------------------------------------
# projective readout and validation


def projective_readout(state, axis, generator: np.random.Generator) -> int:
    """Ideal strong measurement of one Pauli operator: +1 with probability (1 + r_axis)/2."""
    a = _axis_index(axis)
    r = bloch_of(state) if isinstance(state, QubitState) else np.asarray(state, dtype=float)
    return 1 if generator.random() < (1 + r[a]) / 2 else -1


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        if axis not in AXES:
            raise ValueError(f"unknown axis {axis!r}")
        return AXES.index(axis)
    if axis not in (0, 1, 2):
        raise ValueError(f"unknown axis {axis!r}")
    return int(axis)


def readout_outcomes(bloch: np.ndarray, master_seed: int, indices) -> np.ndarray:
    """One ideal +-1 readout per axis for each trajectory, ``(n, 3)``.

    Each trajectory draws from its own readout stream, independent of the
    stream that drove its dynamics.
    """
    u = np.array([rng.stream(master_seed, i, rng.READOUT).random(3) for i in indices])
    return np.where(u < (1 + np.asarray(bloch)) / 2, 1.0, -1.0)


@dataclass
class ValidationData:
    """Records up to ``T`` together with ideal readouts of the omniscient state at ``T``."""

    params: PhysicsParams
    records: np.ndarray  # (n, n_bins, 3)
    outcomes: np.ndarray  # (n, 3)
    truth: np.ndarray  # omniscient Bloch vector at T, (n, 3)

    @property
    def T(self) -> float:
        return self.params.duration

    def filter_final(self, subset: str = "uvw", params: PhysicsParams | None = None,
                     chunk: int = 10_000) -> np.ndarray:
        """Final filter coordinates ``(n, 3)`` for the given subset and filter parameters."""
        p = params or self.params
        model = FilterModel.build(p, subset)
        out = np.empty((len(self.records), 3))
        for a in range(0, len(self.records), chunk):
            out[a:a + chunk] = reconstruct_batch(self.records[a:a + chunk], p, subset, model)[:, -1]
        return out


def _validation_chunk(params: PhysicsParams, seed: int, start: int, stop: int):
    b = generate_batch(params, seed, range(start, stop))
    final = b.omniscient[:, -1]
    return b.records, readout_outcomes(final, seed, range(start, stop)), final


def collect_validation_data(spec: EnsembleSpec, T: float, workers: int = 1,
                            chunk_size: int = batch.CHUNK_SIZE) -> ValidationData:
    if not 0 < T <= spec.params.duration + 1e-9:
        raise ValueError(f"validation time {T} us outside (0, {spec.params.duration}]")
    p = spec.params.with_(duration=T)
    parts = list(batch.map_chunks(partial(_validation_chunk, p, spec.master_seed), spec.n_traj,
                                  workers, chunk_size))
    return ValidationData(
        p,
        np.concatenate([a for a, _, _ in parts]),
        np.concatenate([o for _, o, _ in parts]),
        np.concatenate([f for _, _, f in parts]),
    )


@dataclass
class LinearFit:
    slope: float
    intercept: float
    slope_se: float
    intercept_se: float
    chi2: float
    dof: int


@dataclass
class ValidationBins:
    axis: str
    T: float
    bin_width: float
    edges: np.ndarray
    count: np.ndarray
    mean_outcome: np.ndarray
    sem: np.ndarray
    mean_coordinate: np.ndarray
    min_count: int = MIN_BIN_COUNT
    fit: LinearFit | None = None

    @property
    def centers(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2

    @property
    def used(self) -> np.ndarray:
        return (self.count >= self.min_count) & (self.sem > 0)

    def identity_chi2(self) -> float:
        """Chi-square of the binned means against the ideal line ``outcome = coordinate``."""
        u = self.used
        return float(np.sum(((self.mean_outcome[u] - self.mean_coordinate[u]) / self.sem[u]) ** 2))


def _bin_edges(bin_width: float) -> np.ndarray:
    n = round(2 / bin_width)
    if n < 1 or abs(n * bin_width - 2) > 1e-9:
        raise ValueError(f"bin width {bin_width} does not partition [-1, 1]")
    return np.linspace(-1, 1, n + 1)


def bin_validation(coordinate: np.ndarray, outcome: np.ndarray, axis, T: float,
                   bin_width: float = VALIDATION_BIN, min_count: int = MIN_BIN_COUNT) -> ValidationBins:
    """Group ideal readouts by the filter's coordinate and fit mean outcome against bin centre."""
    edges = _bin_edges(bin_width)
    nb = len(edges) - 1
    k = np.clip(np.floor((np.asarray(coordinate) + 1) / bin_width).astype(np.int64), 0, nb - 1)
    count = np.bincount(k, minlength=nb)
    s1 = np.bincount(k, outcome, minlength=nb)
    s2 = np.bincount(k, outcome * outcome, minlength=nb)
    sc = np.bincount(k, coordinate, minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / count
        var = (s2 - s1 * s1 / count) / (count - 1)
        sem = np.sqrt(np.maximum(var, 0) / count)
        mc = sc / count
    vb = ValidationBins(_axis_name(axis), T, bin_width, edges, count, mean, sem, mc, min_count)
    vb.fit = weighted_line_fit(vb.centers[vb.used], mean[vb.used], sem[vb.used])
    return vb


def _axis_name(axis) -> str:
    return AXES[_axis_index(axis)]


def weighted_line_fit(x: np.ndarray, y: np.ndarray, sigma: np.ndarray) -> LinearFit | None:
    if len(x) < 3:
        return None
    w = 1 / sigma**2
    S, Sx, Sy = w.sum(), (w * x).sum(), (w * y).sum()
    Sxx, Sxy = (w * x * x).sum(), (w * x * y).sum()
    det = S * Sxx - Sx * Sx
    if det <= 0:
        return None
    slope = (S * Sxy - Sx * Sy) / det
    icpt = (Sxx * Sy - Sx * Sxy) / det
    chi2 = float(np.sum(w * (y - icpt - slope * x) ** 2))
    return LinearFit(float(slope), float(icpt), math.sqrt(S / det), math.sqrt(Sxx / det), chi2, len(x) - 2)


def validate_tomography(spec: EnsembleSpec, axis, T: float = 10.0, bin_width: float = VALIDATION_BIN,
                        *, data: ValidationData | None = None, filter_params: PhysicsParams | None = None,
                        workers: int = 1) -> ValidationBins:
    """Binned comparison of the filter's coordinate at ``T`` with ideal readouts of the truth.

    The filter sees only the records of ``spec.subset``; readouts are drawn from
    the omniscient state.  Pass ``filter_params`` to run a deliberately
    mis-specified filter, and ``data`` to reuse one simulated ensemble.
    """
    if data is None:
        data = collect_validation_data(spec, T, workers)
    elif abs(data.T - T) > 1e-9:
        raise ValueError(f"validation data ends at {data.T} us, not {T} us")
    fp = None if filter_params is None else filter_params.with_(duration=data.T)
    a = _axis_index(axis)
    coord = data.filter_final(spec.subset, fp)[:, a]
    return bin_validation(coord, data.outcomes[:, a], a, T, bin_width)


# ---------------------------------------------------------------------------
# efficiency sweep


@dataclass
class SweepResult:
    eta_f: np.ndarray
    eta_d: np.ndarray
    score: np.ndarray  # (len(eta_f), len(eta_d)) readout deviance
    best: tuple[float, float]
    region: np.ndarray  # boolean mask of points within the 1-sigma contour

    def contains(self, eta_f: float, eta_d: float) -> bool:
        i = int(np.argmin(np.abs(self.eta_f - eta_f)))
        j = int(np.argmin(np.abs(self.eta_d - eta_d)))
        return bool(self.region[i, j])

    def region_bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        ii, jj = np.nonzero(self.region)
        return ((float(self.eta_f[ii.min()]), float(self.eta_f[ii.max()])),
                (float(self.eta_d[jj.min()]), float(self.eta_d[jj.max()])))


def efficiency_grid(center: float, half_width: float, step: float = 0.01) -> np.ndarray:
    n = round(half_width / step)
    return np.round(center + step * np.arange(-n, n + 1), 10)


def readout_deviance(coords: np.ndarray, outcomes: np.ndarray) -> float:
    """-2 log-likelihood of ideal +-1 readouts given predicted coordinates.

    A readout of a state with coordinate c gives +1 with probability
    (1 + c)/2, so differences of this score between candidate filters are
    likelihood-ratio statistics.
    """
    p = np.clip((1 + outcomes * coords) / 2, 1e-12, 1.0)
    return float(-2 * np.log(p).sum())


def efficiency_sweep(data: ValidationData, eta_f_grid, eta_d_grid, subset: str = "uvw") -> SweepResult:
    """Score each candidate efficiency pair by how well the refiltered states predict the readouts.

    Every grid point reruns the filter on the same records and scores its
    final coordinates on all three axes with :func:`readout_deviance`.  Points
    within 2.30 of the minimum form the joint 1-sigma region.
    """
    ef = np.asarray(eta_f_grid, dtype=float)
    ed = np.asarray(eta_d_grid, dtype=float)
    if ef.size == 0 or ed.size == 0:
        raise ValueError("efficiency grid is empty")
    if ef.min() < 0 or ef.max() > 1 or ed.min() < 0 or ed.max() > 1:
        raise ValueError("efficiency grid must lie inside [0, 1] x [0, 1]")
    score = np.empty((ef.size, ed.size))
    for i, f in enumerate(ef):
        for j, d in enumerate(ed):
            coords = data.filter_final(subset, data.params.with_(eta_f=float(f), eta_d=float(d)))
            score[i, j] = readout_deviance(coords, data.outcomes)
    i, j = np.unravel_index(int(np.argmin(score)), score.shape)
    region = score <= score[i, j] + DELTA_CHI2_1SIGMA_2D
    return SweepResult(ef, ed, score, (float(ef[i]), float(ed[j])), region)


# ---------------------------------------------------------------------------
# state distributions


@dataclass
class HistogramGrid:
    plane: str
    tau: float
    edges: np.ndarray
    counts: np.ndarray  # (n_bins, n_bins), first index along the plane's first axis

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    @property
    def centers(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: HistogramGrid) -> HistogramGrid:
        if (self.plane, self.tau) != (other.plane, other.tau):
            raise ValueError("cannot merge histograms of different planes or times")
        return HistogramGrid(self.plane, self.tau, self.edges, self.counts + other.counts)


@dataclass
class StateDistribution:
    subset: str
    times: np.ndarray
    taus: tuple[float, ...]
    grids: list[HistogramGrid]
    mean_bloch: np.ndarray  # (n_times, 3) ensemble mean of the reconstructed states
    snapshots: np.ndarray  # (n, len(taus), 3) reconstructed states at each tau

    def grid(self, plane: str, tau: float) -> HistogramGrid:
        for g in self.grids:
            if g.plane == plane and abs(g.tau - tau) < 1e-9:
                return g
        raise KeyError((plane, tau))

    def overlay(self, tau: float, t_min: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Mean trajectory for ``t_min <= t <= tau``: ``(times, bloch)``."""
        keep = (self.times >= t_min - 1e-9) & (self.times <= tau + 1e-9)
        return self.times[keep], self.mean_bloch[keep]


def _tau_indices(params: PhysicsParams, taus) -> list[int]:
    out = []
    for tau in taus:
        if tau < 0 or tau > params.duration + 1e-9:
            raise ValueError(f"tau={tau} us is outside [0, {params.duration}]")
        k = round(tau / params.dt_record)
        if abs(k * params.dt_record - tau) > 1e-9:
            raise ValueError(f"tau={tau} us is not on the record grid of {params.dt_record} us")
        out.append(k)
    return out


def _histogram(points: np.ndarray, plane: str, tau: float, n_bins: int) -> HistogramGrid:
    i, j = PLANES[plane]
    edges = np.linspace(-1, 1, n_bins + 1)
    counts, _, _ = np.histogram2d(np.clip(points[:, i], -1, 1), np.clip(points[:, j], -1, 1),
                                  bins=(edges, edges))
    return HistogramGrid(plane, float(tau), edges, counts.astype(np.int64))


@dataclass
class _DistPart:
    grids: list[HistogramGrid]
    bloch_sum: np.ndarray
    n: int
    snapshots: np.ndarray

    def __add__(self, other: _DistPart) -> _DistPart:
        return _DistPart(
            [a + b for a, b in zip(self.grids, other.grids)],
            self.bloch_sum + other.bloch_sum,
            self.n + other.n,
            np.concatenate([self.snapshots, other.snapshots]),
        )


def _distribution_chunk(spec: EnsembleSpec, taus, planes, n_bins, start, stop) -> _DistPart:
    p = spec.params
    b = generate_batch(p, spec.master_seed, range(start, stop))
    states = reconstruct_batch(b.records, p, spec.subset)
    ks = _tau_indices(p, taus)
    grids = [_histogram(states[:, k], pl, tau, n_bins) for tau, k in zip(taus, ks) for pl in planes]
    return _DistPart(grids, states.sum(axis=0), len(states), states[:, ks].copy())


def state_distribution(spec: EnsembleSpec, taus, planes=("xy", "xz", "yz"), n_bins: int = HIST_BINS,
                       workers: int = 1, chunk_size: int = batch.CHUNK_SIZE) -> StateDistribution:
    """Histograms of the reconstructed states of ``spec.subset`` at each time in ``taus``."""
    taus = tuple(float(t) for t in taus)
    _tau_indices(spec.params, taus)
    for pl in planes:
        if pl not in PLANES:
            raise ValueError(f"unknown plane {pl!r}; expected one of {tuple(PLANES)}")
    part = batch.reduce_chunks(
        partial(_distribution_chunk, spec, taus, tuple(planes), n_bins), _add, spec.n_traj,
        workers, chunk_size,
    )
    return StateDistribution(spec.subset, record_times(spec.params), taus, part.grids,
                             part.bloch_sum / part.n, part.snapshots)


@dataclass
class PolarModes:
    """Hemisphere modes of a histogram in a plane containing z.

    ``*_peak`` is the most populated (3 x 3 smoothed) cell of each hemisphere,
    ``*_mass`` the fraction of states within ``radius`` of that pole and
    ``*_basin`` the fraction in the hemisphere.
    """

    north_peak: tuple[float, float]
    south_peak: tuple[float, float]
    north_mass: float
    south_mass: float
    north_basin: float
    south_basin: float
    radius: float

    @property
    def north_distance(self) -> float:
        return math.hypot(self.north_peak[0], self.north_peak[1] - 1)

    @property
    def south_distance(self) -> float:
        return math.hypot(self.south_peak[0], self.south_peak[1] + 1)

    def bimodal(self, min_mass: float = 0.15) -> bool:
        return (self.north_distance <= self.radius and self.south_distance <= self.radius
                and self.north_mass > min_mass and self.south_mass > min_mass)


def polar_modes(grid: HistogramGrid, radius: float = 0.25) -> PolarModes:
    if grid.plane not in ("xz", "yz"):
        raise ValueError("polar modes need a plane that contains the z axis")
    c = grid.centers
    a, z = np.meshgrid(c, c, indexing="ij")
    counts = grid.counts.astype(float)
    total = counts.sum()
    smooth = uniform_filter(counts, size=3, mode="constant")

    def peak(mask):
        i, j = np.unravel_index(int(np.argmax(np.where(mask, smooth, -1))), counts.shape)
        return float(c[i]), float(c[j])

    def frac(mask):
        return float(counts[mask].sum() / total)

    return PolarModes(
        peak(z > 0), peak(z < 0),
        frac(np.hypot(a, z - 1) <= radius), frac(np.hypot(a, z + 1) <= radius),
        frac(z > 0), frac(z < 0), radius,
    )


@dataclass
class Asymmetry:
    std_pos: float  # spread of y where x > x0
    std_neg: float  # spread of y where x < -x0
    se_pos: float
    se_neg: float
    n_pos: int
    n_neg: int
    x0: float

    @property
    def ratio(self) -> float:
        return self.std_neg / self.std_pos if self.std_pos > 0 else math.inf

    @property
    def ratio_se(self) -> float:
        if self.std_pos == 0 or self.std_neg == 0:
            return math.nan
        return self.ratio * math.hypot(self.se_pos / self.std_pos, self.se_neg / self.std_neg)

    @property
    def significance(self) -> float:
        """(std_neg - std_pos) in units of its standard error."""
        se = math.hypot(self.se_pos, self.se_neg)
        return (self.std_neg - self.std_pos) / se if se > 0 else math.nan


def _weighted_std(values: np.ndarray, weights: np.ndarray) -> tuple[float, float, int]:
    n = float(weights.sum())
    mu = float((weights * values).sum() / n)
    d = values - mu
    m2 = float((weights * d**2).sum() / n)
    m4 = float((weights * d**4).sum() / n)
    s = math.sqrt(m2 * n / (n - 1))
    # delta method: var(s^2) ~ (m4 - m2^2) / n
    se = math.sqrt(max(m4 - m2 * m2, 0) / n) / (2 * s) if s > 0 else 0.0
    return s, se, int(round(n))


def asymmetry_statistic(source, x0: float = ASYMMETRY_X0, min_count: int = 30) -> Asymmetry:
    """Spread of y on the two sides ``x > x0`` and ``x < -x0``.

    ``source`` is an ``(n, 2 or 3)`` array of states (x first, y second) or an
    xy :class:`HistogramGrid`, in which case cell centres stand in for states.
    """
    if isinstance(source, HistogramGrid):
        if source.plane != "xy":
            raise ValueError("asymmetry needs an xy histogram")
        xc, yc = np.meshgrid(source.centers, source.centers, indexing="ij")
        x, y, w = xc.ravel(), yc.ravel(), source.counts.ravel().astype(float)
    else:
        pts = np.asarray(source, dtype=float)
        x, y, w = pts[:, 0], pts[:, 1], np.ones(len(pts))
    sides = []
    for mask in (x > x0, x < -x0):
        if w[mask].sum() < min_count:
            raise ValueError(f"fewer than {min_count} states with |x| > {x0} on one side")
        sides.append(_weighted_std(y[mask], w[mask]))
    (sp, ep, np_), (sn, en, nn) = sides
    return Asymmetry(sp, sn, ep, en, np_, nn, x0)


# ---------------------------------------------------------------------------
# purity curves


@dataclass
class PurityCurves:
    times: np.ndarray
    subsets: tuple[str, ...]
    mean: np.ndarray  # (len(subsets), n_times)
    sem: np.ndarray
    paired_sum: np.ndarray  # (len(subsets), n_times): sum over trajectories of P_uvw - P_s
    paired_sq: np.ndarray
    n: int

    def difference(self, other: str, tau: float) -> tuple[float, float]:
        """Mean purity(uvw) - purity(other) at ``tau`` and its paired standard error."""
        s = self.subsets.index(other)
        k = int(np.argmin(np.abs(self.times - tau)))
        m = self.paired_sum[s, k] / self.n
        var = (self.paired_sq[s, k] - self.n * m * m) / (self.n - 1)
        return float(m), float(math.sqrt(max(var, 0) / self.n))


@dataclass
class _PurityPart:
    moments: list[_Moments]
    diffs: list[_Moments]

    def __add__(self, other: _PurityPart) -> _PurityPart:
        return _PurityPart([a + b for a, b in zip(self.moments, other.moments)],
                           [a + b for a, b in zip(self.diffs, other.diffs)])


def _purity_chunk(spec: EnsembleSpec, subsets, start, stop) -> _PurityPart:
    p = spec.params
    b = generate_batch(p, spec.master_seed, range(start, stop))
    pur = [mean_purity(reconstruct_batch(b.records, p, s)) for s in subsets]
    ref = pur[subsets.index("uvw")]
    return _PurityPart([_Moments.of(x) for x in pur], [_Moments.of(ref - x) for x in pur])


def purity_curves(spec: EnsembleSpec, subsets=("uvw", "uv", "w", "none"), workers: int = 1,
                  chunk_size: int = batch.CHUNK_SIZE) -> PurityCurves:
    """Mean filter purity versus time for several detector subsets fed the same records."""
    subsets = tuple(subsets)
    if "uvw" not in subsets:
        subsets = ("uvw",) + subsets
    part = batch.reduce_chunks(partial(_purity_chunk, spec, subsets), _add, spec.n_traj,
                              workers, chunk_size)
    n = part.moments[0].n
    return PurityCurves(
        record_times(spec.params), subsets,
        np.stack([m.mean() for m in part.moments]),
        np.stack([m.sem() for m in part.moments]),
        np.stack([d.s1 for d in part.diffs]),
        np.stack([d.s2 for d in part.diffs]),
        n,
    )
