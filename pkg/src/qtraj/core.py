"""Qubit conventions, state/parameter types and the Lindblad/backaction superoperators.

Basis order is (g, e).  With sigma_z = |e><e| - |g><g| the ground state sits at
z = -1 and sigma_- = |g><e| is the matrix [[0, 1], [0, 0]].  A density matrix
is rho = (1 + x sigma_x + y sigma_y + z sigma_z) / 2, so that

    rho_gg = (1 - z)/2,   rho_ee = (1 + z)/2,   rho_ge = (x + i y)/2.

Times are in microseconds, rates in 1/us and records in us^(-1/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, 1j], [-1j, 0]], dtype=complex)
SIGMA_Z = np.array([[-1, 0], [0, 1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()

GAMMA1 = 1 / 15.0
ETA_F = 0.14
ETA_D = 0.34
# unread pure dephasing, from gamma2 = (11.2 us)^-1 at zero dispersive drive
GAMMA_PHI = 1 / 11.2 - 1 / (2 * 15.0)

SUBSETS = ("uvw", "uv", "w", "none")
RECORD_COLUMNS = {"u": 0, "v": 1, "w": 2}

NORM_TOL = 1e-9


@dataclass(frozen=True)
class QubitState:
    """Qubit density matrix stored as its two populations and one coherence.

    ``rho_eg`` is never stored; it is the conjugate of ``rho_ge``.
    """

    rho_gg: float
    rho_ee: float
    rho_ge: complex

    @classmethod
    def ground(cls) -> QubitState:
        return cls(1.0, 0.0, 0j)

    @classmethod
    def excited(cls) -> QubitState:
        return cls(0.0, 1.0, 0j)

    @classmethod
    def from_bloch(cls, x: float, y: float, z: float) -> QubitState:
        return cls((1.0 - z) / 2, (1.0 + z) / 2, complex(x, y) / 2)

    @classmethod
    def from_matrix(cls, rho: np.ndarray) -> QubitState:
        """Hermitian part of ``rho``; no renormalization."""
        rho = np.asarray(rho, dtype=complex)
        coh = (rho[0, 1] + np.conj(rho[1, 0])) / 2
        return cls(float(rho[0, 0].real), float(rho[1, 1].real), complex(coh))

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.rho_gg, self.rho_ge], [np.conj(self.rho_ge), self.rho_ee]],
            dtype=complex,
        )

    def bloch(self) -> tuple[float, float, float]:
        return bloch_of(self)

    @property
    def trace(self) -> float:
        return self.rho_gg + self.rho_ee

    def is_valid(self, tol: float = NORM_TOL) -> bool:
        x, y, z = self.bloch()
        return abs(self.trace - 1) <= tol and x * x + y * y + z * z <= 1 + tol


def bloch_of(state: QubitState) -> tuple[float, float, float]:
    """Bloch coordinates ``(x, y, z)`` = (Tr sigma_x rho, Tr sigma_y rho, Tr sigma_z rho)."""
    return (
        2 * state.rho_ge.real,
        2 * state.rho_ge.imag,
        state.rho_ee - state.rho_gg,
    )


def density_of(x: float, y: float, z: float) -> QubitState:
    return QubitState.from_bloch(x, y, z)


def bloch_components(m: np.ndarray) -> np.ndarray:
    """Pauli components of a 2x2 (or stacked ``(..., 2, 2)``) matrix.

    Returns ``(Tr sigma_x m, Tr sigma_y m, Tr sigma_z m)`` along the last axis.
    For a traceless Hermitian ``m`` this is the vector ``a`` with
    ``m = a . sigma / 2``.
    """
    m = np.asarray(m)
    a_ge = m[..., 0, 1]
    a_eg = m[..., 1, 0]
    return np.stack(
        [
            (a_ge + a_eg).real,
            (1j * (a_eg - a_ge)).real,
            (m[..., 1, 1] - m[..., 0, 0]).real,
        ],
        axis=-1,
    )


def _as_matrix(state) -> np.ndarray:
    if isinstance(state, QubitState):
        return state.matrix()
    return np.asarray(state, dtype=complex)


def _dag(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def _trace(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] + m[..., 1, 1]


def dissipator(L: np.ndarray, state) -> np.ndarray:
    """Lindblad dissipator ``L rho L^+ - (L^+ L rho + rho L^+ L)/2``.

    Accepts a single 2x2 operator/state or broadcastable stacks of them.
    """
    rho = _as_matrix(state)
    L = np.asarray(L, dtype=complex)
    Ld = _dag(L)
    LdL = Ld @ L
    return L @ rho @ Ld - 0.5 * (rho @ LdL) - 0.5 * (LdL @ rho)


def backaction(L: np.ndarray, state) -> np.ndarray:
    """Diffusive measurement backaction ``L rho + rho L^+ - Tr(L rho + rho L^+) rho``."""
    rho = _as_matrix(state)
    L = np.asarray(L, dtype=complex)
    lin = L @ rho + rho @ _dag(L)
    return lin - _trace(lin)[..., None, None] * rho


def drive_term(omega: float, state) -> np.ndarray:
    """Rabi drive ``i (omega/2) [sigma_y, rho]``.

    Gives dx/dt = -omega z and dz/dt = +omega x, so |g> first swings toward +x.
    """
    rho = _as_matrix(state)
    h = 0.5 * omega * SIGMA_Y
    return 1j * (h @ rho - rho @ h)


def purity(state: QubitState) -> float:
    x, y, z = bloch_of(state)
    return (1 + x * x + y * y + z * z) / 2


def normalize_matrix(rho: np.ndarray) -> QubitState:
    """Hermitize, renormalize the trace and pull the Bloch vector back into the ball."""
    rho = 0.5 * (rho + _dag(rho))
    tr = float(_trace(rho).real)
    if not math.isfinite(tr) or tr <= 0:
        raise FloatingPointError(f"density matrix with trace {tr}")
    rho = rho / tr
    x, y, z = bloch_components(rho)
    return normalize_bloch(x, y, z)


def normalize_bloch(x: float, y: float, z: float) -> QubitState:
    n2 = x * x + y * y + z * z
    if n2 > 1.0:
        n = math.sqrt(n2)
        x, y, z = x / n, y / n, z / n
    return QubitState.from_bloch(x, y, z)


def _check_rate(name: str, value: float) -> None:
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite rate >= 0, got {value!r}")


def _check_efficiency(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class PhysicsParams:
    """Everything that fixes the dynamics of one experimental configuration.

    ``omega`` is the angular Rabi frequency in rad/us; configuration files give
    omega/2pi and are converted on load.  ``w_sign`` flips the sign of the
    dispersive record (the homodyne quadrature phase is not fixed a priori).
    """

    gamma1: float = GAMMA1
    gamma_d: float = 0.0
    gamma_phi: float = GAMMA_PHI
    omega: float = 0.0
    eta_f: float = ETA_F
    eta_d: float = ETA_D
    dt_record: float = 0.1
    dt_int: float = 0.01
    duration: float = 20.0
    initial_state: QubitState = field(default_factory=QubitState.ground)
    w_sign: int = 1

    def __post_init__(self):
        for name in ("gamma1", "gamma_d", "gamma_phi"):
            _check_rate(name, getattr(self, name))
        if not math.isfinite(self.omega):
            raise ValueError(f"omega must be finite, got {self.omega!r}")
        _check_efficiency("eta_f", self.eta_f)
        _check_efficiency("eta_d", self.eta_d)
        if not (0 < self.dt_int <= self.dt_record + 1e-15):
            raise ValueError(
                f"need 0 < dt_int <= dt_record, got dt_int={self.dt_int}, "
                f"dt_record={self.dt_record}"
            )
        if abs(self.n_sub * self.dt_int - self.dt_record) > 1e-9:
            raise ValueError(f"dt_int={self.dt_int} does not divide dt_record={self.dt_record}")
        if self.duration <= 0 or abs(self.n_bins * self.dt_record - self.duration) > 1e-9:
            raise ValueError(
                f"dt_record={self.dt_record} does not divide duration={self.duration}"
            )
        if self.w_sign not in (1, -1):
            raise ValueError(f"w_sign must be +1 or -1, got {self.w_sign!r}")
        if not self.initial_state.is_valid():
            raise ValueError("initial_state is not a valid density matrix")

    @property
    def gamma2(self) -> float:
        return self.gamma1 / 2 + self.gamma_phi + self.gamma_d

    @property
    def n_sub(self) -> int:
        return max(1, round(self.dt_record / self.dt_int))

    @property
    def n_bins(self) -> int:
        return max(1, round(self.duration / self.dt_record))

    def with_(self, **changes) -> PhysicsParams:
        return replace(self, **changes)


@dataclass(frozen=True)
class Channel:
    """One diffusive decoherence branch with its rate folded into ``jump_operator``."""

    label: str
    jump_operator: np.ndarray
    monitored: bool
    record_scale: float

    @property
    def column(self) -> int | None:
        return RECORD_COLUMNS.get(self.label)


@dataclass(frozen=True)
class ChannelSet:
    channels: tuple[Channel, ...]

    def __iter__(self):
        return iter(self.channels)

    def __len__(self):
        return len(self.channels)

    def __getitem__(self, label: str) -> Channel:
        for ch in self.channels:
            if ch.label == label:
                return ch
        raise KeyError(label)

    @property
    def monitored(self) -> tuple[Channel, ...]:
        return tuple(ch for ch in self.channels if ch.monitored)

    @property
    def record_columns(self) -> dict[str, int]:
        """Monitored read channels and the record column each one consumes."""
        return {ch.label: ch.column for ch in self.monitored if ch.column is not None}

    def total_rate(self, kind: str) -> float:
        """Summed |L|^2 weight of a physical channel (``'fluorescence'`` or ``'dispersive'``).

        Fluorescence returns gamma1, dispersive returns gamma_d.
        """
        labels = {
            "fluorescence": ("u", "v", "u_loss", "v_loss"),
            "dispersive": ("w", "w_loss"),
        }[kind]
        w = 0.0
        for ch in self.channels:
            if ch.label in labels:
                w += float(np.trace(_dag(ch.jump_operator) @ ch.jump_operator).real)
        return w


def build_channels(params: PhysicsParams, subset: str = "uvw", omniscient: bool = False) -> ChannelSet:
    """Split each decoherence channel into a read branch and a loss branch.

    The read branch carries sqrt(eta) of the jump operator and the loss branch
    sqrt(1 - eta), so their dissipators add up to the full rate.  Detectors
    outside ``subset`` have both branches unmonitored.  With ``omniscient`` every
    branch, including the unread pure dephasing, is monitored; this is the
    unraveling used to generate records from a pure state.
    """
    if subset not in SUBSETS:
        raise ValueError(f"unknown detector subset {subset!r}; expected one of {SUBSETS}")
    _check_efficiency("eta_f", params.eta_f)
    _check_efficiency("eta_d", params.eta_d)

    read_f = "u" in subset
    read_d = "w" in subset
    a = math.sqrt(params.gamma1 / 2)
    b = math.sqrt(params.gamma_d / 2)
    sf, lf = math.sqrt(params.eta_f), math.sqrt(1 - params.eta_f)
    sd, ld = math.sqrt(params.eta_d), math.sqrt(1 - params.eta_d)
    scale_f = math.sqrt(params.eta_f * params.gamma1 / 2)
    scale_d = params.w_sign * math.sqrt(2 * params.eta_d * params.gamma_d)

    L_u = a * SIGMA_MINUS
    L_v = 1j * a * SIGMA_MINUS
    L_w = params.w_sign * b * SIGMA_Z
    L_phi = math.sqrt(params.gamma_phi / 2) * SIGMA_Z

    chans = (
        Channel("u", sf * L_u, read_f or omniscient, scale_f),
        Channel("v", sf * L_v, read_f or omniscient, scale_f),
        Channel("w", sd * L_w, read_d or omniscient, scale_d),
        Channel("u_loss", lf * L_u, omniscient, 0.0),
        Channel("v_loss", lf * L_v, omniscient, 0.0),
        Channel("w_loss", ld * L_w, omniscient, 0.0),
        Channel("phi", L_phi, omniscient, 0.0),
    )
    return ChannelSet(chans)
