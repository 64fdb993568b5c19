"""Coherent two-mode exchange: truncated Fock propagation and moment dynamics.

Frequencies are g/2pi and detunings Delta/2pi in kHz, times in us. The
propagators work in the frame rotating at the drive, where

    H / hbar = (Delta/2) (n_w - n_s) + g(t) (e^{i phi} w^dag s + e^{-i phi} w s^dag)

so only the detuning from the mode-difference resonance appears.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import ConfigError, TruncationLeak, ZeroCoupling
from .fields import PulseEnvelope, envelope_value

# kHz * us -> rad
_RAD = 2.0 * np.pi * 1e-3
LEAK_GUARD = 1e-8


@dataclass(frozen=True)
class ExchangeParams:
    g: float  # kHz, g/2pi
    detuning: float = 0.0  # kHz, (delta - delta_ws)/2pi
    phase: float = 0.0  # rad

    def __post_init__(self):
        if self.g < 0:
            raise ConfigError("g must be >= 0")

    @property
    def r0(self) -> float:
        return 2.0 * self.g

    @property
    def r(self) -> float:
        return float(np.hypot(self.r0, self.detuning))


def swap_time(g: float, k: int = 1) -> float:
    """Duration in us of the k-th swap, k*pi/(2g), for g/2pi in kHz."""
    if not g > 0:
        raise ZeroCoupling("swap time needs g > 0")
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ConfigError("k must be an odd positive integer")
    return k / (4.0 * g) * 1e3


# ----------------------------------------------------------------------------
# Fock space


class TwoModeFockState:
    """Amplitudes ``c[n_w, n_s]`` in a basis truncated at ``nmax`` quanta per mode."""

    def __init__(self, amplitudes):
        c = np.array(amplitudes, dtype=complex)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ConfigError("amplitudes must be a square (nmax+1, nmax+1) array")
        norm = np.sum(np.abs(c) ** 2)
        if abs(norm - 1.0) > 1e-9:
            raise ConfigError(f"state not normalized (norm {norm:.12f})")
        self.amplitudes = c

    @classmethod
    def fock(cls, n_w: int, n_s: int, nmax: int = 10) -> "TwoModeFockState":
        c = np.zeros((nmax + 1, nmax + 1), dtype=complex)
        c[n_w, n_s] = 1.0
        return cls(c)

    @property
    def nmax(self) -> int:
        return self.amplitudes.shape[0] - 1

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def norm(self) -> float:
        return float(self.populations.sum())

    def mean_w(self) -> float:
        return float(self.populations.sum(axis=1) @ np.arange(self.nmax + 1))

    def mean_s(self) -> float:
        return float(self.populations.sum(axis=0) @ np.arange(self.nmax + 1))

    def top_population(self) -> float:
        p = self.populations
        return float(p[-1, :].sum() + p[:, -1].sum() - p[-1, -1])

    def marginal_w(self) -> np.ndarray:
        return self.populations.sum(axis=1)

    def marginal_s(self) -> np.ndarray:
        return self.populations.sum(axis=0)


def _ladder(nmax: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, nmax + 1)), 1)


def exchange_operators(nmax: int):
    """Operators (n_w - n_s)/2 and w^dag s on the flattened (n_w, n_s) basis."""
    a = _ladder(nmax)
    eye = np.eye(nmax + 1)
    num = np.diag(np.arange(nmax + 1, dtype=float))
    w = np.kron(a, eye)
    s = np.kron(eye, a)
    h_det = 0.5 * (np.kron(num, eye) - np.kron(eye, num))
    wds = w.conj().T @ s
    return h_det, wds


def _hamiltonian(params: ExchangeParams, nmax: int) -> np.ndarray:
    h_det, wds = exchange_operators(nmax)
    cpl = np.exp(1j * params.phase) * wds
    return _RAD * (params.detuning * h_det + params.g * (cpl + cpl.conj().T))


def propagate_fock(state: TwoModeFockState, params: ExchangeParams, duration: float,
                   envelope: PulseEnvelope | None = None, rtol: float = 1e-10,
                   leak_guard: float = LEAK_GUARD) -> TwoModeFockState:
    """Evolve ``state`` for ``duration`` us under the exchange Hamiltonian.

    A square pulse (``envelope=None``) uses the exact propagator; shaped
    pulses are integrated with an adaptive 8th-order Runge-Kutta scheme.

    Raises
    ------
    TruncationLeak
        If population on the top Fock level exceeds ``leak_guard``.
    """
    nmax = state.nmax
    psi0 = state.amplitudes.reshape(-1)
    if duration < 0:
        raise ConfigError("duration must be >= 0")
    if envelope is None:
        psi = expm(-1j * _hamiltonian(params, nmax) * duration) @ psi0
    else:
        h_det, wds = exchange_operators(nmax)
        cpl = np.exp(1j * params.phase) * wds
        h_cpl = _RAD * params.g * (cpl + cpl.conj().T)
        h_d = _RAD * params.detuning * h_det

        def rhs(t, y):
            return -1j * ((h_d + envelope_value(envelope, min(t, envelope.total_time)) * h_cpl) @ y)

        sol = solve_ivp(rhs, (0.0, duration), psi0.astype(complex), method="DOP853",
                        rtol=rtol, atol=rtol * 1e-2)
        psi = sol.y[:, -1]
    new = TwoModeFockState.__new__(TwoModeFockState)
    new.amplitudes = psi.reshape(nmax + 1, nmax + 1)
    if new.top_population() > leak_guard:
        raise TruncationLeak(f"top-level population {new.top_population():.2e} > {leak_guard:g}")
    return new


def fock_propagator(params: ExchangeParams, duration: float, nmax: int) -> np.ndarray:
    """Square-pulse unitary on the flattened (n_w, n_s) basis."""
    return expm(-1j * _hamiltonian(params, nmax) * duration)


# ----------------------------------------------------------------------------
# Gaussian moments


@dataclass(frozen=True)
class MomentState:
    nbar_w: float
    nbar_s: float
    cross: complex = 0j  # <w^dag s>

    def __post_init__(self):
        if self.nbar_w < -1e-12 or self.nbar_s < -1e-12:
            raise ConfigError("occupations must be >= 0")
        if abs(self.cross) ** 2 > self.nbar_w * self.nbar_s + 1e-12:
            raise ConfigError("|<w^dag s>|^2 exceeds nbar_w * nbar_s")

    def as_vector(self) -> np.ndarray:
        return np.array([self.nbar_w, self.nbar_s, self.cross.real, self.cross.imag])

    @classmethod
    def from_vector(cls, x) -> "MomentState":
        nw, ns, re, im = (float(v) for v in x)
        c = complex(re, im)
        # clip roundoff so invariants hold
        nw, ns = max(nw, 0.0), max(ns, 0.0)
        lim = np.sqrt(nw * ns)
        if abs(c) > lim:
            c = c * (lim / abs(c)) if abs(c) > 0 else 0j
        return cls(nw, ns, c)

    @property
    def total(self) -> float:
        return self.nbar_w + self.nbar_s


def moment_generator(g_rad: float, detuning_rad: float, phase: float = 0.0) -> np.ndarray:
    """Linear generator for (n_w, n_s, Re c, Im c) with c = <w^dag s>.

    d n_w/dt = 2 g Im(e^{i phi} c) = -d n_s/dt
    d c/dt   = i Delta c + i g e^{-i phi} (n_s - n_w)
    """
    cp, sp = np.cos(phase), np.sin(phase)
    g = g_rad
    m = np.zeros((4, 4))
    m[0, 2], m[0, 3] = 2 * g * sp, 2 * g * cp
    m[1, 2], m[1, 3] = -2 * g * sp, -2 * g * cp
    m[2, 3] = -detuning_rad
    m[3, 2] = detuning_rad
    m[2, 0], m[2, 1] = -g * sp, g * sp
    m[3, 0], m[3, 1] = -g * cp, g * cp
    return m


def moment_exchange(state: MomentState, params: ExchangeParams, duration: float) -> MomentState:
    """Propagate (n_w, n_s, <w^dag s>) for ``duration`` us of a square pulse."""
    m = moment_generator(_RAD * params.g, _RAD * params.detuning, params.phase)
    return MomentState.from_vector(expm(m * duration) @ state.as_vector())
