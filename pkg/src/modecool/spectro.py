"""Measurement models: exchange lineshapes, dark-ion counts, sideband spectra.

Rates and detunings are in kHz (per 2 pi), durations in us, drive and
resonance frequencies in MHz unless noted.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, j0

from .errors import ConfigError, TruncationWarning
from .exchange import ExchangeParams, fock_propagator

_PI = np.pi
# sin^2(pi/sqrt(3)): transfer of the one-phonon, two-ion manifold by the analysis pulse
_S3 = np.sin(_PI / np.sqrt(3.0)) ** 2
D_W_BOUND = abs(7 + 9 * np.cos(2 * _PI / np.sqrt(3.0))) / 16
D_S_BOUND = (9 * _S3 - 8) / 8
_TWO_ION_SCALE = 2 * (8 / 9) ** 2


def _arr(x):
    return np.asarray(x, dtype=float)


def _out(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


# ----------------------------------------------------------------------------
# exchange lineshapes


@dataclass(frozen=True)
class FreqScanParams:
    A: float
    r0: float  # kHz
    tau: float  # us
    delta_ws: float  # MHz
    P0: float

    def __post_init__(self):
        if self.r0 < 0 or self.tau <= 0:
            raise ConfigError("need r0 >= 0 and tau > 0")


def freq_scan_model(p: FreqScanParams, delta):
    """``A sin^2(r tau/2) (r0/r)^2 + P0`` with ``r = sqrt(r0^2 + (delta - delta_ws)^2)``."""
    det = (_arr(delta) - p.delta_ws) * 1e3
    r = np.hypot(p.r0, det)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(r > 0, (p.r0 / np.where(r > 0, r, 1.0)) ** 2, 1.0)
    return _out(p.A * np.sin(_PI * r * p.tau * 1e-3) ** 2 * frac + p.P0)


@dataclass(frozen=True)
class TimeScanParams:
    A: float
    r0: float  # kHz
    phi: float  # rad
    gamma: float  # 1/ms
    y0: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")


def time_scan_model(p: TimeScanParams, tau):
    """Damped exchange oscillation ``A sin(r0 tau + phi) exp(-gamma tau) / 2 + y0``."""
    t = _arr(tau)
    return _out(p.A * np.sin(2 * _PI * p.r0 * 1e-3 * t + p.phi) * np.exp(-p.gamma * 1e-3 * t) / 2
                + p.y0)


def single_phonon_transfer(params: ExchangeParams, t):
    """Populations (p10, p01) after exchange time ``t`` starting from |1>_w|0>_s."""
    t = _arr(t)
    r = params.r
    if r == 0:
        p01 = np.zeros_like(t)
    else:
        p01 = (params.r0 / r) ** 2 * np.sin(_PI * r * t * 1e-3) ** 2
    return _out(1.0 - p01), _out(p01)


def two_ion_corrections(params: ExchangeParams, t):
    """Correction factors (d_w, d_s) of the two-ion dark-count expressions."""
    _, p = single_phonon_transfer(params, t)
    d_w = (7 + 9 * np.cos(2 * _PI / np.sqrt(3.0))) / 16 * _arr(p)
    d_s = (9 * _S3 - 8) / 8 * (1 - _arr(p))
    return _out(d_w), _out(d_s)


def two_ion_dark_counts(params: ExchangeParams, t, which: str = "w", exact: bool = False):
    """Average number of dark ions for the two-ion calibration sequence.

    ``which`` selects the analysed mode. With ``exact=False`` the small
    correction factors are dropped and the result has the freq-scan form.
    """
    _, p = single_phonon_transfer(params, t)
    p = _arr(p)
    if which == "w":
        d = _TWO_ION_SCALE * (1 - p)
        if exact:
            d = d * (1 - _arr(two_ion_corrections(params, t)[0]))
    elif which == "s":
        d = _TWO_ION_SCALE * p
        if exact:
            d = d * (1 + _arr(two_ion_corrections(params, t)[1]))
    else:
        raise ConfigError("which must be 'w' or 's'")
    return _out(d)


def _spin_ops():
    up = np.array([[0.0, 0.0], [1.0, 0.0]])  # |up><down|, basis (down, up)
    n_up = np.diag([0.0, 1.0])
    eye = np.eye(2)
    return up, n_up, eye


@lru_cache(maxsize=8)
def _sideband_unitaries(nmax: int, rabi0: float):
    """Two-ion red-sideband pulses of duration pi/(sqrt(6) rabi0) on mode w and on mode s."""
    dm = nmax + 1
    a = np.diag(np.sqrt(np.arange(1, dm)), 1)
    eye_m = np.eye(dm)
    sp, _, eye2 = _spin_ops()
    duration = _PI / (np.sqrt(6.0) * rabi0)
    out = []
    for mode_op in (np.kron(a, eye_m), np.kron(eye_m, a)):
        h = np.zeros((4 * dm * dm, 4 * dm * dm))
        for s1 in (np.kron(sp, eye2), np.kron(eye2, sp)):
            term = np.kron(s1, mode_op)
            h += term + term.T
        out.append(expm(-1j * rabi0 * duration * h))
    return tuple(out)


def two_ion_sequence_dark_counts(params: ExchangeParams, t: float, which: str = "w",
                                 rabi0: float = 1.0, nmax: int = 3) -> float:
    """Brute-force simulation of the two-ion preparation / exchange / analysis sequence.

    Two spins and both modes are represented explicitly. The preparation and
    analysis red-sideband pulses last pi/(sqrt(6) rabi0); the repump is a
    partial trace over the spins followed by a reset to both-down. The
    result does not depend on ``rabi0``.
    """
    if which not in ("w", "s"):
        raise ConfigError("which must be 'w' or 's'")
    motion_dim = (nmax + 1) ** 2
    _, n_up, eye2 = _spin_ops()
    u_w, u_s = _sideband_unitaries(int(nmax), float(rabi0))
    u_read = u_w if which == "w" else u_s

    # |up up>|0,0>; spin index 3 = (up, up)
    psi = np.zeros(4 * motion_dim, dtype=complex)
    psi[3 * motion_dim] = 1.0
    psi = u_w @ psi
    blocks = psi.reshape(4, motion_dim)
    rho_m = sum(np.outer(b, b.conj()) for b in blocks)

    u_ex = fock_propagator(params, t, nmax)
    rho_m = u_ex @ rho_m @ u_ex.conj().T

    down_down = np.zeros((4, 4))
    down_down[0, 0] = 1.0
    rho = np.kron(down_down, rho_m)
    rho = u_read @ rho @ u_read.conj().T
    n_dark = np.kron(np.kron(n_up, eye2) + np.kron(eye2, n_up), np.eye(motion_dim))
    return float(np.real(np.trace(n_dark @ rho)))


# ----------------------------------------------------------------------------
# sideband spectroscopy


@dataclass(frozen=True)
class RabiParams:
    Omega: float  # kHz, carrier Rabi rate / 2pi
    Omega0: float = 1.0  # kHz, single-ion ground-state sideband rate / 2pi
    eta: float = 0.268

    def __post_init__(self):
        if self.eta <= 0 or self.Omega <= 0 or self.Omega0 <= 0:
            raise ConfigError("Rabi parameters must be positive")


def rsb_rabi(n, p: RabiParams, exponent_sign: int = -1):
    """Sideband Rabi rate (kHz) coupling |n> and |n+1>.

    ``Omega exp(sign * eta^2/2) eta L1_n(eta^2) / sqrt(n+1)``; ``sign=-1`` is
    the physical matrix element.
    """
    n = np.asarray(n)
    x = p.eta**2
    lag = eval_genlaguerre(n, 1, x)
    return _out(p.Omega * np.exp(exponent_sign * x / 2) * p.eta * lag / np.sqrt(n + 1))


@dataclass(frozen=True)
class KerrSpectrumParams:
    B: float = 1.78
    f_rsb: float = 0.0  # MHz
    D0: float = 0.05
    chi_zs_xr: float = 75.86  # Hz, chi/2pi
    chi_zs_yr: float = 95.4  # Hz
    nbar_zs: float = 0.0
    nbar_xr: float = 0.0
    nbar_yr: float = 0.0
    N_zs: int = 5
    N_xr: int = 20
    N_yr: int = 20
    rabi: RabiParams = field(default_factory=lambda: RabiParams(Omega=0.86))
    pulse_time: float | None = None  # us; None -> pi pulse at each n_zs rate
    normalize_weights: bool = True
    exponent_sign: int = -1

    def __post_init__(self):
        if min(self.N_zs, self.N_xr, self.N_yr) < 1:
            raise ConfigError("truncations must be >= 1")
        if min(self.nbar_zs, self.nbar_xr, self.nbar_yr) < 0:
            raise ConfigError("occupations must be >= 0")

    def with_occupations(self, **kw) -> "KerrSpectrumParams":
        return replace(self, **kw)


def thermal_weights(nbar: float, nmax: int, normalize: bool = True) -> np.ndarray:
    """Thermal number distribution on 0..nmax (not renormalized after truncation)."""
    n = np.arange(nmax + 1)
    if nbar == 0:
        w = (n == 0).astype(float)
        return w
    q = nbar / (1 + nbar)
    w = q**n
    return w / (1 + nbar) if normalize else w


def kerr_weight_sum(p: KerrSpectrumParams) -> float:
    """Total thermal weight retained by the truncated triple sum."""
    total = 1.0
    for nbar, nmax in ((p.nbar_zs, p.N_zs), (p.nbar_xr, p.N_xr), (p.nbar_yr, p.N_yr)):
        total *= thermal_weights(nbar, nmax, p.normalize_weights).sum()
    return float(total)


def kerr_spectrum(p: KerrSpectrumParams, f, min_weight: float = 0.999):
    """Dark-ion signal of a red-sideband frequency scan with cross-Kerr shifts.

    Each (n_zs, n_xr, n_yr) contributes a detuned Rabi lineshape shifted by
    ``chi_xr n_xr + chi_yr n_yr``, weighted by the thermal populations.
    """
    if p.normalize_weights and kerr_weight_sum(p) < min_weight:
        warnings.warn(f"Fock truncation keeps only {kerr_weight_sum(p):.5f} of the thermal weight",
                      TruncationWarning, stacklevel=2)
    f = _arr(f)
    det = (f - p.f_rsb) * 1e3  # kHz
    w_zs = thermal_weights(p.nbar_zs, p.N_zs, p.normalize_weights)
    w_xr = thermal_weights(p.nbar_xr, p.N_xr, p.normalize_weights)
    w_yr = thermal_weights(p.nbar_yr, p.N_yr, p.normalize_weights)

    # collapse the two rocking modes into a distribution of shifts (kHz)
    shifts = (p.chi_zs_xr * np.arange(p.N_xr + 1)[:, None]
              + p.chi_zs_yr * np.arange(p.N_yr + 1)[None, :]).ravel() * 1e-3
    shift_w = np.outer(w_xr, w_yr).ravel()
    keep = shift_w > 0
    shifts, shift_w = shifts[keep], shift_w[keep]

    flat = det.reshape(-1)
    out = np.zeros_like(flat)
    chunk = max(1, 2_000_000 // len(shifts))  # bound the (frequency, shift) work array
    for n_zs, wz in enumerate(w_zs):
        if wz == 0:
            continue
        o0 = float(rsb_rabi(n_zs, p.rabi, p.exponent_sign))
        for lo in range(0, flat.size, chunk):
            x = flat[lo:lo + chunk, None] - shifts
            om = np.sqrt(o0**2 + x**2)
            if p.pulse_time is None:
                s2 = np.sin(_PI * om / (2 * o0)) ** 2
            else:
                s2 = np.sin(_PI * om * p.pulse_time * 1e-3) ** 2
            line = p.B * o0**2 * s2 / om**2 + p.D0
            out[lo:lo + chunk] += wz * (line @ shift_w)
    out = out.reshape(det.shape)
    return _out(out)


# ----------------------------------------------------------------------------
# driven-motion suppression and detection


def bessel_suppression(dk, beta, r0):
    """Rabi-rate ratio ``|J0(dk * beta * r0)|``; dk in 1/m, beta in nm/kHz, r0 in kHz."""
    return _out(np.abs(j0(_arr(dk) * _arr(beta) * 1e-9 * _arr(r0))))


@dataclass(frozen=True)
class DetectionCalibration:
    C2: float
    C0: float

    def __post_init__(self):
        if not (self.C2 > self.C0 >= 0):
            raise ConfigError("need C2 > C0 >= 0")


def dark_from_counts(counts, cal: DetectionCalibration):
    """Number of dark ions from mean counts; returns ``(D, out_of_range)``."""
    d = 2 * (cal.C2 - _arr(counts)) / (cal.C2 - cal.C0)
    flag = (d < 0) | (d > 2)
    return _out(np.clip(d, 0.0, 2.0)), (bool(flag) if np.ndim(flag) == 0 else flag)
