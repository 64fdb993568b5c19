"""Weighted nonlinear least-squares fits of the measurement models, and thermometry.

All fits minimise ``sum(((y - model(x)) / sigma)**2)``. Covariances come from
the Jacobian at the optimum with the supplied sigmas taken as absolute, so
``confidence_68`` is the 1-sigma half-width of each free parameter.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import (ConfigError, DegenerateAbscissa, NoConvergence, RatioOutOfRange,
                     SingularJacobian, TruncationWarning)
from .spectro import (FreqScanParams, KerrSpectrumParams, TimeScanParams, freq_scan_model,
                      kerr_spectrum, time_scan_model)


@dataclass
class ScanData:
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    metadata: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.sigma = np.asarray(self.sigma, dtype=float).ravel()
        if not (len(self.x) == len(self.y) == len(self.sigma)):
            raise ConfigError("x, y and sigma must have equal lengths")
        if len(self.x) == 0:
            raise ConfigError("scan data is empty")
        if np.any(~(self.sigma > 0)):
            raise ConfigError("sigma must be > 0")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ConfigError("x and y must be finite")

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_csv(cls, text: str) -> "ScanData":
        """Parse CSV with a header naming ``x``, ``y`` and ``sigma``; ``#`` lines are metadata."""
        meta = [ln[1:].strip() for ln in text.splitlines() if ln.startswith("#")]
        body = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not body:
            raise ConfigError("CSV has no header line")
        reader = csv.reader(body)
        header = [h.strip() for h in next(reader)]
        missing = [c for c in ("x", "y", "sigma") if c not in header]
        if missing:
            raise ConfigError(f"CSV missing column(s): {', '.join(missing)}")
        cols = {c: header.index(c) for c in ("x", "y", "sigma")}
        rows = {c: [] for c in cols}
        for lineno, row in enumerate(reader, start=2):
            try:
                for c, k in cols.items():
                    rows[c].append(float(row[k]))
            except (ValueError, IndexError):
                raise ConfigError(f"CSV line {lineno}: cannot parse {row!r}") from None
        return cls(rows["x"], rows["y"], rows["sigma"], "\n".join(meta))

    def to_csv(self, header: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "sigma"])
        for row in zip(self.x, self.y, self.sigma):
            w.writerow([f"{v:.12g}" for v in row])
        return buf.getvalue()


@dataclass
class FitResult:
    params: dict[str, float]
    covariance: np.ndarray
    confidence_68: dict[str, float]
    chi2_reduced: float
    converged: bool
    model: str = ""
    free: tuple[str, ...] = ()
    nfev: int = 0
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "converged": bool(self.converged),
            "params": {k: float(v) for k, v in self.params.items()},
            "confidence_68": {k: float(v) for k, v in self.confidence_68.items()},
            "free": list(self.free),
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "chi2_reduced": float(self.chi2_reduced),
            "nfev": int(self.nfev),
            "message": self.message,
        }

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)


# ----------------------------------------------------------------------------
# model registry


@dataclass(frozen=True)
class ScanModel:
    name: str
    param_names: tuple[str, ...]
    func: Callable[[dict, np.ndarray], np.ndarray]
    gauge: Callable[[dict], tuple[dict, np.ndarray]] | None = None
    lower: Mapping[str, float] = field(default_factory=dict)
    upper: Mapping[str, float] = field(default_factory=dict)


def _freq(p, x):
    return freq_scan_model(FreqScanParams(**p), x)


def _time(p, x):
    return time_scan_model(TimeScanParams(**p), x)


def _wrap(phi: float) -> float:
    w = (phi + np.pi) % (2 * np.pi) - np.pi
    return np.pi if w == -np.pi else w


def _time_gauge(p):
    """Fold (A, phi) into A >= 0, phi in (-pi, pi]; returns params and per-parameter signs."""
    p = dict(p)
    signs = {k: 1.0 for k in p}
    if p["A"] < 0:
        p["A"] = -p["A"]
        p["phi"] = p["phi"] + np.pi
        signs["A"] = -1.0
    p["phi"] = _wrap(p["phi"])
    return p, signs


def _linear(p, x):
    return p["slope"] * np.asarray(x, dtype=float) + p["intercept"]


MODELS: dict[str, ScanModel] = {
    "freq_scan": ScanModel("freq_scan", ("A", "r0", "tau", "delta_ws", "P0"), _freq,
                           lower={"r0": 0.0, "tau": 1e-9}),
    "time_scan": ScanModel("time_scan", ("A", "r0", "phi", "gamma", "y0"), _time, _time_gauge,
                           lower={"gamma": 0.0}),
    "linear": ScanModel("linear", ("slope", "intercept"), _linear),
}


def register_model(model: ScanModel) -> None:
    MODELS[model.name] = model


def get_model(name: str) -> ScanModel:
    try:
        return MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; have {sorted(MODELS)}") from None


# ----------------------------------------------------------------------------
# driver


def _bounds(model: ScanModel, free, bounds):
    lo, hi = [], []
    for name in free:
        b = (bounds or {}).get(name)
        if b is None:
            b = (model.lower.get(name, -np.inf), model.upper.get(name, np.inf))
        lo.append(float(b[0]))
        hi.append(float(b[1]))
    return np.array(lo), np.array(hi)


def _jacobian(resid, x, lo, hi, rel: float = 1e-6) -> np.ndarray:
    """Central differences, one-sided next to a bound."""
    cols = []
    for k in range(len(x)):
        h = rel * max(abs(x[k]), 1e-3)
        up, dn = x.copy(), x.copy()
        up[k] = min(x[k] + h, hi[k])
        dn[k] = max(x[k] - h, lo[k])
        cols.append((resid(up) - resid(dn)) / (up[k] - dn[k]))
    return np.column_stack(cols)


def _covariance(jac: np.ndarray) -> np.ndarray:
    jtj = jac.T @ jac
    s = np.linalg.svd(jac, compute_uv=False)
    # finite-difference noise sits around 1e-10 relative, so treat anything near it as rank loss
    if s.size == 0 or s[-1] <= s[0] * 1e-9:
        raise SingularJacobian("Jacobian is rank deficient at the optimum")
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        raise SingularJacobian("Jacobian is rank deficient at the optimum") from None
    return 0.5 * (cov + cov.T)


def fit_model(data: ScanData, model: str | ScanModel, initial: Mapping[str, float],
              bounds: Mapping[str, tuple[float, float]] | None = None,
              fixed: Sequence[str] = (), seed: int = 0, max_nfev: int = 2000,
              n_starts: int = 5, tol: float = 1e-12) -> FitResult:
    """Fit ``model`` to ``data`` starting from ``initial``.

    Parameters
    ----------
    data : ScanData
    model : str or ScanModel
        Registry name (``freq_scan``, ``time_scan``, ``linear``) or a model.
    initial : mapping
        Starting value of every model parameter.
    bounds : mapping, optional
        ``(low, high)`` per free parameter.
    fixed : sequence of str
        Parameters held at their initial value.
    seed : int
        Seed for the perturbed restarts tried when the first run fails.

    Raises
    ------
    NoConvergence
        If no start converges. The best attempt is attached as ``.result``.
    SingularJacobian
        If the free parameters are not identifiable from the data.
    """
    scan_model = get_model(model) if isinstance(model, str) else model
    missing = [n for n in scan_model.param_names if n not in initial]
    if missing:
        raise ConfigError(f"initial guess missing {missing}")
    free = tuple(n for n in scan_model.param_names if n not in set(fixed))
    if len(data) < len(free) + 1:
        raise ConfigError(f"need at least {len(free) + 1} points for {len(free)} free parameters")
    base = {n: float(initial[n]) for n in scan_model.param_names}
    lo, hi = _bounds(scan_model, free, bounds)
    x0 = np.array([base[n] for n in free])
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ConfigError("initial guess outside bounds")

    def unpack(v):
        p = dict(base)
        p.update(zip(free, v))
        return p

    def resid(v):
        return (np.asarray(scan_model.func(unpack(v), data.x), dtype=float) - data.y) / data.sigma

    def run(start):
        return least_squares(resid, start, jac="3-point", bounds=(lo, hi), method="trf",
                             diff_step=1e-6, x_scale="jac", ftol=tol, xtol=tol, gtol=tol,
                             max_nfev=max_nfev)

    best = run(x0)
    nfev = best.nfev
    if best.status <= 0:
        rng = np.random.default_rng(seed)
        for _ in range(n_starts):
            scale = np.where(np.abs(x0) > 0, np.abs(x0), 1.0)
            start = np.clip(x0 + 0.1 * scale * rng.standard_normal(len(x0)), lo, hi)
            trial = run(start)
            nfev += trial.nfev
            if (trial.status > 0, -trial.cost) > (best.status > 0, -best.cost):
                best = trial
            if best.status > 0:
                break

    params = unpack(best.x)
    cov = _covariance(_jacobian(resid, best.x, lo, hi))
    if scan_model.gauge is not None:
        params, signs = scan_model.gauge(params)
        d = np.array([signs[n] for n in free])
        cov = cov * np.outer(d, d)
    dof = len(data) - len(free)
    conf = {n: float(np.sqrt(max(cov[k, k], 0.0))) for k, n in enumerate(free)}
    result = FitResult(params=params, covariance=cov, confidence_68=conf,
                       chi2_reduced=float(2 * best.cost / dof), converged=bool(best.status > 0),
                       model=scan_model.name, free=free, nfev=int(nfev), message=str(best.message))
    if not result.converged:
        err = NoConvergence(f"{scan_model.name} fit did not converge: {best.message}")
        err.result = result
        raise err
    return result


def predict(result: FitResult, x) -> np.ndarray:
    return np.asarray(get_model(result.model).func(result.params, np.asarray(x, dtype=float)))


# ----------------------------------------------------------------------------
# starting guesses


def guess_freq_scan(data: ScanData, tau: float | None = None) -> dict[str, float]:
    """Rough starting point for a frequency scan: extremum location, depth and baseline."""
    base = float(np.median(np.r_[data.y[:3], data.y[-3:]]))
    k = int(np.argmax(np.abs(data.y - base)))
    depth = float(data.y[k] - base)
    span = float(np.ptp(data.x)) * 1e3 or 1.0
    r0 = span / 8
    if tau is None:
        tau = 1e3 / (2 * r0)  # near a single swap
    return {"A": depth, "r0": r0, "tau": tau, "delta_ws": float(data.x[k]), "P0": base}


def guess_time_scan(data: ScanData) -> dict[str, float]:
    """Starting point for a time scan from the dominant Fourier component."""
    order = np.argsort(data.x)
    t, y = data.x[order], data.y[order]
    grid = np.linspace(t[0], t[-1], max(len(t), 64))
    yi = np.interp(grid, t, y)
    y0 = float(np.mean(yi))
    power = np.abs(np.fft.rfft(yi - y0))
    freqs = np.fft.rfftfreq(len(grid), d=grid[1] - grid[0])  # 1/us
    k = int(np.argmax(power[1:]) + 1)
    r0 = float(freqs[k] * 1e3)
    c = np.cos(2 * np.pi * r0 * 1e-3 * t)
    s = np.sin(2 * np.pi * r0 * 1e-3 * t)
    coef, *_ = np.linalg.lstsq(np.column_stack([s, c, np.ones_like(t)]), y, rcond=None)
    amp = 2 * float(np.hypot(coef[0], coef[1]))
    phi = float(np.arctan2(coef[1], coef[0]))
    return {"A": amp, "r0": r0, "phi": phi, "gamma": 0.1, "y0": float(coef[2])}


# ----------------------------------------------------------------------------
# thermometry and heating rates


def nbar_from_sidebands(p_rsb, p_bsb):
    """Thermal occupation from red/blue sideband excitation, ``R / (1 - R)``."""
    p_rsb = np.asarray(p_rsb, dtype=float)
    p_bsb = np.asarray(p_bsb, dtype=float)
    if np.any(p_bsb <= 0) or np.any(p_rsb < 0) or np.any(p_bsb > 1):
        raise ConfigError("need 0 <= p_rsb, 0 < p_bsb <= 1")
    ratio = p_rsb / p_bsb
    if np.any(ratio >= 1):
        raise RatioOutOfRange("sideband ratio must be < 1 for a thermal state")
    out = ratio / (1 - ratio)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class HeatingFit:
    slope: float  # quanta/s
    intercept: float  # quanta
    slope_err: float
    intercept_err: float
    chi2_reduced: float


def fit_heating_rate(data: ScanData) -> HeatingFit:
    """Weighted straight line through n̄ versus delay (ms); slope returned in quanta/s."""
    if len(data) < 3:
        raise ConfigError("need at least 3 points")
    w = 1.0 / data.sigma**2
    sw, sx, sy = w.sum(), (w * data.x).sum(), (w * data.y).sum()
    sxx, sxy = (w * data.x**2).sum(), (w * data.x * data.y).sum()
    det = sw * sxx - sx**2
    if det <= 1e-12 * sw * max(sxx, 1e-300):
        raise DegenerateAbscissa("all delays are equal")
    slope = (sw * sxy - sx * sy) / det
    icpt = (sxx * sy - sx * sxy) / det
    chi2 = float((w * (data.y - slope * data.x - icpt) ** 2).sum() / (len(data) - 2))
    return HeatingFit(slope=float(slope * 1e3), intercept=float(icpt),
                      slope_err=float(np.sqrt(sw / det) * 1e3), intercept_err=float(np.sqrt(sxx / det)),
                      chi2_reduced=chi2)


def fit_kerr_occupations(data: ScanData, fixed: KerrSpectrumParams,
                         initial: tuple[float, float] = (1.0, 1.0),
                         upper: float = 10.0, seed: int = 0) -> FitResult:
    """Rocking-mode occupations ``nbar_xr``, ``nbar_yr`` from a red-sideband spectrum of zs.

    Everything except the two occupations is taken from ``fixed``, usually
    the result of a fit to a ground-state-cooled spectrum.
    """

    def func(p, x):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            return kerr_spectrum(replace(fixed, nbar_xr=p["nbar_xr"], nbar_yr=p["nbar_yr"]), x)

    scan_model = ScanModel("kerr_occupations", ("nbar_xr", "nbar_yr"), func,
                     lower={"nbar_xr": 0.0, "nbar_yr": 0.0},
                     upper={"nbar_xr": upper, "nbar_yr": upper})
    guess = {"nbar_xr": float(initial[0]), "nbar_yr": float(initial[1])}
    res = fit_model(data, scan_model, guess, seed=seed, tol=1e-12)
    fitted = replace(fixed, nbar_xr=res.params["nbar_xr"], nbar_yr=res.params["nbar_yr"])
    kerr_spectrum(fitted, data.x[:1])  # warn once if the truncation is too tight
    return res


# ----------------------------------------------------------------------------
# estimator interface


class ScanModelRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_model`.

    Parameters
    ----------
    model : str
        Registry name of the model.
    initial : dict, optional
        Starting guess; estimated from the data for the built-in scans if omitted.
    bounds : dict, optional
    fixed : tuple of str
    seed : int

    Attributes
    ----------
    params_ : dict
    confidence_68_ : dict
    covariance_ : ndarray
    result_ : FitResult
    """

    def __init__(self, model: str = "freq_scan", initial=None, bounds=None, fixed=(), seed: int = 0):
        self.model = model
        self.initial = initial
        self.bounds = bounds
        self.fixed = fixed
        self.seed = seed

    def _guess(self, data: ScanData):
        if self.initial is not None:
            return dict(self.initial)
        if self.model == "freq_scan":
            return guess_freq_scan(data)
        if self.model == "time_scan":
            return guess_time_scan(data)
        if self.model == "linear":
            slope, icpt = np.polyfit(data.x, data.y, 1)
            return {"slope": slope, "intercept": icpt}
        raise ConfigError(f"no automatic guess for {self.model!r}; pass initial")

    def fit(self, X, y, sigma=None):
        x = np.asarray(X, dtype=float).reshape(len(y), -1)[:, 0]
        sigma = np.ones(len(x)) if sigma is None else sigma
        data = ScanData(x, y, sigma)
        self.result_ = fit_model(data, self.model, self._guess(data), self.bounds,
                                 self.fixed, self.seed)
        self.params_ = dict(self.result_.params)
        self.confidence_68_ = dict(self.result_.confidence_68)
        self.covariance_ = self.result_.covariance
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        x = np.asarray(X, dtype=float).reshape(-1, 1)[:, 0]
        return predict(self.result_, x)


class HeatingRateEstimator(RegressorMixin, BaseEstimator):
    """Weighted linear heating-rate fit with delays in ms.

    Attributes
    ----------
    rate_ : float
        Heating rate in quanta/s.
    intercept_ : float
    """

    def fit(self, X, y, sigma=None):
        x = np.asarray(X, dtype=float).reshape(len(y), -1)[:, 0]
        sigma = np.ones(len(x)) if sigma is None else sigma
        self.fit_ = fit_heating_rate(ScanData(x, y, sigma))
        self.rate_ = self.fit_.slope
        self.intercept_ = self.fit_.intercept
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        x = np.asarray(X, dtype=float).reshape(-1, 1)[:, 0]
        return self.rate_ * 1e-3 * x + self.intercept_
