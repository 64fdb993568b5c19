"""Local potential expansions, parametric coupling rates and drive shaping."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .crystal import ModeTable
from .errors import ConfigError, InfeasibleTarget, MissingCurvature, OutOfRange

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


@dataclass
class FieldExpansion:
    """Second-order Taylor data of a potential (per volt, or absolute) around a point.

    Entries that are unknown may be NaN; they raise ``MissingCurvature`` when
    a coupling needs them.
    """

    evaluation_point: np.ndarray = field(default_factory=lambda: np.zeros(3))  # um
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(3))  # V/m
    hessian: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))  # V/m^2
    third_axial: float = 0.0  # V/m^3
    physical: bool = False

    def __post_init__(self):
        self.evaluation_point = np.asarray(self.evaluation_point, dtype=float).reshape(3)
        self.gradient = np.asarray(self.gradient, dtype=float).reshape(3)
        self.hessian = np.asarray(self.hessian, dtype=float).reshape(3, 3)
        h = np.nan_to_num(self.hessian)
        if not np.allclose(h, h.T, rtol=1e-12, atol=0):
            raise ConfigError("hessian must be symmetric")
        if self.physical:
            tr = np.trace(h)
            scale = max(np.max(np.abs(h)), 1e-300)
            if abs(tr) > 1e-6 * scale:
                raise ConfigError(f"physical expansion violates Laplace: trace {tr:.3e}")

    def curvature(self, axis_a: str, axis_b: str, position_um=None) -> float:
        """d^2U / d a d b at ``position_um`` (default: the evaluation point)."""
        i, j = _AXIS_INDEX[axis_a], _AXIS_INDEX[axis_b]
        value = self.hessian[i, j]
        if i == j == 2 and position_um is not None and self.third_axial != 0.0:
            dz = (position_um[2] - self.evaluation_point[2]) * 1e-6
            value = (0.0 if np.isnan(value) else value) + self.third_axial * dz
        if np.isnan(value):
            raise MissingCurvature(f"d2U/d{axis_a}d{axis_b} not available")
        return float(value)

    def scaled(self, s: float) -> "FieldExpansion":
        return FieldExpansion(self.evaluation_point, s * self.gradient, s * self.hessian,
                              s * self.third_axial, self.physical)


def cubic_expansion(third_axial: float) -> FieldExpansion:
    """Pure ``U = third_axial * z**3 / 6`` around the origin (physically incomplete)."""
    return FieldExpansion(third_axial=third_axial)


@dataclass
class CouplingResult:
    g: float  # kHz, g/2pi
    contributions: np.ndarray  # kHz, signed, per ion

    def __float__(self):
        return self.g


def _ion_positions_3d(modes: ModeTable) -> list[np.ndarray]:
    return [np.array([0.0, 0.0, z]) for z in modes.equilibrium_positions]


def coupling_rate(modes: ModeTable, field_data, mode_w: str, mode_s: str) -> CouplingResult:
    """Parametric exchange rate between two normal modes.

    Parameters
    ----------
    modes : ModeTable
    field_data : FieldExpansion or sequence of FieldExpansion
        A single expansion is Taylor-extrapolated to every ion; a sequence
        gives one expansion per ion (evaluated at that ion).
    mode_w, mode_s : str
        Mode labels.

    Returns
    -------
    CouplingResult
        ``g`` as a non-negative g/2pi in kHz and the signed per-ion terms.
    """
    if mode_w == mode_s:
        raise ConfigError("mode_w and mode_s must differ")
    mw, ms = modes.get(mode_w), modes.get(mode_s)
    positions = _ion_positions_3d(modes)
    if isinstance(field_data, FieldExpansion):
        expansions = [field_data] * len(positions)
        at = positions
    else:
        expansions = list(field_data)
        if len(expansions) != len(positions):
            raise ConfigError("need one field expansion per ion")
        at = [None] * len(positions)

    ww = 2 * np.pi * mw.frequency * 1e6
    ws = 2 * np.pi * ms.frequency * 1e6
    terms = np.zeros(len(positions))
    for j, (sp, ex, pos) in enumerate(zip(modes.species, expansions, at)):
        prod = mw.participation[j] * ms.participation[j]
        if prod == 0.0:
            continue
        alpha = ex.curvature(mw.axis, ms.axis, pos)
        terms[j] = sp.charge_c * alpha * prod / (4 * sp.mass_kg * np.sqrt(ww * ws))
    to_khz = 1.0 / (2 * np.pi) / 1e3
    return CouplingResult(abs(terms.sum()) * to_khz, terms * to_khz)


# ----------------------------------------------------------------------------
# electrode amplitude optimization


@dataclass
class ElectrodeBasis:
    """Per-unit-volt expansions of each electrode at each ion position."""

    electrode_ids: list[int]
    expansions: list[list[FieldExpansion]]  # [electrode][ion]

    def __post_init__(self):
        if not self.electrode_ids:
            raise ConfigError("electrode basis is empty")
        if len(self.expansions) != len(self.electrode_ids):
            raise ConfigError("one expansion list per electrode required")
        n_ions = {len(e) for e in self.expansions}
        if len(n_ions) != 1:
            raise ConfigError("all electrodes must cover the same ions")

    @property
    def n_ions(self) -> int:
        return len(self.expansions[0])

    def component(self, key: tuple) -> np.ndarray:
        """Row of per-volt values of component ``key`` over electrodes.

        Keys: ``("grad", axis, ion)``, ``("hess", "xz", ion)``, ``("third", ion)``.
        """
        return np.array([_component_value(ex, key) for ex in self.expansions])

    @classmethod
    def from_json(cls, path_or_doc) -> "ElectrodeBasis":
        doc = path_or_doc
        if isinstance(path_or_doc, (str, Path)):
            doc = json.loads(Path(path_or_doc).read_text())
        ids, exps = [], []
        try:
            for el in doc["electrodes"]:
                ids.append(int(el["id"]))
                exps.append([
                    FieldExpansion(
                        evaluation_point=e.get("position_um", [0, 0, 0]),
                        gradient=e.get("gradient_v_per_m", [0, 0, 0]),
                        hessian=e.get("hessian_v_per_m2", np.zeros((3, 3))),
                        third_axial=e.get("third_axial_v_per_m3", 0.0),
                        physical=True,
                    )
                    for e in el["expansions"]
                ])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed electrode basis: {exc}") from exc
        return cls(ids, exps)

    def to_json(self) -> dict:
        return {"electrodes": [
            {"id": i, "expansions": [
                {"position_um": e.evaluation_point.tolist(),
                 "gradient_v_per_m": e.gradient.tolist(),
                 "hessian_v_per_m2": e.hessian.tolist(),
                 "third_axial_v_per_m3": e.third_axial} for e in exps]}
            for i, exps in zip(self.electrode_ids, self.expansions)]}


def _component_value(ions: Sequence[FieldExpansion], key: tuple) -> float:
    kind = key[0]
    if kind == "grad":
        _, axis, ion = key
        return ions[ion].gradient[_AXIS_INDEX[axis]]
    if kind == "hess":
        _, pair, ion = key
        return ions[ion].hessian[_AXIS_INDEX[pair[0]], _AXIS_INDEX[pair[1]]]
    if kind == "third":
        return ions[key[1]].third_axial
    raise ConfigError(f"unknown component {key!r}")


@dataclass
class AmplitudeSolution:
    amplitudes: np.ndarray  # V per electrode
    achieved: dict  # component -> value
    target_residual: float


def optimize_amplitudes(basis: ElectrodeBasis, target: Mapping[tuple, float],
                        nulls: Sequence[tuple] = (), weights=None, target_weight: float = 1.0,
                        tol: float = 1e-9) -> AmplitudeSolution:
    """Weighted least-squares electrode amplitudes.

    Minimizes ``target_weight**2 * |A_t V - t|**2 + sum_k w_k**2 (A_k V)**2``
    and returns the minimum-norm solution. Targets are met exactly whenever
    they are compatible with zeroing the nulled components.
    """
    if not target:
        raise ConfigError("at least one target component is required")
    t_keys = list(target)
    a_t = np.array([basis.component(k) for k in t_keys])
    b_t = np.array([target[k] for k in t_keys], dtype=float)

    # target must lie in the span of the basis on its own
    v0, *_ = np.linalg.lstsq(a_t, b_t, rcond=None)
    miss = np.linalg.norm(a_t @ v0 - b_t)
    if miss > tol * max(np.linalg.norm(b_t), 1e-300):
        raise InfeasibleTarget(f"target not reachable with this basis (residual {miss:.3e})")

    nulls = list(nulls)
    w = np.ones(len(nulls)) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != len(nulls):
        raise ConfigError("one weight per nulled component")
    rows = [target_weight * a_t]
    rhs = [target_weight * b_t]
    if nulls:
        a_n = np.array([basis.component(k) for k in nulls])
        rows.append(w[:, None] * a_n)
        rhs.append(np.zeros(len(nulls)))
    v, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)

    achieved = {k: float(basis.component(k) @ v) for k in t_keys + nulls}
    residual = float(np.linalg.norm(a_t @ v - b_t))
    return AmplitudeSolution(v, achieved, residual)


# ----------------------------------------------------------------------------
# pulse shaping and filtering


@dataclass(frozen=True)
class PulseEnvelope:
    ramp_time: float = 20.0  # us
    flat_time: float = 0.0  # us
    ramp_freq: float = 12.5  # kHz

    def __post_init__(self):
        if self.ramp_time < 0 or self.flat_time < 0 or self.ramp_freq <= 0:
            raise ConfigError("envelope times must be >= 0 and ramp_freq > 0")

    @property
    def total_time(self) -> float:
        return 2 * self.ramp_time + self.flat_time

    @property
    def equivalent_square_time(self) -> float:
        return self.ramp_time + self.flat_time

    @classmethod
    def for_area(cls, square_time: float, ramp_time: float = 20.0, ramp_freq: float = 12.5):
        """Envelope whose area equals a square pulse of ``square_time`` (us)."""
        if square_time < ramp_time:
            raise ConfigError("square_time must be at least the ramp time")
        return cls(ramp_time, square_time - ramp_time, ramp_freq)


def envelope_value(env: PulseEnvelope, t):
    """Envelope amplitude fraction at time ``t`` (us); sine-squared ramps."""
    t = np.asarray(t, dtype=float)
    total = env.total_time
    if np.any(t < 0) or np.any(t > total * (1 + 1e-12) + 1e-12):
        raise OutOfRange(f"t outside [0, {total}] us")
    ramp = lambda x: np.sin(2 * np.pi * env.ramp_freq * 1e-3 * x) ** 2  # noqa: E731
    out = np.where(t < env.ramp_time, ramp(t),
                   np.where(t > env.ramp_time + env.flat_time, ramp(np.clip(total - t, 0, None)), 1.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FilterModel:
    corner_freq: float = 50.0  # kHz
    stages: int = 2

    def __post_init__(self):
        if self.corner_freq <= 0 or self.stages < 1:
            raise ConfigError("corner_freq > 0 and stages >= 1 required")


def filter_attenuation(filt: FilterModel, f_mhz):
    """Amplitude response of ``stages`` cascaded single-pole low-pass sections."""
    x = np.asarray(f_mhz, dtype=float) * 1e3 / filt.corner_freq
    out = (1.0 + x**2) ** (-filt.stages / 2.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class CouplingDrive:
    mode_w: str
    mode_s: str
    drive_freq: float  # MHz
    coupling_rate: float  # kHz, g/2pi
    envelope: PulseEnvelope = field(default_factory=PulseEnvelope)
    amplitudes: np.ndarray | None = None

    def __post_init__(self):
        if self.coupling_rate < 0:
            raise ConfigError("coupling rate must be >= 0")
        if self.drive_freq <= 0:
            raise ConfigError("drive frequency must be positive")

    @property
    def exchange_rate(self) -> float:
        """r0 = 2 g in kHz."""
        return 2.0 * self.coupling_rate

