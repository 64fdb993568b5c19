"""Mean-occupation dynamics of pulsed and simultaneous indirect cooling.

Durations are in us, heating rates in quanta/s and cooling rates in 1/s.
Every schedule element acts on the occupation vector as an affine map, so a
whole cooling cycle is affine too and its fixed point is a linear solve.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.linalg import expm
from scipy.special import j0

from .errors import ConfigError, NoSteadyState, UnknownMode
from .exchange import MomentState, _RAD, moment_generator

_US = 1e-6  # s per us


@dataclass(frozen=True)
class ModeRates:
    heating_rate: float = 0.0  # quanta/s
    csbc_rate: float = 0.0  # 1/s
    cooling_floor: float = 0.0  # quanta
    second_order_rate: float | None = None  # 1/s
    second_order_floor: float | None = None

    def __post_init__(self):
        vals = [self.heating_rate, self.csbc_rate, self.cooling_floor,
                self.second_order_rate or 0.0, self.second_order_floor or 0.0]
        if min(vals) < 0:
            raise ConfigError("rates and floors must be >= 0")

    def cooling(self, order: int) -> tuple[float, float]:
        """(rate, floor) of a first- or second-order sideband pulse."""
        if order == 1:
            return self.csbc_rate, self.cooling_floor
        if order == 2:
            if self.second_order_rate is None:
                raise ConfigError("second-order pulse needs second_order_rate")
            floor = self.cooling_floor if self.second_order_floor is None else self.second_order_floor
            return self.second_order_rate, floor
        raise ConfigError("sideband order must be 1 or 2")


@dataclass(frozen=True)
class ContinuousCoolingParams:
    kappa0: float = 8000.0  # 1/s
    linewidth: float = 5.0  # kHz
    dk: float | None = None  # 1/m
    beta: float = 0.0  # nm/kHz

    def __post_init__(self):
        if not self.linewidth > 0:
            raise ConfigError("cooling linewidth must be > 0")
        if self.beta < 0 or self.kappa0 < 0:
            raise ConfigError("kappa0 and beta must be >= 0")

    def effective_rate(self, g: float) -> float:
        """Cooling rate of the strongly cooled mode while coupled at ``g`` kHz."""
        kappa = self.kappa0 / (1.0 + (2.0 * g / self.linewidth) ** 2)
        if self.dk is not None and self.beta > 0:
            kappa *= j0(self.dk * self.beta * 1e-9 * 2.0 * g) ** 2
        return float(kappa)


# ----------------------------------------------------------------------------
# schedule elements


def _positive(duration):
    if not duration > 0:
        raise ConfigError(f"duration must be > 0, got {duration}")


@dataclass(frozen=True)
class CsbcPulse:
    mode: str
    duration: float
    order: int = 1

    def __post_init__(self):
        _positive(self.duration)
        if self.order not in (1, 2):
            raise ConfigError("sideband order must be 1 or 2")


@dataclass(frozen=True)
class Swap:
    pair: tuple[str, str]
    duration: float
    fidelity: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "pair", tuple(self.pair))
        _positive(self.duration)
        if len(self.pair) != 2 or self.pair[0] == self.pair[1]:
            raise ConfigError("swap needs two distinct modes")
        if not 0.0 <= self.fidelity <= 1.0:
            raise ConfigError("fidelity must lie in [0, 1]")


@dataclass(frozen=True)
class Delay:
    duration: float

    def __post_init__(self):
        _positive(self.duration)


@dataclass(frozen=True)
class SimultaneousCool:
    """Coupling (weak, strong) at ``g`` kHz while sideband-cooling the strong mode."""
    pair: tuple[str, str]
    g: float
    duration: float
    params: ContinuousCoolingParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "pair", tuple(self.pair))
        _positive(self.duration)
        if len(self.pair) != 2 or self.pair[0] == self.pair[1]:
            raise ConfigError("simultaneous cooling needs two distinct modes")
        if self.g < 0:
            raise ConfigError("g must be >= 0")


@dataclass(frozen=True)
class TrapRamp:
    """Instantaneous change of trap settings; optionally swaps in new rates."""
    label: str = ""
    rates: Mapping[str, ModeRates] | None = field(default=None, hash=False)


@dataclass(frozen=True)
class Repeat:
    block: tuple
    count: int

    def __post_init__(self):
        object.__setattr__(self, "block", tuple(self.block))
        if int(self.count) != self.count or self.count < 0:
            raise ConfigError("repeat count must be a non-negative integer")


Element = Union[CsbcPulse, Swap, Delay, SimultaneousCool, TrapRamp, Repeat]


@dataclass(frozen=True)
class Schedule:
    elements: tuple

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))

    def flatten(self) -> list:
        return _flatten(self.elements)

    def modes(self) -> set[str]:
        out = set()
        for el in self.flatten():
            if isinstance(el, CsbcPulse):
                out.add(el.mode)
            elif isinstance(el, (Swap, SimultaneousCool)):
                out.update(el.pair)
        return out

    def duration(self) -> float:
        return float(sum(getattr(el, "duration", 0.0) for el in self.flatten()))

    def validate(self, rates: Mapping[str, ModeRates]) -> None:
        missing = sorted(self.modes() - set(rates))
        if missing:
            raise UnknownMode(f"schedule references unknown modes {missing}")
        for el in self.flatten():
            if isinstance(el, TrapRamp) and el.rates is not None:
                extra = sorted(set(rates) - set(el.rates))
                if extra:
                    raise UnknownMode(f"trap ramp drops rates for {extra}")

    def repeated(self, count: int) -> "Schedule":
        return Schedule((Repeat(self.elements, count),))


def _flatten(elements) -> list:
    out = []
    for el in elements:
        if isinstance(el, Repeat):
            block = _flatten(el.block)
            for _ in range(el.count):
                out.extend(block)
        else:
            out.append(el)
    return out


# ----------------------------------------------------------------------------
# element maps


@dataclass
class OccupationTrajectory:
    times: np.ndarray  # us
    modes: tuple[str, ...]
    nbar: np.ndarray  # (len(times), len(modes))

    def __post_init__(self):
        if np.any(self.nbar < -1e-12):
            raise ConfigError("negative occupation in trajectory")

    def final(self) -> dict[str, float]:
        return {m: float(self.nbar[-1, k]) for k, m in enumerate(self.modes)}

    def series(self, mode: str) -> np.ndarray:
        if mode not in self.modes:
            raise UnknownMode(mode)
        return self.nbar[:, self.modes.index(mode)]

    def to_csv(self, header: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_us", *[f"nbar_{m}" for m in self.modes]])
        for t, row in zip(self.times, self.nbar):
            w.writerow([_fmt(t), *[_fmt(v) for v in row]])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


def _relax(n0, rate, floor, heating, t_us):
    """Exponential relaxation toward ``floor + heating/rate`` (linear heating when rate = 0)."""
    if rate == 0:
        return n0 + heating * t_us * _US
    target = floor + heating / rate
    return target + (n0 - target) * np.exp(-rate * t_us * _US)


def _heat_all(n, idx, rates, t_us, skip=()):
    for m, k in idx.items():
        if m not in skip:
            n[k] = n[k] + rates[m].heating_rate * t_us * _US


def _simultaneous(nw, ns, rw: ModeRates, rs: ModeRates, el: SimultaneousCool, t_us):
    params = el.params or ContinuousCoolingParams(kappa0=rs.csbc_rate, linewidth=np.inf)
    traj = _moment_flow(MomentState(max(nw, 0.0), max(ns, 0.0)), el.g, rw, rs, params,
                        np.array([t_us]))
    return traj[-1][0], traj[-1][1]


def _apply(n: np.ndarray, el, idx, rates, t_us: float | None = None) -> np.ndarray:
    """Apply ``el`` (or its first ``t_us`` us) to a copy of ``n``."""
    n = n.copy()
    dur = el.duration if t_us is None else t_us
    if isinstance(el, CsbcPulse):
        rate, floor = rates[el.mode].cooling(el.order)
        k = idx[el.mode]
        n[k] = _relax(n[k], rate, floor, rates[el.mode].heating_rate, dur)
        _heat_all(n, idx, rates, dur, skip=(el.mode,))
    elif isinstance(el, Swap):
        a, b = idx[el.pair[0]], idx[el.pair[1]]
        frac = dur / el.duration
        # partial swaps interpolate the exchanged fraction as sin^2
        f = el.fidelity * np.sin(0.5 * np.pi * frac) ** 2
        na, nb = n[a], n[b]
        n[a], n[b] = f * nb + (1 - f) * na, f * na + (1 - f) * nb
        _heat_all(n, idx, rates, dur)
    elif isinstance(el, Delay):
        _heat_all(n, idx, rates, dur)
    elif isinstance(el, SimultaneousCool):
        w, s = el.pair
        n[idx[w]], n[idx[s]] = _simultaneous(n[idx[w]], n[idx[s]], rates[w], rates[s], el, dur)
        _heat_all(n, idx, rates, dur, skip=(w, s))
    return n


def _walk(schedule: Schedule, n0: np.ndarray, idx, rates, samples_per_element: int = 1):
    """Yield (time, occupations) after each element, with optional interior samples."""
    rates = dict(rates)
    t, n = 0.0, n0.copy()
    yield t, n, rates
    for el in schedule.flatten():
        if isinstance(el, TrapRamp):
            if el.rates is not None:
                rates = {m: el.rates[m] for m in idx}
            continue
        for j in range(1, samples_per_element):
            frac = el.duration * j / samples_per_element
            yield t + frac, _apply(n, el, idx, rates, frac), rates
        n = _apply(n, el, idx, rates)
        t += el.duration
        yield t, n, rates


def run_schedule(schedule: Schedule, initial: Mapping[str, float],
                 rates: Mapping[str, ModeRates], samples_per_element: int = 1) -> OccupationTrajectory:
    """Mean occupations of all modes through ``schedule``.

    Parameters
    ----------
    schedule : Schedule
    initial : mapping
        Starting n̄ per mode. Every mode in ``rates`` is tracked.
    rates : mapping of ModeRates
    samples_per_element : int
        Number of samples inside each timed element (1 = boundaries only).
    """
    modes = tuple(sorted(rates))
    schedule.validate(rates)
    missing = sorted(set(modes) - set(initial))
    if missing:
        raise UnknownMode(f"no initial occupation for {missing}")
    idx = {m: k for k, m in enumerate(modes)}
    n0 = np.array([float(initial[m]) for m in modes])
    if np.any(n0 < 0):
        raise ConfigError("initial occupations must be >= 0")
    times, rows = [], []
    for t, n, _ in _walk(schedule, n0, idx, rates, samples_per_element):
        times.append(t)
        rows.append(n)
    return OccupationTrajectory(np.array(times), modes, np.array(rows))


def cycle_map(schedule: Schedule, rates: Mapping[str, ModeRates]):
    """Affine map ``n -> M n + b`` of one pass through ``schedule``.

    Returns ``(modes, M, b)``.
    """
    modes = tuple(sorted(rates))
    schedule.validate(rates)
    idx = {m: k for k, m in enumerate(modes)}

    def once(n):
        last = n
        for _, last, _ in _walk(schedule, n, idx, rates):
            pass
        return last

    b = once(np.zeros(len(modes)))
    m = np.column_stack([once(np.eye(len(modes))[k]) - b for k in range(len(modes))])
    return modes, m, b


# ----------------------------------------------------------------------------
# continuous scheme


def _moment_flow(state: MomentState, g: float, rw: ModeRates, rs: ModeRates,
                 params: ContinuousCoolingParams, times_us: np.ndarray) -> list[np.ndarray]:
    a, b = _continuous_system(g, rw, rs, params)
    aug = np.zeros((5, 5))
    aug[:4, :4], aug[:4, 4] = a, b
    x0 = np.append(state.as_vector(), 1.0)
    return [(expm(aug * t) @ x0)[:4] for t in times_us]


def _continuous_system(g, rw: ModeRates, rs: ModeRates, params: ContinuousCoolingParams):
    """Affine generator (per us) of (n_w, n_s, Re c, Im c)."""
    kappa = params.effective_rate(g) * _US
    a = moment_generator(_RAD * g, 0.0, 0.0)
    a[1, 1] -= kappa
    a[2, 2] -= kappa / 2
    a[3, 3] -= kappa / 2
    b = np.array([rw.heating_rate * _US, kappa * rs.cooling_floor + rs.heating_rate * _US, 0.0, 0.0])
    return a, b


@dataclass
class MomentTrajectory:
    times: np.ndarray  # us
    states: list[MomentState]

    @property
    def nbar_w(self) -> np.ndarray:
        return np.array([s.nbar_w for s in self.states])

    @property
    def nbar_s(self) -> np.ndarray:
        return np.array([s.nbar_s for s in self.states])


def continuous_cool(initial: MomentState, g: float, rates_w: ModeRates, rates_s: ModeRates,
                    params: ContinuousCoolingParams, duration: float,
                    n_samples: int = 101) -> MomentTrajectory:
    """Simultaneous coupling at ``g`` kHz and sideband cooling of the strong mode.

    The strong mode relaxes at ``params.effective_rate(g)`` toward its floor,
    both modes heat, and the pair exchanges coherently. The affine moment
    system is propagated exactly.
    """
    if g < 0:
        raise ConfigError("g must be >= 0")
    if duration < 0:
        raise ConfigError("duration must be >= 0")
    times = np.linspace(0.0, duration, max(int(n_samples), 2))
    xs = _moment_flow(initial, g, rates_w, rates_s, params, times)
    return MomentTrajectory(times, [MomentState.from_vector(x) for x in xs])


def sweep_coupling(r0_values: Sequence[float], initial: MomentState, rates_w: ModeRates,
                   rates_s: ModeRates, params: ContinuousCoolingParams, duration: float,
                   which: str = "w") -> np.ndarray:
    """Final occupation of one mode versus exchange rate r0 = 2g (kHz)."""
    out = []
    for r0 in r0_values:
        traj = continuous_cool(initial, 0.5 * float(r0), rates_w, rates_s, params, duration, 2)
        last = traj.states[-1]
        out.append(last.nbar_w if which == "w" else last.nbar_s)
    return np.array(out)


# ----------------------------------------------------------------------------
# steady states


@dataclass(frozen=True)
class ContinuousScheme:
    mode_w: str
    mode_s: str
    g: float
    params: ContinuousCoolingParams = field(default_factory=ContinuousCoolingParams)


def steady_state(rates: Mapping[str, ModeRates], scheme=None,
                 modes: Sequence[str] | None = None) -> dict[str, float]:
    """Long-time occupations.

    Parameters
    ----------
    rates : mapping of ModeRates
    scheme : None, Schedule or ContinuousScheme
        ``None`` treats each mode as continuously sideband cooled, a
        ``Schedule`` is taken as one repeated cycle, and a
        ``ContinuousScheme`` solves the damped coupled-mode moments.
    modes : sequence of str, optional
        Modes to report; all relevant modes by default.

    Raises
    ------
    NoSteadyState
        If a requested mode is not damped by the scheme.
    """
    if scheme is None:
        wanted = list(modes) if modes is not None else sorted(rates)
        out = {}
        for m in wanted:
            if m not in rates:
                raise UnknownMode(m)
            r = rates[m]
            if r.csbc_rate == 0:
                raise NoSteadyState(f"mode {m} is not cooled")
            out[m] = r.cooling_floor + r.heating_rate / r.csbc_rate
        return out
    if isinstance(scheme, Schedule):
        return _pulsed_fixed_point(scheme, rates, modes)
    if isinstance(scheme, ContinuousScheme):
        return _continuous_fixed_point(scheme, rates, modes)
    raise ConfigError(f"unsupported scheme {type(scheme).__name__}")


def _pulsed_fixed_point(schedule, rates, modes):
    names, m, b = cycle_map(schedule, rates)
    wanted = list(modes) if modes is not None else list(names)
    for w in wanted:
        if w not in names:
            raise UnknownMode(w)
    # a mode the cycle never touches keeps an identity row and column
    eye = np.eye(len(names))
    free = [k for k in range(len(names))
            if np.allclose(m[k], eye[k], atol=1e-15) and np.allclose(m[:, k], eye[:, k], atol=1e-15)]
    for w in wanted:
        if names.index(w) in free:
            raise NoSteadyState(f"mode {w} is never cooled by the cycle")
    keep = [k for k in range(len(names)) if k not in free]
    sub = m[np.ix_(keep, keep)]
    if np.max(np.abs(np.linalg.eigvals(sub))) >= 1 - 1e-12:
        raise NoSteadyState("cycle map is not a contraction")
    fixed = np.linalg.solve(np.eye(len(keep)) - sub, b[keep])
    full = dict(zip([names[k] for k in keep], fixed))
    return {w: float(full[w]) for w in wanted}


def _continuous_fixed_point(scheme: ContinuousScheme, rates, modes):
    for m in (scheme.mode_w, scheme.mode_s):
        if m not in rates:
            raise UnknownMode(m)
    wanted = list(modes) if modes is not None else [scheme.mode_w, scheme.mode_s]
    a, b = _continuous_system(scheme.g, rates[scheme.mode_w], rates[scheme.mode_s], scheme.params)
    kappa = scheme.params.effective_rate(scheme.g)
    if kappa == 0 or (scheme.g == 0 and scheme.mode_w in wanted):
        raise NoSteadyState("weak mode is undamped without coupling and cooling")
    x = np.linalg.solve(a, -b)
    vals = {scheme.mode_w: float(x[0]), scheme.mode_s: float(x[1])}
    for w in wanted:
        if w not in vals:
            raise UnknownMode(w)
    return {w: vals[w] for w in wanted}


# ----------------------------------------------------------------------------
# JSON schedules


def _element_from_dict(d: Mapping) -> Element:
    kind = d.get("type")
    try:
        if kind == "csbc":
            return CsbcPulse(d["mode"], float(d["duration_us"]), int(d.get("order", 1)))
        if kind == "swap":
            return Swap(tuple(d["pair"]), float(d["duration_us"]), float(d.get("fidelity", 0.99)))
        if kind == "delay":
            return Delay(float(d["duration_us"]))
        if kind == "simultaneous":
            params = d.get("params")
            params = ContinuousCoolingParams(**params) if params is not None else None
            return SimultaneousCool(tuple(d["pair"]), float(d["g_khz"]), float(d["duration_us"]),
                                    params)
        if kind == "trap_ramp":
            new = d.get("rates")
            new = rates_from_dict(new) if new is not None else None
            return TrapRamp(d.get("label", ""), new)
        if kind == "repeat":
            return Repeat(tuple(_element_from_dict(e) for e in d["block"]), int(d["count"]))
    except KeyError as exc:
        raise ConfigError(f"{kind} element missing key {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ConfigError(f"bad {kind} element: {exc}") from None
    raise ConfigError(f"unknown schedule element type {kind!r}")


def schedule_from_dict(data) -> Schedule:
    """Build a Schedule from ``{"elements": [...]}`` or a bare element list."""
    items = data["elements"] if isinstance(data, Mapping) else data
    if not isinstance(items, list):
        raise ConfigError("schedule must be a list of elements")
    return Schedule(tuple(_element_from_dict(e) for e in items))


def schedule_from_json(text: str) -> Schedule:
    return schedule_from_dict(json.loads(text))


def rates_from_dict(data: Mapping) -> dict[str, ModeRates]:
    keys = {"heating_rate": "heating_rate_per_s", "csbc_rate": "csbc_rate_per_s",
            "cooling_floor": "cooling_floor", "second_order_rate": "second_order_rate_per_s",
            "second_order_floor": "second_order_floor"}
    out = {}
    for mode, block in data.items():
        unknown = set(block) - set(keys.values())
        if unknown:
            raise ConfigError(f"rates for {mode}: unknown keys {sorted(unknown)}")
        out[mode] = ModeRates(**{attr: block[k] for attr, k in keys.items() if k in block})
    return out
