"""Batch command-line interface.

One JSON config per run::

    modecool --config run.json --out result.csv [--seed 7]

The config's ``command`` selects one of ``modes``, ``couple-scan``, ``cool``,
``spectrum`` or ``fit``. Exit codes: 0 success, 2 invalid input, 3 a fit did
not converge (the result is still written).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .cooling import (ContinuousCoolingParams, continuous_cool, rates_from_dict, run_schedule,
                      schedule_from_dict, steady_state)
from .crystal import CrystalConfig, TrapConfig, mode_table
from .errors import ConfigError, ModecoolError, NoConvergence, TruncationWarning
from .exchange import ExchangeParams, MomentState
from .fitkit import ScanData, fit_heating_rate, fit_kerr_occupations, fit_model
from .presets import CRYSTALS, be_mg_cycle, be_mg_rates
from .spectro import (FreqScanParams, KerrSpectrumParams, RabiParams, TimeScanParams,
                      bessel_suppression, freq_scan_model, kerr_spectrum, rsb_rabi,
                      single_phonon_transfer, time_scan_model, two_ion_dark_counts)

EXIT_OK, EXIT_INVALID, EXIT_NOCONV = 0, 2, 3
COMMANDS = ("modes", "couple-scan", "cool", "spectrum", "fit")

# config keys carry their units; these map them onto library field names
_UNIT_KEYS = {
    "r0_khz": "r0", "tau_us": "tau", "delta_ws_mhz": "delta_ws", "phi_rad": "phi",
    "gamma_per_ms": "gamma", "g_khz": "g", "detuning_khz": "detuning", "phase_rad": "phase",
    "f_rsb_mhz": "f_rsb", "chi_zs_xr_hz": "chi_zs_xr", "chi_zs_yr_hz": "chi_zs_yr",
    "pulse_time_us": "pulse_time", "omega_khz": "Omega", "omega0_khz": "Omega0",
    "kappa0_per_s": "kappa0", "linewidth_khz": "linewidth", "dk_per_m": "dk",
    "beta_nm_per_khz": "beta",
}


class Invalid(Exception):
    """Collected configuration errors, one message each."""

    def __init__(self, messages):
        self.messages = list(messages) if isinstance(messages, (list, tuple)) else [messages]
        super().__init__("; ".join(self.messages))


def _units(block: dict, allowed: set[str], where: str) -> dict:
    out, errs = {}, []
    for k, v in block.items():
        name = _UNIT_KEYS.get(k, k)
        if name not in allowed:
            errs.append(f"{where}: unknown key {k!r}")
        else:
            out[name] = v
    if errs:
        raise Invalid(errs)
    return out


def _build(cls, block: dict, where: str):
    fields = set(cls.__dataclass_fields__)
    kw = _units(block, fields, where)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise Invalid(f"{where}: {exc}") from None
    except ConfigError as exc:
        raise Invalid(f"{where}: {exc}") from None


def _grid(block, where="grid") -> np.ndarray:
    if not isinstance(block, dict):
        raise Invalid(f"{where}: expected an object with start, stop, num")
    try:
        start, stop = float(block["start"]), float(block["stop"])
        num = int(block.get("num", 1))
    except (KeyError, TypeError, ValueError) as exc:
        raise Invalid(f"{where}: needs numeric start and stop ({exc})") from None
    if not (np.isfinite(start) and np.isfinite(stop)):
        raise Invalid(f"{where}: start and stop must be finite")
    if stop < start:
        raise Invalid(f"{where}: stop must be >= start")
    if start == stop:
        return np.array([start])
    if num < 2:
        raise Invalid(f"{where}: num must be >= 2 for a non-zero-width grid")
    return np.linspace(start, stop, num)


def _fmt(x) -> str:
    return f"{float(x):.12g}"


def _csv(header_lines, columns, rows) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Run:
    def __init__(self, config: dict, config_path: Path, out: Path, seed: int | None, digest: str):
        self.config = config
        self.base = config_path.parent
        self.out = out
        self.seed = seed
        self.digest = digest

    @property
    def header(self) -> list[str]:
        lines = [f"modecool {__version__}", f"config_sha256 {self.digest}",
                 f"command {self.config['command']}"]
        if self.seed is not None:
            lines.append(f"seed {self.seed}")
        return lines

    def meta(self) -> dict:
        return {"tool": "modecool", "version": __version__, "config_sha256": self.digest,
                "command": self.config["command"], "seed": self.seed}

    def write_json(self, path: Path, payload: dict) -> None:
        payload = dict(payload)
        payload["_meta"] = self.meta()
        _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def block(self, name: str) -> dict:
        b = self.config.get(name)
        if not isinstance(b, dict):
            raise Invalid(f"config needs a {name!r} object")
        return b

    def rng(self):
        if self.seed is None:
            raise Invalid("noise requested but no seed given (--seed or config 'seed')")
        return np.random.default_rng(self.seed)


# ----------------------------------------------------------------------------
# commands


def _crystal_and_trap(cfg: dict):
    if "preset" in cfg:
        try:
            return CRYSTALS[cfg["preset"]]
        except KeyError:
            raise Invalid(f"unknown preset {cfg['preset']!r}; have {sorted(CRYSTALS)}") from None
    errs = []
    crystal = cfg.get("crystal")
    trap = cfg.get("trap")
    species = None
    if not isinstance(crystal, dict) or "species_order" not in crystal:
        errs.append("crystal: needs species_order")
    else:
        try:
            species = CrystalConfig(tuple(crystal["species_order"]))
        except ConfigError as exc:
            errs.append(str(exc))
    keys = {"reference_species": "reference_species", "axial_freq_ref_mhz": "axial_freq_ref",
            "radial_pseudo_freq_x_ref_mhz": "radial_pseudo_freq_x_ref",
            "radial_pseudo_freq_y_ref_mhz": "radial_pseudo_freq_y_ref"}
    trap_cfg = None
    if not isinstance(trap, dict):
        errs.append("trap: missing block")
    else:
        missing = [k for k in keys if k not in trap]
        unknown = sorted(set(trap) - set(keys))
        errs += [f"trap: missing {k}" for k in missing]
        errs += [f"trap: unknown key {k!r}" for k in unknown]
        if not missing and not unknown:
            try:
                trap_cfg = TrapConfig(**{keys[k]: v for k, v in trap.items()})
            except (ConfigError, TypeError) as exc:
                errs.append(f"trap: {exc}")
    if errs:
        raise Invalid(errs)
    return species, trap_cfg


def cmd_modes(run: Run) -> int:
    crystal, trap = _crystal_and_trap(run.config)
    table = mode_table(crystal, trap)
    n = len(crystal)
    cols = ["label", "axis", "frequency_mhz", *[f"participation_{k + 1}" for k in range(n)]]
    rows = [[m.label, m.axis, m.frequency, *m.participation] for m in table]
    extra = [f"positions_um {' '.join(_fmt(p) for p in table.equilibrium_positions)}"]
    _atomic_write(run.out, _csv(run.header + extra, cols, rows))
    return EXIT_OK


def _scan_values(cfg: dict, x: np.ndarray) -> np.ndarray:
    model = cfg.get("model")
    params = cfg.get("params", {})
    if model == "freq_scan":
        return np.atleast_1d(freq_scan_model(_build(FreqScanParams, params, "params"), x))
    if model == "time_scan":
        return np.atleast_1d(time_scan_model(_build(TimeScanParams, params, "params"), x))
    if model in ("transfer", "dark_w", "dark_s"):
        p = dict(params)
        axis = cfg.get("axis", "time")
        exact = bool(p.pop("exact", False))
        if axis == "time":
            ex = _build(ExchangeParams, p, "params")
            if model == "transfer":
                return np.atleast_1d(single_phonon_transfer(ex, x)[1])
            return np.atleast_1d(two_ion_dark_counts(ex, x, model[-1], exact))
        if axis == "frequency":
            # x is the drive frequency in MHz; detuning is taken from delta_ws
            dur = p.pop("duration_us", None)
            dws = p.pop("delta_ws_mhz", None)
            if dur is None or dws is None:
                raise Invalid("params: frequency axis needs duration_us and delta_ws_mhz")
            out = []
            for xi in x:
                ex = _build(ExchangeParams, dict(p, detuning_khz=(xi - dws) * 1e3), "params")
                if model == "transfer":
                    out.append(single_phonon_transfer(ex, dur)[1])
                else:
                    out.append(two_ion_dark_counts(ex, dur, model[-1], exact))
            return np.array(out, dtype=float)
        raise Invalid(f"axis must be 'time' or 'frequency', got {axis!r}")
    raise Invalid(f"unknown scan model {model!r}")


def cmd_scan(run: Run) -> int:
    cfg = run.block("scan")
    x = _grid(cfg.get("grid"))
    y = _scan_values(cfg, x)
    noise = cfg.get("noise")
    if noise is None:
        rows = zip(x, y)
        cols = ["x", "value"]
    else:
        sigma = float(noise.get("sigma", 0.0))
        if not sigma > 0:
            raise Invalid("noise: sigma must be > 0")
        if noise.get("add", True):
            yn = y + sigma * run.rng().standard_normal(len(y))
        else:
            yn = y.copy()
        rows = zip(x, y, yn, np.full(len(y), sigma))
        cols = ["x", "value", "y", "sigma"]
    _atomic_write(run.out, _csv(run.header, cols, rows))
    return EXIT_OK


def _summary_path(out: Path) -> Path:
    return out.with_name(out.stem + ".summary.json")


def _cool_pulsed(run: Run, cfg: dict) -> int:
    if cfg.get("preset") == "Be-Mg":
        schedule, rates = be_mg_cycle(), be_mg_rates()
    else:
        try:
            schedule = schedule_from_dict(cfg["schedule"])
            rates = rates_from_dict(cfg["rates"])
        except KeyError as exc:
            raise Invalid(f"cool: missing {exc.args[0]!r}") from None
    initial = cfg.get("initial")
    if not isinstance(initial, dict):
        raise Invalid("cool: needs an 'initial' occupation per mode")
    schedule.validate(rates)
    counts = cfg.get("repeat_sweep")
    summary: dict = {}
    if counts is not None:
        counts = [int(c) for c in counts]
        if any(c < 0 for c in counts):
            raise Invalid("cool: repeat counts must be >= 0")
        modes = sorted(rates)
        rows, finals = [], {}
        for c in counts:
            f = run_schedule(schedule.repeated(c), initial, rates).final()
            rows.append([c, *[f[m] for m in modes]])
            finals[str(c)] = f
        text = _csv(run.header, ["repeats", *[f"nbar_{m}" for m in modes]], rows)
        summary["final_by_repeats"] = finals
    else:
        count = int(cfg.get("repeat", 1))
        traj = run_schedule(schedule.repeated(count), initial, rates,
                            int(cfg.get("samples_per_element", 1)))
        text = traj.to_csv(run.header)
        summary["final"] = traj.final()
    try:
        summary["steady_state"] = steady_state(rates, schedule)
    except ModecoolError as exc:
        summary["steady_state"] = None
        summary["steady_state_note"] = str(exc)
    _atomic_write(run.out, text)
    run.write_json(_summary_path(run.out), summary)
    return EXIT_OK


def _cool_continuous(run: Run, cfg: dict) -> int:
    try:
        w, s = cfg["pair"]
        rates = rates_from_dict(cfg["rates"])
        init = cfg["initial"]
        duration = float(cfg["duration_us"])
    except (KeyError, ValueError, TypeError) as exc:
        raise Invalid(f"cool: continuous scheme needs pair, rates, initial, duration_us ({exc})") from None
    for m in (w, s):
        if m not in rates or m not in init:
            raise Invalid(f"cool: mode {m!r} needs rates and an initial occupation")
    params = _build(ContinuousCoolingParams, cfg.get("params", {}), "params")
    state = MomentState(float(init[w]), float(init[s]))
    summary: dict = {}
    if "r0_sweep_khz" in cfg:
        r0 = _grid(cfg["r0_sweep_khz"], "r0_sweep_khz")
        rows = []
        for v in r0:
            last = continuous_cool(state, 0.5 * v, rates[w], rates[s], params, duration, 2).states[-1]
            rows.append([v, last.nbar_w, last.nbar_s])
        arr = np.array(rows)
        k = int(np.argmin(arr[:, 1]))
        summary.update(optimum_r0_khz=float(arr[k, 0]), optimum_nbar=float(arr[k, 1]),
                       interior_minimum=bool(0 < k < len(arr) - 1))
        text = _csv(run.header, ["r0_khz", f"nbar_{w}", f"nbar_{s}"], rows)
    else:
        g = float(cfg.get("g_khz", 0.0))
        traj = continuous_cool(state, g, rates[w], rates[s], params, duration,
                               int(cfg.get("samples", 101)))
        rows = [[t, st.nbar_w, st.nbar_s] for t, st in zip(traj.times, traj.states)]
        text = _csv(run.header, ["time_us", f"nbar_{w}", f"nbar_{s}"], rows)
        summary["final"] = {w: rows[-1][1], s: rows[-1][2]}
    _atomic_write(run.out, text)
    run.write_json(_summary_path(run.out), summary)
    return EXIT_OK


def cmd_cool(run: Run) -> int:
    cfg = run.block("cool")
    scheme = cfg.get("scheme", "pulsed")
    if scheme == "pulsed":
        return _cool_pulsed(run, cfg)
    if scheme == "continuous":
        return _cool_continuous(run, cfg)
    raise Invalid(f"cool: unknown scheme {scheme!r}")


def _kerr_params(block: dict) -> KerrSpectrumParams:
    block = dict(block)
    rabi = block.pop("rabi", None)
    p = _build(KerrSpectrumParams, block, "params")
    if rabi is not None:
        p = KerrSpectrumParams(**{**p.__dict__, "rabi": _build(RabiParams, rabi, "rabi")})
    return p


def cmd_spectrum(run: Run) -> int:
    cfg = run.block("spectrum")
    kind = cfg.get("kind", "kerr")
    x = _grid(cfg.get("grid"))
    if kind == "kerr":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", TruncationWarning)
            y = np.atleast_1d(kerr_spectrum(_kerr_params(cfg.get("params", {})), x))
        head = run.header + [f"warning {w.message}" for w in caught]
        _atomic_write(run.out, _csv(head, ["f_mhz", "dark_ions"], zip(x, y)))
    elif kind == "bessel":
        try:
            dk = float(cfg["dk_per_m"])
            betas = [float(b) for b in cfg["beta_nm_per_khz"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise Invalid(f"spectrum: bessel needs dk_per_m and a beta_nm_per_khz list ({exc})") from None
        cols = ["r0_khz", *[f"ratio_beta_{_fmt(b)}" for b in betas]]
        rows = [[r, *[bessel_suppression(dk, b, r) for b in betas]] for r in x]
        _atomic_write(run.out, _csv(run.header, cols, rows))
    elif kind == "rsb_rabi":
        rabi = _build(RabiParams, cfg.get("params", {}), "params")
        n = np.unique(np.round(x).astype(int))
        if n.min() < 0:
            raise Invalid("grid: number states must be >= 0")
        _atomic_write(run.out, _csv(run.header, ["n", "rabi_khz"],
                                    [[k, rsb_rabi(k, rabi)] for k in n]))
    else:
        raise Invalid(f"spectrum: unknown kind {kind!r}")
    return EXIT_OK


def cmd_fit(run: Run) -> int:
    cfg = run.block("fit")
    if "data" not in cfg:
        raise Invalid("fit: missing 'data' path")
    path = (run.base / cfg["data"]) if not Path(cfg["data"]).is_absolute() else Path(cfg["data"])
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise Invalid(f"fit: cannot read data file {path}: {exc.strerror}") from None
    try:
        data = ScanData.from_csv(text)
    except ConfigError as exc:
        raise Invalid(f"fit: {path.name}: {exc}") from None
    model = cfg.get("model")
    if model == "heating_rate":
        h = fit_heating_rate(data)
        run.write_json(run.out, {"model": model, "converged": True, "params": {
            "slope_per_s": h.slope, "intercept": h.intercept},
            "confidence_68": {"slope_per_s": h.slope_err, "intercept": h.intercept_err},
            "chi2_reduced": h.chi2_reduced})
        return EXIT_OK
    seed = run.seed if run.seed is not None else 0
    code = EXIT_OK
    try:
        if model == "kerr_occupations":
            fixed = _kerr_params(cfg.get("fixed_params", {}))
            init = cfg.get("initial", {})
            res = fit_kerr_occupations(data, fixed, (init.get("nbar_xr", 1.0), init.get("nbar_yr", 1.0)),
                                       seed=seed)
        else:
            initial = {_UNIT_KEYS.get(k, k): v for k, v in cfg.get("initial", {}).items()}
            bounds = {_UNIT_KEYS.get(k, k): tuple(v) for k, v in cfg.get("bounds", {}).items()}
            fixed = [_UNIT_KEYS.get(k, k) for k in cfg.get("fixed", [])]
            res = fit_model(data, model, initial, bounds or None, fixed, seed=seed,
                            max_nfev=int(cfg.get("max_nfev", 2000)))
    except NoConvergence as exc:
        res = exc.result
        code = EXIT_NOCONV
    run.write_json(run.out, res.to_dict())
    return code


DISPATCH = {"modes": cmd_modes, "couple-scan": cmd_scan, "cool": cmd_cool,
            "spectrum": cmd_spectrum, "fit": cmd_fit}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modecool", description=__doc__.split("\n")[0])
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output file (CSV or JSON)")
    p.add_argument("--seed", type=int, default=None, help="seed for synthetic noise and restarts")
    p.add_argument("--version", action="version", version=f"modecool {__version__}")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    cfg_path = Path(args.config)
    try:
        raw = cfg_path.read_bytes()
    except OSError as exc:
        print(f"error: cannot read config {cfg_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_INVALID
    try:
        config = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if not isinstance(config, dict) or config.get("command") not in COMMANDS:
        got = config.get("command") if isinstance(config, dict) else None
        print(f"error: command must be one of {', '.join(COMMANDS)}; got {got!r}", file=sys.stderr)
        return EXIT_INVALID
    seed = args.seed if args.seed is not None else config.get("seed")
    run = Run(config, cfg_path, Path(args.out), seed, hashlib.sha256(raw).hexdigest())
    try:
        return DISPATCH[config["command"]](run)
    except Invalid as exc:
        for msg in exc.messages:
            print(f"error: {msg}", file=sys.stderr)
    except ModecoolError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
