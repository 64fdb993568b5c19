import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modecool.cooling import (ContinuousCoolingParams, ContinuousScheme, CsbcPulse, Delay,
                              ModeRates, Repeat, Schedule, SimultaneousCool, Swap, TrapRamp,
                              continuous_cool, cycle_map, rates_from_dict, run_schedule,
                              schedule_from_json, steady_state, sweep_coupling)
from modecool.errors import ConfigError, NoSteadyState, UnknownMode
from modecool.exchange import MomentState
from modecool.presets import be_mg_cycle, be_mg_rates


def test_delay_is_linear_heating():
    rates = {"a": ModeRates(20.0), "b": ModeRates(330.0)}
    traj = run_schedule(Schedule([Delay(2500.0)]), {"a": 0.5, "b": 1.0}, rates, samples_per_element=5)
    assert traj.final() == pytest.approx({"a": 0.5 + 0.05, "b": 1.0 + 0.825}, abs=1e-14)
    assert np.allclose(np.diff(traj.series("b")), 0.825 / 5, atol=1e-14)


def test_unit_fidelity_swap_exchanges_then_heats():
    rates = {"a": ModeRates(100.0), "b": ModeRates(0.0)}
    out = run_schedule(Schedule([Swap(("a", "b"), 50.0, 1.0)]), {"a": 3.0, "b": 0.2}, rates).final()
    assert out["a"] == pytest.approx(0.2 + 100 * 50e-6, abs=1e-14)
    assert out["b"] == pytest.approx(3.0, abs=1e-14)


def test_partial_swap_midpoint():
    rates = {"a": ModeRates(), "b": ModeRates()}
    traj = run_schedule(Schedule([Swap(("a", "b"), 40.0, 0.9)]), {"a": 2.0, "b": 0.0}, rates,
                        samples_per_element=2)
    assert traj.series("b")[1] == pytest.approx(0.45 * 2.0)
    assert traj.series("b")[2] == pytest.approx(0.9 * 2.0)


def test_csbc_closed_form_steady_state():
    assert steady_state({"m": ModeRates(20.0, 100.0, 0.01)})["m"] == pytest.approx(0.21)
    assert steady_state({"m": ModeRates(0.0, 100.0, 0.03)})["m"] == 0.03
    with pytest.raises(NoSteadyState):
        steady_state({"m": ModeRates(20.0)})


@settings(max_examples=50, deadline=None)
@given(n0=st.floats(0.05, 20), kappa=st.floats(1, 1e5), floor=st.floats(0, 0.05),
       heat=st.floats(0, 500), dur=st.floats(1, 5000))
def test_csbc_never_below_floor(n0, kappa, floor, heat, dur):
    rates = {"m": ModeRates(heat, kappa, floor)}
    traj = run_schedule(Schedule([CsbcPulse("m", dur)]), {"m": max(n0, floor)}, rates,
                        samples_per_element=10)
    assert np.all(traj.series("m") >= floor - 1e-15)


def test_second_order_pulse_uses_its_rate():
    rates = {"m": ModeRates(0.0, 1000.0, 0.0, second_order_rate=4000.0, second_order_floor=0.5)}
    out = run_schedule(Schedule([CsbcPulse("m", 1000.0, order=2)]), {"m": 5.5}, rates).final()["m"]
    assert out == pytest.approx(0.5 + 5.0 * np.exp(-4.0))
    with pytest.raises(ConfigError):
        run_schedule(Schedule([CsbcPulse("m", 10.0, order=2)]), {"m": 1.0}, {"m": ModeRates()})


def test_fixed_point_matches_long_run():
    rates = be_mg_rates()
    cycle = be_mg_cycle()
    fixed = steady_state(rates, cycle)
    long_run = run_schedule(cycle.repeated(400), {"xo": 5, "yo": 5, "zo": 5}, rates).final()
    for m in fixed:
        assert long_run[m] == pytest.approx(fixed[m], abs=1e-6)


def test_cycle_map_is_nonnegative_contraction():
    modes, m, b = cycle_map(be_mg_cycle(), be_mg_rates())
    assert np.all(m >= -1e-15) and np.all(b >= 0)
    assert np.max(np.abs(np.linalg.eigvals(m))) < 1


def test_monotone_convergence_from_above():
    rates, cycle = be_mg_rates(), be_mg_cycle()
    modes, m, b = cycle_map(cycle, rates)
    fixed = np.array([steady_state(rates, cycle)[k] for k in modes])
    vals, vecs = np.linalg.eig(m)
    perron = np.abs(np.real(vecs[:, np.argmax(np.abs(vals))]))
    start = fixed + 4.0 * perron / perron.max()
    traj = run_schedule(cycle.repeated(60), dict(zip(modes, start)), rates)
    ends = traj.nbar[::len(cycle.flatten())]
    assert np.all(np.diff(ends, axis=0) <= 1e-12)
    assert np.allclose(ends[-1], fixed, atol=1e-6)


def test_zero_heating_unit_fidelity_reaches_floors():
    rates = {"xo": ModeRates(), "yo": ModeRates(), "zo": ModeRates(0.0, 11450.0, 0.0177)}
    cycle = Schedule([CsbcPulse("zo", 5000.0), Swap(("zo", "xo"), 50.0, 1.0),
                      Swap(("zo", "yo"), 50.0, 1.0), CsbcPulse("zo", 5000.0)])
    out = run_schedule(cycle.repeated(2), {"xo": 4.0, "yo": 6.0, "zo": 3.0}, rates).final()
    for v in out.values():
        assert v == pytest.approx(0.0177, abs=1e-9)


def test_be_mg_ordering():
    ss = steady_state(be_mg_rates(), be_mg_cycle())
    assert ss["yo"] > ss["zo"] > ss["xo"]
    assert 0.01 < ss["xo"] < 0.06
    assert 0.05 < ss["zo"] < 0.15


def test_untouched_mode_has_no_steady_state():
    rates = {"a": ModeRates(1.0, 100.0), "b": ModeRates(2.0)}
    sched = Schedule([CsbcPulse("a", 100.0), Delay(10.0)])
    assert "a" in steady_state(rates, sched, modes=["a"])
    with pytest.raises(NoSteadyState):
        steady_state(rates, sched)


def test_schedule_structure():
    cyc = be_mg_cycle()
    assert cyc.duration() == pytest.approx(455.0)
    rep = Schedule([Repeat(cyc.elements, 3), Delay(5.0)])
    assert len(rep.flatten()) == 16
    assert rep.duration() == pytest.approx(3 * 455 + 5)
    assert cyc.modes() == {"xo", "yo", "zo"}
    with pytest.raises(UnknownMode):
        run_schedule(cyc, {"xo": 1, "zo": 1}, {"xo": ModeRates(), "zo": ModeRates()})
    with pytest.raises(ConfigError):
        Swap(("a", "a"), 10.0)
    with pytest.raises(ConfigError):
        Delay(0.0)


def test_trap_ramp_switches_rates():
    hot = {"a": ModeRates(1000.0)}
    sched = Schedule([Delay(1000.0), TrapRamp("ramp", hot), Delay(1000.0)])
    out = run_schedule(sched, {"a": 0.0}, {"a": ModeRates(10.0)}).final()["a"]
    assert out == pytest.approx(0.01 + 1.0)


def test_json_ingest_and_csv(tmp_path):
    doc = {"elements": [
        {"type": "csbc", "mode": "zo", "duration_us": 150},
        {"type": "repeat", "count": 2, "block": [{"type": "swap", "pair": ["zo", "xo"],
                                                   "duration_us": 50, "fidelity": 1.0}]},
        {"type": "trap_ramp", "label": "x"},
        {"type": "delay", "duration_us": 130}]}
    sched = schedule_from_json(json.dumps(doc))
    assert sched.duration() == pytest.approx(380.0)
    rates = rates_from_dict({"zo": {"heating_rate_per_s": 20, "csbc_rate_per_s": 11450,
                                    "cooling_floor": 0.0177},
                             "xo": {"heating_rate_per_s": 5}})
    traj = run_schedule(sched, {"xo": 1.0, "zo": 1.0}, rates)
    lines = traj.to_csv(["test"]).splitlines()
    assert lines[0] == "# test"
    assert lines[1] == "time_us,nbar_xo,nbar_zo"
    with pytest.raises(ConfigError):
        schedule_from_json(json.dumps([{"type": "bogus"}]))
    with pytest.raises(ConfigError):
        schedule_from_json(json.dumps([{"type": "delay"}]))
    with pytest.raises(ConfigError):
        rates_from_dict({"zo": {"heating": 1}})


# continuous scheme


def test_uncoupled_continuous_cooling():
    rw, rs = ModeRates(50.0), ModeRates(20.0, 8000.0, 0.01)
    params = ContinuousCoolingParams(kappa0=8000.0)
    traj = continuous_cool(MomentState(2.0, 3.0), 0.0, rw, rs, params, 5000.0)
    assert traj.nbar_w[-1] == pytest.approx(2.0 + 0.25, abs=1e-12)
    assert traj.nbar_s[-1] == pytest.approx(0.01 + 20 / 8000 + (3 - 0.01 - 20 / 8000) * np.exp(-40),
                                            abs=1e-12)


def test_strong_coupling_total_decays_at_half_rate():
    params = ContinuousCoolingParams(kappa0=4000.0, linewidth=np.inf)
    traj = continuous_cool(MomentState(1.0, 1.0), 20.0, ModeRates(), ModeRates(0, 4000.0, 0.0),
                           params, 500.0, n_samples=6)
    total = traj.nbar_w + traj.nbar_s
    assert np.allclose(total, 2.0 * np.exp(-2000.0 * traj.times * 1e-6), rtol=2e-3)


def test_weak_coupling_rate():
    g = 0.05
    kappa = 8000.0
    params = ContinuousCoolingParams(kappa0=kappa, linewidth=np.inf)
    traj = continuous_cool(MomentState(1.0, 0.0), g, ModeRates(), ModeRates(0, kappa, 0.0),
                           params, 10_000.0, n_samples=3)
    rate = 4 * (2 * np.pi * g * 1e3) ** 2 / kappa
    assert traj.nbar_w[-1] == pytest.approx(np.exp(-rate * 0.01), rel=0.02)


def test_effective_rate():
    p = ContinuousCoolingParams(kappa0=8000.0, linewidth=5.0)
    assert p.effective_rate(0.0) == 8000.0
    assert p.effective_rate(2.5) == pytest.approx(4000.0)
    with_bessel = ContinuousCoolingParams(8000.0, 5.0, dk=3.17e7, beta=101.0)
    assert with_bessel.effective_rate(0.2) < p.effective_rate(0.2)


def test_continuous_steady_state_matches_long_run():
    rw, rs = ModeRates(1.0), ModeRates(20.0, 8000.0, 0.01)
    params = ContinuousCoolingParams()
    scheme = ContinuousScheme("st", "al", 0.3, params)
    ss = steady_state({"st": rw, "al": rs}, scheme)
    traj = continuous_cool(MomentState(5.0, 5.0), 0.3, rw, rs, params, 200_000.0, n_samples=2)
    assert traj.nbar_w[-1] == pytest.approx(ss["st"], abs=1e-6)
    assert traj.nbar_s[-1] == pytest.approx(ss["al"], abs=1e-6)
    with pytest.raises(NoSteadyState):
        steady_state({"st": rw, "al": rs}, ContinuousScheme("st", "al", 0.0, params))


def test_coupling_sweep_has_interior_optimum():
    params = ContinuousCoolingParams(8000.0, 5.0, dk=np.sqrt(2) * 2 * np.pi / 280e-9, beta=101.0)
    r0 = np.linspace(0.02, 1.0, 50)
    final = sweep_coupling(r0, MomentState(5.0, 5.0), ModeRates(1.0), ModeRates(20.0, 8000.0, 0.01),
                           params, 1500.0)
    k = int(np.argmin(final))
    assert 0 < k < len(r0) - 1


def test_simultaneous_element_in_schedule():
    rates = {"st": ModeRates(1.0), "al": ModeRates(20.0, 8000.0, 0.01), "ip": ModeRates(10.0)}
    el = SimultaneousCool(("st", "al"), 0.3, 1000.0, ContinuousCoolingParams())
    out = run_schedule(Schedule([el]), {"st": 5.0, "al": 5.0, "ip": 0.0}, rates).final()
    ref = continuous_cool(MomentState(5.0, 5.0), 0.3, rates["st"], rates["al"],
                          ContinuousCoolingParams(), 1000.0, n_samples=2)
    assert out["st"] == pytest.approx(ref.nbar_w[-1], abs=1e-12)
    assert out["ip"] == pytest.approx(0.01)
