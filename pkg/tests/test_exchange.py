import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modecool.errors import ConfigError, TruncationLeak, ZeroCoupling
from modecool.exchange import (ExchangeParams, MomentState, TwoModeFockState, fock_propagator,
                               moment_exchange, propagate_fock, swap_time)
from modecool.fields import PulseEnvelope


def _closed_form_p01(g, det, t):
    r0 = 2 * g
    r = np.hypot(r0, det)
    return (r0 / r) ** 2 * np.sin(np.pi * r * t * 1e-3) ** 2


def test_swap_time_values():
    assert swap_time(7.91 / 2) == pytest.approx(63.21, abs=0.01)
    assert swap_time(2.0) == pytest.approx(swap_time(1.0) / 2)
    assert swap_time(1.0, 3) == pytest.approx(3 * swap_time(1.0))
    with pytest.raises(ZeroCoupling):
        swap_time(0.0)
    with pytest.raises(ConfigError):
        swap_time(1.0, 2)


def test_single_phonon_swap():
    g = 4.0
    out = propagate_fock(TwoModeFockState.fock(1, 0), ExchangeParams(g), swap_time(g))
    assert out.populations[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert abs(out.norm - 1) < 1e-9


@pytest.mark.parametrize("det", [0.5, 3.0, -7.0])
def test_detuned_transfer_matches_closed_form(det):
    g = 2.5
    for t in np.linspace(0, 400, 9):
        out = propagate_fock(TwoModeFockState.fock(1, 0), ExchangeParams(g, det), t)
        assert out.populations[0, 1] == pytest.approx(_closed_form_p01(g, det, t), abs=1e-6)
    r = np.hypot(2 * g, det)
    tmax = 1e3 / (2 * r)
    peak = propagate_fock(TwoModeFockState.fock(1, 0), ExchangeParams(g, det), tmax).populations[0, 1]
    assert peak == pytest.approx((2 * g / r) ** 2, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(g=st.floats(0.1, 10), det=st.floats(-20, 20), t=st.floats(0, 500), phase=st.floats(-3, 3))
def test_two_phonon_populations_spin_one_form(g, det, t, phase):
    # |2,0> evolves as a spin-1 rotation; populations follow from the spin-1/2 transfer P
    p = _closed_form_p01(g, det, t)
    out = propagate_fock(TwoModeFockState.fock(2, 0, nmax=4), ExchangeParams(g, det, phase), t)
    pops = out.populations
    assert pops[2, 0] == pytest.approx((1 - p) ** 2, abs=1e-6)
    assert pops[1, 1] == pytest.approx(2 * p * (1 - p), abs=1e-6)
    assert pops[0, 2] == pytest.approx(p**2, abs=1e-6)


def test_double_swap_restores_populations():
    g = 3.3
    c = np.zeros((6, 6), dtype=complex)
    c[1, 0], c[2, 1], c[0, 3] = 0.6, 0.48j, 0.64
    state = TwoModeFockState(c)
    out = propagate_fock(state, ExchangeParams(g), 2 * swap_time(g))
    assert np.max(np.abs(out.populations - state.populations)) < 1e-8


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), g=st.floats(0.1, 8), det=st.floats(-10, 10), t=st.floats(0, 300))
def test_norm_and_total_quanta_conserved(seed, g, det, t):
    rng = np.random.default_rng(seed)
    nmax = 8
    c = np.zeros((nmax + 1, nmax + 1), dtype=complex)
    for m in range(4):
        for n in range(4 - m):
            c[m, n] = rng.normal() + 1j * rng.normal()
    c /= np.linalg.norm(c)
    state = TwoModeFockState(c)
    out = propagate_fock(state, ExchangeParams(g, det, rng.uniform(-np.pi, np.pi)), t)
    assert abs(out.norm - 1) < 1e-9
    assert abs(out.mean_w() + out.mean_s() - state.mean_w() - state.mean_s()) < 1e-9


def test_shaped_pulse_equal_area():
    g = 4.0
    square = propagate_fock(TwoModeFockState.fock(2, 1, 6), ExchangeParams(g), 43.2)
    env = PulseEnvelope.for_area(43.2)
    shaped = propagate_fock(TwoModeFockState.fock(2, 1, 6), ExchangeParams(g), env.total_time,
                            envelope=env)
    assert np.max(np.abs(shaped.populations - square.populations)) < 1e-6
    assert abs(shaped.norm - 1) < 1e-9


def test_truncation_leak():
    with pytest.raises(TruncationLeak):
        propagate_fock(TwoModeFockState.fock(0, 3, nmax=3), ExchangeParams(2.0), 30.0)


def test_invalid_states():
    with pytest.raises(ConfigError):
        TwoModeFockState(np.ones((3, 3)))
    with pytest.raises(ConfigError):
        ExchangeParams(-1.0)
    with pytest.raises(ConfigError):
        MomentState(1.0, 1.0, 2.0)


@settings(max_examples=20, deadline=None)
@given(g=st.floats(0.1, 10), det=st.floats(0, 30), t=st.floats(0, 300))
def test_transfer_even_in_detuning(g, det, t):
    a = propagate_fock(TwoModeFockState.fock(1, 0), ExchangeParams(g, det), t).populations[0, 1]
    b = propagate_fock(TwoModeFockState.fock(1, 0), ExchangeParams(g, -det), t).populations[0, 1]
    assert a == pytest.approx(b, abs=1e-10)


# moments


def test_moment_vacuum_and_swap():
    assert moment_exchange(MomentState(0, 0), ExchangeParams(3.0), 50).total == 0
    g = 2.0
    out = moment_exchange(MomentState(4.0, 0.5), ExchangeParams(g), swap_time(g))
    assert out.nbar_w == pytest.approx(0.5, abs=1e-12)
    assert out.nbar_s == pytest.approx(4.0, abs=1e-12)


def _thermal_mixture_means(nw, ns, params, t, nmax=30):
    n = np.arange(nmax + 1)
    pw = (nw / (1 + nw)) ** n / (1 + nw)
    ps = (ns / (1 + ns)) ** n / (1 + ns)
    weights = np.outer(pw, ps)
    weights[n[:, None] + n[None, :] > nmax] = 0.0  # keep number-conserving blocks inside the box
    u = fock_propagator(params, t, nmax)
    # diagonal initial state: final populations are |U|^2 applied to the weights
    pops = (np.abs(u) ** 2 @ weights.ravel()).reshape(nmax + 1, nmax + 1)
    return pops.sum(axis=1) @ n, pops.sum(axis=0) @ n


@pytest.mark.parametrize("seed", range(4))
def test_moments_match_thermal_fock_mixture(seed):
    rng = np.random.default_rng(seed)
    nw, ns = rng.uniform(0, 1.0, 2)
    params = ExchangeParams(rng.uniform(0.5, 5), rng.uniform(-8, 8), rng.uniform(-np.pi, np.pi))
    t = rng.uniform(0, 300)
    ref_w, ref_s = _thermal_mixture_means(nw, ns, params, t)
    out = moment_exchange(MomentState(nw, ns), params, t)
    assert out.nbar_w == pytest.approx(ref_w, abs=1e-4)
    assert out.nbar_s == pytest.approx(ref_s, abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(nw=st.floats(0, 10), ns=st.floats(0, 10), g=st.floats(0, 10), t=st.floats(0, 500),
       det=st.floats(-10, 10))
def test_moment_invariants(nw, ns, g, t, det):
    out = moment_exchange(MomentState(nw, ns), ExchangeParams(g, det), t)
    assert abs(out.cross) ** 2 <= out.nbar_w * out.nbar_s + 1e-9
    assert out.total == pytest.approx(nw + ns, abs=1e-9)
