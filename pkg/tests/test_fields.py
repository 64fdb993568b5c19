import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from modecool.constants import BE9, CONSTANTS, MG25
from modecool.crystal import mode_table
from modecool.errors import ConfigError, InfeasibleTarget, MissingCurvature, OutOfRange
from modecool.fields import (CouplingDrive, ElectrodeBasis, FieldExpansion, FilterModel,
                             PulseEnvelope, coupling_rate, cubic_expansion, envelope_value,
                             filter_attenuation, optimize_amplitudes)
from modecool.presets import CRYSTALS


@pytest.fixture(scope="module")
def bmb():
    return mode_table(*CRYSTALS["Be-Mg-Be"])


def _coupling_sum_by_hand(table, third, w, s):
    """Scalar SI evaluation of the coupling sum for a cubic axial potential."""
    mw, ms = table.get(w), table.get(s)
    ww, ws = 2 * np.pi * mw.frequency * 1e6, 2 * np.pi * ms.frequency * 1e6
    total = 0.0
    for j, sp in enumerate(table.species):
        alpha = third * table.equilibrium_positions[j] * 1e-6
        total += CONSTANTS.elementary_charge * sp.charge * alpha * mw.participation[j] * \
            ms.participation[j] / (4 * sp.mass * CONSTANTS.atomic_mass_unit * np.sqrt(ww * ws))
    return abs(total) / (2 * np.pi) / 1e3


def test_stretch_alternating_coupling_under_cubic(bmb):
    res = coupling_rate(bmb, cubic_expansion(1e12), "st", "al")
    assert abs(res.contributions[1]) < 1e-12 * abs(res.contributions[0])
    assert res.contributions[0] == pytest.approx(res.contributions[2], rel=1e-12)
    assert res.g == pytest.approx(2 * abs(res.contributions[0]), rel=1e-12)
    assert res.g == pytest.approx(_coupling_sum_by_hand(bmb, 1e12, "st", "al"), rel=1e-12)
    assert res.g > 0


def test_orthogonal_axes_without_mixed_curvature(bmb):
    assert coupling_rate(bmb, FieldExpansion(), "xal", "al").g == 0.0


def test_missing_curvature(bmb):
    h = np.zeros((3, 3))
    h[0, 2] = h[2, 0] = np.nan
    with pytest.raises(MissingCurvature):
        coupling_rate(bmb, FieldExpansion(hessian=h), "xal", "al")


def test_per_ion_expansions(bmb):
    z = bmb.equilibrium_positions
    per_ion = [FieldExpansion(evaluation_point=[0, 0, zj], hessian=np.diag([0, 0, 1e12 * zj * 1e-6]))
               for zj in z]
    a = coupling_rate(bmb, per_ion, "st", "al").g
    assert a == pytest.approx(coupling_rate(bmb, cubic_expansion(1e12), "st", "al").g, rel=1e-12)
    with pytest.raises(ConfigError):
        coupling_rate(bmb, per_ion[:2], "st", "al")
    with pytest.raises(ConfigError):
        coupling_rate(bmb, per_ion, "st", "st")


@settings(max_examples=30, deadline=None)
@given(s=st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-6))
def test_coupling_linear_in_amplitude(s):
    table = mode_table(*CRYSTALS["Be-Mg-Be"])
    base = coupling_rate(table, cubic_expansion(1e10), "st", "al").g
    assert coupling_rate(table, cubic_expansion(1e10).scaled(s), "st", "al").g == \
        pytest.approx(abs(s) * base, rel=1e-10)


def test_sign_flip_invariance(bmb):
    flipped = copy.deepcopy(bmb)
    flipped.get("al").participation *= -1
    a = coupling_rate(bmb, cubic_expansion(3e11), "st", "al").g
    assert coupling_rate(flipped, cubic_expansion(3e11), "st", "al").g == pytest.approx(a, rel=1e-14)


def test_laplace_check():
    with pytest.raises(ConfigError):
        FieldExpansion(hessian=np.diag([1.0, 1.0, 1.0]), physical=True)
    FieldExpansion(hessian=np.diag([1.0, 1.0, -2.0]), physical=True)
    with pytest.raises(ConfigError):
        FieldExpansion(hessian=[[0, 1, 0], [0, 0, 0], [0, 0, 0]])


# electrode amplitudes


def _single(grad=(0, 0, 0), hess=None):
    h = np.zeros((3, 3)) if hess is None else np.asarray(hess, dtype=float)
    return FieldExpansion(gradient=grad, hessian=h, physical=True)


def _xz(v):
    h = np.zeros((3, 3))
    h[0, 2] = h[2, 0] = v
    return h


def test_pure_curvature_electrode():
    basis = ElectrodeBasis([1], [[_single(hess=_xz(4.0))]])
    sol = optimize_amplitudes(basis, {("hess", "xz", 0): 2.0}, nulls=[("grad", "z", 0)])
    assert sol.amplitudes[0] == pytest.approx(0.5)
    assert sol.achieved[("grad", "z", 0)] == 0.0
    assert sol.target_residual == pytest.approx(0.0, abs=1e-15)


def test_gradient_null_tradeoff():
    # electrode 1 gives curvature with a z-gradient, electrode 2 gives a weaker clean curvature
    basis = ElectrodeBasis([1, 2], [[_single((0, 0, 1.0), _xz(1.0))], [_single(hess=_xz(0.2))]])
    target = {("hess", "xz", 0): 1.0}
    free = optimize_amplitudes(basis, target)
    nulled = optimize_amplitudes(basis, target, nulls=[("grad", "z", 0)], weights=[10.0])
    assert abs(nulled.achieved[("grad", "z", 0)]) < abs(basis.component(("grad", "z", 0)) @ free.amplitudes)


def _random_basis(rng, n_el=12, n_ion=3):
    exps = []
    for _ in range(n_el):
        row = []
        for _ in range(n_ion):
            a = rng.normal(size=(3, 3))
            h = a + a.T
            h -= np.eye(3) * np.trace(h) / 3
            row.append(FieldExpansion(gradient=rng.normal(size=3), hessian=h,
                                      third_axial=rng.normal(), physical=True))
        exps.append(row)
    return ElectrodeBasis(list(range(1, n_el + 1)), exps)


def test_random_basis_against_normal_equations():
    rng = np.random.default_rng(12)
    basis = _random_basis(rng)
    target = {("hess", "xz", 0): 1.0}
    nulls = [("grad", a, i) for i in range(3) for a in "xyz"] + \
            [("hess", "xz", 1), ("hess", "xz", 2), ("hess", "zz", 0), ("third", 1)]
    w = rng.uniform(0.5, 2.0, len(nulls))
    sol = optimize_amplitudes(basis, target, nulls, w, target_weight=3.0)
    a_t = np.array([basis.component(k) for k in target])
    a_n = np.array([basis.component(k) for k in nulls])
    lhs = 9.0 * a_t.T @ a_t + a_n.T @ np.diag(w**2) @ a_n
    rhs = 9.0 * a_t.T @ np.array([1.0])
    assert np.allclose(sol.amplitudes, np.linalg.solve(lhs, rhs), rtol=1e-9, atol=1e-12)


def test_underdetermined_uses_pseudo_inverse():
    rng = np.random.default_rng(3)
    basis = _random_basis(rng)
    target = {("hess", "xz", 1): 2.0}
    nulls = [("grad", "z", 0), ("grad", "z", 2)]
    sol = optimize_amplitudes(basis, target, nulls)
    stack = np.array([basis.component(k) for k in [*target, *nulls]])
    oracle = np.linalg.pinv(stack) @ np.array([2.0, 0.0, 0.0])
    assert np.allclose(sol.amplitudes, oracle, rtol=1e-9, atol=1e-12)
    assert sol.achieved[("grad", "z", 0)] == pytest.approx(0.0, abs=1e-9)


def test_infeasible_target():
    basis = ElectrodeBasis([1], [[_single((1.0, 0, 0))]])
    with pytest.raises(InfeasibleTarget):
        optimize_amplitudes(basis, {("hess", "xz", 0): 1.0})


def test_null_residual_monotone_in_weight():
    rng = np.random.default_rng(5)
    basis = _random_basis(rng, n_el=4, n_ion=2)
    target = {("hess", "xz", 0): 1.0}
    nulls = [("grad", a, i) for i in range(2) for a in "xyz"]
    prev = np.inf
    for wt in [0.1, 0.5, 1, 2, 5, 20]:
        sol = optimize_amplitudes(basis, target, nulls, np.full(len(nulls), wt))
        r = np.linalg.norm([sol.achieved[k] for k in nulls])
        assert r <= prev + 1e-12
        prev = r


def test_basis_json_round_trip(tmp_path):
    basis = _random_basis(np.random.default_rng(0), n_el=2, n_ion=2)
    doc = basis.to_json()
    again = ElectrodeBasis.from_json(doc)
    assert np.allclose(again.component(("hess", "xz", 1)), basis.component(("hess", "xz", 1)))
    p = tmp_path / "basis.json"
    import json
    p.write_text(json.dumps(doc))
    assert ElectrodeBasis.from_json(p).electrode_ids == [1, 2]
    with pytest.raises(ConfigError):
        ElectrodeBasis.from_json({"electrodes": [{"expansions": []}]})


# envelopes and filters


def test_envelope_values():
    env = PulseEnvelope()
    assert envelope_value(env, 10.0) == pytest.approx(0.5)
    assert envelope_value(env, 20.0) == pytest.approx(1.0)
    assert envelope_value(env, 0.0) == 0.0
    assert envelope_value(env, env.total_time) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(OutOfRange):
        envelope_value(env, -1.0)
    with pytest.raises(OutOfRange):
        envelope_value(env, env.total_time + 1.0)


@pytest.mark.parametrize("flat", [0.0, 23.2, 100.0])
def test_envelope_area_by_quadrature(flat):
    env = PulseEnvelope(20.0, flat)
    area, _ = quad(lambda t: envelope_value(env, t), 0, env.total_time,
                   points=[20.0, 20.0 + flat], epsabs=1e-12)
    assert area == pytest.approx(env.equivalent_square_time, rel=1e-9)
    assert PulseEnvelope.for_area(20.0 + flat).flat_time == pytest.approx(flat)


def test_envelope_smooth_ends():
    env = PulseEnvelope(20.0, 30.0)
    h = 1e-4
    assert envelope_value(env, h) / h < 1e-2
    assert envelope_value(env, env.total_time - h) / h < 1e-2
    t = np.linspace(0, env.total_time, 2001)
    assert np.max(np.abs(np.diff(envelope_value(env, t)))) < 0.01
    vals = envelope_value(env, t)
    assert vals.min() >= 0 and vals.max() <= 1


def test_filter_attenuation():
    f = FilterModel()
    assert filter_attenuation(f, 0.0) == 1.0
    assert filter_attenuation(f, 0.05) == pytest.approx(0.5)
    assert filter_attenuation(f, 1.0) == pytest.approx(1 / 401, rel=1e-12)
    with pytest.raises(ConfigError):
        FilterModel(0.0)


def test_coupling_drive():
    d = CouplingDrive("st", "al", 0.281, 0.4)
    assert d.exchange_rate == 0.8
    with pytest.raises(ConfigError):
        CouplingDrive("st", "al", 0.281, -1.0)
    with pytest.raises(ConfigError):
        CouplingDrive("st", "al", 0.0, 1.0)


def test_species_constants():
    assert BE9.mass_kg < MG25.mass_kg
    assert CONSTANTS.coulomb == pytest.approx(8.9875517923e9, rel=1e-9)
