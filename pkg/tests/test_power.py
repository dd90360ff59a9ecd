"""Microgrid dispatch game: device models, compilation and equilibria."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import finite_difference
from clustertrack import oracle, power
from clustertrack.errors import InfeasibleSetError, InputError

BAT = power.BatteryParams(2.5, 0.5, 0.1, -5.0, 5.0, 20.0, 10.0, gamma=0.99, eps=0.01, delta=0.05)
GEN = power.GeneratorParams(2.5, 1.5, 1.0, 0.0, 8.0)


def small_fleet(T=4, q=0.5, owner="first"):
    d1 = power.default_demand_profile(T, 10.0)
    d2 = power.default_demand_profile(T, 12.0)
    specs = [power.MicrogridSpec([GEN, GEN], [BAT], d1, name="A"),
             power.MicrogridSpec([GEN], [BAT, BAT], d2, name="B")]
    return specs, power.PricingParams(q, owner)


@pytest.fixture(scope="module")
def small_equilibrium():
    specs, pricing = small_fleet()
    game, sets = power.build_game(specs, pricing)
    res = oracle.centralized_solve(game, sets, tol=1e-9)
    assert res.converged
    return specs, game, sets, res


# -- device models ------------------------------------------------------------------

def test_battery_charge_example():
    # [DERIVED] idle battery for two slots: 0.99^2 * 100
    b = power.BatteryParams(1, 1, 1, -5, 5, 200, 100.0, gamma=0.99)
    assert power.battery_charge(b, np.zeros(3), 2) == pytest.approx(98.01)


def test_battery_without_leakage_keeps_charge():
    b = power.BatteryParams(1, 1, 1, -5, 5, 20, 7.0, gamma=1.0)
    np.testing.assert_allclose(power.charge_path(b, np.zeros(6)), 7.0)
    with pytest.raises(InputError):
        power.battery_charge(b, np.zeros(3), 4)


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(0.5, 1.0))
def test_charge_path_matches_recursion(s, gamma):
    b = power.BatteryParams(1, 1, 1, -5, 5, 50, 12.0, gamma=gamma)
    q = [b.q0]
    for v in s:
        q.append(gamma * (q[-1] - v))
    np.testing.assert_allclose(power.charge_path(b, s), q, rtol=1e-10, atol=1e-10)


def test_smoothed_cost_at_zero():
    value, deriv = power.smoothed_battery_cost(BAT, 0.0)
    assert value == pytest.approx(BAT.c) and deriv == 0.0


@settings(max_examples=100)
@given(st.floats(-10, 10))
def test_smoothed_cost_close_to_absolute_value(s):
    value, _ = power.smoothed_battery_cost(BAT, s)
    smooth_part = value - BAT.a * s * s - BAT.c
    exact = BAT.b * abs(s)
    assert exact - BAT.b * BAT.smoothing - 1e-12 <= smooth_part <= exact + 1e-12


@settings(max_examples=50)
@given(st.floats(-6, 6))
def test_smoothed_cost_derivative(s):
    _, deriv = power.smoothed_battery_cost(BAT, s)
    fd = finite_difference(lambda v: float(power.smoothed_battery_cost(BAT, v[0])[0]), np.array([s]))
    assert deriv == pytest.approx(fd[0], abs=1e-5)


def test_default_smoothing_width():
    b = power.BatteryParams(1, 1, 1, -4, 0, 10, 5)
    assert b.smoothing == pytest.approx(4e-3)


def test_demand_profile_shape():
    d = power.default_demand_profile(24, 100.0)
    assert np.all(d >= 0)
    assert 17 <= int(np.argmax(d)) <= 21
    np.testing.assert_allclose(power.default_demand_profile(24, 250.0), 2.5 * d)
    with pytest.raises(InputError):
        power.default_demand_profile(0)


# -- tabulated fleet ------------------------------------------------------------------

def table_specs(T=24):
    d = power.default_demand_profile(T)
    return [power.MicrogridSpec([GEN] * ng, [BAT] * nb, d) for ng, nb in power.five_microgrid_layout()]


def test_constraint_counts():
    # [REFERENCE] expected inequality counts for T = 24
    counts = [power.count_constraints(s) for s in table_specs()]
    assert counts == [627, 725, 823, 970, 480]
    assert sum(counts) == 3625


def test_fleet_dimensions():
    # [DERIVED] 24 slots times (purchase + 10 devices)
    specs = table_specs()
    assert [s.dim for s in specs] == [264] * 5
    assert sum(s.dim for s in specs) == 1320


def test_purchase_cap_default():
    spec = power.MicrogridSpec([GEN], [BAT, BAT], [3.0, 4.0])
    np.testing.assert_allclose(spec.purchase_cap(), [13.0, 14.0])
    capped = power.MicrogridSpec([GEN], [BAT], [3.0, 4.0], p_upper=2.0)
    np.testing.assert_allclose(capped.purchase_cap(), [2.0, 2.0])


def test_layout_and_decompose():
    specs, pricing = small_fleet(T=3)
    game, _ = power.build_game(specs, pricing)
    x = np.arange(game.dims.n, dtype=float)
    parts = power.decompose(x, specs, game.dims)
    np.testing.assert_array_equal(parts[0]["p"], [0, 1, 2])
    np.testing.assert_array_equal(parts[0]["g"], [[3, 4, 5], [6, 7, 8]])
    np.testing.assert_array_equal(parts[0]["s"], [[9, 10, 11]])
    np.testing.assert_array_equal(parts[1]["p"], [12, 13, 14])
    assert parts[1]["s"].shape == (2, 3)


def test_recursion_charge_form_differs_only_by_shift():
    spec = power.MicrogridSpec([GEN], [BAT], [5.0, 5.0, 5.0])
    printed, labels = power.cluster_set(spec, "printed", certify=False)
    rec, _ = power.cluster_set(spec, "recursion", certify=False)
    assert printed.n_rows == rec.n_rows
    assert labels[0] == "device bounds"
    with pytest.raises(InputError):
        power.cluster_set(spec, "other")


# -- equilibria ----------------------------------------------------------------------

def test_single_microgrid_single_slot_by_hand():
    # [DERIVED] min g^2 + g + p^2 s.t. p + g = 5: 2g + 1 = 2p, so g = 2.25, p = 2.75
    gen = power.GeneratorParams(1.0, 1.0, 1.0, 0.0, 10.0)
    spec = power.MicrogridSpec([gen], [], [5.0])
    game, sets = power.build_game([spec], power.PricingParams(1.0))
    res = oracle.centralized_solve(game, sets, tol=1e-12)
    np.testing.assert_allclose(res.x, [2.75, 2.25], atol=1e-8)


def test_identical_microgrids_buy_equally():
    d = power.default_demand_profile(3, 8.0)
    spec = power.MicrogridSpec([GEN], [BAT], d)
    game, sets = power.build_game([spec, spec], power.PricingParams(1.0))
    res = oracle.centralized_solve(game, sets, tol=1e-11)
    parts = power.decompose(res.x, [spec, spec], game.dims)
    np.testing.assert_allclose(parts[0]["p"], parts[1]["p"], atol=1e-7)


def test_jacobian_symmetric_part_positive_definite():
    specs, pricing = small_fleet()
    game, _ = power.build_game(specs, pricing)
    J, _, _ = game.jacobian()
    assert np.linalg.eigvalsh(0.5 * (J + J.T))[0] > 0


def test_equilibrium_balances_demand_and_charge(small_equilibrium):
    specs, game, sets, res = small_equilibrium
    assert power.demand_imbalance(specs, res.x, game.dims) < 1e-8
    assert power.charge_feasibility(specs, res.x, game.dims) < 1e-8
    assert oracle.natural_residual(game, sets, res.x, alpha=res.step) < 1e-8


def test_even_ownership_keeps_cluster_cost():
    # splitting the purchase cost across agents leaves each cluster's total unchanged
    specs, first = small_fleet(owner="first")
    _, even = small_fleet(owner="even")
    g1, sets = power.build_game(specs, first)
    g2, _ = power.build_game(specs, even)
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = np.concatenate([s.sample(rng) for s in sets])
        for h in range(g1.dims.H):
            assert g1.cluster_total_cost(h, x) == pytest.approx(g2.cluster_total_cost(h, x))
            np.testing.assert_allclose(g1.cluster_gradient(h, x), g2.cluster_gradient(h, x), atol=1e-10)


# -- validation ----------------------------------------------------------------------

def test_negative_coefficient_fails_validation():
    bad = power.GeneratorParams(-1.0, 1.0, 1.0, 0.0, 5.0)
    spec = power.MicrogridSpec([bad], [], [1.0], name="MG1")
    checks = power.validate_parameters([spec], power.PricingParams(1.0))
    failed = [c.name for c in checks if not c.passed]
    assert failed == ["MG1.generator[0].parameter_positivity"]
    with pytest.raises(InputError, match="parameter_positivity"):
        power.build_game([spec], power.PricingParams(1.0))


def test_horizon_mismatch_and_zero_slope():
    a = power.MicrogridSpec([GEN], [], [1.0, 1.0], name="MG1")
    b = power.MicrogridSpec([GEN], [], [1.0], name="MG2")
    checks = {c.name: c for c in power.validate_parameters([a, b], power.PricingParams(0.0))}
    assert not checks["MG2.horizon_match"].passed
    slope = checks["pricing_slope"]
    assert not slope.passed and slope.severity == "warning"
    with pytest.raises(InputError):
        power.PricingParams(1.0, owner="last")


def test_infeasible_microgrid_named():
    gen = power.GeneratorParams(1.0, 1.0, 1.0, 0.0, 1.0)
    spec = power.MicrogridSpec([gen], [], [5.0], p_upper=1.0, name="MGX")
    with pytest.raises(InfeasibleSetError, match="MGX") as info:
        power.build_game([spec], power.PricingParams(1.0))
    assert info.value.witness[0] == 0
