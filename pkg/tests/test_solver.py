import csv
import io

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from clustertrack.errors import DegenerateConstantsError, InputError
from clustertrack.instances import random_cluster_sets, random_quadratic_game, tg1, tg1_unconstrained
from clustertrack.oracle import centralized_solve
from clustertrack.solver import (TRACE_COLUMNS, SolverConfig, consensus_residual, initialize,
                                 own_blocks_feasible, run, step, tracking_residual, tracking_sum_gap)
from clustertrack.theory import estimate_constants, matrix_A_tau, rate_report, spectral_radius_2x2
from clustertrack.topology import CommTopology


def tg1_setup(topology="ring"):
    game, sets = tg1()
    topo = CommTopology.complete(game.dims) if topology == "complete" else CommTopology.ring(game.dims)
    return game, sets, topo


def test_config_validation():
    with pytest.raises(InputError):
        SolverConfig(alpha=-0.1)
    with pytest.raises(InputError):
        SolverConfig(alpha=0.1, max_iter=0)
    with pytest.raises(InputError):
        SolverConfig(alpha=float("nan"))


def test_initial_tracking_variable():
    game, sets, topo = tg1_setup()
    s = initialize(game, sets, topo, x0=np.array([1.5, 0.0]))
    # own-block gradients 4 x1, 2 x2 | 4 x2, -2 x1 at (1.5, 0)
    np.testing.assert_allclose(s.y, [6.0, 0.0, 0.0, -3.0])


def test_initialize_is_seeded():
    game, sets, topo = tg1_setup()
    a, b = initialize(game, sets, topo, seed=4), initialize(game, sets, topo, seed=4)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)


def test_initialize_projects_own_block():
    game, sets, topo = tg1_setup()
    s = initialize(game, sets, topo, x0=np.array([5.0, -7.0]))
    assert s.X[0, 0] == 2.0 and s.X[2, 1] == -1.0
    assert s.X[0, 1] == -7.0  # other-cluster estimates are left alone
    assert own_blocks_feasible(s, game, sets)


def test_zero_step_keeps_consensus():
    game, sets, topo = tg1_setup()
    s = initialize(game, sets, topo, x0=np.array([1.5, 0.2]))
    nxt = step(s, game, sets, topo, SolverConfig(alpha=0.0))
    np.testing.assert_allclose(nxt.X, s.X, atol=1e-15)
    # y only mixes inside each cluster, so cluster sums are kept
    np.testing.assert_allclose(nxt.y, game.selectors.average(s.y), atol=1e-15)


def test_one_round_by_hand():
    game, sets, topo = tg1_setup("complete")
    X0 = np.array([[1.2, 0.3], [1.8, -0.5], [1.0, 0.9], [1.6, 0.1]])
    s = initialize(game, sets, topo, x0=X0)
    alpha = 0.1
    nxt = step(s, game, sets, topo, SolverConfig(alpha=alpha))

    # complete graphs: W averages all four agents, V averages each pair
    xbar = X0.mean(axis=0)
    y = [4 * 1.2, 2 * -0.5, 4 * 0.9, -2 * 1.6]
    expected_X = np.tile(xbar, (4, 1))
    expected_X[0, 0] = min(max(xbar[0] - alpha * y[0], 1.0), 2.0)
    expected_X[1, 0] = min(max(xbar[0] - alpha * y[1], 1.0), 2.0)
    expected_X[2, 1] = min(max(xbar[1] - alpha * y[2], -1.0), 1.0)
    expected_X[3, 1] = min(max(xbar[1] - alpha * y[3], -1.0), 1.0)
    np.testing.assert_allclose(nxt.X, expected_X, atol=1e-14)

    g_new = [4 * expected_X[0, 0], 2 * expected_X[1, 1], 4 * expected_X[2, 1], -2 * expected_X[3, 0]]
    pair = [(y[0] + y[1]) / 2] * 2 + [(y[2] + y[3]) / 2] * 2
    expected_y = [pair[i] + g_new[i] - y[i] for i in range(4)]
    np.testing.assert_allclose(nxt.y, expected_y, atol=1e-14)


def test_residuals():
    game, sets, topo = tg1_setup()
    s = initialize(game, sets, topo, x0=np.array([1.5, 0.0]))
    assert consensus_residual(s) == 0.0
    # y = (6, 0 | 0, -3): cluster means 3 and -1.5
    assert tracking_residual(s, game) == pytest.approx(np.sqrt(2 * 3.0**2 + 2 * 1.5**2))
    ybar = game.selectors.average(s.y)
    np.testing.assert_allclose(ybar, [3, 3, -1.5, -1.5])


@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.1])
def test_tg1_converges(alpha):
    game, sets, topo = tg1_setup()
    state, trace = run(game, sets, topo, SolverConfig(alpha=alpha, max_iter=50_000, tol=1e-10))
    assert trace.converged and trace.stop_reason == "tolerance"
    np.testing.assert_allclose(state.X, np.tile([1.0, 0.5], (4, 1)), atol=1e-6)
    assert trace.consensus_res[-1] < 1e-8 and trace.tracking_res[-1] < 1e-8


def test_unconstrained_tg1_reaches_origin():
    game, sets = tg1_unconstrained()
    topo = CommTopology.ring(game.dims)
    state, trace = run(game, sets, topo, SolverConfig(alpha=0.05, max_iter=50_000, tol=1e-10),
                       x0=np.array([3.0, -2.0]))
    assert trace.converged
    np.testing.assert_allclose(state.X, 0.0, atol=1e-6)


def test_run_stops_at_budget():
    game, sets, topo = tg1_setup()
    state, trace = run(game, sets, topo, SolverConfig(alpha=0.01, max_iter=7, trace_stride=3))
    assert not trace.converged and trace.stop_reason == "max_iter"
    assert state.k == 7 and trace.k == [0, 3, 6, 7]


def test_trace_file_and_determinism(tmp_path):
    game, sets, topo = tg1_setup()
    cfg = SolverConfig(alpha=0.05, max_iter=300, tol=1e-10, timing=False)
    ref = np.array([1.0, 0.5])
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        run(game, sets, topo, cfg, reference=ref, trace_path=p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    rows = list(csv.DictReader(io.StringIO(paths[0].read_text())))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert int(rows[0]["k"]) == 0 and float(rows[-1]["err_vs_oracle"]) < 1e-6


def test_threaded_run_matches_sequential():
    rng = np.random.default_rng(3)
    game = random_quadratic_game(rng, clusters=2, agents=[3, 3], sizes=[3, 2])
    sets = random_cluster_sets(rng, game.dims, halfspaces=2)
    topo = CommTopology.ring(game.dims)
    cfg = SolverConfig(alpha=0.05, max_iter=200, tol=1e-12)
    a = run(game, sets, topo, cfg)[0]
    b = run(game, sets, topo, SolverConfig(alpha=0.05, max_iter=200, tol=1e-12, workers=3))[0]
    np.testing.assert_allclose(a.X, b.X, atol=1e-9)


@settings(max_examples=25)
@given(st.integers(0, 100_000))
def test_tracking_sum_identity_and_feasibility(seed):
    rng = np.random.default_rng(seed)
    game = random_quadratic_game(rng)
    sets = random_cluster_sets(rng, game.dims, halfspaces=int(rng.integers(0, 3)))
    topo = CommTopology.random(game.dims, seed=seed)
    cfg = SolverConfig(alpha=float(rng.uniform(0.01, 0.2)))
    s = initialize(game, sets, topo, seed=seed)
    for _ in range(40):
        s = step(s, game, sets, topo, cfg)
        assert np.all(tracking_sum_gap(s, game) <= 1e-9)
        assert own_blocks_feasible(s, game, sets, tol=1e-7)


@settings(max_examples=10)
@given(st.integers(0, 100_000))
def test_consensus_limit_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    game = random_quadratic_game(rng, max_clusters=2, max_agents=3, max_dim=2)
    sets = random_cluster_sets(rng, game.dims)
    topo = CommTopology.complete(game.dims)
    ref = centralized_solve(game, sets, tol=1e-12).x
    state, trace = run(game, sets, topo, SolverConfig(alpha=0.05, max_iter=100_000, tol=1e-11))
    assert trace.converged
    xm = state.X.mean(axis=0)
    assert np.linalg.norm(xm - ref) <= 1e-6 * max(1.0, np.linalg.norm(ref))


@settings(max_examples=5)
@given(st.integers(0, 100_000))
def test_error_pair_contracts_in_tail(seed):
    # ||tau(k+1)|| <= (rho(A_tau(alpha)) + 0.05) ||tau(k)|| over the second half of a run
    rng = np.random.default_rng(seed)
    game = random_quadratic_game(rng, max_clusters=2, max_agents=3, max_dim=2)
    sets = random_cluster_sets(rng, game.dims)
    topo = CommTopology.ring(game.dims)
    try:
        c = estimate_constants(game, sets, topo)
        rep = rate_report(c)
    except DegenerateConstantsError:
        assume(False)  # no positive step bound for this instance
    alpha = rep.alpha_bar / 2
    bound = spectral_radius_2x2(matrix_A_tau(alpha, c)) + 0.05
    ref = centralized_solve(game, sets, tol=1e-12).x
    cfg = SolverConfig(alpha=alpha)
    s = initialize(game, sets, topo, seed=1)
    taus = []
    for _ in range(400):
        s = step(s, game, sets, topo, cfg)
        taus.append(np.hypot(np.linalg.norm(s.X - ref), tracking_residual(s, game)))
    taus = np.array(taus[200:])
    assert np.all(taus[1:] <= bound * taus[:-1] + 1e-12)
