import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clustertrack.errors import InputError, TopologyError, ValidationError
from clustertrack.game import Dimensions
from clustertrack.topology import (CommTopology, UndirectedGraph, WeightMatrix, complete_graph,
                                   contraction_sigma, erdos_renyi, metropolis_weights, path_graph,
                                   ring_graph, validate_topology)


def test_graph_normalises_edges():
    g = UndirectedGraph(3, [(1, 0), (0, 1), (2, 2), (1, 2)])
    assert g.edges == frozenset({(0, 1), (1, 2)})
    assert list(g.degrees()) == [1, 2, 1]
    assert g.adjacency_list() == [[1], [0, 2], [1]]


def test_graph_rejects_bad_vertex():
    with pytest.raises(InputError):
        UndirectedGraph(2, [(0, 2)])


def test_graph_round_trip_adjacency_list():
    g = erdos_renyi(7, 0.5, seed=3)
    assert UndirectedGraph.from_adjacency_list(g.adjacency_list()) == g


def test_connectivity():
    assert path_graph(4).is_connected()
    assert not UndirectedGraph(3, [(0, 1)]).is_connected()
    assert UndirectedGraph(1, []).is_connected()


def test_metropolis_complete_three():
    np.testing.assert_allclose(metropolis_weights(complete_graph(3)).matrix, np.full((3, 3), 1 / 3))


def test_metropolis_path_three():
    # w_ij = 1/(1 + max(deg_i, deg_j)) with degrees (1, 2, 1); diagonal fills rows
    expected = [[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]]
    np.testing.assert_allclose(metropolis_weights(path_graph(3)).matrix, expected, atol=1e-15)


def test_metropolis_single_vertex():
    np.testing.assert_array_equal(metropolis_weights(UndirectedGraph(1, [])).matrix, [[1.0]])


def test_metropolis_rejects_disconnected():
    with pytest.raises(TopologyError):
        metropolis_weights(UndirectedGraph(2, []))


def test_sigma_values():
    assert contraction_sigma(metropolis_weights(complete_graph(3))) == pytest.approx(0, abs=1e-15)
    # eigenvalues of the path-3 matrix are {1, 2/3, 0}
    eig = np.linalg.eigvals(metropolis_weights(path_graph(3)).matrix)
    np.testing.assert_allclose(sorted(eig.real), [0, 2 / 3, 1], atol=1e-12)
    assert contraction_sigma(metropolis_weights(path_graph(3))) == pytest.approx(2 / 3, abs=1e-12)
    assert contraction_sigma(np.eye(2)) == pytest.approx(1.0)


def test_sigma_rejects_non_stochastic():
    with pytest.raises(ValidationError):
        contraction_sigma(np.array([[0.5, 0.2], [0.5, 0.8]]))


def test_weight_matrix_is_read_only():
    w = metropolis_weights(ring_graph(4))
    with pytest.raises(ValueError):
        w.matrix[0, 0] = 2.0


@given(st.integers(2, 12), st.floats(0.2, 1.0), st.integers(0, 10_000))
def test_metropolis_invariants(n, p, seed):
    g = erdos_renyi(n, p, seed=seed)
    w = metropolis_weights(g)
    assert all(c.passed for c in w.checks())
    assert 0 <= contraction_sigma(w) < 1


@given(st.integers(2, 12), st.integers(0, 10_000))
def test_consensus_contraction(n, seed):
    # ||W x - 1 xbar|| <= sigma ||x - 1 xbar|| for every x
    rng = np.random.default_rng(seed)
    w = metropolis_weights(erdos_renyi(n, 0.4, seed=seed))
    s = contraction_sigma(w)
    x = rng.normal(size=(n, 3))
    dev = x - x.mean(axis=0)
    mixed = w.matrix @ x
    assert np.linalg.norm(mixed - x.mean(axis=0)) <= s * np.linalg.norm(dev) + 1e-12
    np.testing.assert_allclose(mixed.mean(axis=0), x.mean(axis=0), atol=1e-12)


def test_topology_constructors():
    d = Dimensions((2, 3), (1, 1))
    t = CommTopology.ring(d)
    assert t.W.size == 5 and [v.size for v in t.V] == [2, 3]
    assert t.sigma_V == max(t.sigma_V_each)
    assert all(c.passed for c in validate_topology(d, t))
    r1, r2 = CommTopology.random(d, seed=7), CommTopology.random(d, seed=7)
    np.testing.assert_array_equal(r1.W.matrix, r2.W.matrix)


def _names(checks):
    return {c.name for c in checks if not c.passed}


def test_validate_disconnected_global():
    d = Dimensions((2, 2), (1, 1))
    W = WeightMatrix(np.eye(4), UndirectedGraph(4, [(0, 1), (2, 3)]))
    topo = CommTopology(W, [metropolis_weights(complete_graph(2))] * 2)
    failed = _names(validate_topology(d, topo))
    assert {"global.connectivity", "global.sigma_below_one"} <= failed


def test_validate_asymmetric_weights():
    d = Dimensions((3,), (1,))
    g = complete_graph(3)
    W = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])  # doubly stochastic, not symmetric
    topo = CommTopology(WeightMatrix(W, g), [WeightMatrix(W.T.copy(), g)])
    failed = _names(validate_topology(d, topo))
    assert "global.symmetry" in failed and "cluster[0].symmetry" in failed
    W2 = np.array([[0.6, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
    topo = CommTopology(WeightMatrix(W2, g), [metropolis_weights(g)])
    assert "global.double_stochasticity" in _names(validate_topology(d, topo))


def test_validate_size_mismatch():
    d = Dimensions((2, 2), (1, 1))
    topo = CommTopology.complete(Dimensions((3,), (1,)))
    failed = _names(validate_topology(d, topo))
    assert {"global.size", "cluster_count"} <= failed
