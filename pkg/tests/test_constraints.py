import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clustertrack import kernels
from clustertrack.constraints import (BoxSet, FeasibleSet, Halfspace, Hyperplane, contains, project,
                                      project_box, project_halfspace, project_hyperplane)
from clustertrack.errors import InfeasibleSetError, InputError
from clustertrack.kkt import polyhedron, project_qp

quadprog = pytest.importorskip("quadprog")


def random_set(rng, dim, n_eq=None, n_ineq=None, certify=True):
    lo = rng.uniform(-2.0, 0.0, dim)
    hi = lo + rng.uniform(0.5, 3.0, dim)
    inner = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo))
    members = [BoxSet(lo, hi)]
    n_eq = rng.integers(0, max(1, dim // 3) + 1) if n_eq is None else n_eq
    n_ineq = rng.integers(0, dim + 1) if n_ineq is None else n_ineq
    for _ in range(n_eq):
        a = rng.normal(size=dim)
        members.append(Hyperplane(a, a @ inner))
    for _ in range(n_ineq):
        a = rng.normal(size=dim)
        members.append(Halfspace(a, a @ inner + rng.uniform(0.0, 1.0)))
    return FeasibleSet(members, certify=certify)


def quadprog_projection(fs, u):
    """Goldfarb-Idnani solve of min 1/2||x - u||^2 over the polyhedron."""
    A, b, G, h = polyhedron(fs)
    C = np.vstack([A, -G]).T
    return quadprog.solve_qp(np.eye(fs.dim), u, C, np.concatenate([b, -h]), A.shape[0])[0]


def test_box_projection():
    box = BoxSet([0, 0], [1, 1])
    np.testing.assert_array_equal(project_box(box, [0.5, 0.5]), [0.5, 0.5])
    np.testing.assert_array_equal(project_box(box, [2, -1]), [1, 0])
    assert project(FeasibleSet([BoxSet([1], [2])]), [0.8])[0] == 1.0


def test_hyperplane_projection():
    np.testing.assert_allclose(project_hyperplane(Hyperplane([1, 1], 1), [1, 1]), [0.5, 0.5])
    np.testing.assert_allclose(project_hyperplane(Hyperplane([1, 0], 3), [0, 7]), [3, 7])


def test_halfspace_projection():
    np.testing.assert_array_equal(project_halfspace(Halfspace([1, 0], 1), [0, 0]), [0, 0])
    np.testing.assert_allclose(project_halfspace(Halfspace([1, 0], 1), [2, 5]), [1, 5])


@pytest.mark.parametrize("kind", [Hyperplane, Halfspace])
def test_single_affine_matches_qp(kind, rng):
    for _ in range(20):
        a = rng.normal(size=5)
        m = kind(a, rng.normal())
        u = rng.normal(scale=3, size=5)
        x = project_hyperplane(m, u) if kind is Hyperplane else project_halfspace(m, u)
        big = FeasibleSet([BoxSet(np.full(5, -1e6), np.full(5, 1e6)), m], certify=False)
        np.testing.assert_allclose(x, project_qp(big, u).x, atol=1e-9)


def test_composite_by_kkt():
    fs = FeasibleSet([BoxSet([0, 0], [1, 1]), Hyperplane([1, 1], 1)])
    np.testing.assert_allclose(fs.project([2.0, 2.0]), [0.5, 0.5], atol=1e-10)
    x_in = np.array([0.3, 0.7])
    np.testing.assert_allclose(fs.project(x_in), x_in, atol=1e-12)


def test_contains():
    box = FeasibleSet([BoxSet([0], [1])])
    assert contains(box, [0.5], 0.0)
    assert contains(box, [1 + 1e-9], 1e-8)
    hp = FeasibleSet([BoxSet([-5, -5], [5, 5]), Hyperplane([1, 0], 0.0)])
    assert not hp.contains([1e-3, 0.0], 1e-6)


def test_member_validation():
    with pytest.raises(InputError):
        BoxSet([1.0], [0.0])
    with pytest.raises(InputError):
        Hyperplane([0.0, 0.0], 1.0)
    with pytest.raises(InputError):
        Halfspace([0.0], 1.0)
    with pytest.raises(InputError):
        FeasibleSet([BoxSet([0], [1]), Hyperplane([1, 1], 0)])
    with pytest.raises(InputError):
        FeasibleSet([])


def test_certification():
    with pytest.raises(InfeasibleSetError):
        FeasibleSet([Hyperplane([1.0, 1.0], 1.0)])  # no finite box: not compact
    with pytest.raises(InfeasibleSetError) as err:
        FeasibleSet([BoxSet([0, 0], [1, 1]), Hyperplane([1, 1], 5)])
    assert err.value.witness in (0, 1) and err.value.violation > 0
    with pytest.raises(InfeasibleSetError):
        FeasibleSet([BoxSet([0], [1]), BoxSet([2], [3])])
    fs = FeasibleSet([BoxSet([0, 0], [1, 1]), Halfspace([1, 1], 0.5)])
    assert fs.contains(fs.witness, 1e-9)


def test_thirty_random_sets_in_r10(rng):
    for _ in range(30):
        fs = random_set(rng, 10, n_eq=2, n_ineq=4)
        u = rng.normal(scale=4, size=10)
        np.testing.assert_allclose(fs.project(u), quadprog_projection(fs, u), atol=1e-6)


@given(st.integers(0, 100_000), st.integers(1, 20))
def test_matches_kkt_oracle(seed, dim):
    rng = np.random.default_rng(seed)
    fs = random_set(rng, dim)
    u = rng.normal(scale=4, size=dim)
    ref = project_qp(fs, u)
    assert ref.certified
    np.testing.assert_allclose(fs.project(u), ref.x, atol=1e-6)


@given(st.integers(0, 100_000), st.integers(1, 20))
def test_idempotent_nonexpansive_feasible(seed, dim):
    rng = np.random.default_rng(seed)
    fs = random_set(rng, dim)
    u, v = rng.normal(scale=4, size=(2, dim))
    pu, pv = fs.project(u), fs.project(v)
    assert fs.contains(pu, 1e-8)
    np.testing.assert_allclose(fs.project(pu), pu, atol=2e-8)
    assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-9


def test_warm_cache_sequence_matches_cold(rng):
    fs = random_set(rng, 15, n_eq=3, n_ineq=10)
    cache = fs.new_cache()
    u = rng.normal(size=15)
    for _ in range(50):
        u = u + 0.05 * rng.normal(size=15)
        np.testing.assert_allclose(fs.project(u, cache), project_qp(fs, u).x, atol=1e-8)


def test_python_kernel_agrees(rng, monkeypatch):
    fs = random_set(rng, 12, n_eq=2, n_ineq=6)
    us = rng.normal(scale=3, size=(10, 12))
    compiled = [fs.project(u) for u in us]
    monkeypatch.setattr(kernels, "dykstra", kernels.dykstra_python)
    for u, x in zip(us, compiled):
        np.testing.assert_allclose(fs.project(u), x, atol=1e-9)


def test_kernels_same_iterates(rng):
    if kernels.dykstra_compiled is None:
        pytest.skip("compiled kernel not built")
    fs = random_set(rng, 12, n_eq=2, n_ineq=6)
    u = rng.normal(scale=3, size=12)
    args = (fs.lower, fs.upper, fs._indptr, fs._indices, fs._data, fs._rhs, fs._is_eq, fs._inv_sq)
    out = []
    for fn in (kernels.dykstra_python, kernels.dykstra_compiled):
        lam, corr = np.zeros(fs.n_rows), np.zeros(12)
        x, sweeps, _ = fn(u, *args, lam, corr, 0.0, 37)
        out.append((x, sweeps, lam, corr))
    np.testing.assert_allclose(out[0][0], out[1][0], atol=1e-12)
    assert out[0][1] == out[1][1] == 37
    np.testing.assert_allclose(out[0][2], out[1][2], atol=1e-12)


@given(st.integers(0, 100_000), st.integers(1, 20))
def test_dual_active_set_fallback_matches_oracle(seed, dim):
    rng = np.random.default_rng(seed)
    fs = random_set(rng, dim, n_eq=1, n_ineq=dim)
    u = rng.normal(scale=4, size=dim)
    cache = fs.new_cache()
    x = fs._dual_active_set(u, cache)
    np.testing.assert_allclose(x, project_qp(fs, u).x, atol=1e-8)
    # returned multipliers satisfy stationarity  x - u + A^T lam + box = 0
    resid = x - u + fs._dense_rows().T @ cache.lam + cache.box_corr
    assert np.max(np.abs(resid)) < 1e-7


def test_degenerate_vertex_projection():
    # Dykstra stalls on this instance for thousands of sweeps
    rng = np.random.default_rng(554)
    dim = int(rng.integers(1, 21))
    fs = random_set(rng, dim)
    for u in rng.normal(scale=4, size=(3, dim)):
        np.testing.assert_allclose(fs.project(u), project_qp(fs, u).x, atol=1e-8)
