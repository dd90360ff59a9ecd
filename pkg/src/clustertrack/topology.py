"""Undirected communication graphs and doubly stochastic weight matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, TopologyError, ValidationError
from .validation import Check


@dataclass(frozen=True)
class UndirectedGraph:
    """Vertices ``0..n_vertices-1``; edges are unordered pairs without self-loops."""

    n_vertices: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n_vertices < 1:
            raise InputError("a graph needs at least one vertex")
        norm = set()
        for e in self.edges:
            i, j = sorted(int(v) for v in e)
            if i == j:
                continue
            if i < 0 or j >= self.n_vertices:
                raise InputError(f"edge {e} references a missing vertex")
            norm.add((i, j))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def from_adjacency_list(cls, adjacency):
        """``adjacency[i]`` lists the neighbours of vertex ``i``."""
        edges = {(i, int(j)) for i, nbrs in enumerate(adjacency) for j in nbrs}
        return cls(len(adjacency), frozenset(edges))

    def adjacency_list(self):
        out = [[] for _ in range(self.n_vertices)]
        for i, j in sorted(self.edges):
            out[i].append(j)
            out[j].append(i)
        return [sorted(v) for v in out]

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_vertices, self.n_vertices))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        nbrs = self.adjacency_list()
        while stack:
            for j in nbrs[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n_vertices


def complete_graph(n):
    return UndirectedGraph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def path_graph(n):
    return UndirectedGraph(n, frozenset((i, i + 1) for i in range(n - 1)))


def ring_graph(n):
    if n < 3:
        return path_graph(n)
    return UndirectedGraph(n, frozenset((i, (i + 1) % n) for i in range(n)))


def erdos_renyi(n, p=0.4, seed=None, max_tries=10_000):
    """Connected G(n, p) sample by rejection; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for _ in range(max_tries):
        keep = rng.random(len(pairs)) < p
        g = UndirectedGraph(n, frozenset(e for e, k in zip(pairs, keep) if k))
        if g.is_connected():
            return g
    raise TopologyError(f"no connected G({n}, {p}) sample in {max_tries} tries")


@dataclass(frozen=True)
class WeightMatrix:
    """Nonnegative weights on a graph's edges plus diagonal."""

    matrix: np.ndarray
    graph: UndirectedGraph | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InputError("weight matrix must be square")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def size(self):
        return self.matrix.shape[0]

    def checks(self, tol=1e-12) -> list[Check]:
        W = self.matrix
        n = self.size
        ones = np.ones(n)
        out = [
            Check("nonnegative", bool(np.all(W >= -tol)), f"min entry {W.min():.3g}"),
            Check("row_stochastic", bool(np.allclose(W @ ones, 1.0, atol=tol, rtol=0)),
                  f"max |row sum - 1| = {np.max(np.abs(W @ ones - 1)):.3g}"),
            Check("column_stochastic", bool(np.allclose(ones @ W, 1.0, atol=tol, rtol=0)),
                  f"max |col sum - 1| = {np.max(np.abs(ones @ W - 1)):.3g}"),
            Check("symmetric", bool(np.allclose(W, W.T, atol=tol, rtol=0)),
                  f"max asymmetry {np.max(np.abs(W - W.T)):.3g}"),
            Check("positive_diagonal", bool(np.all(np.diag(W) > 0)), f"min diagonal {np.diag(W).min():.3g}"),
        ]
        if self.graph is not None:
            mask = self.graph.adjacency() + np.eye(n)
            stray = np.abs(W[mask == 0])
            out.append(Check("sparsity", bool(np.all(stray <= tol)),
                             f"max weight off the graph {stray.max() if stray.size else 0.0:.3g}"))
        return out

    def validate(self, tol=1e-12):
        failed = [c for c in self.checks(tol) if not c.passed]
        if failed:
            raise ValidationError("; ".join(f"{c.name}: {c.detail}" for c in failed))


def metropolis_weights(graph: UndirectedGraph) -> WeightMatrix:
    """``w_ij = 1 / (1 + max(deg_i, deg_j))`` on edges, diagonal completes rows."""
    if not graph.is_connected():
        raise TopologyError("Metropolis weights require a connected graph")
    deg = graph.degrees()
    W = np.zeros((graph.n_vertices, graph.n_vertices))
    for i, j in graph.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices_from(W)] = 1.0 - W.sum(axis=1)
    return WeightMatrix(W, graph)


def contraction_sigma(w: WeightMatrix | np.ndarray, tol=1e-10) -> float:
    """Second-largest eigenvalue modulus of a symmetric doubly stochastic matrix.

    Eigenvalues are taken on the subspace orthogonal to ``1``, so a
    disconnected graph (a repeated eigenvalue 1) reports ``sigma = 1``.
    """
    W = w.matrix if isinstance(w, WeightMatrix) else np.asarray(w, dtype=float)
    n = W.shape[0]
    ones = np.ones(n)
    if not (np.allclose(W @ ones, 1, atol=tol) and np.allclose(ones @ W, 1, atol=tol)):
        raise ValidationError("contraction factor needs a doubly stochastic matrix")
    if not np.allclose(W, W.T, atol=tol):
        raise ValidationError("contraction factor needs a symmetric matrix")
    if n == 1:
        return 0.0
    J = np.full((n, n), 1.0 / n)
    return float(np.max(np.abs(np.linalg.eigvalsh(W - J))))


class CommTopology:
    """Global weights ``W`` over all agents and per-cluster weights ``V^h``."""

    def __init__(self, global_weights: WeightMatrix, cluster_weights):
        self.W = global_weights
        self.V = tuple(cluster_weights)
        self.global_graph = global_weights.graph
        self.cluster_graphs = tuple(v.graph for v in self.V)
        self.sigma = _safe_sigma(self.W)
        self.sigma_V_each = tuple(_safe_sigma(v) for v in self.V)
        self.sigma_V = max(self.sigma_V_each) if self.V else 0.0

    @classmethod
    def from_graphs(cls, global_graph, cluster_graphs):
        return cls(metropolis_weights(global_graph), [metropolis_weights(g) for g in cluster_graphs])

    @classmethod
    def complete(cls, dims):
        return cls.from_graphs(complete_graph(dims.N), [complete_graph(a) for a in dims.agents_per_cluster])

    @classmethod
    def ring(cls, dims):
        return cls.from_graphs(ring_graph(dims.N), [ring_graph(a) for a in dims.agents_per_cluster])

    @classmethod
    def random(cls, dims, p=0.4, seed=None):
        """Erdős–Rényi global and cluster graphs from one seeded stream."""
        rng = np.random.default_rng(seed)
        seeds = rng.integers(0, 2**63 - 1, size=dims.H + 1)
        g = erdos_renyi(dims.N, p, seeds[0])
        hs = [erdos_renyi(a, p, s) for a, s in zip(dims.agents_per_cluster, seeds[1:])]
        return cls.from_graphs(g, hs)

    def mix_global(self, X):
        return self.W.matrix @ X

    def mix_cluster(self, h, Y):
        return self.V[h].matrix @ Y


def _safe_sigma(w):
    try:
        return contraction_sigma(w)
    except ValidationError:
        return float("nan")


def validate_topology(dims, topo: CommTopology) -> list[Check]:
    """One check per graph/weight assumption, failures included rather than raised."""
    out = []
    if topo.W.size != dims.N:
        out.append(Check("global.size", False, f"W is {topo.W.size}x{topo.W.size}, expected N={dims.N}"))
    if len(topo.V) != dims.H:
        out.append(Check("cluster_count", False, f"{len(topo.V)} cluster matrices for H={dims.H}"))
    for h, (v, a) in enumerate(zip(topo.V, dims.agents_per_cluster)):
        if v.size != a:
            out.append(Check(f"cluster[{h}].size", False, f"V^{h} has size {v.size}, expected {a}"))

    def graph_checks(label, w, sigma, sigma_name):
        res = []
        if w.graph is not None:
            res.append(Check(f"{label}.connectivity", w.graph.is_connected(),
                             f"{w.graph.n_vertices} vertices, {len(w.graph.edges)} edges"))
        ws = {c.name: c for c in w.checks()}
        ds = ws["row_stochastic"].passed and ws["column_stochastic"].passed and ws["nonnegative"].passed
        res.append(Check(f"{label}.double_stochasticity", ds,
                         f"{ws['row_stochastic'].detail}; {ws['column_stochastic'].detail}; {ws['nonnegative'].detail}"))
        res.append(Check(f"{label}.symmetry", ws["symmetric"].passed, ws["symmetric"].detail))
        res.append(Check(f"{label}.positive_diagonal", ws["positive_diagonal"].passed, ws["positive_diagonal"].detail))
        if "sparsity" in ws:
            res.append(Check(f"{label}.sparsity", ws["sparsity"].passed, ws["sparsity"].detail))
        ok = bool(np.isfinite(sigma) and sigma < 1 - 1e-12)
        res.append(Check(f"{label}.{sigma_name}_below_one", ok,
                         f"{sigma_name} = {sigma:.6g}" if np.isfinite(sigma)
                         else f"{sigma_name} undefined (matrix not symmetric doubly stochastic)"))
        return res

    out += graph_checks("global", topo.W, topo.sigma, "sigma")
    for h, (v, s) in enumerate(zip(topo.V, topo.sigma_V_each)):
        out += graph_checks(f"cluster[{h}]", v, s, "sigma_V")
    return out
