"""Multi-cluster games: dimensions, agent costs, game and extended mappings.

Agents are numbered ``0..N-1`` cluster by cluster (all agents of cluster 0
first), and clusters ``0..H-1``.  Every agent keeps an estimate of the full
strategy ``x in R^n``; stacked estimates are stored as an ``(N, n)`` array,
whose row-major ravel is the agent-major stacked vector.

Cluster costs carry the ``1/N_h`` averaging factor: ``F^h = mean_i f_i^h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Dimensions:
    """Cluster bookkeeping: agents per cluster and per-cluster decision sizes."""

    agents_per_cluster: tuple[int, ...]
    cluster_dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "agents_per_cluster", tuple(int(v) for v in self.agents_per_cluster))
        object.__setattr__(self, "cluster_dims", tuple(int(v) for v in self.cluster_dims))
        if len(self.agents_per_cluster) < 1:
            raise InputError("a game needs at least one cluster")
        if len(self.agents_per_cluster) != len(self.cluster_dims):
            raise InputError("agents_per_cluster and cluster_dims differ in length")
        if min(self.agents_per_cluster) < 1 or min(self.cluster_dims) < 1:
            raise InputError("every cluster needs at least one agent and one decision variable")

    @property
    def H(self):
        return len(self.agents_per_cluster)

    @property
    def N(self):
        return sum(self.agents_per_cluster)

    @property
    def n(self):
        return sum(self.cluster_dims)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start of each cluster's block inside ``x``; length ``H + 1``."""
        return np.concatenate([[0], np.cumsum(self.cluster_dims)])

    @cached_property
    def agent_offsets(self) -> np.ndarray:
        """First agent index of each cluster; length ``H + 1``."""
        return np.concatenate([[0], np.cumsum(self.agents_per_cluster)])

    @cached_property
    def tracking_offsets(self) -> np.ndarray:
        """Start of each cluster inside the tracking vector ``col(y^h)``."""
        sizes = [a * d for a, d in zip(self.agents_per_cluster, self.cluster_dims)]
        return np.concatenate([[0], np.cumsum(sizes)])

    @cached_property
    def cluster_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.H), self.agents_per_cluster)

    def block(self, h) -> slice:
        self.check_cluster(h)
        return slice(int(self.offsets[h]), int(self.offsets[h + 1]))

    def agents(self, h) -> range:
        self.check_cluster(h)
        return range(int(self.agent_offsets[h]), int(self.agent_offsets[h + 1]))

    def tracking_block(self, h) -> slice:
        return slice(int(self.tracking_offsets[h]), int(self.tracking_offsets[h + 1]))

    def check_cluster(self, h):
        if not (isinstance(h, (int, np.integer)) and 0 <= h < self.H):
            raise InputError(f"cluster index {h!r} outside 0..{self.H - 1}")


@dataclass(frozen=True)
class AgentCost:
    """Private cost of one agent.

    ``gradient`` returns the derivative with respect to the agent's own
    cluster block only.  ``linear = (K, k)`` declares that the gradient is
    ``K @ x + k`` plus, optionally, a coordinate-wise monotone remainder whose
    derivative lies in ``[0, curvature_slack]``; games whose agents all
    declare it admit exact problem constants.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    linear: tuple[np.ndarray, np.ndarray] | None = None
    curvature_slack: np.ndarray | None = None


def quadratic_cost(P, q, block: slice) -> AgentCost:
    """``f(x) = 1/2 x^T P x + q^T x`` with the gradient restricted to ``block``."""
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    if P.shape != (q.size, q.size):
        raise InputError("P must be square and match q")
    if not np.allclose(P, P.T):
        raise InputError("P must be symmetric")
    K, k = P[block].copy(), q[block].copy()

    def value(x):
        return float(0.5 * x @ P @ x + q @ x)

    def gradient(x):
        return K @ x + k

    return AgentCost(value, gradient, linear=(K, k))


def dense(K) -> np.ndarray:
    """Dense copy of a linear part stored as an array or a scipy sparse matrix."""
    return np.asarray(K.toarray() if hasattr(K, "toarray") else K, dtype=float)


class MultiClusterGame:
    """Clusters of agents with private costs; immutable after construction."""

    def __init__(self, dims: Dimensions, costs: Sequence[Sequence[AgentCost]]):
        costs = tuple(tuple(c) for c in costs)
        if len(costs) != dims.H:
            raise InputError(f"expected costs for {dims.H} clusters, got {len(costs)}")
        for h, (row, n_agents) in enumerate(zip(costs, dims.agents_per_cluster)):
            if len(row) != n_agents:
                raise InputError(f"cluster {h}: {len(row)} costs for {n_agents} agents")
        self.dims = dims
        self.costs = costs
        self.selectors = BlockSelectors(dims)

    @property
    def agent_costs(self):
        return [c for row in self.costs for c in row]

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dims.n,):
            raise InputError(f"strategy must have length {self.dims.n}, got shape {x.shape}")
        return x

    def _check_X(self, X):
        X = np.asarray(X.data if isinstance(X, StackedEstimate) else X, dtype=float)
        if X.shape == (self.dims.N * self.dims.n,):
            X = X.reshape(self.dims.N, self.dims.n)
        if X.shape != (self.dims.N, self.dims.n):
            raise InputError(f"stacked estimate must be ({self.dims.N}, {self.dims.n}), got {X.shape}")
        return X

    def cluster_gradient(self, h, x) -> np.ndarray:
        """``grad_h F^h(x)``: averaged own-block gradient of cluster ``h``."""
        self.dims.check_cluster(h)
        x = self._check_x(x)
        return np.mean([c.gradient(x) for c in self.costs[h]], axis=0)

    def mapping(self, x) -> np.ndarray:
        """Game mapping ``M(x) = col(grad_h F^h(x))``."""
        x = self._check_x(x)
        return np.concatenate([self.cluster_gradient(h, x) for h in range(self.dims.H)])

    def local_gradients(self, X) -> np.ndarray:
        """``col(grad_h f_i^h(x_i))`` over all agents, in tracking layout."""
        X = self._check_X(X)
        out = np.empty(self.dims.tracking_offsets[-1])
        pos = 0
        for i, cost in enumerate(self.agent_costs):
            g = cost.gradient(X[i])
            out[pos:pos + g.size] = g
            pos += g.size
        return out

    def extended_mapping(self, X) -> np.ndarray:
        """``col(1_{N_h} kron mean_i grad_h f_i^h(x_i))`` for stacked estimates."""
        return self.selectors.average(self.local_gradients(X))

    def cluster_objective(self, h, x) -> float:
        """``F^h(x)``, the averaged cluster cost."""
        x = self._check_x(x)
        return float(np.mean([c.value(x) for c in self.costs[h]]))

    def cluster_total_cost(self, h, x) -> float:
        """Plain sum of the agents' costs in cluster ``h``."""
        x = self._check_x(x)
        return float(np.sum([c.value(x) for c in self.costs[h]]))

    # -- affine structure -------------------------------------------------
    @property
    def is_affine(self):
        return all(c.linear is not None for c in self.agent_costs)

    def linear_parts(self):
        """Per-agent ``(K, k, slack)``; requires every cost to declare ``linear``.

        ``K`` is returned as stored (dense or scipy sparse); see :func:`dense`."""
        if not self.is_affine:
            raise InputError("game has costs without a declared linear gradient part")
        out = []
        for c in self.agent_costs:
            K, k = c.linear
            slack = np.zeros(K.shape[0]) if c.curvature_slack is None else np.asarray(c.curvature_slack)
            out.append((K, np.asarray(k, float), slack))
        return out

    def jacobian(self):
        """Assembled ``(J, c, slack)`` with ``M(x) = J x + c + r(x)``.

        ``r`` is coordinate-wise with derivative in ``[0, slack]``; for purely
        quadratic games ``slack`` is zero and ``M`` is exactly affine.
        """
        if not self.is_affine:
            raise InputError("game has costs without a declared linear gradient part")
        costs = self.agent_costs
        d = self.dims
        J = np.zeros((d.n, d.n))
        c = np.zeros(d.n)
        slack = np.zeros(d.n)
        for h in range(d.H):
            blk = d.block(h)
            for i in d.agents(h):
                K, k = costs[i].linear
                s = 0.0 if costs[i].curvature_slack is None else np.asarray(costs[i].curvature_slack)
                J[blk] += dense(K) / d.agents_per_cluster[h]
                c[blk] += k / d.agents_per_cluster[h]
                slack[blk] += s / d.agents_per_cluster[h]
        return J, c, slack


class BlockSelectors:
    """Index-map realisations of the assignment matrix ``Q`` and averager ``R``.

    ``select`` gathers each agent's own-cluster block from the stacked
    estimate (``Q x``); ``scatter`` writes such blocks back (``Q^T`` onto a
    given base); ``average`` replaces each cluster's tracking blocks by their
    mean (``R y``).
    """

    def __init__(self, dims: Dimensions):
        self.dims = dims
        idx = []
        for h in range(dims.H):
            blk = dims.block(h)
            for i in dims.agents(h):
                idx.extend(i * dims.n + np.arange(blk.start, blk.stop))
        self.index = np.asarray(idx, dtype=np.int64)

    def select(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float).reshape(-1)[self.index]

    def scatter(self, X, values) -> np.ndarray:
        out = np.array(X, dtype=float).reshape(-1)
        out[self.index] = values
        return out.reshape(self.dims.N, self.dims.n)

    def transpose_apply(self, values) -> np.ndarray:
        """``Q^T v``: own-cluster blocks filled in, everything else zero."""
        return self.scatter(np.zeros((self.dims.N, self.dims.n)), values)

    def average(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        d = self.dims
        for h in range(d.H):
            sl = d.tracking_block(h)
            blocks = y[sl].reshape(d.agents_per_cluster[h], d.cluster_dims[h])
            out[sl] = np.tile(blocks.mean(axis=0), d.agents_per_cluster[h])
        return out

    def dense_Q(self) -> np.ndarray:
        """Dense ``Q``; debugging aid for small instances only."""
        Q = np.zeros((self.index.size, self.dims.N * self.dims.n))
        Q[np.arange(self.index.size), self.index] = 1.0
        return Q

    def dense_R(self) -> np.ndarray:
        """Dense ``R``; debugging aid for small instances only."""
        d = self.dims
        blocks = [np.kron(np.full((a, a), 1.0 / a), np.eye(m))
                  for a, m in zip(d.agents_per_cluster, d.cluster_dims)]
        size = d.tracking_offsets[-1]
        R = np.zeros((size, size))
        for h, B in enumerate(blocks):
            sl = d.tracking_block(h)
            R[sl, sl] = B
        return R


class StackedEstimate:
    """Per-agent full-strategy estimates, stored as an ``(N, n)`` array."""

    def __init__(self, dims: Dimensions, data):
        data = np.array(data, dtype=float)
        if data.shape == (dims.N * dims.n,):
            data = data.reshape(dims.N, dims.n)
        if data.shape != (dims.N, dims.n):
            raise InputError(f"stacked estimate must be ({dims.N}, {dims.n}), got {data.shape}")
        self.dims = dims
        self.data = data

    @classmethod
    def consensus(cls, dims: Dimensions, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (dims.n,):
            raise InputError(f"strategy must have length {dims.n}")
        return cls(dims, np.tile(x, (dims.N, 1)))

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def agent(self, i) -> np.ndarray:
        return self.data[i]

    def own_block(self, i) -> np.ndarray:
        """``x_i^{(h)}`` for the cluster ``h`` that agent ``i`` belongs to."""
        h = int(self.dims.cluster_of[i])
        return self.data[i, self.dims.block(h)]

    def own_blocks(self) -> np.ndarray:
        return BlockSelectors(self.dims).select(self.data)

    def mean(self) -> np.ndarray:
        return self.data.mean(axis=0)
