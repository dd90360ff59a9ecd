"""Small reference games: the two-cluster test game and random quadratic games."""

from __future__ import annotations

import numpy as np

from .constraints import BoxSet, FeasibleSet, Halfspace, Hyperplane
from .game import Dimensions, MultiClusterGame, quadratic_cost


def tg1(lower=(1.0, -1.0), upper=(2.0, 1.0)):
    """Two clusters of two agents with one scalar decision each.

    ``F^1 = (x^1)^2 + x^1 x^2`` and ``F^2 = (x^2)^2 - x^1 x^2``, realised by
    ``f_1^1 = 2 (x^1)^2``, ``f_2^1 = 2 x^1 x^2``, ``f_1^2 = 2 (x^2)^2`` and
    ``f_2^2 = -2 x^1 x^2``.  With the default box ``[1, 2] x [-1, 1]`` the
    equilibrium is ``(1, 0.5)``.
    """
    dims = Dimensions((2, 2), (1, 1))
    b1, b2 = dims.block(0), dims.block(1)
    costs = [
        [quadratic_cost([[4.0, 0.0], [0.0, 0.0]], [0.0, 0.0], b1),
         quadratic_cost([[0.0, 2.0], [2.0, 0.0]], [0.0, 0.0], b1)],
        [quadratic_cost([[0.0, 0.0], [0.0, 4.0]], [0.0, 0.0], b2),
         quadratic_cost([[0.0, -2.0], [-2.0, 0.0]], [0.0, 0.0], b2)],
    ]
    game = MultiClusterGame(dims, costs)
    sets = [FeasibleSet([BoxSet([lower[0]], [upper[0]])]),
            FeasibleSet([BoxSet([lower[1]], [upper[1]])])]
    return game, sets


def tg1_unconstrained(radius=1e3):
    return tg1(lower=(-radius, -radius), upper=(radius, radius))


def random_quadratic_game(rng, *, max_clusters=3, max_agents=4, max_dim=3,
                          clusters=None, agents=None, sizes=None,
                          min_monotonicity=0.2, coupling=0.5):
    """Random strongly monotone quadratic game.

    Each agent's own-block Hessian is positive definite (convex in its own
    block); cross-cluster coupling is shrunk until the symmetric part of the
    game Jacobian has smallest eigenvalue at least ``min_monotonicity``.
    """
    H = clusters if clusters is not None else int(rng.integers(1, max_clusters + 1))
    N_h = agents if agents is not None else [int(rng.integers(1, max_agents + 1)) for _ in range(H)]
    n_h = sizes if sizes is not None else [int(rng.integers(1, max_dim + 1)) for _ in range(H)]
    dims = Dimensions(N_h, n_h)
    n = dims.n

    own, cross, lin = [], [], []
    for h in range(H):
        m = n_h[h]
        for _ in range(N_h[h]):
            B = rng.normal(size=(m, m))
            own.append(B @ B.T / m + rng.uniform(0.5, 1.5) * np.eye(m))
            cross.append(rng.normal(scale=coupling, size=(m, n)))
            lin.append(rng.normal(size=n))

    scale = 1.0
    while True:
        costs = []
        idx = 0
        for h in range(H):
            blk = dims.block(h)
            row = []
            for _ in range(N_h[h]):
                P = np.zeros((n, n))
                C = cross[idx] * scale
                C[:, blk] = 0.0
                P[blk, :] = C
                P[:, blk] += C.T
                P[blk, blk] = own[idx]
                row.append(quadratic_cost(P, lin[idx], blk))
                idx += 1
            costs.append(row)
        game = MultiClusterGame(dims, costs)
        J = game.jacobian()[0]
        if np.linalg.eigvalsh(0.5 * (J + J.T))[0] >= min_monotonicity:
            return game
        scale *= 0.7


def random_cluster_sets(rng, dims: Dimensions, *, hyperplanes=True, halfspaces=0):
    """Random box ∩ hyperplane (∩ halfspaces) sets, nonempty by construction."""
    sets = []
    for m in dims.cluster_dims:
        lo = rng.uniform(-2.0, 0.0, m)
        hi = lo + rng.uniform(0.5, 3.0, m)
        inner = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo))
        members = [BoxSet(lo, hi)]
        if hyperplanes and m >= 2:
            a = rng.normal(size=m)
            members.append(Hyperplane(a, a @ inner))
        for _ in range(halfspaces):
            a = rng.normal(size=m)
            members.append(Halfspace(a, a @ inner + rng.uniform(0.0, 1.0)))
        sets.append(FeasibleSet(members))
    return sets
