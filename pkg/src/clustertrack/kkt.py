"""Exact small-instance solver for affine variational inequalities.

Finds ``x`` in ``{A_eq x = b_eq, G x <= h}`` with ``(y - x)^T (J x + c) >= 0``
for every feasible ``y`` by solving the KKT system on a guessed active set.
Active sets come from a primal-dual active-set iteration; if that cycles,
small instances fall back to enumerating all active sets, and projections
(symmetric ``J``) may be seeded from a Goldfarb-Idnani solve when the
optional ``quadprog`` package is installed.  Every answer is
certified by checking the full KKT conditions, so the result does not depend
on how the active set was found.

Used as the independent ground truth for projections (``J = I, c = -u``) and
for quadratic games; it shares no code with Dykstra or the gradient solvers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .constraints import BoxSet, FeasibleSet, Halfspace, Hyperplane


@dataclass
class KKTSolution:
    x: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    active: tuple
    kkt_residual: float
    certified: bool
    method: str


def polyhedron(fs: FeasibleSet):
    """``(A_eq, b_eq, G, h)`` description of a :class:`FeasibleSet`."""
    n = fs.dim
    A, b, G, h = [], [], [], []
    for m in fs.members:
        if isinstance(m, Hyperplane):
            A.append(m.normal)
            b.append(m.offset)
        elif isinstance(m, Halfspace):
            G.append(m.normal)
            h.append(m.offset)
    eye = np.eye(n)
    for i in range(n):
        if np.isfinite(fs.upper[i]):
            G.append(eye[i])
            h.append(fs.upper[i])
        if np.isfinite(fs.lower[i]):
            G.append(-eye[i])
            h.append(-fs.lower[i])
    return (np.array(A).reshape(-1, n), np.array(b, dtype=float),
            np.array(G).reshape(-1, n), np.array(h, dtype=float))


def _solve_active(J, c, A, b, G, h, active):
    n = J.shape[0]
    Ga = G[list(active)]
    C = np.vstack([Ga, A])
    m = C.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = J
    K[:n, n:] = C.T
    K[n:, :n] = C
    rhs = np.concatenate([-c, h[list(active)], b])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x = sol[:n]
    lam = np.zeros(G.shape[0])
    lam[list(active)] = sol[n:n + len(active)]
    nu = sol[n + len(active):]
    return x, lam, nu


def kkt_residual(J, c, A, b, G, h, x, lam, nu):
    """Max violation over stationarity, feasibility, dual sign, complementarity."""
    scale = 1.0 + np.max(np.abs(c), initial=0.0) + np.max(np.abs(x), initial=0.0)
    stat = J @ x + c + G.T @ lam + A.T @ nu
    slack = G @ x - h if G.size else np.zeros(0)
    parts = [
        np.max(np.abs(stat), initial=0.0) / scale,
        np.max(np.abs(A @ x - b), initial=0.0) / scale if A.size else 0.0,
        np.max(slack, initial=0.0) / scale,
        np.max(-lam, initial=0.0) / scale,
        np.max(np.abs(lam * slack), initial=0.0) / scale**2,
    ]
    return float(max(parts))


def solve_affine_vi(J, c, A_eq=None, b_eq=None, G=None, h=None, *, x_guess=None,
                    tol=1e-10, max_pdas=200, max_enumerate=16) -> KKTSolution:
    J = np.atleast_2d(np.asarray(J, dtype=float))
    c = np.asarray(c, dtype=float)
    n = c.size
    A = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float).reshape(-1, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)

    def attempt(active):
        x, lam, nu = _solve_active(J, c, A, b, G, h, active)
        return x, lam, nu, kkt_residual(J, c, A, b, G, h, x, lam, nu)

    if x_guess is not None:
        active = tuple(np.flatnonzero(G @ x_guess >= h - 1e-7 * (1 + np.abs(h))))
    else:
        active = ()
    seen = set()
    best = None
    for _ in range(max_pdas):
        x, lam, nu, res = attempt(active)
        if best is None or res < best[3]:
            best = (x, lam, nu, res, active)
        if res <= tol:
            return KKTSolution(x, lam, nu, active, res, True, "pdas")
        seen.add(active)
        score = lam + (G @ x - h)
        nxt = tuple(np.flatnonzero(score > 0))
        if nxt in seen:
            break
        active = nxt

    m = G.shape[0]
    if m <= max_enumerate:
        for k in range(m + 1):
            for active in itertools.combinations(range(m), k):
                x, lam, nu, res = attempt(active)
                if res <= tol:
                    return KKTSolution(x, lam, nu, active, res, True, "enumeration")
                if res < best[3]:
                    best = (x, lam, nu, res, active)
    x, lam, nu, res, active = best
    return KKTSolution(x, lam, nu, active, res, False, "best-effort")


def _quadprog_seed(u, A, b, G, h):
    try:
        import quadprog
    except ImportError:
        return None
    C = np.vstack([A, -G]).T
    rhs = np.concatenate([b, -h])
    try:
        return quadprog.solve_qp(np.eye(u.size), u, C, rhs, A.shape[0])[0]
    except ValueError:
        return None


def project_qp(fs: FeasibleSet, u, **kw) -> KKTSolution:
    """Projection of ``u`` onto ``fs`` as a certified KKT solve."""
    A, b, G, h = polyhedron(fs)
    u = np.asarray(u, dtype=float)
    sol = solve_affine_vi(np.eye(fs.dim), -u, A, b, G, h, max_enumerate=0, **kw)
    if sol.certified:
        return sol
    seed = _quadprog_seed(u, A, b, G, h)
    if seed is not None:
        seeded = solve_affine_vi(np.eye(fs.dim), -u, A, b, G, h, x_guess=seed, **kw)
        if seeded.certified:
            seeded.method = "pdas+quadprog-seed"
            return seeded
    return solve_affine_vi(np.eye(fs.dim), -u, A, b, G, h, **kw)


def product_polyhedron(sets):
    """Stack per-cluster polyhedra into one block-diagonal description."""
    parts = [polyhedron(s) for s in sets]
    n = sum(s.dim for s in sets)
    A = np.zeros((sum(p[0].shape[0] for p in parts), n))
    G = np.zeros((sum(p[2].shape[0] for p in parts), n))
    ra = rg = col = 0
    for (Ah, _, Gh, _), s in zip(parts, sets):
        A[ra:ra + Ah.shape[0], col:col + s.dim] = Ah
        G[rg:rg + Gh.shape[0], col:col + s.dim] = Gh
        ra += Ah.shape[0]
        rg += Gh.shape[0]
        col += s.dim
    b = np.concatenate([p[1] for p in parts])
    h = np.concatenate([p[3] for p in parts])
    return A, b, G, h


__all__ = ["BoxSet", "KKTSolution", "polyhedron", "product_polyhedron",
           "project_qp", "solve_affine_vi", "kkt_residual"]
