"""Distributed projected gradient tracking over synchronous rounds.

Each agent ``i`` of cluster ``h`` holds an estimate ``x_i`` of the full
strategy and a tracking variable ``y_i^h`` of its cluster's averaged
gradient.  One round is

    x_hat   = W x                                  (mix estimates)
    x_i^(h) = proj_{Omega^h}(x_hat_i^(h) - alpha y_i^h)
    x_i^(-h) = x_hat_i^(-h)
    y^h     = V^h y^h + g^h(k+1) - g^h(k)          (track gradients)

where ``g^h`` stacks the agents' own-block local gradients.  All agents
read the round-k snapshot and write a fresh round-(k+1) state.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constraints import FeasibleSet, ProjectionCache
from .errors import InputError
from .game import MultiClusterGame
from .topology import CommTopology

TRACE_COLUMNS = ("k", "err_vs_oracle", "consensus_res", "tracking_res", "feasible", "wall_ms")


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters.

    Parameters
    ----------
    alpha : float
        Step size, ``alpha > 0``.
    max_iter : int
        Round budget.
    tol : float
        Stop once the consensus residual, the tracking residual and the
        scaled natural residual of agent 0's estimate are all below ``tol``.
    trace_stride : int
        Record every ``trace_stride``-th round (round 0 and the last round
        are always recorded).
    check_every : int
        Rounds between natural-residual evaluations (each costs ``H``
        projections).
    seed : int or None
        Seed for randomized initial estimates.
    workers : int
        Threads for the per-agent projections; ``1`` is strictly sequential
        and bitwise reproducible.
    timing : bool
        Record wall-clock times; ``False`` writes zeros so traces are
        byte-identical across runs.
    """

    alpha: float
    max_iter: int = 10_000
    tol: float = 1e-9
    trace_stride: int = 10
    check_every: int = 10
    seed: int | None = 0
    workers: int = 1
    timing: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise InputError("alpha must be a finite nonnegative number")
        if self.max_iter < 1:
            raise InputError("max_iter must be at least 1")
        if self.trace_stride < 1 or self.check_every < 1:
            raise InputError("trace_stride and check_every must be positive")
        if self.workers < 1:
            raise InputError("workers must be positive")


@dataclass
class SolverState:
    """Round-k snapshot.

    ``X`` is ``(N, n)``; ``y`` and ``grads`` use the tracking layout
    ``col(y^h)`` with ``y^h = col(y_i^h)``.  ``caches`` holds per-agent
    projection warm starts; they influence only how fast the projector
    converges, never the projected point beyond its tolerance.
    """

    k: int
    X: np.ndarray
    y: np.ndarray
    grads: np.ndarray
    caches: list = field(default_factory=list, repr=False, compare=False)

    def copy(self):
        return SolverState(self.k, self.X.copy(), self.y.copy(), self.grads.copy(), self.caches)


@dataclass
class IterationTrace:
    """Recorded rounds; CSV columns follow :data:`TRACE_COLUMNS`.

    ``err_abs`` holds ``||x(k) - 1 x x*||`` alongside the relative error, for
    rate fits.  ``converged`` and ``stop_reason`` describe how the run ended.
    """

    k: list = field(default_factory=list)
    err_vs_oracle: list = field(default_factory=list)
    err_abs: list = field(default_factory=list)
    consensus_res: list = field(default_factory=list)
    tracking_res: list = field(default_factory=list)
    feasible: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    natural_res: float = float("nan")

    def __len__(self):
        return len(self.k)

    def append(self, k, err, err_abs, cons, track, feas, wall):
        self.k.append(int(k))
        self.err_vs_oracle.append(float(err))
        self.err_abs.append(float(err_abs))
        self.consensus_res.append(float(cons))
        self.tracking_res.append(float(track))
        self.feasible.append(bool(feas))
        self.wall_ms.append(float(wall))

    def rows(self):
        for i in range(len(self.k)):
            yield (self.k[i], self.err_vs_oracle[i], self.consensus_res[i],
                   self.tracking_res[i], int(self.feasible[i]), self.wall_ms[i])

    def to_csv(self, path_or_file):
        """Write the trace; accepts a path or an open text file."""
        if hasattr(path_or_file, "write"):
            _write_rows(path_or_file, self.rows())
        else:
            with open(path_or_file, "w", newline="") as fh:
                _write_rows(fh, self.rows())


def _write_rows(fh, rows):
    w = csv.writer(fh)
    w.writerow(TRACE_COLUMNS)
    for r in rows:
        w.writerow([r[0], repr(r[1]), repr(r[2]), repr(r[3]), r[4], repr(r[5])])


class TraceWriter:
    """Appends trace rows to a CSV as they are produced and flushes each row,
    so the file is a valid trace at every prefix."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        csv.writer(self._fh).writerow(TRACE_COLUMNS)
        self._fh.flush()

    def write(self, trace: IterationTrace):
        i = len(trace) - 1
        r = (trace.k[i], trace.err_vs_oracle[i], trace.consensus_res[i],
             trace.tracking_res[i], int(trace.feasible[i]), trace.wall_ms[i])
        csv.writer(self._fh).writerow([r[0], repr(r[1]), repr(r[2]), repr(r[3]), r[4], repr(r[5])])
        self._fh.flush()

    def close(self):
        self._fh.close()


def _check_inputs(game: MultiClusterGame, sets, topo: CommTopology):
    d = game.dims
    if len(sets) != d.H:
        raise InputError(f"expected {d.H} feasible sets, got {len(sets)}")
    for h, s in enumerate(sets):
        if s.dim != d.cluster_dims[h]:
            raise InputError(f"feasible set {h} has dimension {s.dim}, cluster needs {d.cluster_dims[h]}")
    if topo.W.size != d.N:
        raise InputError(f"global weights are {topo.W.size}x{topo.W.size}, game has N={d.N}")
    if len(topo.V) != d.H or any(v.size != a for v, a in zip(topo.V, d.agents_per_cluster)):
        raise InputError("cluster weight matrices do not match agents per cluster")


def _random_feasible(game, sets, rng):
    d = game.dims
    x = np.empty(d.n)
    for h, s in enumerate(sets):
        x[d.block(h)] = s.project(rng.uniform(s.lower, s.upper))
    return x


def initialize(game: MultiClusterGame, sets, topo: CommTopology, x0=None, seed=None) -> SolverState:
    """Round-0 state with ``y_i^h(0)`` equal to the local gradient at ``x_i(0)``.

    Parameters
    ----------
    x0 : array_like, optional
        ``(N, n)`` per-agent estimates or a single ``(n,)`` strategy shared
        by every agent.  Each agent's own-cluster block is projected into
        its set.  When omitted, every agent starts from its own random
        feasible point drawn with ``seed``.
    """
    _check_inputs(game, sets, topo)
    d = game.dims
    if x0 is None:
        rng = np.random.default_rng(seed)
        X = np.array([_random_feasible(game, sets, rng) for _ in range(d.N)])
    else:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape == (d.n,):
            X = np.tile(x0, (d.N, 1))
        elif x0.shape == (d.N, d.n):
            X = x0.copy()
        else:
            raise InputError(f"x0 must be ({d.n},) or ({d.N}, {d.n}), got {x0.shape}")
    caches = [sets[int(h)].new_cache() for h in d.cluster_of]
    for i in range(d.N):
        blk = d.block(int(d.cluster_of[i]))
        X[i, blk] = sets[int(d.cluster_of[i])].project(X[i, blk], caches[i])
    g = game.local_gradients(X)
    return SolverState(0, X, g.copy(), g, caches)


def _project_agent(args):
    fs, u, cache = args
    return fs.project(u, cache)


def step(state: SolverState, game: MultiClusterGame, sets, topo: CommTopology,
         config: SolverConfig, executor=None) -> SolverState:
    """One synchronous round; returns a new state and leaves ``state`` intact."""
    d = game.dims
    alpha = config.alpha
    Xhat = topo.W.matrix @ state.X
    Xnew = Xhat.copy()
    jobs = []
    for h in range(d.H):
        blk = d.block(h)
        tb = d.tracking_block(h)
        Yh = state.y[tb].reshape(d.agents_per_cluster[h], d.cluster_dims[h])
        for a, i in enumerate(d.agents(h)):
            jobs.append((i, blk, (sets[h], Xhat[i, blk] - alpha * Yh[a], state.caches[i])))
    if executor is None:
        results = [_project_agent(j[2]) for j in jobs]
    else:
        results = list(executor.map(_project_agent, [j[2] for j in jobs]))
    for (i, blk, _), p in zip(jobs, results):
        Xnew[i, blk] = p

    gnew = game.local_gradients(Xnew)
    ynew = np.empty_like(state.y)
    for h in range(d.H):
        tb = d.tracking_block(h)
        shape = (d.agents_per_cluster[h], d.cluster_dims[h])
        mixed = topo.V[h].matrix @ state.y[tb].reshape(shape)
        ynew[tb] = (mixed + gnew[tb].reshape(shape) - state.grads[tb].reshape(shape)).ravel()
    return SolverState(state.k + 1, Xnew, ynew, gnew, state.caches)


def consensus_residual(state: SolverState) -> float:
    """``||x - 1_N kron x_bar||``."""
    return float(np.linalg.norm(state.X - state.X.mean(axis=0)))


def tracking_residual(state: SolverState, game: MultiClusterGame) -> float:
    """``||y - R y||``, with ``R`` the per-cluster block averager."""
    return float(np.linalg.norm(state.y - game.selectors.average(state.y)))


def tracking_sum_gap(state: SolverState, game: MultiClusterGame) -> np.ndarray:
    """Per-cluster ``||sum_i y_i^h - sum_i grad_h f_i^h(x_i)||`` relative to ``1 + magnitude``."""
    d = game.dims
    g = game.local_gradients(state.X)
    out = np.empty(d.H)
    for h in range(d.H):
        tb = d.tracking_block(h)
        shape = (d.agents_per_cluster[h], d.cluster_dims[h])
        sy = state.y[tb].reshape(shape).sum(axis=0)
        sg = g[tb].reshape(shape).sum(axis=0)
        out[h] = np.max(np.abs(sy - sg)) / (1.0 + np.max(np.abs(sg)))
    return out


def own_blocks_feasible(state: SolverState, game: MultiClusterGame, sets, tol=1e-6) -> bool:
    d = game.dims
    for i in range(d.N):
        h = int(d.cluster_of[i])
        if not sets[h].contains(state.X[i, d.block(h)], tol):
            return False
    return True


def scaled_natural_residual(game, sets, x, alpha, caches=None) -> float:
    """``||x - proj_Omega(x - alpha M(x))|| / alpha``; projected-gradient norm."""
    d = game.dims
    u = x - alpha * game.mapping(x)
    p = np.empty_like(x)
    for h in range(d.H):
        blk = d.block(h)
        p[blk] = sets[h].project(u[blk], None if caches is None else caches[h])
    return float(np.linalg.norm(x - p) / alpha)


def run(game: MultiClusterGame, sets, topo: CommTopology, config: SolverConfig,
        reference=None, x0=None, trace_path=None, state: SolverState | None = None):
    """Iterate :func:`step` until the combined residual drops below ``config.tol``.

    Returns ``(state, trace)``; ``trace.converged`` is ``False`` when the
    round budget ran out.  With ``reference`` (an equilibrium ``x*``) the
    trace records ``||x - 1 kron x*|| / ||1 kron x*||``, otherwise NaN.
    """
    if config.alpha <= 0:
        raise InputError("run needs alpha > 0")
    if state is None:
        state = initialize(game, sets, topo, x0=x0, seed=config.seed)
    d = game.dims
    ref = None if reference is None else np.asarray(reference, dtype=float)
    ref_norm = None if ref is None else max(np.linalg.norm(ref) * np.sqrt(d.N), 1e-300)
    check_caches = [s.new_cache() for s in sets]
    trace = IterationTrace()
    writer = TraceWriter(trace_path) if trace_path is not None else None
    t0 = time.perf_counter()

    def record(st):
        if ref is None:
            err = err_abs = float("nan")
        else:
            err_abs = float(np.linalg.norm(st.X - ref))
            err = err_abs / ref_norm if np.linalg.norm(ref) > 0 else err_abs
        wall = (time.perf_counter() - t0) * 1e3 if config.timing else 0.0
        trace.append(st.k, err, err_abs, consensus_residual(st), tracking_residual(st, game),
                     own_blocks_feasible(st, game, sets) if st.k > 0 else True, wall)
        if writer is not None:
            writer.write(trace)

    executor = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        record(state)
        last_recorded = state.k
        while True:
            if state.k >= config.max_iter:
                trace.stop_reason = "max_iter"
                break
            state = step(state, game, sets, topo, config, executor)
            if state.k % config.trace_stride == 0:
                record(state)
                last_recorded = state.k
            if state.k % config.check_every == 0 or state.k == config.max_iter:
                cons = consensus_residual(state)
                track = tracking_residual(state, game)
                if max(cons, track) < config.tol:
                    nat = scaled_natural_residual(game, sets, state.X[0], config.alpha, check_caches)
                    trace.natural_res = nat
                    if nat < config.tol:
                        trace.converged = True
                        trace.stop_reason = "tolerance"
                        break
        if last_recorded != state.k:
            record(state)
        if not np.isfinite(trace.natural_res) or not trace.converged:
            trace.natural_res = scaled_natural_residual(game, sets, state.X[0], config.alpha, check_caches)
    finally:
        if executor is not None:
            executor.shutdown()
        if writer is not None:
            writer.close()
    return state, trace
