"""Convex constraint sets and Euclidean projections onto them.

A :class:`FeasibleSet` is an intersection of boxes, hyperplanes and
halfspaces.  All boxes are merged into one (the intersection of boxes is a
box), affine members are stored as sparse rows, and projection onto the
intersection runs Dykstra's method through :mod:`clustertrack.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InfeasibleSetError, InputError, ProjectionError


def _vector(v, name):
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class BoxSet:
    """``{x : lower <= x <= upper}``; infinite bounds are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _vector(self.lower, "lower"), _vector(self.upper, "upper")
        if lo.shape != hi.shape:
            raise InputError("box bounds differ in length")
        if np.any(lo > hi):
            raise InputError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def violation(self, x):
        return float(max(np.max(self.lower - x, initial=0.0),
                         np.max(x - self.upper, initial=0.0)))


@dataclass(frozen=True)
class Hyperplane:
    """``{x : a^T x = b}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        a = _vector(self.normal, "normal")
        if not np.any(a):
            raise InputError("hyperplane normal must be non-zero")
        object.__setattr__(self, "normal", a)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self):
        return self.normal.size

    def violation(self, x):
        return abs(float(self.normal @ x) - self.offset)


@dataclass(frozen=True)
class Halfspace:
    """``{x : a^T x <= b}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        a = _vector(self.normal, "normal")
        if not np.any(a):
            raise InputError("halfspace normal must be non-zero")
        object.__setattr__(self, "normal", a)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self):
        return self.normal.size

    def violation(self, x):
        return max(float(self.normal @ x) - self.offset, 0.0)


def _check_dim(u, dim):
    u = np.asarray(u, dtype=float)
    if u.shape != (dim,):
        raise InputError(f"expected vector of length {dim}, got shape {u.shape}")
    return u


def project_box(box: BoxSet, u) -> np.ndarray:
    u = _check_dim(u, box.dim)
    return np.clip(u, box.lower, box.upper)


def project_hyperplane(hp: Hyperplane, u) -> np.ndarray:
    u = _check_dim(u, hp.dim)
    a = hp.normal
    return u - (a @ u - hp.offset) / (a @ a) * a


def project_halfspace(hs: Halfspace, u) -> np.ndarray:
    u = _check_dim(u, hs.dim)
    a = hs.normal
    excess = a @ u - hs.offset
    if excess <= 0.0:
        return u.copy()
    return u - excess / (a @ a) * a


@dataclass
class ProjectionCache:
    """Dual correction terms kept between projections of nearby points.

    Passing the same cache to successive :meth:`FeasibleSet.project` calls
    warm-starts Dykstra's method.  Not thread-safe; use one cache per caller.
    """

    lam: np.ndarray
    box_corr: np.ndarray
    sweeps: int = 0


@dataclass(eq=False)
class FeasibleSet:
    """Intersection of :class:`BoxSet`, :class:`Hyperplane` and :class:`Halfspace` members.

    Parameters
    ----------
    members : sequence
        Member sets, all of the same dimension.
    tol : float
        Dykstra stops once a full sweep moves the iterate by less than this
        (max-norm).
    max_sweeps : int
        Sweep budget before :class:`ProjectionError` is raised.
    polish_every : int
        Sweeps between attempts to finish exactly on the active face that
        the correction terms identify (accepted only if KKT-certified).
    first_polish : int
        Sweeps before the first such attempt.
    fallback_after : int
        Sweeps after which a stalled Dykstra run (degenerate vertices can
        stall it for thousands of sweeps) hands over to a dual active-set
        solve.
    certify : bool
        Check compactness (finite box on every coordinate) and non-emptiness
        (a feasible witness point) at construction.
    """

    members: tuple
    tol: float = 1e-10
    max_sweeps: int = 10_000
    certify: bool = True
    polish_every: int = 200
    first_polish: int = 25
    fallback_after: int = 1000
    witness: np.ndarray | None = field(default=None, init=False)

    def __post_init__(self):
        self.members = tuple(self.members)
        if not self.members:
            raise InputError("a feasible set needs at least one member")
        dims = {m.dim for m in self.members}
        if len(dims) != 1:
            raise InputError(f"members disagree on dimension: {sorted(dims)}")
        self.dim = dims.pop()

        lower = np.full(self.dim, -np.inf)
        upper = np.full(self.dim, np.inf)
        rows = []
        for m in self.members:
            if isinstance(m, BoxSet):
                np.maximum(lower, m.lower, out=lower)
                np.minimum(upper, m.upper, out=upper)
            elif isinstance(m, (Hyperplane, Halfspace)):
                rows.append(m)
            else:
                raise InputError(f"unsupported member type {type(m).__name__}")
        self.lower, self.upper = lower, upper
        self._affine = tuple(rows)
        self._last_iterate = None
        self._stacked = None

        indptr = [0]
        indices, data, rhs, is_eq = [], [], [], []
        for m in rows:
            nz = np.flatnonzero(m.normal)
            indices.extend(nz)
            data.extend(m.normal[nz])
            indptr.append(len(indices))
            rhs.append(m.offset)
            is_eq.append(isinstance(m, Hyperplane))
        self._indptr = np.asarray(indptr, dtype=np.int64)
        self._indices = np.asarray(indices, dtype=np.int64)
        self._data = np.asarray(data, dtype=float)
        self._rhs = np.asarray(rhs, dtype=float)
        self._is_eq = np.asarray(is_eq, dtype=np.uint8)
        sq = np.add.reduceat(self._data**2, self._indptr[:-1]) if rows else np.zeros(0)
        self._inv_sq = 1.0 / sq

        if np.any(lower > upper):
            raise InfeasibleSetError("box members have empty intersection", witness="box")
        if self.certify:
            self._certify()

    # -- structure --------------------------------------------------------
    @property
    def n_rows(self):
        return self._rhs.size

    @property
    def method(self):
        return "closed-form" if not self._affine or self._single_affine() else "alternating"

    def _single_affine(self):
        return len(self._affine) == 1 and np.all(np.isinf(self.lower)) and np.all(np.isinf(self.upper))

    def _certify(self):
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise InfeasibleSetError("set is not certified compact: some coordinate lacks finite box bounds",
                                     witness="box")
        centre = 0.5 * (self.lower + self.upper)
        try:
            point = self.project(centre)
        except ProjectionError:
            point = None
        if point is None or not self.contains(point, tol=1e-6 * (1.0 + np.max(np.abs(centre)))):
            probe = point if point is not None else self._last_iterate
            idx, amount = self.most_violated(probe)
            raise InfeasibleSetError(f"no feasible point found; member {idx} violated by {amount:.3g}",
                                     witness=idx, violation=amount)
        self.witness = point

    def new_cache(self) -> ProjectionCache:
        return ProjectionCache(lam=np.zeros(self.n_rows), box_corr=np.zeros(self.dim))

    # -- projection -------------------------------------------------------
    def project(self, u, cache: ProjectionCache | None = None) -> np.ndarray:
        """Euclidean projection of ``u`` onto the intersection.

        A warm ``cache`` (one that has served an earlier projection) first
        tries the active face it recorded; Dykstra sweeps run only if that
        guess fails the KKT test.
        """
        u = _check_dim(u, self.dim)
        if not self._affine:
            return np.clip(u, self.lower, self.upper)
        if self._single_affine():
            m = self._affine[0]
            return project_hyperplane(m, u) if isinstance(m, Hyperplane) else project_halfspace(m, u)
        if cache is None:
            cache = self.new_cache()
        if cache.sweeps > 0:
            polished = self._polish(u, cache)
            if polished is not None:
                return polished
        total, change = 0, np.inf
        budget = min(self.first_polish, self.polish_every)
        while total < self.max_sweeps:
            budget = min(budget, self.max_sweeps - total)
            x, sweeps, change = kernels.dykstra(
                u, self.lower, self.upper, self._indptr, self._indices, self._data,
                self._rhs, self._is_eq, self._inv_sq, cache.lam, cache.box_corr,
                self.tol, budget)
            total += sweeps
            if change < self.tol:
                break
            polished = self._polish(u, cache, x, max(100.0 * change, 1e-9))
            if polished is None and total >= self.fallback_after:
                polished = self._dual_active_set(u, cache)
            if polished is not None:
                x, change = polished, 0.0
                break
            budget = self.polish_every
        cache.sweeps = max(total, 1)
        if change >= self.tol:
            self._last_iterate = x
            raise ProjectionError(f"Dykstra did not converge in {total} sweeps (last change {change:.3g})",
                                  residual=change, sweeps=total)
        return x

    def _dense_rows(self):
        if self._stacked is None:
            rows = np.zeros((self.n_rows, self.dim))
            for r in range(self.n_rows):
                s, e = self._indptr[r], self._indptr[r + 1]
                rows[r, self._indices[s:e]] = self._data[s:e]
            self._stacked = rows
        return self._stacked

    def _polish(self, u, cache, x_hint=None, slack_tol=None):
        """Exact projection onto the face suggested by the correction terms.

        Box-active coordinates are fixed at their bounds and eliminated;
        the remaining equality-constrained least-squares problem involves
        only the active affine rows.  The face is refined by primal-dual
        active-set rounds.  If the multipliers mislead (degenerate vertices
        make Dykstra's corrections converge slowly), the constraints that
        are nearly tight at ``x_hint`` give a second starting face.
        Returns ``None`` unless a candidate satisfies every KKT condition,
        in which case the corrections are replaced by the exact multipliers.
        """
        eq = self._is_eq.astype(bool)
        starts = [(eq | (cache.lam > 0),
                   (cache.box_corr > 0) & np.isfinite(self.upper),
                   (cache.box_corr < 0) & np.isfinite(self.lower))]
        if x_hint is not None:
            slack = self._dense_rows() @ x_hint - self._rhs
            for t in sorted({slack_tol, 1e-6, 1e-9}):
                starts.append((eq | (slack > -t * (1.0 + np.abs(self._rhs))),
                               x_hint >= self.upper - t * (1.0 + np.abs(self.upper)),
                               x_hint <= self.lower + t * (1.0 + np.abs(self.lower))))
        for rows, at_hi, at_lo in starts:
            x = self._active_set_rounds(u, cache, rows, at_hi, at_lo)
            if x is not None:
                return x
        return None

    def _active_set_rounds(self, u, cache, rows, at_hi, at_lo, max_rounds=30):
        A = self._dense_rows()
        eq = self._is_eq.astype(bool)
        eps = 1e-9 * (1.0 + np.max(np.abs(u)))
        seen = set()
        for _ in range(max_rounds):
            key = rows.tobytes() + at_hi.tobytes() + at_lo.tobytes()
            if key in seen:
                return None
            seen.add(key)
            fixed = at_hi | at_lo
            free = ~fixed
            x = u.copy()
            x[at_hi] = self.upper[at_hi]
            x[at_lo] = self.lower[at_lo]
            Aa = A[rows]
            nu = np.zeros(0)
            if Aa.shape[0]:
                AF = Aa[:, free]
                rhs = AF @ u[free] - (self._rhs[rows] - Aa[:, fixed] @ x[fixed])
                nu = np.linalg.lstsq(AF @ AF.T, rhs, rcond=None)[0]
                x[free] = u[free] - AF.T @ nu
            lam = np.zeros(self.n_rows)
            lam[rows] = nu
            # box multipliers from stationarity  x - u + A^T lam + box = 0
            box = u - x - A.T @ lam
            box[free] = 0.0
            slack = A @ x - self._rhs
            wrong_rows = rows & ~eq & (lam < -eps)
            wrong_hi = at_hi & (box < -eps)
            wrong_lo = at_lo & (box > eps)
            viol_rows = ~rows & (slack > eps)
            viol_hi = free & (x > self.upper + eps)
            viol_lo = free & (x < self.lower - eps)
            if not (wrong_rows.any() or wrong_hi.any() or wrong_lo.any()
                    or viol_rows.any() or viol_hi.any() or viol_lo.any()):
                if np.max(np.abs(slack[rows]), initial=0.0) > eps:
                    return None  # inconsistent face
                cache.lam[:] = lam
                cache.box_corr[:] = box
                cache.sweeps = max(cache.sweeps, 1)
                return np.clip(x, self.lower, self.upper)
            rows = (rows & ~wrong_rows) | viol_rows
            at_hi = (at_hi & ~wrong_hi) | viol_hi
            at_lo = (at_lo & ~wrong_lo) | viol_lo
        return None

    def _dual_active_set(self, u, cache, max_steps=None):
        """Goldfarb-Idnani dual active-set projection.

        Starts from the unconstrained minimiser ``u`` and adds violated
        constraints one at a time, dropping active ones whose multiplier
        would turn negative.  Linear dependence among active normals is
        handled by pure dual steps.  Returns ``None`` on numerical failure.
        """
        A = self._dense_rows()
        eq = self._is_eq.astype(bool)
        n = self.dim
        # all constraints in the form  normal^T x <= rhs ; ids: rows, then upper, then lower bounds
        normals = [A[r] for r in range(self.n_rows)]
        rhs = list(self._rhs)
        kinds = [("row", r) for r in range(self.n_rows)]
        eye = np.eye(n)
        for j in np.flatnonzero(np.isfinite(self.upper)):
            normals.append(eye[j])
            rhs.append(self.upper[j])
            kinds.append(("hi", j))
        for j in np.flatnonzero(np.isfinite(self.lower)):
            normals.append(-eye[j])
            rhs.append(-self.lower[j])
            kinds.append(("lo", j))
        normals = np.array(normals).reshape(-1, n)
        rhs = np.asarray(rhs, dtype=float)
        is_eq = np.zeros(len(rhs), dtype=bool)
        is_eq[:self.n_rows] = eq
        sign = np.ones(len(rhs))
        scale = 1.0 + np.max(np.abs(u))
        tol = 1e-11 * scale
        max_steps = max_steps or 20 * (len(rhs) + n)

        x = u.astype(float).copy()
        active, lam = [], []
        steps = 0

        def add(p):
            nonlocal x, steps
            a, b = sign[p] * normals[p], sign[p] * rhs[p]
            lam_p = 0.0
            while steps < max_steps:
                steps += 1
                viol = a @ x - b
                if viol <= tol:
                    return True
                if active:
                    Nm = (sign[active][:, None] * normals[active]).T
                    r = np.linalg.lstsq(Nm, a, rcond=None)[0]
                    z = a - Nm @ r
                else:
                    r, z = np.zeros(0), a
                zz = z @ z
                t2 = viol / zz if zz > 1e-14 * (a @ a) else np.inf
                t1, k = np.inf, -1
                for i, c in enumerate(active):
                    if not is_eq[c] and r[i] > 1e-12 and lam[i] / r[i] < t1:
                        t1, k = lam[i] / r[i], i
                t = min(t1, t2)
                if not np.isfinite(t):
                    return False
                x = x - t * z
                for i in range(len(lam)):
                    lam[i] -= t * r[i]
                lam_p += t
                if t == t2:
                    active.append(p)
                    lam.append(lam_p)
                    return True
                del active[k], lam[k]
            return False

        for p in np.flatnonzero(is_eq):
            if normals[p] @ x - rhs[p] < 0:
                sign[p] = -1.0
            if not add(p):
                return None
        while steps < max_steps:
            slack = normals @ x - rhs
            slack[is_eq] = -np.inf
            slack[active] = -np.inf
            p = int(np.argmax(slack))
            if slack[p] <= tol:
                break
            if not add(p):
                return None
        else:
            return None
        if not self.contains(x, tol=1e-8 * scale):
            return None
        cache.lam[:] = 0.0
        cache.box_corr[:] = 0.0
        for c, l in zip(active, lam):
            kind, j = kinds[c]
            if kind == "row":
                cache.lam[j] = sign[c] * l
            else:
                cache.box_corr[j] += l if kind == "hi" else -l
        cache.sweeps = max(cache.sweeps, 1)
        return np.clip(x, self.lower, self.upper)

    # -- membership -------------------------------------------------------
    def violations(self, x) -> np.ndarray:
        """Violation of each member, in member order."""
        x = _check_dim(x, self.dim)
        return np.array([m.violation(x) for m in self.members])

    def contains(self, x, tol=0.0) -> bool:
        return bool(np.all(self.violations(x) <= tol))

    def most_violated(self, x):
        v = self.violations(x)
        i = int(np.argmax(v))
        return i, float(v[i])

    def sample(self, rng, size=None):
        """Random feasible points: uniform box samples projected onto the set."""
        n = 1 if size is None else size
        pts = rng.uniform(self.lower, self.upper, size=(n, self.dim))
        out = np.array([self.project(p) for p in pts])
        return out[0] if size is None else out


def project(fs: FeasibleSet, u, cache=None):
    return fs.project(u, cache)


def contains(fs: FeasibleSet, x, tol=0.0):
    return fs.contains(x, tol)
