"""Problem constants and the step-size certificate for gradient tracking.

The error of the tracking scheme is bounded through two 2x2 nonnegative
matrices: ``A(alpha)`` for the projected consensus step and
``A_tau(alpha)``, which couples it with the tracking error.  Linear
convergence follows when ``rho(A_tau(alpha)) < 1``; :func:`alpha_bar`
evaluates the closed-form step bound and :func:`rate_report` certifies it
on a grid.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DegenerateConstantsError, InputError
from .game import MultiClusterGame, dense

PROVENANCE = ("exact", "bounded", "sampled", "user-supplied")


@dataclass(frozen=True)
class ProblemConstants:
    """Constants entering ``A(alpha)`` and ``A_tau(alpha)``.

    ``provenance`` maps each of ``mu, L0, L, L1`` to one of
    ``exact`` (quadratic assembly), ``bounded`` (assembly plus a curvature
    bound for smoothed terms), ``sampled`` (difference quotients; heuristic)
    or ``user-supplied``.  ``L_clamped`` records that the raw ``L`` fell
    outside ``[mu, L0]`` and was clamped.
    """

    mu: float
    L0: float
    L: float
    L1: float
    sigma: float
    sigma_V: float
    N: int
    norm_I_minus_R: float = 1.0
    provenance: dict = field(default_factory=dict)
    L_raw: float | None = None
    L_clamped: bool = False

    def __post_init__(self):
        for name in ("mu", "L0", "L", "L1"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DegenerateConstantsError(f"{name} must be positive and finite, got {v}")
        if not (0 <= self.sigma < 1 and 0 <= self.sigma_V < 1):
            raise DegenerateConstantsError(f"sigma={self.sigma}, sigma_V={self.sigma_V} must lie in [0, 1)")
        if self.N < 1:
            raise InputError("N must be positive")

    @property
    def certified(self):
        """True when no constant is a sampled (heuristic) estimate."""
        return all(v in ("exact", "bounded", "user-supplied") for v in self.provenance.values())

    def to_dict(self):
        return asdict(self)


def _norm_I_minus_R(dims):
    # R is an orthogonal projector; its complement has norm 1 unless R = I
    return 1.0 if max(dims.agents_per_cluster) > 1 else 0.0


def clamp_L(mu, L0, L_raw):
    L = min(max(L_raw, mu), L0)
    return L, bool(L != L_raw)


def estimate_constants(game: MultiClusterGame, sets, topo, mode="exact", samples=1000, seed=0) -> ProblemConstants:
    """Constants for the certificate.

    ``mode="exact"`` assembles the Jacobian of the game mapping from the
    agents' declared linear gradient parts: ``mu`` is the smallest
    eigenvalue of its symmetric part, ``L0`` its spectral norm, ``L`` the
    norm of the linear part of the extended mapping and ``L1`` the largest
    local-gradient norm.  Smoothed terms add their curvature bound to the
    Lipschitz constants (and leave ``mu`` a valid lower bound), which marks
    the result ``bounded``.

    ``mode="sampled"`` uses difference quotients over ``samples`` random
    feasible pairs; Lipschitz estimates are then lower bounds and ``mu`` an
    upper bound, so the result is heuristic.
    """
    d = game.dims
    sigma, sigma_V = topo.sigma, topo.sigma_V
    nIR = _norm_I_minus_R(d)
    if mode == "exact":
        if not game.is_affine:
            raise InputError("exact constants need every agent cost to declare its linear gradient part")
        J, _, slack = game.jacobian()
        s_max = float(np.max(slack, initial=0.0))
        mu = float(np.linalg.eigvalsh(0.5 * (J + J.T))[0])
        L0 = float(np.linalg.norm(J, 2)) + s_max
        parts = game.linear_parts()
        L_raw = 0.0
        L1 = 0.0
        for h in range(d.H):
            agents = list(d.agents(h))
            blocks = [dense(parts[i][0]) for i in agents]
            # ||[K_1 ... K_Nh]||^2 = ||sum_i K_i K_i^T||; the Gram form keeps the
            # eigenproblem at n_h x n_h however many agents the cluster has
            gram = sum(K @ K.T for K in blocks)
            agent_slack = max(float(np.max(parts[i][2], initial=0.0)) for i in agents)
            L_raw = max(L_raw, _sqrt_top_eig(gram) / math.sqrt(len(agents)) + agent_slack)
            for i, K in zip(agents, blocks):
                L1 = max(L1, _sqrt_top_eig(K @ K.T) + float(np.max(parts[i][2], initial=0.0)))
        tag = "exact" if s_max == 0 and all(not np.any(p[2]) for p in parts) else "bounded"
        prov = {"mu": tag, "L0": tag, "L": tag, "L1": tag}
    elif mode == "sampled":
        mu, L0, L_raw, L1 = _sampled(game, sets, samples, seed)
        prov = {"mu": "sampled", "L0": "sampled", "L": "sampled", "L1": "sampled"}
    else:
        raise InputError(f"unknown mode {mode!r}; expected 'exact' or 'sampled'")
    if mu <= 0:
        raise DegenerateConstantsError(f"game mapping is not strongly monotone (mu estimate {mu:.3g})")
    L, clamped = clamp_L(mu, L0, L_raw)
    return ProblemConstants(mu, L0, L, L1, float(sigma), float(sigma_V), d.N, nIR, prov, L_raw, clamped)


def _sqrt_top_eig(S):
    return math.sqrt(max(float(np.linalg.eigvalsh(S)[-1]), 0.0))


def _sampled(game, sets, samples, seed):
    d = game.dims
    rng = np.random.default_rng(seed)

    def point():
        return np.concatenate([s.sample(rng) for s in sets])

    mu, L0, L1, L = np.inf, 0.0, 0.0, 0.0
    for _ in range(samples):
        x, z = point(), point()
        dx = x - z
        nd = np.linalg.norm(dx)
        if nd < 1e-12:
            continue
        dM = game.mapping(x) - game.mapping(z)
        mu = min(mu, float(dM @ dx) / nd**2)
        L0 = max(L0, float(np.linalg.norm(dM)) / nd)
        for h in range(d.H):
            for c in game.costs[h]:
                L1 = max(L1, float(np.linalg.norm(c.gradient(x) - c.gradient(z))) / nd)
        X = np.array([point() for _ in range(d.N)])
        Z = np.array([point() for _ in range(d.N)])
        dX = np.linalg.norm(X - Z)
        L = max(L, float(np.linalg.norm(game.extended_mapping(X) - game.extended_mapping(Z))) / dX)
    return float(mu), float(L0), float(L), float(L1)


def identity_constants(N=1, sigma=0.0, sigma_V=0.0):
    """Constants of ``M(x) = x`` with a single agent: all equal to one."""
    return ProblemConstants(1.0, 1.0, 1.0, 1.0, sigma, sigma_V, N, 0.0 if N == 1 else 1.0,
                            {k: "exact" for k in ("mu", "L0", "L", "L1")})


# -- the 2x2 error systems --------------------------------------------------

def spectral_radius_2x2(m) -> float:
    """Largest eigenvalue modulus of a 2x2 matrix, in closed form."""
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise InputError("expected a 2x2 matrix")
    a, b, c, dd = (float(v) for v in m.ravel())
    half_tr = 0.5 * (a + dd)
    disc = (0.5 * (a - dd)) ** 2 + b * c
    if disc >= 0:
        r = math.sqrt(disc)
        return max(abs(half_tr + r), abs(half_tr - r))
    # complex pair: |lambda|^2 = determinant
    return math.sqrt(max(a * dd - b * c, 0.0))


def matrix_A(alpha, c: ProblemConstants) -> np.ndarray:
    if alpha < 0:
        raise InputError("alpha must be nonnegative")
    N, sN = c.N, math.sqrt(c.N)
    a11 = alpha**2 * c.L0**2 / N - 2 * alpha * c.mu / N + 1
    a12 = alpha**2 * c.L * c.L0 / sN + alpha * (c.L + c.sigma * c.L0 / sN)
    a22 = alpha**2 * c.L**2 + 2 * alpha * c.sigma**2 * c.L + c.sigma**2
    return np.array([[a11, a12], [a12, a22]])


def _dominant(alpha, c):
    A = matrix_A(alpha, c)
    return A[0, 0] > A[0, 1] and A[1, 1] > A[0, 1]


def _det_positive(alpha, c):
    A = matrix_A(alpha, c)
    return (1 - A[0, 0]) * (1 - A[1, 1]) - A[0, 1] ** 2 > 0


def _threshold(pred, hi, scan=4000, iters=200):
    """Supremum of the initial interval ``(0, t)`` of ``(0, hi]`` on which
    ``pred`` holds: a uniform scan locates the first failure, bisection
    refines it."""
    grid = hi * np.arange(1, scan + 1) / scan
    last_ok = 0.0
    for a in grid:
        if not pred(a):
            lo, up = last_ok, a
            for _ in range(iters):
                mid = 0.5 * (lo + up)
                if mid in (lo, up):
                    break
                if pred(mid):
                    lo = mid
                else:
                    up = mid
            return lo
        last_ok = a
    return hi


def alpha_A_bound(c: ProblemConstants) -> float:
    """``min(alpha_A1, 2 mu / L0^2, alpha_A2)``; ``alpha_A1`` is where the
    diagonal of ``A(alpha)`` stops dominating the off-diagonal and
    ``alpha_A2`` where ``det(I - A(alpha))`` stops being positive."""
    a21 = 2 * c.mu / c.L0**2
    a1 = _threshold(lambda a: _dominant(a, c), a21)
    a2 = _threshold(lambda a: _det_positive(a, c), a21)
    out = min(a1, a21, a2)
    if out <= 0:
        raise DegenerateConstantsError(
            f"no positive step satisfies the conditions on A(alpha) "
            f"(dominance threshold {a1:.3g}, determinant threshold {a2:.3g}); "
            "with sigma = 0 the second diagonal entry cannot dominate")
    return out


def _a21(alpha, c):
    return c.L1 * (math.sqrt(spectral_radius_2x2(matrix_A(alpha, c))) + 1) * c.norm_I_minus_R


def _a22(c):
    return c.L1 * c.norm_I_minus_R


def matrix_A_tau(alpha, c: ProblemConstants, alpha_A=None, check=True) -> np.ndarray:
    """``[[sqrt(rho(A)), alpha], [a21(alpha), sigma_V + alpha a22]]``.

    ``alpha`` must lie in ``(0, alpha_A)`` unless ``check`` is false (used for
    the ``alpha = 0`` boundary row).
    """
    if check:
        aA = alpha_A_bound(c) if alpha_A is None else alpha_A
        if not (0 < alpha < aA):
            raise InputError(f"alpha={alpha} outside (0, alpha_A={aA:.6g})")
    sr = math.sqrt(spectral_radius_2x2(matrix_A(alpha, c)))
    return np.array([[sr, alpha], [_a21(alpha, c), c.sigma_V + alpha * _a22(c)]])


def alpha_sigma(c: ProblemConstants) -> float:
    a22 = _a22(c)
    return math.inf if a22 == 0 else (1 - c.sigma_V) / a22


def alpha_star(alpha, c: ProblemConstants) -> float:
    a21 = _a21(alpha, c)
    if a21 == 0:
        return math.inf
    return (1 - math.sqrt(spectral_radius_2x2(matrix_A(alpha, c)))) * (1 - c.sigma_V - alpha * _a22(c)) / a21


def alpha_bar(c: ProblemConstants) -> float:
    """``min(alpha*(alpha_{A,sigma}), alpha_{A,sigma})`` with
    ``alpha_{A,sigma} = min(alpha_A / 2, alpha_sigma)``."""
    a_As = min(alpha_A_bound(c) / 2, alpha_sigma(c))
    return min(alpha_star(a_As, c), a_As)


@dataclass
class RateReport:
    alpha: float
    A: list
    rho_A: float
    A_tau: list
    rho_A_tau: float
    alpha_A: float
    alpha_sigma: float
    alpha_A_sigma: float
    alpha_star: float
    alpha_bar: float
    grid: list            # rows (alpha, rho(A), rho(A_tau)); first row is alpha = 0
    certified: bool       # rho(A_tau) < 1 at every interior grid point
    max_grid_rho: float
    upper_triangular: bool
    constants: dict

    def to_dict(self):
        return asdict(self)

    def grid_csv(self, fh):
        fh.write("alpha,rho_A,rho_A_tau\n")
        for a, ra, rt in self.grid:
            fh.write(f"{a!r},{ra!r},{rt!r}\n")


def rate_report(c: ProblemConstants, alpha=None, points=100) -> RateReport:
    """Evaluate the certificate at ``alpha`` (default ``alpha_bar / 2``) and on
    ``points`` equally spaced steps strictly inside ``(0, alpha_bar)``."""
    aA = alpha_A_bound(c)
    a_sig = alpha_sigma(c)
    a_As = min(aA / 2, a_sig)
    a_star = alpha_star(a_As, c)
    ab = min(a_star, a_As)
    if not ab > 0:
        raise DegenerateConstantsError(f"alpha_bar = {ab:.3g} is not positive")
    alpha = ab / 2 if alpha is None else alpha
    A = matrix_A(alpha, c)
    At = matrix_A_tau(alpha, c, alpha_A=aA)
    grid = [(0.0, spectral_radius_2x2(matrix_A(0.0, c)),
             spectral_radius_2x2(matrix_A_tau(0.0, c, check=False)))]
    for a in ab * np.arange(1, points + 1) / (points + 1):
        grid.append((float(a), spectral_radius_2x2(matrix_A(a, c)),
                     spectral_radius_2x2(matrix_A_tau(a, c, alpha_A=aA))))
    interior = [g[2] for g in grid[1:]]
    return RateReport(
        alpha=float(alpha), A=A.tolist(), rho_A=spectral_radius_2x2(A), A_tau=At.tolist(),
        rho_A_tau=spectral_radius_2x2(At), alpha_A=aA, alpha_sigma=a_sig, alpha_A_sigma=a_As,
        alpha_star=a_star, alpha_bar=ab, grid=grid, certified=bool(max(interior) < 1),
        max_grid_rho=float(max(interior)), upper_triangular=c.norm_I_minus_R == 0,
        constants=c.to_dict())


def with_topology(c: ProblemConstants, sigma=None, sigma_V=None) -> ProblemConstants:
    return replace(c, sigma=c.sigma if sigma is None else sigma,
                   sigma_V=c.sigma_V if sigma_V is None else sigma_V)
