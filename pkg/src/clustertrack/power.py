"""Day-ahead microgrid dispatch as a multi-cluster game.

Each microgrid is a cluster whose agents are its generators and batteries.
Over ``T`` slots a microgrid chooses its main-grid purchase ``p``, the
generator outputs ``g_i`` and the battery powers ``s_j`` (positive when
discharging) so that ``p + sum g + sum s = d`` in every slot.  Microgrids
interact only through the main-grid price, which is affine in the total
purchase ``P(t) = sum_h p^h(t)``: cluster ``h`` pays ``q P(t) p^h(t)``.

Within a cluster the decision vector is laid out slot-major per device::

    x^h = [p(0..T-1), g_1(0..T-1), ..., g_ng(..), s_1(0..T-1), ..., s_ns(..)]

Physical units are left to the configuration (power in kW, energy in kWh
per slot, currency per kWh^2 etc.); nothing here depends on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constraints import BoxSet, FeasibleSet, Halfspace, Hyperplane
from .errors import InfeasibleSetError, InputError
from .game import AgentCost, Dimensions, MultiClusterGame
from .validation import Check


@dataclass(frozen=True)
class GeneratorParams:
    """Cost ``a g^2 + b g + c`` per slot; output in ``[g_lower, g_upper]``."""

    a: float
    b: float
    c: float
    g_lower: float
    g_upper: float

    def checks(self, label):
        return [
            Check(f"{label}.parameter_positivity", self.a > 0 and self.b > 0 and self.c > 0,
                  f"a={self.a}, b={self.b}, c={self.c}"),
            Check(f"{label}.bounds", self.g_lower <= self.g_upper, f"[{self.g_lower}, {self.g_upper}]"),
        ]


@dataclass(frozen=True)
class BatteryParams:
    """Battery with cost ``a s^2 + b |s| + c`` per slot, ``|s|`` smoothed.

    ``delta`` defaults to ``1e-3 * s_upper`` (or ``1e-3 * |s_lower|`` when
    ``s_upper`` is zero).
    """

    a: float
    b: float
    c: float
    s_lower: float
    s_upper: float
    q_max: float
    q0: float
    gamma: float = 0.99
    eps: float = 0.01
    delta: float | None = None

    @property
    def smoothing(self) -> float:
        if self.delta is not None:
            return float(self.delta)
        ref = self.s_upper if self.s_upper > 0 else abs(self.s_lower)
        return 1e-3 * ref if ref > 0 else 1e-6

    def checks(self, label):
        return [
            Check(f"{label}.parameter_positivity", self.a > 0 and self.b > 0 and self.c > 0,
                  f"a={self.a}, b={self.b}, c={self.c}"),
            Check(f"{label}.bounds", self.s_lower <= 0 <= self.s_upper,
                  f"s in [{self.s_lower}, {self.s_upper}] must contain 0"),
            Check(f"{label}.capacity", self.q_max > 0 and 0 <= self.q0 <= self.q_max,
                  f"q0={self.q0}, q_max={self.q_max}"),
            Check(f"{label}.leakage", 0 < self.gamma <= 1, f"gamma={self.gamma}"),
            Check(f"{label}.terminal_tolerance", self.eps > 0, f"eps={self.eps}"),
            Check(f"{label}.smoothing", self.smoothing > 0, f"delta={self.smoothing}"),
        ]


@dataclass(frozen=True)
class MicrogridSpec:
    """One microgrid.  ``p_upper`` defaults to ``d(t) + sum_j |s_lower_j|``."""

    generators: tuple = ()
    batteries: tuple = ()
    demand: np.ndarray = field(default_factory=lambda: np.zeros(0))
    p_upper: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "batteries", tuple(self.batteries))
        object.__setattr__(self, "demand", np.asarray(self.demand, dtype=float).ravel())
        if self.p_upper is not None:
            pu = np.broadcast_to(np.asarray(self.p_upper, dtype=float), self.demand.shape).copy()
            object.__setattr__(self, "p_upper", pu)

    @property
    def T(self):
        return self.demand.size

    @property
    def n_agents(self):
        return len(self.generators) + len(self.batteries)

    @property
    def dim(self):
        return self.T * (1 + self.n_agents)

    def purchase_cap(self) -> np.ndarray:
        if self.p_upper is not None:
            return self.p_upper
        return self.demand + sum(abs(b.s_lower) for b in self.batteries)

    def checks(self, label):
        out = [Check(f"{label}.horizon", self.T >= 1, f"T={self.T}"),
               Check(f"{label}.agents", self.n_agents >= 1, f"{len(self.generators)} generators, "
                                                           f"{len(self.batteries)} batteries"),
               Check(f"{label}.demand_nonnegative", bool(np.all(self.demand >= 0)),
                     f"min demand {self.demand.min() if self.T else float('nan')}")]
        if self.p_upper is not None:
            out.append(Check(f"{label}.purchase_bounds", bool(np.all(self.p_upper >= 0)),
                             f"min cap {self.p_upper.min()}"))
        for i, g in enumerate(self.generators):
            out += g.checks(f"{label}.generator[{i}]")
        for j, b in enumerate(self.batteries):
            out += b.checks(f"{label}.battery[{j}]")
        return out


@dataclass(frozen=True)
class PricingParams:
    """Main-grid price slope ``q``: cost ``q P(t) p^h(t)`` to cluster ``h``.

    ``owner`` is ``"first"`` (the cluster's first agent carries the
    purchase cost) or ``"even"`` (every agent carries ``1/N_h`` of it).
    """

    q: float
    owner: str = "first"

    def __post_init__(self):
        if self.owner not in ("first", "even"):
            raise InputError(f"owner must be 'first' or 'even', got {self.owner!r}")

    def checks(self):
        return [Check("pricing_slope", self.q > 0, f"q={self.q}", severity="warning" if self.q == 0 else "error")]


# -- elementary pieces --------------------------------------------------------

def battery_charge(params: BatteryParams, s, t) -> float:
    """Charge at the start of slot ``t``: ``gamma^t q0 - sum_{r<t} gamma^(t-r) s(r)``."""
    s = np.asarray(s, dtype=float)
    if not 0 <= t <= s.size:
        raise InputError(f"t={t} outside 0..{s.size}")
    g = params.gamma
    r = np.arange(t)
    return float(g**t * params.q0 - np.sum(g ** (t - r) * s[:t]))


def charge_path(params: BatteryParams, s) -> np.ndarray:
    """``q(0), ..., q(T)``."""
    s = np.asarray(s, dtype=float)
    return np.array([battery_charge(params, s, t) for t in range(s.size + 1)])


def smoothed_battery_cost(params: BatteryParams, s):
    """Per-slot value and derivative of ``a s^2 + b (sqrt(s^2 + delta^2) - delta) + c``."""
    s = np.asarray(s, dtype=float)
    dl = params.smoothing
    root = np.sqrt(s * s + dl * dl)
    value = params.a * s * s + params.b * (root - dl) + params.c
    deriv = 2 * params.a * s + params.b * s / root
    return value, deriv


def count_constraints(spec: MicrogridSpec) -> int:
    """Inequality count under the tabulated convention: two box sides per
    generator slot; per battery two box sides and two charge bounds per slot
    plus one terminal condition.  Demand equalities are not counted."""
    T = spec.T
    return 2 * T * len(spec.generators) + (4 * T + 1) * len(spec.batteries)


def default_demand_profile(T=24, scale=100.0, base=0.3, morning=0.3, evening=0.7) -> np.ndarray:
    """Household-like daily demand: night trough, morning shoulder around
    8h and an evening peak around 19h, sampled at slot midpoints."""
    if T < 1:
        raise InputError("T must be at least 1")
    hour = (np.arange(T) + 0.5) * 24.0 / T
    shape = (base + morning * np.exp(-(((hour - 8.0) / 2.0) ** 2))
             + evening * np.exp(-(((hour - 19.0) / 2.2) ** 2)))
    return scale * shape


# -- layout -----------------------------------------------------------------

@dataclass(frozen=True)
class ClusterLayout:
    T: int
    n_gen: int
    n_bat: int

    @property
    def p(self):
        return slice(0, self.T)

    def g(self, i):
        return slice(self.T * (1 + i), self.T * (2 + i))

    def s(self, j):
        return slice(self.T * (1 + self.n_gen + j), self.T * (2 + self.n_gen + j))

    @property
    def dim(self):
        return self.T * (1 + self.n_gen + self.n_bat)


def decompose(x, specs, dims: Dimensions):
    """Split a full strategy into per-microgrid ``p``, ``g`` and ``s`` arrays."""
    out = []
    for h, spec in enumerate(specs):
        xh = np.asarray(x)[dims.block(h)]
        lay = ClusterLayout(spec.T, len(spec.generators), len(spec.batteries))
        out.append({
            "p": xh[lay.p].copy(),
            "g": np.array([xh[lay.g(i)] for i in range(lay.n_gen)]).reshape(lay.n_gen, spec.T),
            "s": np.array([xh[lay.s(j)] for j in range(lay.n_bat)]).reshape(lay.n_bat, spec.T),
        })
    return out


# -- compilation ----------------------------------------------------------------

def cluster_set(spec: MicrogridSpec, charge_form="printed", certify=True):
    """Feasible set of one microgrid and a label per member.

    ``charge_form="printed"`` bounds ``gamma^t q0 - sum_{r<=t} gamma^(t-r) s(r)``
    in ``[0, q_max]`` for ``t = 0..T-1``; ``"recursion"`` bounds the charge
    ``q(t)`` for ``t = 1..T`` instead.
    """
    if charge_form not in ("printed", "recursion"):
        raise InputError(f"charge_form must be 'printed' or 'recursion', got {charge_form!r}")
    T = spec.T
    lay = ClusterLayout(T, len(spec.generators), len(spec.batteries))
    lo = np.empty(lay.dim)
    hi = np.empty(lay.dim)
    lo[lay.p], hi[lay.p] = 0.0, spec.purchase_cap()
    for i, g in enumerate(spec.generators):
        lo[lay.g(i)], hi[lay.g(i)] = g.g_lower, g.g_upper
    for j, b in enumerate(spec.batteries):
        lo[lay.s(j)], hi[lay.s(j)] = b.s_lower, b.s_upper
    members = [BoxSet(lo, hi)]
    labels = ["device bounds"]

    for t in range(T):
        a = np.zeros(lay.dim)
        a[t] = 1.0
        for i in range(lay.n_gen):
            a[lay.g(i).start + t] = 1.0
        for j in range(lay.n_bat):
            a[lay.s(j).start + t] = 1.0
        members.append(Hyperplane(a, spec.demand[t]))
        labels.append(f"demand balance t={t}")

    for j, b in enumerate(spec.batteries):
        sl = lay.s(j)
        gm = b.gamma
        for t in range(T):
            # charge-like quantity  c0 - w^T s  within [0, q_max]
            if charge_form == "printed":
                c0, upto, shift = gm**t * b.q0, t + 1, 0
            else:
                c0, upto, shift = gm ** (t + 1) * b.q0, t + 1, 1
            w = np.zeros(lay.dim)
            r = np.arange(upto)
            w[sl.start + r] = gm ** (t + shift - r)
            members.append(Halfspace(w, c0))                    # w s <= c0        (charge >= 0)
            members.append(Halfspace(-w, b.q_max - c0))         # -w s <= qmax-c0  (charge <= qmax)
            labels += [f"battery {j} charge >= 0 at t={t}", f"battery {j} charge <= capacity at t={t}"]
        # |q(T) - q0| <= eps with q(T) = gamma^T q0 - sum_r gamma^(T-r) s(r)
        w = np.zeros(lay.dim)
        r = np.arange(T)
        w[sl.start + r] = gm ** (T - r)
        qT0 = gm**T * b.q0
        members.append(Halfspace(-w, b.q0 + b.eps - qT0))
        members.append(Halfspace(w, qT0 - b.q0 + b.eps))
        labels += [f"battery {j} terminal charge upper", f"battery {j} terminal charge lower"]
    return FeasibleSet(members, certify=certify), labels


def _agent_costs(specs, pricing: PricingParams, dims: Dimensions):
    """Cost objects for every agent, in cluster order."""
    H = dims.H
    n = dims.n
    T = specs[0].T
    p_index = np.array([[dims.offsets[h] + t for t in range(T)] for h in range(H)])  # (H, T)

    def total_purchase(x):
        return x[p_index].sum(axis=0)

    all_costs = []
    for h, spec in enumerate(specs):
        lay = ClusterLayout(T, len(spec.generators), len(spec.batteries))
        off = int(dims.offsets[h])
        Nh = spec.n_agents
        weights = [1.0] + [0.0] * (Nh - 1) if pricing.owner == "first" else [1.0 / Nh] * Nh
        row = []
        devices = [("g", i, g) for i, g in enumerate(spec.generators)] + \
                  [("s", j, b) for j, b in enumerate(spec.batteries)]
        for a_idx, (kind, idx, par) in enumerate(devices):
            row.append(_device_cost(kind, idx, par, lay, off, n, h, p_index, total_purchase,
                                    pricing.q * weights[a_idx]))
        all_costs.append(row)
    return all_costs


def _device_cost(kind, idx, par, lay, off, n, h, p_index, total_purchase, qw):
    T = lay.T
    dev = lay.g(idx) if kind == "g" else lay.s(idx)
    dev_glob = slice(off + dev.start, off + dev.stop)
    own_p = p_index[h]

    # linear gradient part K x + k over the own block (dim_h x n)
    rows, cols, vals = [], [], []
    k = np.zeros(lay.dim)
    for t in range(T):
        rows.append(dev.start + t)
        cols.append(dev_glob.start + t)
        vals.append(2 * par.a)
        if kind == "g":
            k[dev.start + t] = par.b
    if qw != 0:
        for t in range(T):
            for hh in range(p_index.shape[0]):
                rows.append(t)
                cols.append(int(p_index[hh, t]))
                vals.append(qw * (2.0 if hh == h else 1.0))
    K = sp.csr_matrix((vals, (rows, cols)), shape=(lay.dim, n))
    slack = np.zeros(lay.dim)
    if kind == "s":
        slack[dev] = par.b / par.smoothing

    def value(x):
        v = x[dev_glob]
        if kind == "g":
            cost = float(np.sum(par.a * v * v + par.b * v + par.c))
        else:
            cost = float(np.sum(smoothed_battery_cost(par, v)[0]))
        if qw != 0:
            cost += qw * float(total_purchase(x) @ x[own_p])
        return cost

    def gradient(x):
        grad = np.zeros(lay.dim)
        v = x[dev_glob]
        if kind == "g":
            grad[dev] = 2 * par.a * v + par.b
        else:
            grad[dev] = smoothed_battery_cost(par, v)[1]
        if qw != 0:
            grad[:T] = qw * (total_purchase(x) + x[own_p])
        return grad

    return AgentCost(value, gradient, linear=(K, k), curvature_slack=slack)


def build_game(specs, pricing: PricingParams, T=None, charge_form="printed", certify=True):
    """Compile microgrids into ``(game, sets)``.

    Raises
    ------
    InputError
        Invalid parameters (the message lists every failed check).
    InfeasibleSetError
        A microgrid admits no dispatch; ``witness`` names the microgrid and
        the constraint left violated by the construction pass.
    """
    specs = list(specs)
    if not specs:
        raise InputError("at least one microgrid is required")
    T = specs[0].T if T is None else T
    failed = [c for c in validate_parameters(specs, pricing, T) if not c.passed and c.severity == "error"]
    if failed:
        raise InputError("invalid scenario: " + "; ".join(f"{c.name} ({c.detail})" for c in failed))
    dims = Dimensions([s.n_agents for s in specs], [s.dim for s in specs])
    sets = []
    for h, spec in enumerate(specs):
        try:
            fs, _ = cluster_set(spec, charge_form, certify)
        except InfeasibleSetError as exc:
            label = cluster_set(spec, charge_form, certify=False)[1]
            idx = exc.witness if isinstance(exc.witness, int) else None
            where = label[idx] if idx is not None else str(exc.witness)
            name = spec.name or f"microgrid {h}"
            raise InfeasibleSetError(f"{name}: no feasible dispatch ({where} violated)",
                                     witness=(h, where), violation=exc.violation) from exc
        sets.append(fs)
    game = MultiClusterGame(dims, _agent_costs(specs, pricing, dims))
    return game, sets


def validate_parameters(specs, pricing: PricingParams, T=None) -> list[Check]:
    out = list(pricing.checks())
    T = specs[0].T if T is None and specs else T
    for h, spec in enumerate(specs):
        label = spec.name or f"mg[{h}]"
        out += spec.checks(label)
        out.append(Check(f"{label}.horizon_match", spec.T == T, f"T={spec.T}, expected {T}"))
    return out


def five_microgrid_layout():
    """Generator/battery counts of the five tabulated microgrids."""
    return [(7, 3), (5, 5), (3, 7), (0, 10), (10, 0)]


def charge_feasibility(specs, x, dims, tol=1e-6):
    """Worst violation of ``0 <= q(t) <= q_max`` and ``|q(T) - q0| <= eps`` at ``x``."""
    worst = 0.0
    for spec, parts in zip(specs, decompose(x, specs, dims)):
        for b, s in zip(spec.batteries, parts["s"]):
            q = charge_path(b, s)
            worst = max(worst, float(np.max(-q)), float(np.max(q - b.q_max)),
                        abs(q[-1] - b.q0) - b.eps)
    return max(worst, 0.0)


def demand_imbalance(specs, x, dims):
    worst = 0.0
    for spec, parts in zip(specs, decompose(x, specs, dims)):
        total = parts["p"] + parts["g"].sum(axis=0) + parts["s"].sum(axis=0)
        worst = max(worst, float(np.max(np.abs(total - spec.demand))))
    return worst


__all__ = [
    "BatteryParams", "ClusterLayout", "GeneratorParams", "MicrogridSpec", "PricingParams",
    "battery_charge", "build_game", "charge_feasibility", "charge_path", "cluster_set",
    "count_constraints", "decompose", "default_demand_profile", "demand_imbalance",
    "five_microgrid_layout", "smoothed_battery_cost", "validate_parameters",
]
