"""Experiment configuration: JSON loading, schema validation and assembly of
games, feasible sets and topologies."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .. import instances, power
from ..errors import ConfigError
from ..topology import CommTopology, UndirectedGraph, WeightMatrix, complete_graph, metropolis_weights, ring_graph

OUTPUT_ENV = "CLUSTERTRACK_OUTPUT_DIR"

_schema_cache = {}


def load_schema(name="config.schema.json"):
    if name not in _schema_cache:
        text = resources.files("clustertrack.harness").joinpath(name).read_text()
        _schema_cache[name] = json.loads(text)
    return _schema_cache[name]


def _field_of(err: jsonschema.ValidationError) -> str:
    path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
    return path.lstrip(".") or "<root>"


def validate_dict(raw: dict):
    """Raise :class:`ConfigError` naming the first offending field."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = list(validator.iter_errors(raw))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        # oneOf failures hide the useful message one level down
        while err.context:
            branch = _discriminated_branch(err)
            if isinstance(branch, ConfigError):
                raise branch
            pool = err.context if branch is None else [e for e in err.context if e.schema_path[0] == branch]
            err = jsonschema.exceptions.best_match(pool or err.context)
        where = _field_of(err)
        raise ConfigError(f"invalid config at '{where}': {err.message}", field=where)


def _type_tags(schema):
    t = schema.get("properties", {}).get("type", {})
    return [t["const"]] if "const" in t else list(t.get("enum", []))


def _discriminated_branch(err):
    """For a ``oneOf`` over objects tagged by ``type``: the index of the branch
    the instance selects, ``None`` when untagged, or a ConfigError when the
    tag matches no branch."""
    inst = err.instance
    if err.validator != "oneOf" or not isinstance(inst, dict) or "type" not in inst:
        return None
    tags = [_type_tags(s) for s in err.validator_value]
    if not all(tags):
        return None
    for i, allowed in enumerate(tags):
        if inst["type"] in allowed:
            return i
    where = (_field_of(err) + ".type").lstrip(".")
    names = sorted(t for ts in tags for t in ts)
    return ConfigError(f"invalid config at '{where}': {inst['type']!r} is not one of {names}", field=where)


def canonical_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path
    source: str = "<dict>"
    resolved: dict = field(default_factory=dict)

    @property
    def name(self):
        return self.raw.get("name", Path(self.source).stem)

    @property
    def scenario(self):
        return self.resolved["scenario"]

    @property
    def topology(self):
        return self.raw["topology"]

    @property
    def solver(self):
        return self.raw.get("solver", {})

    @property
    def oracle(self):
        return {"enabled": True, **self.raw.get("oracle", {})}

    @property
    def theory(self):
        return {"mode": "exact", "points": 100, "samples": 1000, **self.raw.get("theory", {})}

    @property
    def config_hash(self):
        return canonical_hash(self.resolved)

    def output_dir(self, override=None) -> Path:
        if override:
            return Path(override)
        env = os.environ.get(OUTPUT_ENV)
        if env:
            return Path(env)
        out = self.raw.get("output_dir", "clustertrack-out")
        p = Path(out)
        return p if p.is_absolute() else self.base_dir / p


def from_dict(raw: dict, base_dir=".", source="<dict>") -> ExperimentConfig:
    validate_dict(raw)
    resolved = copy.deepcopy(raw)
    scen = resolved["scenario"]
    if scen["type"] == "microgrid" and "path" in scen:
        path = Path(base_dir) / scen["path"]
        if not path.is_file():
            raise ConfigError(f"scenario.path: file {str(path)!r} does not exist", field="scenario.path")
        try:
            fleet = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario.path: {path} is not valid JSON ({exc})", field="scenario.path") from exc
        # re-validate the fleet through the main schema
        validate_dict({**{k: v for k, v in raw.items() if k != "scenario"},
                       "scenario": {"type": "microgrid", "fleet": fleet}})
        resolved["scenario"] = {"type": "microgrid", "fleet": fleet}
    return ExperimentConfig(raw, Path(base_dir), source, resolved)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist", field="<file>")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", field="<file>") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", field="<root>")
    return from_dict(raw, path.parent, str(path))


# -- assembly -------------------------------------------------------------------

def _profile(spec, T, where):
    if isinstance(spec, dict):
        return power.default_demand_profile(T, scale=spec.get("scale", 100.0))
    arr = np.asarray(spec, dtype=float)
    if arr.size != T:
        raise ConfigError(f"{where}: expected {T} values, got {arr.size}", field=where)
    return arr


def _expand(entries):
    out = []
    for e in entries:
        e = dict(e)
        out += [e] * e.pop("count", 1)
    return out


def fleet_specs(fleet: dict):
    """``(specs, pricing, charge_form)`` from a fleet description."""
    T = fleet["T"]
    specs = []
    for h, mg in enumerate(fleet["microgrids"]):
        where = f"scenario.fleet.microgrids[{h}]"
        demand = _profile(mg["demand"], T, where + ".demand")
        gens = [power.GeneratorParams(**g) for g in _expand(mg.get("generators", []))]
        bats = [power.BatteryParams(**b) for b in _expand(mg.get("batteries", []))]
        p_upper = mg.get("p_upper")
        if isinstance(p_upper, list) and len(p_upper) != T:
            raise ConfigError(f"{where}.p_upper: expected {T} values", field=where + ".p_upper")
        specs.append(power.MicrogridSpec(gens, bats, demand, p_upper, mg.get("name", f"MG{h + 1}")))
    pr = fleet["pricing"]
    pricing = power.PricingParams(pr["q"], pr.get("owner", "first"))
    return specs, pricing, fleet.get("charge_form", "printed")


@dataclass
class Built:
    game: object
    sets: list
    specs: list | None = None
    pricing: object | None = None
    charge_form: str = "printed"


def build_scenario(cfg: ExperimentConfig, certify=True) -> Built:
    scen = cfg.scenario
    kind = scen["type"]
    if kind == "tg1":
        game, sets = instances.tg1(tuple(scen.get("lower", (1.0, -1.0))), tuple(scen.get("upper", (2.0, 1.0))))
        return Built(game, sets)
    if kind == "random_quadratic":
        rng = np.random.default_rng(scen["seed"])
        game = instances.random_quadratic_game(
            rng, max_clusters=scen.get("max_clusters", 3), max_agents=scen.get("max_agents", 4),
            max_dim=scen.get("max_dim", 3))
        sets = instances.random_cluster_sets(rng, game.dims, halfspaces=scen.get("halfspaces", 0))
        return Built(game, sets)
    specs, pricing, form = fleet_specs(scen["fleet"])
    game, sets = power.build_game(specs, pricing, charge_form=form, certify=certify)
    return Built(game, sets, specs, pricing, form)


def build_topology(cfg: ExperimentConfig, dims) -> CommTopology:
    t = cfg.topology
    kind = t["type"]
    if kind in ("complete", "ring"):
        make = {"complete": complete_graph, "ring": ring_graph}
        g = make[kind](dims.N)
        hs = [make[t.get("cluster_type", kind)](a) for a in dims.agents_per_cluster]
        return CommTopology.from_graphs(g, hs)
    if kind == "random":
        return CommTopology.random(dims, p=t.get("p", 0.4), seed=t["seed"])
    # explicit adjacency lists; weights are kept raw so the validator can judge them
    if len(t["global"]) != dims.N:
        raise ConfigError(f"topology.global: {len(t['global'])} vertices for N={dims.N}", field="topology.global")
    if len(t["clusters"]) != dims.H:
        raise ConfigError(f"topology.clusters: {len(t['clusters'])} lists for H={dims.H}", field="topology.clusters")
    try:
        g = UndirectedGraph.from_adjacency_list(t["global"])
        hs = [UndirectedGraph.from_adjacency_list(a) for a in t["clusters"]]
    except Exception as exc:
        raise ConfigError(f"topology: {exc}", field="topology") from exc
    for h, (gh, a) in enumerate(zip(hs, dims.agents_per_cluster)):
        if gh.n_vertices != a:
            raise ConfigError(f"topology.clusters[{h}]: {gh.n_vertices} vertices for {a} agents",
                              field=f"topology.clusters[{h}]")
    W = WeightMatrix(np.asarray(t["weights"], float), g) if "weights" in t else _weights_or_raw(g)
    return CommTopology(W, [_weights_or_raw(gh) for gh in hs])


def _weights_or_raw(graph):
    """Metropolis weights when connected; otherwise identity-on-components
    weights so the validator can report the disconnection."""
    if graph.is_connected():
        return metropolis_weights(graph)
    deg = graph.degrees()
    W = np.zeros((graph.n_vertices, graph.n_vertices))
    for i, j in graph.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices_from(W)] = 1.0 - W.sum(axis=1)
    return WeightMatrix(W, graph)
