"""JSON configuration documents for the command line.

A document looks like::

    {
      "schema_version": 1,
      "dgus": [{"R_t": 0.2, "L_t": 0.0018, "C_t": 0.0022, "rated_current": 10,
                "V_ref": 48, "V_s": 80,
                "load": {"Y": 0.3, "I_bar": 1.0, "P_star": 150, "r": 0},
                "gains": {"k1": 0, "k2": -0.8, "k3": 0.1, "k4": -1}}],
      "lines": [{"source": 0, "sink": 1, "resistance": 0.05, "inductance": 2e-6}],
      "comm": [{"edge": [0, 1], "weight": 50}],
      "scenario": {"initial": {...}, "start": "primary_equilibrium", "events": [...]},
      "solver": {"tol": 1e-10, "max_iter": 200},
      "integrator": {"dt": 1e-5, "t_end": 1.0, "record_every": 100}
    }

Node ids are 0-based. ``gains`` may be omitted per DGU; missing gains are
synthesized from the stabilizing set. Validation errors name the offending
path, e.g. ``dgus[2].load.P_star``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import Line, MicrogridConfig
from .control import GainSet, sample_stabilizing_gains
from .loads import ZieLoad
from .network import DguParams, TopologyError
from .simulator import DEFAULT_DT, EVENT_KINDS, ScenarioEvent

SCHEMA_VERSION = 1
START_MODES = ("primary_equilibrium", "equilibrium", "isolated")
PRESETS = ("six_dgu", "collapse")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _number(node, path, *, positive=False, nonneg=False, integer=False):
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(path, "expected a number")
    x = float(node)
    if not math.isfinite(x):
        raise ConfigError(path, "must be finite")
    if positive and x <= 0:
        raise ConfigError(path, "must be positive")
    if nonneg and x < 0:
        raise ConfigError(path, "must be nonnegative")
    if integer:
        if x != int(x):
            raise ConfigError(path, "expected an integer")
        return int(x)
    return x


def _obj(node, path, allowed=None, required=()):
    if not isinstance(node, dict):
        raise ConfigError(path, "expected an object")
    for key in required:
        if key not in node:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    if allowed is not None:
        extra = sorted(set(node) - set(allowed))
        if extra:
            raise ConfigError(f"{path}.{extra[0]}" if path else extra[0], "unknown field")
    return node


def _list(node, path):
    if not isinstance(node, list):
        raise ConfigError(path, "expected a list")
    return node


def _int_list(node, path):
    return [_number(x, f"{path}[{k}]", integer=True) for k, x in enumerate(_list(node, path))]


@dataclass(frozen=True)
class ScenarioSpec:
    preset: str | None = None
    start: str = "primary_equilibrium"
    active: tuple[int, ...] | None = None
    closed_lines: tuple[int, ...] | None = None
    secondary: tuple[int, ...] | None = None
    events: tuple[ScenarioEvent, ...] = ()
    resistance_scale: float | None = None


@dataclass(frozen=True)
class IntegratorSettings:
    dt: float = DEFAULT_DT
    t_end: float = 1.0
    record_every: int = 100


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-10
    max_iter: int = 200


@dataclass(frozen=True)
class ConfigDocument:
    config: MicrogridConfig
    gains: GainSet
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)


# -- parsing ----------------------------------------------------------------

_DGU_FIELDS = ("R_t", "L_t", "C_t", "rated_current", "V_ref", "V_s")


def _parse_load(node, path) -> ZieLoad:
    node = _obj(node, path, allowed=("Y", "I_bar", "P_star", "r"))
    Y = _number(node.get("Y", 0.0), f"{path}.Y", nonneg=True)
    I_bar = _number(node.get("I_bar", 0.0), f"{path}.I_bar")
    P = _number(node.get("P_star", 0.0), f"{path}.P_star")
    r = _number(node.get("r", 0.0), f"{path}.r")
    try:
        return ZieLoad(Y=Y, I_bar=I_bar, P_star=P, r=r)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _parse_dgu(node, path):
    node = _obj(node, path, allowed=_DGU_FIELDS + ("load", "gains"),
                required=("R_t", "L_t", "C_t", "rated_current", "V_ref"))
    vals = {k: _number(node[k], f"{path}.{k}", positive=True) for k in _DGU_FIELDS if k in node}
    try:
        params = DguParams(**vals)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    load = _parse_load(node.get("load", {}), f"{path}.load")
    gains = None
    if "gains" in node:
        gpath = f"{path}.gains"
        g = _obj(node["gains"], gpath, allowed=("k1", "k2", "k3", "k4"), required=("k1", "k2", "k3", "k4"))
        gains = tuple(_number(g[k], f"{gpath}.{k}") for k in ("k1", "k2", "k3", "k4"))
    return params, load, gains


def _parse_event(node, path, n, m) -> ScenarioEvent:
    node = _obj(node, path, allowed=("time", "kind", "payload"), required=("time", "kind"))
    t = _number(node["time"], f"{path}.time", nonneg=True)
    kind = node["kind"]
    if kind not in EVENT_KINDS:
        raise ConfigError(f"{path}.kind", f"unknown event kind {kind!r}; expected one of {', '.join(EVENT_KINDS)}")
    ppath = f"{path}.payload"
    p = _obj(node.get("payload", {}), ppath)
    out: dict[str, Any] = {}

    def node_id(key):
        i = _number(p.get(key), f"{ppath}.{key}", integer=True) if key in p else None
        if i is None:
            raise ConfigError(f"{ppath}.{key}", "missing required field")
        if not 0 <= i < n:
            raise ConfigError(f"{ppath}.{key}", f"node {i} outside 0..{n - 1}")
        return i

    def line_ids(values, lpath):
        ids = _int_list(values, lpath)
        for k, l in enumerate(ids):
            if not 0 <= l < m:
                raise ConfigError(f"{lpath}[{k}]", f"line {l} outside 0..{m - 1}")
        return ids

    if kind in ("close_line", "open_line"):
        if "line" not in p:
            raise ConfigError(f"{ppath}.line", "missing required field")
        out["line"] = line_ids([p["line"]], f"{ppath}.line")[0]
    elif kind == "set_load":
        out["node"] = node_id("node")
        if "load" not in p:
            raise ConfigError(f"{ppath}.load", "missing required field")
        out["load"] = _parse_load(p["load"], f"{ppath}.load")
    elif kind == "plug_in_dgu":
        out["node"] = node_id("node")
        out["lines"] = line_ids(p.get("lines", []), f"{ppath}.lines")
        sec = p.get("secondary", True)
        if not isinstance(sec, bool):
            raise ConfigError(f"{ppath}.secondary", "expected true or false")
        out["secondary"] = sec
    elif kind == "unplug_dgu":
        out["node"] = node_id("node")
    elif kind in ("enable_secondary", "disable_secondary"):
        nodes = _int_list(p.get("nodes", list(range(n))), f"{ppath}.nodes")
        for k, i in enumerate(nodes):
            if not 0 <= i < n:
                raise ConfigError(f"{ppath}.nodes[{k}]", f"node {i} outside 0..{n - 1}")
        out["nodes"] = nodes
    elif kind == "set_comm_link":
        edge = _int_list(p.get("edge"), f"{ppath}.edge") if "edge" in p else None
        if edge is None or len(edge) != 2:
            raise ConfigError(f"{ppath}.edge", "expected a pair of node ids")
        for k, i in enumerate(edge):
            if not 0 <= i < n:
                raise ConfigError(f"{ppath}.edge[{k}]", f"node {i} outside 0..{n - 1}")
        out["edge"] = tuple(edge)
        out["weight"] = _number(p.get("weight", 0.0), f"{ppath}.weight", nonneg=True)
    return ScenarioEvent(t, kind, out)


def _parse_scenario(node, path, n, m) -> ScenarioSpec:
    node = _obj(node, path, allowed=("preset", "start", "initial", "events", "resistance_scale"))
    preset = node.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"{path}.preset", f"unknown preset {preset!r}; expected one of {', '.join(PRESETS)}")
    start = node.get("start", "primary_equilibrium")
    if start not in START_MODES:
        raise ConfigError(f"{path}.start", f"expected one of {', '.join(START_MODES)}")
    init = _obj(node.get("initial", {}), f"{path}.initial", allowed=("active", "closed_lines", "secondary"))
    sets = {}
    for key, bound in (("active", n), ("closed_lines", m), ("secondary", n)):
        if key in init:
            ids = _int_list(init[key], f"{path}.initial.{key}")
            for k, i in enumerate(ids):
                if not 0 <= i < bound:
                    raise ConfigError(f"{path}.initial.{key}[{k}]", f"id {i} outside 0..{bound - 1}")
            sets[key] = tuple(ids)
    events = tuple(_parse_event(e, f"{path}.events[{k}]", n, m)
                   for k, e in enumerate(_list(node.get("events", []), f"{path}.events")))
    for k in range(1, len(events)):
        if events[k].time < events[k - 1].time:
            raise ConfigError(f"{path}.events[{k}].time", "events must be sorted by time")
    scale = node.get("resistance_scale")
    if scale is not None:
        scale = _number(scale, f"{path}.resistance_scale", positive=True)
    return ScenarioSpec(preset, start, sets.get("active"), sets.get("closed_lines"), sets.get("secondary"),
                        events, scale)


def parse_document(tree: dict) -> ConfigDocument:
    """Validate a parsed JSON tree and build the configuration."""
    tree = _obj(tree, "", allowed=("schema_version", "dgus", "lines", "comm", "scenario", "solver", "integrator"),
                required=("schema_version", "dgus"))
    version = tree["schema_version"]
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r}; expected {SCHEMA_VERSION}")
    dgu_nodes = _list(tree["dgus"], "dgus")
    if not dgu_nodes:
        raise ConfigError("dgus", "at least one DGU is required")
    parsed = [_parse_dgu(d, f"dgus[{k}]") for k, d in enumerate(dgu_nodes)]
    n = len(parsed)
    lines = []
    for k, node in enumerate(_list(tree.get("lines", []), "lines")):
        path = f"lines[{k}]"
        node = _obj(node, path, allowed=("source", "sink", "resistance", "inductance"),
                    required=("source", "sink", "resistance", "inductance"))
        a = _number(node["source"], f"{path}.source", integer=True)
        b = _number(node["sink"], f"{path}.sink", integer=True)
        for key, i in (("source", a), ("sink", b)):
            if not 0 <= i < n:
                raise ConfigError(f"{path}.{key}", f"node {i} outside 0..{n - 1}")
        if a == b:
            raise ConfigError(path, "a line needs two distinct endpoints")
        lines.append(Line(a, b, _number(node["resistance"], f"{path}.resistance", positive=True),
                          _number(node["inductance"], f"{path}.inductance", positive=True)))
    comm = {}
    for k, node in enumerate(_list(tree.get("comm", []), "comm")):
        path = f"comm[{k}]"
        node = _obj(node, path, allowed=("edge", "weight"), required=("edge", "weight"))
        edge = _int_list(node["edge"], f"{path}.edge")
        if len(edge) != 2:
            raise ConfigError(f"{path}.edge", "expected a pair of node ids")
        for j, i in enumerate(edge):
            if not 0 <= i < n:
                raise ConfigError(f"{path}.edge[{j}]", f"node {i} outside 0..{n - 1}")
        if edge[0] == edge[1]:
            raise ConfigError(f"{path}.edge", "self-loop")
        key = (min(edge), max(edge))
        if key in comm:
            raise ConfigError(f"{path}.edge", "duplicate communication link")
        comm[key] = _number(node["weight"], f"{path}.weight", positive=True)
    try:
        config = MicrogridConfig(tuple(p for p, _, _ in parsed), tuple(l for _, l, _ in parsed), tuple(lines), comm)
    except (TopologyError, ValueError) as exc:
        raise ConfigError("", str(exc)) from None

    rows = []
    for k, (p, _, g) in enumerate(parsed):
        if g is None:
            auto = sample_stabilizing_gains([p.R_t], [p.L_t])
            g = (float(auto.k1[0]), float(auto.k2[0]), float(auto.k3[0]), float(auto.k4[0]))
        rows.append(g)
    k1, k2, k3, k4 = (np.array(col) for col in zip(*rows))
    gains = GainSet.from_gains(k1, k2, k3, k4, config.R_t, config.L_t)

    scenario = _parse_scenario(tree.get("scenario", {}), "scenario", n, config.m)
    integ = _obj(tree.get("integrator", {}), "integrator", allowed=("dt", "t_end", "record_every"))
    integrator = IntegratorSettings(
        dt=_number(integ.get("dt", DEFAULT_DT), "integrator.dt", positive=True),
        t_end=_number(integ.get("t_end", 1.0), "integrator.t_end", positive=True),
        record_every=_number(integ.get("record_every", 100), "integrator.record_every", positive=True, integer=True),
    )
    solv = _obj(tree.get("solver", {}), "solver", allowed=("tol", "max_iter"))
    solver = SolverSettings(
        tol=_number(solv.get("tol", 1e-10), "solver.tol", positive=True),
        max_iter=_number(solv.get("max_iter", 200), "solver.max_iter", positive=True, integer=True),
    )
    return ConfigDocument(config, gains, scenario, integrator, solver)


def load_document(path) -> ConfigDocument:
    try:
        with open(path) as fh:
            tree = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_document(tree)


# -- serialization ----------------------------------------------------------

def _load_dict(load: ZieLoad) -> dict:
    return {"Y": load.Y, "I_bar": load.I_bar, "P_star": load.P_star, "r": load.r}


def _event_dict(ev: ScenarioEvent) -> dict:
    payload = dict(ev.payload)
    if "load" in payload and isinstance(payload["load"], ZieLoad):
        payload["load"] = _load_dict(payload["load"])
    if "edge" in payload:
        payload["edge"] = list(payload["edge"])
    return {"time": ev.time, "kind": ev.kind, "payload": payload}


def document_to_tree(doc: ConfigDocument) -> dict:
    cfg, g = doc.config, doc.gains
    dgus = []
    for i, (p, load) in enumerate(zip(cfg.dgus, cfg.loads)):
        dgus.append({
            "R_t": p.R_t, "L_t": p.L_t, "C_t": p.C_t, "rated_current": p.rated_current,
            "V_ref": p.V_ref, "V_s": p.V_s,
            "load": _load_dict(load),
            "gains": {"k1": float(g.k1[i]), "k2": float(g.k2[i]), "k3": float(g.k3[i]), "k4": float(g.k4[i])},
        })
    sc = doc.scenario
    scenario: dict[str, Any] = {"start": sc.start, "events": [_event_dict(e) for e in sc.events]}
    if sc.preset is not None:
        scenario["preset"] = sc.preset
    if sc.resistance_scale is not None:
        scenario["resistance_scale"] = sc.resistance_scale
    initial = {k: list(v) for k, v in (("active", sc.active), ("closed_lines", sc.closed_lines),
                                       ("secondary", sc.secondary)) if v is not None}
    if initial:
        scenario["initial"] = initial
    return {
        "schema_version": SCHEMA_VERSION,
        "dgus": dgus,
        "lines": [{"source": l.source, "sink": l.sink, "resistance": l.resistance, "inductance": l.inductance}
                  for l in cfg.lines],
        "comm": [{"edge": [i, j], "weight": w} for (i, j), w in sorted(cfg.comm_weights.items())],
        "scenario": scenario,
        "solver": {"tol": doc.solver.tol, "max_iter": doc.solver.max_iter},
        "integrator": {"dt": doc.integrator.dt, "t_end": doc.integrator.t_end,
                       "record_every": doc.integrator.record_every},
    }


def dump_document(doc: ConfigDocument) -> str:
    return json.dumps(document_to_tree(doc), indent=2, sort_keys=False) + "\n"


def document_from_config(config: MicrogridConfig, gains: GainSet | None = None, **kwargs) -> ConfigDocument:
    if gains is None:
        gains = sample_stabilizing_gains(config.R_t, config.L_t)
    return ConfigDocument(config, gains, **kwargs)
