"""Fixed-step time-domain simulation with a scripted event timeline.

The integrator always carries the full state ``(V, I_t, v, I, Omega)`` of the
configured microgrid. Between events only the active part is advanced: DGUs
that are plugged in, lines that are closed and, in the consensus block, DGUs
whose secondary layer is on. Everything else is frozen.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .config import MicrogridConfig
from .control import GainSet
from .dynamics import PRIMARY_ONLY, SECONDARY, SystemState, VoltageCollapseError, assemble
from .equilibrium import primary_only_equilibrium
from .loads import ZieLoad

DEFAULT_DT = 1e-5
GRID_RTOL = 1e-9

EVENT_KINDS = (
    "close_line",
    "open_line",
    "set_load",
    "plug_in_dgu",
    "unplug_dgu",
    "enable_secondary",
    "disable_secondary",
    "set_comm_link",
)


@dataclass(frozen=True)
class ScenarioEvent:
    """A timed change to the microgrid.

    Payloads by kind:

    - ``close_line`` / ``open_line``: ``{"line": index}``
    - ``set_load``: ``{"node": i, "load": ZieLoad}``
    - ``plug_in_dgu``: ``{"node": i, "lines": [...], "secondary": bool}``
    - ``unplug_dgu``: ``{"node": i}``; opens every line at ``i``
    - ``enable_secondary`` / ``disable_secondary``: ``{"nodes": [...]}``
    - ``set_comm_link``: ``{"edge": (i, j), "weight": w}``; ``w = 0`` removes it
    """
    time: float
    kind: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not self.time >= 0:
            raise ValueError("event time must be nonnegative")


@dataclass(frozen=True)
class Termination:
    kind: str  # "completed" or "voltage_collapse"
    node: int | None = None
    time: float | None = None

    @property
    def collapsed(self) -> bool:
        return self.kind == "voltage_collapse"


@dataclass(frozen=True)
class Segment:
    """Network configuration in force from ``start`` until the next segment."""
    start: float
    active: tuple[int, ...]
    closed_lines: tuple[int, ...]
    secondary: tuple[int, ...]


@dataclass
class SimulationTrace:
    """Recorded samples of a run.

    ``states`` has one row per sample in full stacked order. The metrics are
    computed over DGUs that are plugged in and have the secondary layer on;
    they are NaN when that set is empty.
    """
    times: np.ndarray
    states: np.ndarray
    n: int
    m: int
    rated_currents: np.ndarray
    sharing_dispersion: np.ndarray
    balance_error: np.ndarray
    events: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    termination: Termination = field(default_factory=lambda: Termination("completed"))
    dt: float = DEFAULT_DT
    config: MicrogridConfig | None = None

    def block(self, name: str) -> np.ndarray:
        n, m = self.n, self.m
        spans = {"V": (0, n), "I_t": (n, 2 * n), "v": (2 * n, 3 * n), "I": (3 * n, 3 * n + m),
                 "Omega": (3 * n + m, 4 * n + m)}
        lo, hi = spans[name]
        return self.states[:, lo:hi]

    @property
    def V(self):
        return self.block("V")

    @property
    def I_t(self):
        return self.block("I_t")

    @property
    def Omega(self):
        return self.block("Omega")

    def state(self, k: int = -1) -> SystemState:
        return SystemState.from_vector(self.states[k], self.n, self.m, secondary=True)

    def segment_at(self, t: float) -> Segment:
        current = self.segments[0]
        for seg in self.segments:
            if seg.start <= t:
                current = seg
        return current

    def window(self, t0: float, t1: float) -> np.ndarray:
        """Indices of samples with ``t0 <= t <= t1``."""
        return np.flatnonzero((self.times >= t0) & (self.times <= t1))

    def per_unit_currents(self) -> np.ndarray:
        return self.I_t / self.rated_currents

    def to_csv(self, path_or_buf=None, per_unit: bool = False) -> str | None:
        """Write the trace as CSV with full float precision.

        With ``per_unit`` the filter-current columns are divided by the rated
        currents. Returns the text when no destination is given.
        """
        n, m = self.n, self.m
        header = (["time"] + [f"V_{i + 1}" for i in range(n)] + [f"It_{i + 1}" for i in range(n)]
                  + [f"v_{i + 1}" for i in range(n)] + [f"I_{j + 1}" for j in range(m)]
                  + [f"Omega_{i + 1}" for i in range(n)] + ["sharing_dispersion", "balance_error"])
        states = self.states.copy()
        if per_unit:
            states[:, n:2 * n] /= self.rated_currents
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for t, row, sd, be in zip(self.times, states, self.sharing_dispersion, self.balance_error):
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in row] + [repr(float(sd)), repr(float(be))])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return None


def sharing_metrics(I_t, V, rated_currents, V_ref, nodes) -> tuple[float, float]:
    """``(max - min of I_t / I_s, |I_s^T (V - V_ref)|)`` over ``nodes``."""
    nodes = np.asarray(nodes, dtype=int)
    if nodes.size == 0:
        return math.nan, math.nan
    pu = I_t[nodes] / rated_currents[nodes]
    disp = float(np.max(pu) - np.min(pu))
    bal = abs(float(rated_currents[nodes] @ (V[nodes] - V_ref[nodes])))
    return disp, bal


def rk4_step(f, x, t, dt):
    k1 = f(x, t)
    k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(x + dt * k3, t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def grid_index(t: float, dt: float) -> int:
    k = int(round(t / dt))
    if abs(k * dt - t) > GRID_RTOL * max(1.0, abs(t)):
        raise ValueError(f"event time {t} is not a multiple of dt = {dt}")
    return k


class _Network:
    """Mutable switching state of a run; owns the full state vector."""

    def __init__(self, config: MicrogridConfig, gains: GainSet, active, closed, secondary):
        self.config = config
        self.gains = gains
        self.active = set(active)
        self.closed = set(closed)
        self.secondary = set(secondary)
        self.n, self.m = config.n, config.m

    def _validate_nodes(self, nodes):
        for i in nodes:
            if not 0 <= int(i) < self.n:
                raise ValueError(f"event references node {i}, outside 0..{self.n - 1}")

    def _validate_line(self, l):
        if not 0 <= int(l) < self.m:
            raise ValueError(f"event references line {l}, outside 0..{self.m - 1}")

    def omega_index(self, i):
        return 3 * self.n + self.m + i

    def apply(self, ev: ScenarioEvent, x: np.ndarray) -> None:
        n = self.n
        p = ev.payload
        if ev.kind in ("close_line", "open_line"):
            l = int(p["line"])
            self._validate_line(l)
            if ev.kind == "close_line":
                self.closed.add(l)
            else:
                self.closed.discard(l)
                x[3 * n + l] = 0.0
        elif ev.kind == "set_load":
            i = int(p["node"])
            self._validate_nodes([i])
            load = p["load"]
            if not isinstance(load, ZieLoad):
                load = ZieLoad(**load)
            self.config = self.config.with_load(i, load)
        elif ev.kind == "plug_in_dgu":
            i = int(p["node"])
            self._validate_nodes([i])
            if i in self.active:
                raise ValueError(f"DGU {i} is already plugged in")
            self._init_isolated(i, x)
            self.active.add(i)
            for l in p.get("lines", ()):
                self._validate_line(l)
                self.closed.add(int(l))
            if p.get("secondary", True):
                self.secondary.add(i)
                x[self.omega_index(i)] = 0.0
        elif ev.kind == "unplug_dgu":
            i = int(p["node"])
            self._validate_nodes([i])
            for l, line in enumerate(self.config.lines):
                if i in (line.source, line.sink) and l in self.closed:
                    self.closed.discard(l)
                    x[3 * n + l] = 0.0
            self.secondary.discard(i)
        elif ev.kind == "enable_secondary":
            nodes = [int(i) for i in p.get("nodes", range(n))]
            self._validate_nodes(nodes)
            for i in nodes:
                if i not in self.secondary:
                    x[self.omega_index(i)] = 0.0
                    self.secondary.add(i)
        elif ev.kind == "disable_secondary":
            nodes = [int(i) for i in p.get("nodes", range(n))]
            self._validate_nodes(nodes)
            self.secondary.difference_update(nodes)
        elif ev.kind == "set_comm_link":
            i, j = (int(a) for a in p["edge"])
            self._validate_nodes([i, j])
            weights = dict(self.config.comm_weights)
            key = (min(i, j), max(i, j))
            w = float(p.get("weight", 0.0))
            if w > 0:
                weights[key] = w
            else:
                weights.pop(key, None)
            self.config = self.config.with_comm_weights(weights)

    def _init_isolated(self, i: int, x: np.ndarray) -> None:
        sub, _, _ = self.config.subsystem([i], lines=[])
        eq = primary_only_equilibrium(sub, self.gains.subset([i]))
        n = self.n
        x[i], x[n + i], x[2 * n + i] = eq.V[0], eq.I_t[0], eq.v[0]
        x[self.omega_index(i)] = 0.0

    def segment(self, t: float) -> Segment:
        return Segment(t, tuple(sorted(self.active)), tuple(sorted(self.closed)),
                       tuple(sorted(self.secondary & self.active)))

    def assemble(self):
        """Assembled subsystem plus the index map into the full state."""
        n, m = self.n, self.m
        nodes = sorted(self.active)
        sub, node_index, line_index = self.config.subsystem(nodes, sorted(self.closed))
        pos = {int(g): k for k, g in enumerate(node_index)}
        sec = [pos[i] for i in sorted(self.secondary) if i in pos]
        gains = self.gains.subset(node_index)
        blocks = [node_index, n + node_index, 2 * n + node_index, 3 * n + line_index]
        if sec:
            sys = assemble(sub, gains, SECONDARY, secondary_nodes=sec)
            blocks.append(3 * n + m + node_index)
        else:
            sys = assemble(sub, gains, PRIMARY_ONLY)
        return sys, np.concatenate(blocks).astype(int), node_index[sec] if sec else np.zeros(0, dtype=int)


def _initial_vector(config: MicrogridConfig, X0) -> np.ndarray:
    n, m = config.n, config.m
    if isinstance(X0, SystemState):
        X0 = X0 if X0.Omega is not None else X0.with_omega()
        x = X0.stack()
    else:
        x = np.asarray(X0, dtype=float).copy()
        if x.size == 3 * n + m:
            x = np.concatenate([x, np.zeros(n)])
    if x.size != 4 * n + m:
        raise ValueError(f"initial state has {x.size} entries; expected {3 * n + m} or {4 * n + m}")
    return x


def integrate(config: MicrogridConfig, gains: GainSet, X0, events: Sequence[ScenarioEvent] = (),
              t_end: float = 1.0, dt: float = DEFAULT_DT, *, active: Iterable[int] | None = None,
              closed_lines: Iterable[int] | None = None, secondary: Iterable[int] | None = None,
              record_every: int = 1, voltage_floor: float = 0.0) -> SimulationTrace:
    """Classic fourth-order Runge-Kutta integration with grid-aligned events.

    ``active``, ``closed_lines`` and ``secondary`` give the switching state at
    ``t = 0`` (defaults: everything plugged in and closed; secondary on for
    all DGUs when ``X0`` carries ``Omega``, else off). Events at the same time
    fire in list order before the step from that time. Every
    ``record_every``-th step is stored together with the final one.

    A PC voltage at or below ``voltage_floor`` ends the run with a
    ``voltage_collapse`` termination instead of raising.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if record_every < 1:
        raise ValueError("record_every must be at least 1")
    n, m = config.n, config.m
    has_omega = (isinstance(X0, SystemState) and X0.Omega is not None) or (
        not isinstance(X0, SystemState) and np.asarray(X0).size == 4 * n + m)
    x = _initial_vector(config, X0)
    if np.any(x[:n] <= 0):
        raise ValueError("initial PC voltages must be strictly positive")
    net = _Network(config, gains,
                   range(n) if active is None else active,
                   range(m) if closed_lines is None else closed_lines,
                   (range(n) if has_omega else ()) if secondary is None else secondary)

    n_steps = grid_index(t_end, dt)
    ordered = sorted(enumerate(events), key=lambda p: (p[1].time, p[0]))
    schedule: dict[int, list[ScenarioEvent]] = {}
    for _, ev in ordered:
        k = grid_index(ev.time, dt)
        if k > n_steps:
            raise ValueError(f"event at t = {ev.time} lies beyond t_end = {t_end}")
        schedule.setdefault(k, []).append(ev)

    times, rows, disp, bal = [], [], [], []
    fired, segments = [], []
    termination = Termination("completed")

    def record(k, sec_nodes):
        cfg = net.config
        d, b = sharing_metrics(x[n:2 * n], x[:n], cfg.I_s, cfg.V_ref, sec_nodes)
        times.append(k * dt)
        rows.append(x.copy())
        disp.append(d)
        bal.append(b)

    sys = idx = sec_nodes = None
    k = 0
    while True:
        if k in schedule or sys is None:
            for ev in schedule.get(k, ()):
                net.apply(ev, x)
                fired.append((k * dt, ev.kind))
            sys, idx, sec_nodes = net.assemble()
            segments.append(net.segment(k * dt))
            rhs = sys.rhs
        if k % record_every == 0 or k == n_steps:
            record(k, sec_nodes)
        if k == n_steps:
            break
        t = k * dt
        xs = x[idx]
        try:
            xs = rk4_step(rhs, xs, t, dt)
        except VoltageCollapseError as exc:
            node = int(net.segment(t).active[exc.node])
            termination = Termination("voltage_collapse", node, t)
            break
        x[idx] = xs
        k += 1
        V = x[:n]
        low = np.flatnonzero(V[list(net.active)] <= voltage_floor) if net.active else []
        if len(low) or not np.all(np.isfinite(xs)):
            act = sorted(net.active)
            node = int(act[low[0]]) if len(low) else int(act[0])
            termination = Termination("voltage_collapse", node, k * dt)
            record(k, sec_nodes)
            break

    return SimulationTrace(
        times=np.array(times),
        states=np.array(rows),
        n=n,
        m=m,
        rated_currents=config.I_s.copy(),
        sharing_dispersion=np.array(disp),
        balance_error=np.array(bal),
        events=fired,
        segments=segments,
        termination=termination,
        dt=dt,
        config=net.config,
    )


def field_scale(states: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(states))))


def detect_steady_state(trace: SimulationTrace, window: float, eps: float, scale: float | None = None,
                        t_from: float | None = None, t_to: float | None = None) -> float | None:
    """End of the first window over which the state derivative stays small.

    Derivatives are finite differences of consecutive samples measured in the
    infinity norm; "small" means at most ``eps * scale`` with ``scale``
    defaulting to the largest absolute state entry (at least 1). Only samples
    between ``t_from`` and ``t_to`` are considered. Returns ``None`` if no
    such window exists.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    t = np.asarray(trace.times, dtype=float)
    X = np.asarray(trace.states, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    lo = t[0] if t_from is None else t_from
    hi = t[-1] if t_to is None else t_to
    sel = np.flatnonzero((t >= lo) & (t <= hi))
    if sel.size < 2:
        return None
    t, X = t[sel], X[sel]
    if scale is None:
        scale = field_scale(X)
    rate = np.max(np.abs(np.diff(X, axis=0)), axis=1) / np.diff(t)
    quiet = rate <= eps * scale
    # quiet[j] covers the interval [t[j], t[j+1]]
    start = None
    for j, q in enumerate(quiet):
        if not q:
            start = None
            continue
        if start is None:
            start = t[j]
        if t[j + 1] - start >= window * (1 - 1e-12):
            return float(t[j + 1])
    return None
