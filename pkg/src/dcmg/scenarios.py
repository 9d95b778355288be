"""Scripted scenarios: the six-DGU plug-and-play timeline and a collapse run."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import Line, MicrogridConfig
from .control import GainSet
from .defaults import dgu
from .dynamics import SystemState
from .equilibrium import ExistenceCertificate, certificate, primary_only_equilibrium
from .loads import ZieLoad
from .simulator import (DEFAULT_DT, ScenarioEvent, SimulationTrace, detect_steady_state, integrate,
                        sharing_metrics)

SHARING_RTOL = 1e-3
BALANCE_RTOL = 1e-3
PRIMARY_VTOL = 1e-4
STEADY_WINDOW = 0.2
STEADY_EPS = 1e-6


class ScenarioError(AssertionError):
    pass


@dataclass(frozen=True)
class PhaseReport:
    """Objective metrics at the end of one phase.

    ``sharing`` is the per-unit current spread over the connected
    secondary-enabled DGUs divided by their mean per-unit current;
    ``balance`` is the balancing error divided by ``sum(I_s) * mean(V_ref)``
    over the same DGUs. ``primary_error`` is the largest ``|V - V_ref|`` over
    DGUs running on the primary layer alone.
    """
    name: str
    start: float
    end: float
    steady_time: float | None
    sharing: float
    balance: float
    primary_error: float
    min_voltage: float
    secondary_nodes: tuple[int, ...]

    @property
    def ok(self) -> bool:
        metrics_ok = all(np.isnan(x) or x <= tol for x, tol in
                         ((self.sharing, SHARING_RTOL), (self.balance, BALANCE_RTOL),
                          (self.primary_error, PRIMARY_VTOL)))
        return self.steady_time is not None and metrics_ok and self.min_voltage > 0


def phase_report(trace: SimulationTrace, name: str, start: float, end: float,
                 window: float = STEADY_WINDOW, eps: float = STEADY_EPS) -> PhaseReport:
    """Metrics at the last sample strictly before ``end``.

    Event times are matched with half-step slack since grid times are
    ``k * dt`` in floating point.
    """
    half = 0.5 * trace.dt
    idx = trace.window(start - half, end - half)
    seg = trace.segment_at(start + half)
    k = idx[-1]
    V_ref = trace.config.V_ref
    s = trace.rated_currents
    sec = np.array(seg.secondary, dtype=int)
    prim = np.array([i for i in seg.active if i not in seg.secondary], dtype=int)
    sharing = balance = primary_error = float("nan")
    if sec.size:
        disp, bal = sharing_metrics(trace.I_t[k], trace.V[k], s, V_ref, sec)
        pu = trace.I_t[k, sec] / s[sec]
        sharing = disp / max(abs(float(np.mean(pu))), 1e-12)
        balance = bal / (float(s[sec].sum()) * float(np.mean(V_ref[sec])))
    if prim.size:
        primary_error = float(np.max(np.abs(trace.V[k, prim] - V_ref[prim])))
    act = np.array(seg.active, dtype=int)
    return PhaseReport(
        name=name,
        start=start,
        end=end,
        steady_time=detect_steady_state(trace, window, eps, t_from=start - half, t_to=end - half),
        sharing=sharing,
        balance=balance,
        primary_error=primary_error,
        min_voltage=float(np.min(trace.V[idx][:, act])),
        secondary_nodes=seg.secondary,
    )


# -- six-DGU timeline -------------------------------------------------------

SIX_DGU_PHASES = (
    ("initialization", 0.0, 1.5),
    ("connection", 1.5, 6.0),
    ("zip_load_change", 6.0, 10.0),
    ("plug_in", 10.0, 17.0),
    ("zie_load_change", 17.0, 22.0),
    ("unplug", 22.0, 27.0),
)


def _exponent_change(load: ZieLoad, r: float, V_ref: float) -> ZieLoad:
    """Change the exponent keeping the power drawn at ``V_ref`` unchanged."""
    power = load.P_star * V_ref ** load.r
    return replace(load, r=r, P_star=power / V_ref ** r)


def six_dgu_events(config6: MicrogridConfig) -> list[ScenarioEvent]:
    """Events of the six-DGU timeline (0-based ids: DGU k is node k - 1, l_k is line k - 1)."""
    loads = list(config6.loads)
    V_ref = config6.V_ref
    events = [ScenarioEvent(1.5, "close_line", {"line": l}) for l in (0, 1, 3, 4, 5)]
    events.append(ScenarioEvent(1.5, "enable_secondary", {"nodes": [0, 1, 2, 3, 4]}))
    for i, dY, dP in ((0, 0.10, 70.0), (3, 0.10, 70.0)):
        loads[i] = replace(loads[i], Y=loads[i].Y + dY, P_star=loads[i].P_star + dP)
        events.append(ScenarioEvent(6.0, "set_load", {"node": i, "load": loads[i]}))
    events.append(ScenarioEvent(10.0, "plug_in_dgu", {"node": 5, "lines": [2, 6], "secondary": True}))
    for i, r in ((1, 0.6), (2, 0.55), (4, 0.4)):
        loads[i] = _exponent_change(loads[i], r, V_ref[i])
        events.append(ScenarioEvent(10.0, "set_load", {"node": i, "load": loads[i]}))
    for i, r in ((2, 1.45), (5, 1.35)):
        loads[i] = _exponent_change(loads[i], r, V_ref[i])
        events.append(ScenarioEvent(17.0, "set_load", {"node": i, "load": loads[i]}))
    events.append(ScenarioEvent(22.0, "unplug_dgu", {"node": 4}))
    return events


def _isolated_start(config: MicrogridConfig, gains: GainSet, sag: float) -> SystemState:
    """Each DGU at its own primary-only equilibrium with voltages sagged by ``sag``."""
    sub, _, _ = config.subsystem(range(config.n), lines=[])
    X = primary_only_equilibrium(sub, gains)
    V = X.V * (1.0 - sag)
    return SystemState(V, X.I_t, X.v, np.zeros(config.m), np.zeros(config.n))


@dataclass
class ScenarioResult:
    trace: SimulationTrace
    phases: list[PhaseReport] = field(default_factory=list)
    certificate: ExistenceCertificate | None = None

    @property
    def ok(self) -> bool:
        return not self.trace.termination.collapsed and all(p.ok for p in self.phases)

    def failures(self) -> list[str]:
        out = [f"{p.name}: steady={p.steady_time} sharing={p.sharing:.3g} balance={p.balance:.3g} "
               f"primary={p.primary_error:.3g}" for p in self.phases if not p.ok]
        if self.trace.termination.collapsed:
            out.append(f"voltage collapse at node {self.trace.termination.node}")
        return out


def run_paper_scenario(config6: MicrogridConfig, gains: GainSet, dt: float = DEFAULT_DT,
                       record_every: int = 100, check: bool = True, sag: float = 0.05) -> ScenarioResult:
    """Six-phase plug-and-play timeline on the six-DGU layout.

    All lines start open with the secondary layer off and DGU 6 unplugged.
    With ``check`` set, a phase that misses its steady-state objectives
    raises :class:`ScenarioError`.
    """
    if config6.n != 6 or config6.m != 7:
        raise ValueError("the six-DGU timeline needs the six-DGU, seven-line layout")
    X0 = _isolated_start(config6, gains, sag)
    trace = integrate(config6, gains, X0, six_dgu_events(config6), t_end=SIX_DGU_PHASES[-1][2], dt=dt,
                      active=range(5), closed_lines=(), secondary=(), record_every=record_every)
    phases = [phase_report(trace, name, a, b) for name, a, b in SIX_DGU_PHASES if a < trace.times[-1]]
    result = ScenarioResult(trace, phases)
    if check and not result.ok:
        raise ScenarioError("; ".join(result.failures()))
    return result


# -- voltage collapse -------------------------------------------------------

def collapse_config(comm_weight: float = 50.0) -> MicrogridConfig:
    """Three DGUs in a chain feeding a heavy constant-power load at the far end.

    Lines are 1 mH cables so that resistance scaling keeps the line dynamics
    within reach of the default step.
    """
    dgus = tuple(dgu(48.0, 10.0) for _ in range(3))
    loads = (ZieLoad(Y=0.2), ZieLoad(Y=0.2), ZieLoad(Y=0.25, P_star=400.0, r=0.0))
    lines = (Line(0, 1, 0.1, 1e-3), Line(1, 2, 0.1, 1e-3))
    return MicrogridConfig(dgus, loads, lines, {(0, 1): comm_weight, (1, 2): comm_weight})


def run_collapse_scenario(config: MicrogridConfig, gains: GainSet, resistance_scale: float,
                          t_end: float = 3.0, dt: float = DEFAULT_DT, record_every: int = 100) -> ScenarioResult:
    """Scale line resistances, then switch on secondary control from the primary-only steady state.

    The certificate of the scaled network is attached to the result.
    """
    scaled = config.scale_line_resistances(resistance_scale)
    cert = certificate(scaled)
    X0 = primary_only_equilibrium(scaled, gains).with_omega()
    trace = integrate(scaled, gains, X0, t_end=t_end, dt=dt, record_every=record_every)
    return ScenarioResult(trace, [], cert)


def collapse_scale(config: MicrogridConfig, start: float = 1.0, factor: float = 1.25, limit: float = 1e4) -> float:
    """Smallest ``start * factor**k`` whose scaled network has ``Delta >= 1``."""
    scale = start
    while scale <= limit:
        if certificate(config.scale_line_resistances(scale)).Delta >= 1.0:
            return scale
        scale *= factor
    raise ValueError("no resistance scale up to the limit makes the certificate infeasible")
