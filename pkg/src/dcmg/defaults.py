"""Toolkit default parameters and reference topologies.

Filter values (R_t = 0.2 ohm, L_t = 1.8 mH, C_t = 2.2 mF), line values
(50-100 mohm, 2-3 uH) and the 80 V source are toolkit defaults, not measured
data. References lie between 45 V and 50 V. Loads are sized so that every
constant-power or low-exponent term satisfies ``(1 - r) P V^r < Y V^2``.

Node ids are 0-based: "DGU 1" of the six-DGU layout is node 0.
"""
from __future__ import annotations

import numpy as np

from .config import Line, MicrogridConfig
from .control import GainSet, sample_stabilizing_gains
from .loads import ZieLoad
from .network import DguParams

R_T = 0.2
L_T = 1.8e-3
C_T = 2.2e-3
V_S = 80.0

# six-DGU layout: lines l1..l7 as (source, sink)
SIX_DGU_LINES = ((0, 1), (0, 2), (0, 5), (1, 3), (2, 3), (3, 4), (4, 5))
SIX_DGU_COMM = ((0, 3), (0, 2), (1, 2), (2, 3), (2, 4), (2, 5))
SIX_DGU_V_REF = (48.0, 47.0, 49.0, 46.5, 50.0, 48.5)
SIX_DGU_RATINGS = (10.0, 8.0, 12.0, 9.0, 11.0, 10.0)
SIX_DGU_LINE_R = (0.05, 0.07, 0.06, 0.08, 0.1, 0.09, 0.065)
SIX_DGU_LINE_L = (2.0e-6, 2.5e-6, 2.2e-6, 3.0e-6, 2.4e-6, 2.8e-6, 2.1e-6)
SIX_DGU_LOADS = (
    ZieLoad(Y=0.30, I_bar=1.0, P_star=150.0, r=0.0),
    ZieLoad(Y=0.25, I_bar=0.5, P_star=120.0, r=0.0),
    ZieLoad(Y=0.35, I_bar=0.0, P_star=200.0, r=0.0),
    ZieLoad(Y=0.28, I_bar=1.5, P_star=100.0, r=0.0),
    ZieLoad(Y=0.32, I_bar=0.8, P_star=180.0, r=0.0),
    ZieLoad(Y=0.30, I_bar=0.5, P_star=160.0 / 48.5 ** 0.65, r=0.65),
)
COMM_WEIGHT = 50.0


def default_gains(config: MicrogridConfig, margin: float = 0.5) -> GainSet:
    return sample_stabilizing_gains(config.R_t, config.L_t, margin)


def dgu(V_ref: float, rated_current: float, **overrides) -> DguParams:
    params = dict(R_t=R_T, L_t=L_T, C_t=C_T, rated_current=rated_current, V_ref=V_ref, V_s=V_S)
    params.update(overrides)
    return DguParams(**params)


def six_dgu_config(comm_weight: float = COMM_WEIGHT) -> MicrogridConfig:
    dgus = tuple(dgu(v, s) for v, s in zip(SIX_DGU_V_REF, SIX_DGU_RATINGS))
    lines = tuple(Line(a, b, R, L) for (a, b), R, L in zip(SIX_DGU_LINES, SIX_DGU_LINE_R, SIX_DGU_LINE_L))
    comm = {edge: comm_weight for edge in SIX_DGU_COMM}
    return MicrogridConfig(dgus, SIX_DGU_LOADS, lines, comm)


def ring_config(n: int = 4, comm_weight: float = COMM_WEIGHT) -> MicrogridConfig:
    """Ring of ``n`` DGUs with ZIP loads; communication follows the ring."""
    V_refs = np.linspace(46.0, 49.5, n)
    ratings = 8.0 + 4.0 * (np.arange(n) % 3) / 2.0
    dgus = tuple(dgu(float(v), float(s)) for v, s in zip(V_refs, ratings))
    loads = tuple(ZieLoad(Y=0.25 + 0.03 * (i % 4), I_bar=0.5 * (i % 3), P_star=80.0 + 40.0 * (i % 3), r=0.0)
                  for i in range(n))
    lines = tuple(Line(i, (i + 1) % n, 0.05 + 0.05 * ((i * 7) % 5) / 4.0, 2.0e-6 + 1.0e-6 * ((i * 3) % 4) / 3.0)
                  for i in range(n))
    comm = {(i, (i + 1) % n): comm_weight for i in range(n)}
    return MicrogridConfig(dgus, loads, lines, comm)


def random_config(rng: np.random.Generator, n: int, *, zip_only: bool = True, p_scale: float = 1.0,
                  extra_lines: int = 1, comm_weight: float | None = None) -> MicrogridConfig:
    """Random connected microgrid: a random spanning tree plus a few chords.

    Electrical and communication graphs are drawn independently.
    """
    def tree_plus(k):
        order = rng.permutation(n)
        edges = set()
        for pos in range(1, n):
            a, b = int(order[pos]), int(order[rng.integers(0, pos)])
            edges.add((a, b))
        for _ in range(k):
            a, b = (int(x) for x in rng.choice(n, size=2, replace=False))
            if (a, b) not in edges and (b, a) not in edges:
                edges.add((a, b))
        return sorted(edges)

    dgus = tuple(dgu(float(rng.uniform(45, 50)), float(rng.uniform(5, 15)),
                     R_t=float(rng.uniform(0.1, 0.3)), L_t=float(rng.uniform(1.5e-3, 2.5e-3)),
                     C_t=float(rng.uniform(1.8e-3, 2.6e-3))) for _ in range(n))
    loads = []
    for _ in range(n):
        Y = float(rng.uniform(0.1, 0.4))
        r = 0.0 if zip_only else float(rng.choice([0.0, rng.uniform(0.2, 0.9), rng.uniform(1.1, 2.0)]))
        P = float(rng.uniform(0.0, 0.5)) * Y * 45.0 ** 2 * p_scale / 45.0 ** r
        loads.append(ZieLoad(Y=Y, I_bar=float(rng.uniform(0, 2)), P_star=P, r=r))
    lines = tuple(Line(a, b, float(rng.uniform(0.05, 0.1)), float(rng.uniform(2e-6, 3e-6)))
                  for a, b in tree_plus(extra_lines if n > 2 else 0))
    w = comm_weight
    comm = {e: (float(rng.uniform(5, 30)) if w is None else w) for e in tree_plus(extra_lines if n > 2 else 0)}
    return MicrogridConfig(dgus, tuple(loads), lines, comm)


def two_node_config(comm_weight: float = COMM_WEIGHT) -> MicrogridConfig:
    """Two DGUs joined by one line; the worked example shipped with the CLI docs."""
    dgus = (dgu(48.0, 10.0), dgu(47.0, 8.0))
    loads = (ZieLoad(Y=0.3, I_bar=1.0, P_star=150.0, r=0.0), ZieLoad(Y=0.25, I_bar=0.5, P_star=120.0, r=0.0))
    return MicrogridConfig(dgus, loads, (Line(0, 1, 0.05, 2.0e-6),), {(0, 1): comm_weight})
