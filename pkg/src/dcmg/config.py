"""Static description of a DC microgrid: DGUs, loads, lines, communication."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .loads import ZieLoad
from .network import (
    DguParams,
    LineParams,
    MicrogridTopology,
    TopologyError,
    comm_laplacian,
    components,
    electrical_laplacian,
    incidence_matrix,
    normalize_comm_weights,
)


@dataclass(frozen=True)
class Line:
    source: int
    sink: int
    resistance: float
    inductance: float

    def __post_init__(self):
        LineParams(self.resistance, self.inductance)

    @property
    def params(self) -> LineParams:
        return LineParams(self.resistance, self.inductance)


@dataclass(frozen=True)
class MicrogridConfig:
    """DGUs with their local loads, power lines and communication links.

    Every listed line is treated as in service; switching is handled by the
    simulator through :meth:`subsystem`.
    """
    dgus: tuple[DguParams, ...]
    loads: tuple[ZieLoad, ...]
    lines: tuple[Line, ...] = ()
    comm_weights: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "dgus", tuple(self.dgus))
        object.__setattr__(self, "loads", tuple(self.loads))
        object.__setattr__(self, "lines", tuple(self.lines))
        if len(self.loads) != len(self.dgus):
            raise TopologyError(f"{len(self.dgus)} DGUs but {len(self.loads)} loads")
        if not self.dgus:
            raise TopologyError("a microgrid needs at least one DGU")
        # validates endpoints and self-loops
        MicrogridTopology(self.n, tuple((l.source, l.sink) for l in self.lines))
        object.__setattr__(self, "comm_weights", normalize_comm_weights(self.comm_weights, self.n))

    @property
    def n(self) -> int:
        return len(self.dgus)

    @property
    def m(self) -> int:
        return len(self.lines)

    @property
    def topology(self) -> MicrogridTopology:
        return MicrogridTopology(self.n, tuple((l.source, l.sink) for l in self.lines), self.comm_weights)

    def _vec(self, items, attr):
        return np.array([getattr(x, attr) for x in items], dtype=float)

    @cached_property
    def R_t(self):
        return self._vec(self.dgus, "R_t")

    @cached_property
    def L_t(self):
        return self._vec(self.dgus, "L_t")

    @cached_property
    def C_t(self):
        return self._vec(self.dgus, "C_t")

    @cached_property
    def I_s(self):
        """Rated currents."""
        return self._vec(self.dgus, "rated_current")

    @cached_property
    def V_ref(self):
        return self._vec(self.dgus, "V_ref")

    @cached_property
    def V_s(self):
        return self._vec(self.dgus, "V_s")

    @cached_property
    def Y(self):
        return self._vec(self.loads, "Y")

    @cached_property
    def I_bar(self):
        return self._vec(self.loads, "I_bar")

    @cached_property
    def P_star(self):
        return self._vec(self.loads, "P_star")

    @cached_property
    def r(self):
        return self._vec(self.loads, "r")

    @cached_property
    def R_lines(self):
        return self._vec(self.lines, "resistance")

    @cached_property
    def L_lines(self):
        return self._vec(self.lines, "inductance")

    @cached_property
    def B(self):
        return incidence_matrix(self.n, [(l.source, l.sink) for l in self.lines])

    @cached_property
    def L_e(self):
        if self.m == 0:
            return np.zeros((self.n, self.n))
        return electrical_laplacian(self.B, self.R_lines)

    def comm_laplacian(self, nodes=None, require_connected=True):
        return comm_laplacian(self.comm_weights, self.n, nodes=nodes, require_connected=require_connected)

    def electrical_components(self) -> list[list[int]]:
        return components(range(self.n), [(l.source, l.sink) for l in self.lines])

    def electrically_connected(self) -> bool:
        return len(self.electrical_components()) == 1

    def comm_connected(self) -> bool:
        return len(components(range(self.n), self.comm_weights)) == 1

    def is_zip(self) -> bool:
        return all(load.is_zip for load in self.loads)

    # -- derived configs -------------------------------------------------
    def with_loads(self, loads: Sequence[ZieLoad]) -> "MicrogridConfig":
        return replace(self, loads=tuple(loads))

    def with_load(self, i: int, load: ZieLoad) -> "MicrogridConfig":
        loads = list(self.loads)
        loads[i] = load
        return self.with_loads(loads)

    def with_comm_weights(self, weights) -> "MicrogridConfig":
        return replace(self, comm_weights=weights)

    def scale_line_resistances(self, factor: float) -> "MicrogridConfig":
        return replace(self, lines=tuple(replace(l, resistance=l.resistance * factor) for l in self.lines))

    def subsystem(self, nodes: Sequence[int], lines: Sequence[int] | None = None):
        """Restrict to ``nodes`` (and the listed line indices).

        Returns ``(config, node_index, line_index)``; the sub-config numbers its
        nodes ``0..len(nodes)-1`` in the order of ``node_index``. Lines with an
        endpoint outside ``nodes`` are dropped.
        """
        node_index = np.array(sorted(int(i) for i in nodes), dtype=int)
        pos = {int(g): k for k, g in enumerate(node_index)}
        chosen = range(self.m) if lines is None else sorted(int(l) for l in lines)
        line_index, sub_lines = [], []
        for l in chosen:
            ln = self.lines[l]
            if ln.source in pos and ln.sink in pos:
                line_index.append(l)
                sub_lines.append(replace(ln, source=pos[ln.source], sink=pos[ln.sink]))
        comm = {(pos[i], pos[j]): w for (i, j), w in self.comm_weights.items() if i in pos and j in pos}
        sub = MicrogridConfig(
            dgus=tuple(self.dgus[i] for i in node_index),
            loads=tuple(self.loads[i] for i in node_index),
            lines=tuple(sub_lines),
            comm_weights=comm,
        )
        return sub, node_index, np.array(line_index, dtype=int)
