"""Graph algebra for the electrical and communication networks.

Nodes are integer ids ``0..N-1``. Lines carry an arbitrary orientation
(source -> sink) which only fixes the sign convention of line currents.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

RANK_RTOL = 1e-9


class TopologyError(ValueError):
    """Raised for malformed or disconnected network graphs."""


@dataclass(frozen=True)
class LineParams:
    resistance: float
    inductance: float

    def __post_init__(self):
        if not self.resistance > 0:
            raise TopologyError(f"line resistance must be > 0, got {self.resistance}")
        if not self.inductance > 0:
            raise TopologyError(f"line inductance must be > 0, got {self.inductance}")


@dataclass(frozen=True)
class DguParams:
    R_t: float
    L_t: float
    C_t: float
    rated_current: float
    V_ref: float
    V_s: float = 80.0

    def __post_init__(self):
        for name in ("R_t", "L_t", "C_t", "rated_current", "V_ref", "V_s"):
            value = getattr(self, name)
            if not value > 0:
                raise TopologyError(f"DGU parameter {name} must be > 0, got {value}")


@dataclass(frozen=True)
class MicrogridTopology:
    n_dgus: int
    lines: tuple[tuple[int, int], ...]
    comm_weights: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple((int(a), int(b)) for a, b in self.lines))
        for l, (a, b) in enumerate(self.lines):
            _check_endpoint(a, self.n_dgus, l)
            _check_endpoint(b, self.n_dgus, l)
            if a == b:
                raise TopologyError(f"line {l} is a self-loop at node {a}")
        object.__setattr__(self, "comm_weights", normalize_comm_weights(self.comm_weights, self.n_dgus))

    @property
    def n_lines(self) -> int:
        return len(self.lines)


def _check_endpoint(node, n, line_index):
    if not 0 <= node < n:
        raise TopologyError(f"line {line_index} endpoint {node} outside 0..{n - 1}")


def normalize_comm_weights(weights, n: int) -> dict[tuple[int, int], float]:
    """Canonicalize a weight map to ``{(i, j): a_ij}`` with ``i < j``.

    Both orientations may be given but must agree; zero weights are dropped.
    """
    out: dict[tuple[int, int], float] = {}
    for (i, j), w in dict(weights).items():
        i, j = int(i), int(j)
        if i == j:
            raise TopologyError(f"communication self-loop at node {i}")
        if not (0 <= i < n and 0 <= j < n):
            raise TopologyError(f"communication link ({i}, {j}) outside 0..{n - 1}")
        w = float(w)
        if w < 0:
            raise TopologyError(f"communication weight a_{i}{j} = {w} is negative")
        key = (min(i, j), max(i, j))
        if key in out and out[key] != w:
            raise TopologyError(f"asymmetric communication weights on link {key}: {out[key]} vs {w}")
        out[key] = w
    return {k: w for k, w in sorted(out.items()) if w > 0}


def incidence_matrix(n_nodes: int, lines: Sequence[tuple[int, int]]) -> np.ndarray:
    """N x M incidence matrix, +1 at the source and -1 at the sink of each line."""
    B = np.zeros((n_nodes, len(lines)))
    for l, (a, b) in enumerate(lines):
        _check_endpoint(a, n_nodes, l)
        _check_endpoint(b, n_nodes, l)
        if a == b:
            raise TopologyError(f"line {l} is a self-loop at node {a}")
        B[a, l] = 1.0
        B[b, l] = -1.0
    return B


def electrical_laplacian(B: np.ndarray, resistances) -> np.ndarray:
    """Weighted Laplacian ``B R^-1 B^T``.

    ``resistances`` may be the diagonal vector or the diagonal matrix itself.
    """
    R = np.asarray(resistances, dtype=float)
    if R.ndim == 2:
        if np.any(R != np.diag(np.diag(R))):
            raise TopologyError("resistance matrix must be diagonal")
        R = np.diag(R)
    if R.shape != (B.shape[1],):
        raise TopologyError(f"expected {B.shape[1]} resistances, got {R.shape}")
    if np.any(R <= 0):
        raise TopologyError("line resistances must be strictly positive")
    return (B / R) @ B.T


def comm_laplacian(comm_weights, n_nodes: int, *, require_connected: bool = True,
                   nodes: Iterable[int] | None = None) -> np.ndarray:
    """Laplacian of the weighted communication graph.

    With ``nodes`` given, links touching any other node are ignored and the
    connectivity requirement only covers the listed nodes.
    """
    weights = normalize_comm_weights(comm_weights, n_nodes)
    keep = set(range(n_nodes)) if nodes is None else {int(i) for i in nodes}
    Lc = np.zeros((n_nodes, n_nodes))
    for (i, j), w in weights.items():
        if i in keep and j in keep:
            Lc[i, j] -= w
            Lc[j, i] -= w
            Lc[i, i] += w
            Lc[j, j] += w
    if require_connected and len(keep) > 1:
        edges = [(i, j) for (i, j) in weights if i in keep and j in keep]
        if not is_connected(sorted(keep), edges):
            raise TopologyError("communication graph disconnected")
    return Lc


def sharing_projector(rated_currents) -> np.ndarray:
    """Rating-weighted centering matrix ``[s] - [s] 1 1^T [s] / (1^T s)``."""
    s = np.asarray(rated_currents, dtype=float)
    if np.any(s <= 0):
        raise TopologyError("rated currents must be strictly positive")
    return np.diag(s) - np.outer(s, s) / s.sum()


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def components(nodes: Iterable[int], edges: Iterable[tuple[int, int]]) -> list[list[int]]:
    """Connected components of the graph induced on ``nodes``."""
    nodes = list(nodes)
    uf = _UnionFind(nodes)
    node_set = set(nodes)
    for a, b in edges:
        if a in node_set and b in node_set:
            uf.union(a, b)
    groups: dict[int, list[int]] = {}
    for x in nodes:
        groups.setdefault(uf.find(x), []).append(x)
    return sorted(groups.values())


def is_connected(nodes: Iterable[int], edges: Iterable[tuple[int, int]]) -> bool:
    nodes = list(nodes)
    if len(nodes) <= 1:
        return True
    return len(components(nodes, edges)) == 1


def numerical_rank(A: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(np.atleast_2d(A), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def laplacian_pinv(L: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric PSD matrix by eigendecomposition."""
    w, U = np.linalg.eigh(L)
    scale = np.max(np.abs(w)) if w.size else 0.0
    keep = np.abs(w) > rtol * scale if scale > 0 else np.zeros_like(w, dtype=bool)
    return (U[:, keep] / w[keep]) @ U[:, keep].T
