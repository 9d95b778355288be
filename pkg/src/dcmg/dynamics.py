"""Closed-loop state-space model ``dX/dt = A X + b(V)``.

State ordering is ``X = (V, I_t, v, I, Omega)``: PC voltages, filter currents,
PI integrators, line currents and consensus integrators. In primary-only mode
the ``Omega`` block is dropped.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .config import MicrogridConfig
from .control import GainSet
from .loads import VoltageDomainError
from .network import TopologyError

SECONDARY = "secondary"
PRIMARY_ONLY = "primary_only"


class VoltageCollapseError(VoltageDomainError):
    """A PC voltage reached zero during evaluation of the vector field."""

    def __init__(self, node, time=None, value=None):
        when = "" if time is None else f" at t = {time:.6g} s"
        super().__init__(f"voltage collapse at node {node}{when} (V = {value})", node)
        self.time = time
        self.value = value


@dataclass
class SystemState:
    V: np.ndarray
    I_t: np.ndarray
    v: np.ndarray
    I: np.ndarray
    Omega: np.ndarray | None = None

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        self.I_t = np.asarray(self.I_t, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.I = np.asarray(self.I, dtype=float).reshape(-1)
        if self.Omega is not None:
            self.Omega = np.asarray(self.Omega, dtype=float)
        n = self.V.size
        if self.I_t.size != n or self.v.size != n or (self.Omega is not None and self.Omega.size != n):
            raise ValueError("state blocks V, I_t, v, Omega must share length N")

    @property
    def n(self):
        return self.V.size

    @property
    def m(self):
        return self.I.size

    def stack(self) -> np.ndarray:
        parts = [self.V, self.I_t, self.v, self.I]
        if self.Omega is not None:
            parts.append(self.Omega)
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, x, n: int, m: int, secondary: bool | None = None) -> "SystemState":
        x = np.asarray(x, dtype=float)
        if secondary is None:
            secondary = x.size == 4 * n + m
        expected = (4 if secondary else 3) * n + m
        if x.size != expected:
            raise ValueError(f"state vector has {x.size} entries, expected {expected}")
        V, I_t, v = x[:n], x[n:2 * n], x[2 * n:3 * n]
        I = x[3 * n:3 * n + m]
        Omega = x[3 * n + m:] if secondary else None
        return cls(V.copy(), I_t.copy(), v.copy(), I.copy(), None if Omega is None else Omega.copy())

    def primary_part(self) -> "SystemState":
        return SystemState(self.V, self.I_t, self.v, self.I, None)

    def with_omega(self, Omega=None) -> "SystemState":
        return SystemState(self.V, self.I_t, self.v, self.I, np.zeros(self.n) if Omega is None else Omega)


class AssembledSystem:
    """Dense system matrix plus the voltage-dependent forcing term.

    Immutable after construction; :meth:`rhs` works on flat state vectors and
    is what the integrator calls.
    """

    def __init__(self, config: MicrogridConfig, gains: GainSet, mode: str, A: np.ndarray, Lc: np.ndarray,
                 secondary_nodes: tuple[int, ...]):
        self.config = config
        self.gains = gains
        self.mode = mode
        self.A = A
        self.Lc = Lc
        self.secondary_nodes = secondary_nodes
        self.n, self.m = config.n, config.m
        self.dim = A.shape[0]
        self._V_rows = slice(0, self.n)
        self._C_inv = 1.0 / config.C_t
        self._I_bar = config.I_bar.copy()
        self._e_idx = np.flatnonzero(config.P_star != 0)
        # full-length E-load terms; zero coefficients where there is no power term
        self._e_exp = config.r - 1.0
        self._e_coef = self._C_inv * config.P_star
        self._has_e = bool(self._e_idx.size)
        self._const = np.zeros(self.dim)
        self._const[:self.n] = -self._C_inv * self._I_bar
        self._const[2 * self.n:3 * self.n] = config.V_ref
        for arr in (self.A, self.Lc, self._const):
            arr.setflags(write=False)

    @property
    def secondary(self) -> bool:
        return self.mode == SECONDARY

    def check_voltage(self, V, t=None):
        if not V.min() > 0:
            node = int(np.flatnonzero(~(V > 0))[0])
            raise VoltageCollapseError(node, t, float(V[node]))

    def b_of_V(self, V, t=None) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        self.check_voltage(V, t)
        b = self._const.copy()
        if self._has_e:
            b[:self.n] -= self._e_coef * np.power(V, self._e_exp)
        return b

    def rhs(self, x: np.ndarray, t=None) -> np.ndarray:
        V = x[:self.n]
        self.check_voltage(V, t)
        out = self.A @ x
        out += self._const
        if self._has_e:
            out[:self.n] -= self._e_coef * np.power(V, self._e_exp)
        return out

    def jacobian_matrix(self, x: np.ndarray) -> np.ndarray:
        V = np.asarray(x[:self.n], dtype=float)
        self.check_voltage(V)
        J = np.array(self.A)
        if self._has_e:
            d = -self._e_coef * self._e_exp * np.power(V, self._e_exp - 1.0)
            J[np.arange(self.n), np.arange(self.n)] += d
        return J

    def state(self, x) -> SystemState:
        return SystemState.from_vector(x, self.n, self.m, self.secondary)

    def converter_command(self, X: SystemState) -> np.ndarray:
        """Buck command ``V_t``; compare against ``V_s`` to spot duty-cycle saturation."""
        g = self.gains
        omega = np.zeros(self.n) if X.Omega is None else (self.Lc @ X.Omega) / self.config.I_s
        return g.k1 * X.V + g.k2 * X.I_t + g.k3 * X.v + g.k4 * omega

    def saturated_nodes(self, X: SystemState) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.converter_command(X) > self.config.V_s)]


def assemble(config: MicrogridConfig, gains: GainSet, mode: str = SECONDARY,
             secondary_nodes: Iterable[int] | None = None) -> AssembledSystem:
    """Build the closed-loop system.

    In ``secondary`` mode the communication Laplacian is restricted to
    ``secondary_nodes`` (all nodes by default); nodes outside that set have
    ``omega = 0`` and a frozen ``Omega``.
    """
    if mode not in (SECONDARY, PRIMARY_ONLY):
        raise ValueError(f"unknown mode {mode!r}")
    n, m = config.n, config.m
    if len(gains) != n:
        raise ValueError(f"gain set has {len(gains)} entries for {n} DGUs")
    alpha, beta, gamma, delta = gains.abgd
    C_inv = 1.0 / config.C_t
    s_inv = 1.0 / config.I_s
    B = config.B
    secondary = mode == SECONDARY
    dim = (4 if secondary else 3) * n + m
    A = np.zeros((dim, dim))
    iV, iIt, iv, iI = (slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n), slice(3 * n, 3 * n + m))

    A[iV, iV] = np.diag(-C_inv * config.Y)
    A[iV, iIt] = np.diag(C_inv)
    A[iV, iI] = -C_inv[:, None] * B
    A[iIt, iV] = np.diag(alpha)
    A[iIt, iIt] = np.diag(beta)
    A[iIt, iv] = np.diag(gamma)
    A[iv, iV] = -np.eye(n)
    A[iI, iV] = B.T / config.L_lines[:, None] if m else np.zeros((0, n))
    A[iI, iI] = np.diag(-config.R_lines / config.L_lines) if m else np.zeros((0, 0))

    if secondary:
        nodes = tuple(range(n)) if secondary_nodes is None else tuple(sorted(int(i) for i in secondary_nodes))
        try:
            Lc = config.comm_laplacian(nodes=nodes, require_connected=True)
        except TopologyError as exc:
            raise TopologyError(f"secondary mode needs a connected communication graph: {exc}") from None
        iO = slice(3 * n + m, 4 * n + m)
        A[iIt, iO] = (delta * s_inv)[:, None] * Lc
        A[iv, iO] = -s_inv[:, None] * Lc
        A[iO, iIt] = Lc * s_inv[None, :]
    else:
        nodes = ()
        Lc = np.zeros((n, n))
    return AssembledSystem(config, gains, mode, A, Lc, nodes)


def _flat(sys: AssembledSystem, X):
    x = X.stack() if isinstance(X, SystemState) else np.asarray(X, dtype=float)
    if x.size != sys.dim:
        raise ValueError(f"state has {x.size} entries, system expects {sys.dim}")
    return x


def vector_field(sys: AssembledSystem, X, t=None):
    """Evaluate ``A X + b(V)``; returns the same type as ``X``."""
    dx = sys.rhs(_flat(sys, X), t)
    return sys.state(dx) if isinstance(X, SystemState) else dx


def jacobian(sys: AssembledSystem, X) -> np.ndarray:
    return sys.jacobian_matrix(_flat(sys, X))
