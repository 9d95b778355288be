"""Steady states of the closed-loop microgrid.

Under secondary control the equilibrium voltages solve a DC power flow that
is constrained to the weighted voltage-balancing hyperplane::

    L_e V + L_t [I_s]^-1 (I_L(V)) = 0,      I_s^T (V - V_ref) = 0

with ``L_t`` the rating-weighted centering matrix. For constant-power loads
(``r = 0``) this is a fixed point ``x = -(1/4) P_cri [P*] r(x)`` in relative
deviations ``x = V / V* - 1`` that contracts when ``Delta < 1``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .config import MicrogridConfig
from .control import GainSet
from .dynamics import SystemState
from .loads import load_currents
from .network import laplacian_pinv, numerical_rank, sharing_projector


class EquilibriumError(RuntimeError):
    pass


class ConvergenceError(EquilibriumError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


# -- primary-only -----------------------------------------------------------

def primary_only_equilibrium(config: MicrogridConfig, gains: GainSet) -> SystemState:
    """Unique equilibrium with the secondary layer off: every PC sits at ``V_ref``."""
    V = config.V_ref
    if np.any(V <= 0):
        raise EquilibriumError("reference voltages must be strictly positive")
    alpha, beta, gamma, _ = gains.abgd
    I = (config.B.T @ V) / config.R_lines if config.m else np.zeros(0)
    I_t = config.B @ I + load_currents(V, config.Y, config.I_bar, config.P_star, config.r)
    v = -(alpha * V + beta * I_t) / gamma
    return SystemState(V.copy(), I_t, v, I)


# -- constrained power flow -------------------------------------------------

def pseudo_inverse_tall(L_tilde: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Left inverse ``(L^T L)^-1 L^T`` of a full-column-rank tall matrix."""
    L_tilde = np.atleast_2d(np.asarray(L_tilde, dtype=float))
    rows, cols = L_tilde.shape
    if rows < cols or numerical_rank(L_tilde, rtol) < cols:
        raise EquilibriumError("constrained power-flow map singular")
    return np.linalg.solve(L_tilde.T @ L_tilde, L_tilde.T)


@dataclass(frozen=True)
class PowerFlowMatrices:
    L_p: np.ndarray
    L_tilde: np.ndarray
    I_tilde: np.ndarray
    Lt_tilde: np.ndarray
    L_t: np.ndarray


def power_flow_matrices(config: MicrogridConfig) -> PowerFlowMatrices:
    s = config.I_s
    L_t = sharing_projector(s)
    Lts = L_t / s[None, :]
    L_p = config.L_e + Lts * config.Y[None, :]
    L_tilde = np.vstack([L_p, s[None, :]])
    I_tilde = np.concatenate([-Lts @ config.I_bar, [s @ config.V_ref]])
    Lt_tilde = np.vstack([Lts, np.zeros((1, config.n))])
    return PowerFlowMatrices(L_p, L_tilde, I_tilde, Lt_tilde, L_t)


def balance_residuals(config: MicrogridConfig, V) -> tuple[np.ndarray, float]:
    """Residuals of the sharing-constrained power flow and of voltage balancing."""
    V = np.asarray(V, dtype=float)
    s = config.I_s
    L_t = sharing_projector(s)
    I_L = load_currents(V, config.Y, config.I_bar, config.P_star, config.r)
    res_a = config.L_e @ V + L_t @ (I_L / s)
    res_b = float(s @ (V - config.V_ref))
    return res_a, res_b


def residual_scale(config: MicrogridConfig) -> float:
    """Typical current magnitude used to make residual tolerances relative."""
    V = config.V_ref
    vmax = float(np.max(np.abs(V)))
    terms = (np.max(np.sum(np.abs(config.L_e), axis=1)) * vmax, np.max(config.Y) * vmax,
             np.sum(np.abs(config.I_bar)), np.sum(np.abs(config.P_star)) / float(np.min(V)))
    return max(1.0, *terms)


# -- existence certificate --------------------------------------------------

class Region(str, enum.Enum):
    IN_H = "in_H"
    IN_I = "in_I"
    IN_J = "in_J"
    OUTSIDE = "outside"


def deviation_bounds(Delta: float) -> tuple[float, float]:
    """Roots ``delta_-`` <= 1/2 <= ``delta_+`` of ``4 d (1 - d) = Delta``."""
    if not 0 <= Delta <= 1:
        raise ValueError(f"Delta must lie in [0, 1], got {Delta}")
    root = math.sqrt(1.0 - Delta)
    # the small root in cancellation-free form
    lower = Delta / (2.0 * (1.0 + root))
    return lower, 1.0 - lower


@dataclass(frozen=True)
class ExistenceCertificate:
    V_star: np.ndarray
    P_cri: np.ndarray
    Delta: float
    delta_minus: float
    delta_plus: float
    feasible: bool
    P_star: np.ndarray = field(repr=False)
    V_ref: np.ndarray = field(repr=False)

    @property
    def H_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return (1.0 - self.delta_minus) * self.V_star, (1.0 + self.delta_minus) * self.V_star

    @property
    def low_voltage_bound(self) -> np.ndarray:
        return (1.0 - self.delta_plus) * self.V_star

    @property
    def J_excludes_solutions(self) -> bool:
        """Whether the low-voltage set provably holds no solution."""
        return bool(np.all(self.low_voltage_bound < self.V_ref))

    def to_dict(self) -> dict:
        lo, hi = self.H_bounds if self.feasible else (None, None)
        return {
            "V_star": self.V_star.tolist(),
            "Delta": self.Delta,
            "delta_minus": self.delta_minus if self.feasible else None,
            "delta_plus": self.delta_plus if self.feasible else None,
            "feasible": self.feasible,
            "H_lower": None if lo is None else lo.tolist(),
            "H_upper": None if hi is None else hi.tolist(),
        }


def certificate(config: MicrogridConfig) -> ExistenceCertificate:
    """Contraction certificate for the ZIP case.

    ``Delta`` is the infinity norm of ``P_cri [P*]``; it equals
    ``||P_cri P*||_inf`` whenever ``P_cri`` and ``P*`` are entrywise nonnegative.
    """
    if not config.is_zip():
        raise EquilibriumError("certificate requires ZIP loads (exponent r = 0 for every power term)")
    pf = power_flow_matrices(config)
    L_dag = pseudo_inverse_tall(pf.L_tilde)
    V_star = L_dag @ pf.I_tilde
    if np.any(np.abs(V_star) <= 1e-12 * np.max(np.abs(V_star), initial=1.0)):
        raise EquilibriumError("[V*] is singular (a component of V* vanishes)")
    P_cri = 4.0 * (L_dag @ pf.Lt_tilde) / np.outer(V_star, V_star)
    P = config.P_star
    Delta = float(np.max(np.abs(P_cri * P[None, :]).sum(axis=1)))
    if Delta < 1:
        d_lo, d_hi = deviation_bounds(Delta)
    else:
        d_lo = d_hi = math.nan
    return ExistenceCertificate(V_star, P_cri, Delta, d_lo, d_hi, Delta < 1, P.copy(), config.V_ref.copy())


def membership(V, cert: ExistenceCertificate) -> Region:
    V = np.asarray(V, dtype=float)
    lo, hi = cert.H_bounds
    if np.all(V >= lo) and np.all(V <= hi):
        return Region.IN_H
    low = cert.low_voltage_bound
    if np.all(V > low):
        return Region.IN_I
    if np.all(V <= low):
        return Region.IN_J
    return Region.OUTSIDE


def solve_zip_fixed_point(config: MicrogridConfig, tol: float = 1e-10, max_iter: int = 200,
                          cert: ExistenceCertificate | None = None):
    """Iterate ``x <- -(1/4) P_cri [P*] r(x)`` from ``x = 0``.

    Returns ``(V_bar, iterations)``.
    """
    cert = certificate(config) if cert is None else cert
    if not cert.feasible:
        raise EquilibriumError(f"Delta = {cert.Delta:.6g} >= 1: no contraction guarantee, refusing to iterate")
    K = 0.25 * cert.P_cri * cert.P_star[None, :]
    box = cert.delta_minus * (1.0 + 1e-9) + 1e-15
    x = np.zeros(config.n)
    history = []
    for k in range(1, max_iter + 1):
        x_new = -K @ (1.0 / (1.0 + x))
        gap = float(np.max(np.abs(x_new - x)))
        history.append(gap)
        if np.max(np.abs(x_new)) > box:
            raise ConvergenceError("fixed-point iterate left the contraction box", history)
        x = x_new
        if gap <= tol:
            return cert.V_star * (1.0 + x), k
    raise ConvergenceError(f"no convergence in {max_iter} iterations", history)


def solve_zie_newton(config: MicrogridConfig, V_init=None, tol: float = 1e-9, max_iter: int = 200):
    """Damped Gauss-Newton on the stacked ``(N+1) x N`` balance residual.

    The voltage-balancing row is divided by ``sum(I_s)`` so every entry is a
    current or a voltage of comparable size. Convergence is declared when the
    residual max-norm falls below ``tol * residual_scale(config)``.
    """
    s = config.I_s
    V = np.array(config.V_ref if V_init is None else V_init, dtype=float)
    if np.any(V <= 0):
        raise EquilibriumError("initial guess must be strictly positive")
    L_t = sharing_projector(s)
    Lts = L_t / s[None, :]
    Y, I_bar, P, r = config.Y, config.I_bar, config.P_star, config.r
    w = s / s.sum()

    def F(V):
        I_L = load_currents(V, Y, I_bar, P, r)
        return np.concatenate([config.L_e @ V + Lts @ I_L, [w @ (V - config.V_ref)]])

    def J(V):
        g = Y + (r - 1.0) * np.exp((r - 2.0) * np.log(V)) * P
        return np.vstack([config.L_e + Lts * g[None, :], w[None, :]])

    thresh = tol * residual_scale(config)
    f = F(V)
    history = [float(np.max(np.abs(f)))]
    for _ in range(max_iter):
        if history[-1] <= thresh:
            return V
        step = np.linalg.lstsq(J(V), -f, rcond=None)[0]
        norm0 = np.linalg.norm(f)
        t = 1.0
        for _ in range(31):
            V_try = V + t * step
            if np.all(V_try > 0):
                f_try = F(V_try)
                if np.linalg.norm(f_try) < norm0:
                    break
            t *= 0.5
        else:
            raise ConvergenceError("line search failed to decrease the residual", history)
        V, f = V_try, f_try
        history.append(float(np.max(np.abs(f))))
    if history[-1] <= thresh:
        return V
    raise ConvergenceError(f"Newton did not converge in {max_iter} iterations", history)


# -- full equilibrium -------------------------------------------------------

@dataclass(frozen=True)
class EquilibriumSolution:
    V_bar: np.ndarray
    I_t_bar: np.ndarray
    v_bar: np.ndarray
    I_bar: np.ndarray
    Omega_bar: np.ndarray
    epsilon: float
    residual_16a: float
    residual_16b: float

    def state(self) -> SystemState:
        return SystemState(self.V_bar, self.I_t_bar, self.v_bar, self.I_bar, self.Omega_bar)

    def sharing_deviation(self, rated_currents) -> float:
        return float(np.max(np.abs(self.I_t_bar / rated_currents - self.epsilon)))


def reconstruct_full(config: MicrogridConfig, gains: GainSet, V_bar, tol: float = 1e-6) -> EquilibriumSolution:
    """Rebuild ``(I_t, v, I, Omega)`` from equilibrium voltages.

    ``Omega`` is the zero-mean representative; any shift along ``1`` is an
    equilibrium too.
    """
    V = np.asarray(V_bar, dtype=float)
    s = config.I_s
    res_a, res_b = balance_residuals(config, V)
    ra = float(np.max(np.abs(res_a)))
    rb = abs(res_b) / float(s.sum())
    scale = residual_scale(config)
    if ra > tol * scale or rb > tol * float(np.max(config.V_ref)):
        raise EquilibriumError(f"V_bar does not solve the balance equations (residuals {ra:.3g} A, {rb:.3g} V)")
    I_L = load_currents(V, config.Y, config.I_bar, config.P_star, config.r)
    epsilon = float(I_L.sum() / s.sum())
    I_t = epsilon * s
    I = (config.B.T @ V) / config.R_lines if config.m else np.zeros(0)
    Lc = config.comm_laplacian()
    Omega = laplacian_pinv(Lc) @ (s * (config.V_ref - V))
    alpha, beta, gamma, delta = gains.abgd
    # I_t row with [I_s]^-1 Lc Omega = V_ref - V substituted from the v row
    v = ((delta - alpha) * V - delta * config.V_ref - beta * I_t) / gamma
    return EquilibriumSolution(V.copy(), I_t, v, I, Omega, epsilon, ra, abs(res_b))
