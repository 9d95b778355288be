"""Lyapunov-based stability certification of the closed-loop microgrid.

The quadratic function ``W(X) = 0.5 (X - X_bar)^T P (X - X_bar)`` uses a
block-diagonal ``P``; along trajectories ``dW/dt = (X - X_bar)^T Q(V) (X - X_bar)``.
Local stability follows when ``P`` is positive definite and ``Q`` is negative
semidefinite at the equilibrium voltages.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .config import MicrogridConfig
from .control import GainSet
from .dynamics import PRIMARY_ONLY, SECONDARY, assemble

DEFINITENESS_RTOL = 1e-9
LIMIT_RTOL = 1e-9


class Definiteness(str, enum.Enum):
    POSITIVE_DEFINITE = "positive_definite"
    POSITIVE_SEMIDEFINITE = "positive_semidefinite"
    INDEFINITE = "indefinite"


class Verdict(str, enum.Enum):
    CERTIFIED_GLOBAL = "certified_global"
    CERTIFIED_LOCAL = "certified_local"
    NOT_CERTIFIED = "not_certified"


def _combine(verdicts) -> Definiteness:
    verdicts = list(verdicts)
    if any(v is Definiteness.INDEFINITE for v in verdicts):
        return Definiteness.INDEFINITE
    if any(v is Definiteness.POSITIVE_SEMIDEFINITE for v in verdicts):
        return Definiteness.POSITIVE_SEMIDEFINITE
    return Definiteness.POSITIVE_DEFINITE


def _scalar_definiteness(a: float, scale: float, rtol: float = DEFINITENESS_RTOL) -> Definiteness:
    if a > rtol * scale:
        return Definiteness.POSITIVE_DEFINITE
    if a >= -rtol * scale:
        return Definiteness.POSITIVE_SEMIDEFINITE
    return Definiteness.INDEFINITE


def block_determinants(A_diag, B_diag, D_diag) -> np.ndarray:
    A, B, D = (np.asarray(x, dtype=float) for x in (A_diag, B_diag, D_diag))
    return A * D - B * B


def block_pd_test(A_diag, B_diag, D_diag, rtol: float = DEFINITENESS_RTOL) -> Definiteness:
    """Definiteness of ``[[A, B], [B, D]]`` with diagonal ``A, B, D``.

    The matrix decouples into 2x2 blocks ``[[A_i, B_i], [B_i, D_i]]``; it is
    positive definite iff every block is, and positive semidefinite when some
    block is singular but none is indefinite. Determinants within
    ``rtol * (|A_i D_i| + B_i^2)`` of zero count as singular.
    """
    A, B, D = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (A_diag, B_diag, D_diag))
    verdicts = []
    for a, b, d in zip(A, B, D):
        scale = max(abs(a), abs(d), 1e-300)
        det = a * d - b * b
        det_scale = max(abs(a * d) + b * b, 1e-300)
        if a > rtol * scale and det > rtol * det_scale:
            verdicts.append(Definiteness.POSITIVE_DEFINITE)
        elif a >= -rtol * scale and d >= -rtol * scale and det >= -rtol * det_scale:
            verdicts.append(Definiteness.POSITIVE_SEMIDEFINITE)
        else:
            verdicts.append(Definiteness.INDEFINITE)
    return _combine(verdicts)


def eigen_definiteness(M: np.ndarray, rtol: float = DEFINITENESS_RTOL) -> Definiteness:
    """Definiteness of a symmetric matrix from its eigenvalues.

    A Jacobi congruence (unit diagonal where the diagonal is nonzero) is
    applied first so that blocks with very different units do not swamp the
    tolerance; congruence preserves definiteness.
    """
    M = 0.5 * (M + M.T)
    d = np.diag(M).copy()
    if np.any(d < 0):
        return Definiteness.INDEFINITE
    scale = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 1.0)
    S = M * scale[:, None] * scale[None, :]
    w = np.linalg.eigvalsh(S)
    top = max(float(np.max(np.abs(w))), 1e-300)
    return _scalar_definiteness(float(w[0]), top, rtol)


# -- Lyapunov matrices ------------------------------------------------------

def _mu_checked(gains: GainSet):
    alpha, beta, gamma, delta = gains.abgd
    mu = gamma - alpha * beta
    if np.any(mu == 0):
        raise ValueError("gamma - alpha*beta vanishes for some DGU; P is undefined")
    return alpha, beta, gamma, delta, mu


def lyapunov_blocks(gains: GainSet):
    """Diagonals ``(A, B, D)`` of the 2x2 filter-current / integrator block of P."""
    alpha, beta, gamma, _, mu = _mu_checked(gains)
    return beta / mu, gamma / mu, alpha * gamma / mu


def build_P(config: MicrogridConfig, gains: GainSet, mode: str = SECONDARY) -> np.ndarray:
    n, m = config.n, config.m
    a, b, d = lyapunov_blocks(gains)
    dim = (4 if mode == SECONDARY else 3) * n + m
    P = np.zeros((dim, dim))
    idx = np.arange(n)
    P[idx, idx] = config.C_t
    P[n + idx, n + idx] = a
    P[n + idx, 2 * n + idx] = b
    P[2 * n + idx, n + idx] = b
    P[2 * n + idx, 2 * n + idx] = d
    jdx = 3 * n + np.arange(m)
    P[jdx, jdx] = config.L_lines
    if mode == SECONDARY:
        P[3 * n + m + idx, 3 * n + m + idx] = 1.0
    return P


def exponential_admittance(config: MicrogridConfig, V, V_bar) -> np.ndarray:
    """Secant admittance of the E loads between ``V_bar`` and ``V``.

    Falls back to the derivative ``(r-1) V_bar^(r-2) P*`` when the two voltages
    coincide to ``1e-9`` relative.
    """
    V = np.asarray(V, dtype=float)
    Vb = np.asarray(V_bar, dtype=float)
    if np.any(V <= 0) or np.any(Vb <= 0):
        raise ValueError("voltages must be strictly positive")
    P, r = config.P_star, config.r
    dV = V - Vb
    near = np.abs(dV) < LIMIT_RTOL * Vb
    limit = (r - 1.0) * Vb ** (r - 2.0) * P
    safe = np.where(near, 1.0, dV)
    secant = P * (V ** (r - 1.0) - Vb ** (r - 1.0)) / safe
    return np.where(near, limit, secant)


def f_limit(config: MicrogridConfig, V_bar) -> np.ndarray:
    """Net incremental damping ``Y - (1 - r) P* V_bar^(r-2)`` at the equilibrium."""
    Vb = np.asarray(V_bar, dtype=float)
    return config.Y - (1.0 - config.r) * config.P_star * Vb ** (config.r - 2.0)


def build_Q(config: MicrogridConfig, gains: GainSet, V, V_bar, mode: str = SECONDARY) -> np.ndarray:
    """Simplified ``Q(V)``; valid only for secondary-compatible gains ``k4 = k1 - 1``."""
    if V_bar is None:
        raise ValueError("equilibrium voltages are required to evaluate Q")
    if mode == SECONDARY and not np.all(gains.secondary_compatible()):
        raise ValueError("simplified Q requires k4 = k1 - 1 for every DGU")
    n, m = config.n, config.m
    _, beta, gamma, _, mu = _mu_checked(gains)
    dim = (4 if mode == SECONDARY else 3) * n + m
    negQ = np.zeros((dim, dim))
    idx = np.arange(n)
    negQ[idx, idx] = config.Y + exponential_admittance(config, V, V_bar)
    negQ[n + idx, n + idx] = -beta ** 2 / mu
    negQ[n + idx, 2 * n + idx] = -beta * gamma / mu
    negQ[2 * n + idx, n + idx] = -beta * gamma / mu
    negQ[2 * n + idx, 2 * n + idx] = -gamma ** 2 / mu
    jdx = 3 * n + np.arange(m)
    negQ[jdx, jdx] = config.R_lines
    return -negQ


def build_Q_full(config: MicrogridConfig, gains: GainSet, V, V_bar, mode: str = SECONDARY,
                 secondary_nodes=None) -> np.ndarray:
    """``Q(V)`` from first principles: ``sym(P A)`` minus the E-load secant term.

    Holds for any ``k4``; reduces to :func:`build_Q` when ``k4 = k1 - 1``.
    """
    sys = assemble(config, gains, mode, secondary_nodes)
    P = build_P(config, gains, mode)
    PA = P @ sys.A
    Q = 0.5 * (PA + PA.T)
    idx = np.arange(config.n)
    Q[idx, idx] -= exponential_admittance(config, V, V_bar)
    return Q


# -- load condition ---------------------------------------------------------

def check_load_condition(config: MicrogridConfig, V_bar) -> np.ndarray:
    """Per-DGU bound on E-load power: ``(1 - r) P* V^r < Y V^2`` for ``r < 1``.

    Exponents ``r >= 1`` and absent power terms pass unconditionally.
    """
    Vb = np.asarray(V_bar, dtype=float)
    if np.any(Vb <= 0):
        raise ValueError("equilibrium voltages must be strictly positive")
    P, r, Y = config.P_star, config.r, config.Y
    lhs = (1.0 - r) * P * Vb ** r
    return np.where((r >= 1) | (P == 0), True, lhs < Y * Vb ** 2)


# -- reports ----------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    gains_ok: np.ndarray
    load_ok: np.ndarray
    P_pd: bool
    P_min_block_det: float
    Q_nsd: bool
    f_bar: np.ndarray
    verdict: Verdict
    P_block_verdict: Definiteness
    P_eig_verdict: Definiteness
    Q_block_verdict: Definiteness
    Q_eig_verdict: Definiteness
    gain_violations: tuple

    @property
    def methods_agree(self) -> bool:
        return self.P_block_verdict is self.P_eig_verdict and self.Q_block_verdict is self.Q_eig_verdict

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "gains_ok": [bool(x) for x in self.gains_ok],
            "load_ok": [bool(x) for x in self.load_ok],
            "P_pd": self.P_pd,
            "P_min_block_det": self.P_min_block_det,
            "Q_nsd": self.Q_nsd,
            "f_bar": [float(x) for x in self.f_bar],
            "P_block_verdict": self.P_block_verdict.value,
            "P_eig_verdict": self.P_eig_verdict.value,
            "Q_block_verdict": self.Q_block_verdict.value,
            "Q_eig_verdict": self.Q_eig_verdict.value,
            "gain_violations": [list(v) for v in self.gain_violations],
        }


def _P_block_verdict(config, gains):
    a, b, d = lyapunov_blocks(gains)
    scal = [_scalar_definiteness(x, x) for x in np.concatenate([config.C_t, config.L_lines])]
    return _combine(scal + [block_pd_test(a, b, d)])


def _negQ_block_verdict(config, gains, V_bar, mode):
    _, beta, gamma, _, mu = _mu_checked(gains)
    f = f_limit(config, V_bar)
    fscale = max(float(np.max(np.abs(f))), float(np.max(config.Y)), 1e-300)
    scal = [_scalar_definiteness(x, fscale) for x in f]
    scal += [_scalar_definiteness(x, x) for x in config.R_lines]
    if mode == SECONDARY:
        # the consensus block of -Q is identically zero
        scal.append(Definiteness.POSITIVE_SEMIDEFINITE)
    return _combine(scal + [block_pd_test(-beta ** 2 / mu, -beta * gamma / mu, -gamma ** 2 / mu)])


def stability_report(config: MicrogridConfig, gains: GainSet, V_bar, mode: str = SECONDARY) -> StabilityReport:
    V_bar = np.asarray(V_bar, dtype=float)
    checks = gains.checks()
    gains_ok = np.array([bool(c) for c in checks])
    if mode == SECONDARY:
        gains_ok &= gains.secondary_compatible()
    violations = tuple(c.violations + (() if ok or c.violations else ("k4 = k1 - 1 violated",))
                       for c, ok in zip(checks, gains_ok))
    load_ok = check_load_condition(config, V_bar)
    f_bar = f_limit(config, V_bar)

    a, b, d = lyapunov_blocks(gains)
    dets = block_determinants(a, b, d)
    P = build_P(config, gains, mode)
    P_block = _P_block_verdict(config, gains)
    P_eig = eigen_definiteness(P)

    decoupled = mode == PRIMARY_ONLY or bool(np.all(gains.secondary_compatible()))
    if decoupled:
        Q = build_Q(config, gains, V_bar, V_bar, mode)
        Q_eig = eigen_definiteness(-Q)
        Q_block = _negQ_block_verdict(config, gains, V_bar, mode)
    else:
        # consensus couplings survive in Q; only the eigenvalue test applies
        Q_eig = Q_block = eigen_definiteness(-build_Q_full(config, gains, V_bar, V_bar, mode))

    P_pd = P_block is Definiteness.POSITIVE_DEFINITE and P_eig is Definiteness.POSITIVE_DEFINITE
    Q_nsd = Q_block is not Definiteness.INDEFINITE and Q_eig is not Definiteness.INDEFINITE
    certified = bool(np.all(gains_ok) and np.all(load_ok) and P_pd and Q_nsd
                     and P_block is P_eig and Q_block is Q_eig)
    if not certified:
        verdict = Verdict.NOT_CERTIFIED
    elif np.all(config.P_star == 0):
        verdict = Verdict.CERTIFIED_GLOBAL
    else:
        verdict = Verdict.CERTIFIED_LOCAL
    return StabilityReport(gains_ok, load_ok, P_pd, float(np.min(dets)), Q_nsd, f_bar, verdict,
                           P_block, P_eig, Q_block, Q_eig, violations)


# -- trajectory and spectrum checks -----------------------------------------

@dataclass(frozen=True)
class LyapunovReport:
    values: np.ndarray
    tolerance: float
    max_increase: float
    first_increase: int | None
    first_nonpositive: int | None

    @property
    def ok(self) -> bool:
        return self.first_increase is None and self.first_nonpositive is None


def lyapunov_values(P: np.ndarray, X_bar, samples) -> np.ndarray:
    D = np.atleast_2d(np.asarray(samples, dtype=float)) - np.asarray(X_bar, dtype=float)[None, :]
    return 0.5 * np.einsum("ij,jk,ik->i", D, P, D)


def lyapunov_decrease_check(config: MicrogridConfig, gains: GainSet, X_bar, samples, mode: str = SECONDARY,
                            rtol: float = 1e-8) -> LyapunovReport:
    """Check that ``W`` is positive off the equilibrium and nonincreasing along ``samples``.

    ``samples`` is an ``(n_samples, dim)`` array of stacked states. The
    tolerance on increases is ``rtol`` times the largest value of ``W``.
    """
    P = build_P(config, gains, mode)
    X_bar = np.asarray(X_bar, dtype=float)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    W = lyapunov_values(P, X_bar, samples)
    tol = rtol * max(float(np.max(W)) if W.size else 0.0, 1e-300)
    inc = np.diff(W)
    max_inc = float(np.max(inc)) if inc.size else 0.0
    bad = np.flatnonzero(inc > tol)
    off = np.any(samples != X_bar[None, :], axis=1)
    nonpos = np.flatnonzero(off & (W <= 0))
    return LyapunovReport(W, tol, max_inc, int(bad[0]) + 1 if bad.size else None,
                          int(nonpos[0]) if nonpos.size else None)


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    n_unstable: int
    structural_zero: complex | None

    @property
    def stable(self) -> bool:
        return self.n_unstable == 0


def linearized_spectrum(config: MicrogridConfig, gains: GainSet, X_bar, mode: str = SECONDARY,
                        secondary_nodes=None, tol: float = 1e-9) -> SpectrumReport:
    """Eigenvalues of the Jacobian at an equilibrium.

    In secondary mode one eigenvalue sits at zero by construction (shifting
    every ``Omega_i`` by the same constant changes nothing); it is set aside
    before counting eigenvalues with real part above ``tol``.
    """
    sys = assemble(config, gains, mode, secondary_nodes)
    x = X_bar.stack() if hasattr(X_bar, "stack") else np.asarray(X_bar, dtype=float)
    w = np.linalg.eigvals(sys.jacobian_matrix(x))
    rest = w
    structural = None
    if mode == SECONDARY and len(sys.secondary_nodes) > 1:
        k = int(np.argmin(np.abs(w)))
        structural = complex(w[k])
        rest = np.delete(w, k)
    return SpectrumReport(w, int(np.sum(rest.real > tol)), structural)
