"""Primary PI gains and the secondary consensus layer.

Each DGU runs ``V_t = k1 V + k2 I_t + k3 v + k4 omega`` where ``v`` integrates
``V_ref - V - omega``. Dividing by the filter inductance gives the closed-loop
coefficients ``alpha, beta, gamma, delta``. ``mu = gamma - alpha*beta`` is the
per-DGU scalar that shows up in the Lyapunov matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def derive_abgd(k1, k2, k3, k4, R_t, L_t):
    """Map feedback gains to ``(alpha, beta, gamma, delta)``. Works elementwise."""
    L_t = np.asarray(L_t, dtype=float)
    if np.any(L_t <= 0):
        raise ValueError("filter inductance must be strictly positive")
    alpha = (np.asarray(k1, dtype=float) - 1.0) / L_t
    beta = (np.asarray(k2, dtype=float) - R_t) / L_t
    gamma = np.asarray(k3, dtype=float) / L_t
    delta = np.asarray(k4, dtype=float) / L_t
    return alpha, beta, gamma, delta


def gains_from_abgd(alpha, beta, gamma, delta, R_t, L_t):
    """Inverse of :func:`derive_abgd`."""
    L_t = np.asarray(L_t, dtype=float)
    return (np.asarray(alpha) * L_t + 1.0, np.asarray(beta) * L_t + R_t,
            np.asarray(gamma) * L_t, np.asarray(delta) * L_t)


@dataclass(frozen=True)
class GainCheck:
    ok: bool
    violations: tuple[str, ...]

    def __bool__(self):
        return self.ok


def check_gain_set(k1, k2, k3, R_t, L_t) -> GainCheck:
    """Strict membership test for the stabilizing gain set of one DGU."""
    violations = []
    if not k1 < 1:
        violations.append("k1 < 1 violated")
    if not k2 < R_t:
        violations.append("k2 < R_t violated")
    bound = (k1 - 1.0) * (k2 - R_t) / L_t
    if not k3 > 0:
        violations.append("0 < k3 violated")
    if not k3 < bound:
        violations.append(f"k3 < {bound:.6g} violated")
    return GainCheck(not violations, tuple(violations))


@dataclass(frozen=True)
class GainSet:
    """Per-DGU gains (arrays of length N) plus derived closed-loop values."""
    k1: np.ndarray
    k2: np.ndarray
    k3: np.ndarray
    k4: np.ndarray
    R_t: np.ndarray
    L_t: np.ndarray

    def __post_init__(self):
        arrays = [np.atleast_1d(np.asarray(getattr(self, f), dtype=float))
                  for f in ("k1", "k2", "k3", "k4", "R_t", "L_t")]
        n = arrays[0].size
        if any(a.shape != (n,) for a in arrays):
            raise ValueError("all gain vectors must have the same length")
        for name, a in zip(("k1", "k2", "k3", "k4", "R_t", "L_t"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.L_t <= 0):
            raise ValueError("filter inductance must be strictly positive")

    @classmethod
    def from_gains(cls, k1, k2, k3, k4, R_t, L_t):
        return cls(k1, k2, k3, k4, R_t, L_t)

    def __len__(self):
        return self.k1.size

    @property
    def abgd(self):
        return derive_abgd(self.k1, self.k2, self.k3, self.k4, self.R_t, self.L_t)

    @property
    def alpha(self):
        return self.abgd[0]

    @property
    def beta(self):
        return self.abgd[1]

    @property
    def gamma(self):
        return self.abgd[2]

    @property
    def delta(self):
        return self.abgd[3]

    @property
    def mu(self):
        alpha, beta, gamma, _ = self.abgd
        return gamma - alpha * beta

    def checks(self) -> list[GainCheck]:
        return [check_gain_set(*args) for args in zip(self.k1, self.k2, self.k3, self.R_t, self.L_t)]

    def secondary_compatible(self) -> np.ndarray:
        """Per-DGU flag for ``k4 == k1 - 1`` (relative tolerance 1e-12)."""
        target = self.k1 - 1.0
        return np.abs(self.k4 - target) <= 1e-12 * np.maximum(1.0, np.abs(target))

    def subset(self, idx) -> "GainSet":
        idx = np.asarray(idx, dtype=int)
        return GainSet(self.k1[idx], self.k2[idx], self.k3[idx], self.k4[idx], self.R_t[idx], self.L_t[idx])

    def to_rows(self) -> list[dict]:
        return [dict(k1=float(a), k2=float(b), k3=float(c), k4=float(d))
                for a, b, c, d in zip(self.k1, self.k2, self.k3, self.k4)]


def sample_stabilizing_gains(R_t, L_t, margin: float = 0.5, offset: float = 1.0) -> GainSet:
    """Deterministic interior point of the stabilizing gain set.

    ``k1 = 1 - offset``, ``k2 = R_t - offset``, ``k3`` at ``margin`` times its
    upper bound and ``k4 = k1 - 1`` so the result is secondary compatible.
    """
    if not 0 < margin < 1:
        raise ValueError(f"margin must lie in (0, 1), got {margin}")
    R_t = np.atleast_1d(np.asarray(R_t, dtype=float))
    L_t = np.atleast_1d(np.asarray(L_t, dtype=float))
    k1 = np.full_like(R_t, 1.0 - offset)
    k2 = R_t - offset
    k3 = margin * (k1 - 1.0) * (k2 - R_t) / L_t
    return GainSet(k1, k2, k3, k1 - 1.0, R_t, L_t)


def consensus_rhs(I_t, Omega, Lc, rated_currents):
    """Consensus layer: returns ``(Omega_dot, omega)``.

    ``Omega_dot = Lc [I_s]^-1 I_t`` integrates the rating-weighted current
    disagreement; ``omega = [I_s]^-1 Lc Omega`` is injected into the primary loop.
    """
    I_t = np.asarray(I_t, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    s = np.asarray(rated_currents, dtype=float)
    n = s.size
    if I_t.shape != (n,) or Omega.shape != (n,) or np.shape(Lc) != (n, n):
        raise ValueError(f"dimension mismatch: expected vectors of length {n} and a {n}x{n} Laplacian")
    if np.any(s <= 0):
        raise ValueError("rated currents must be strictly positive")
    return Lc @ (I_t / s), (Lc @ Omega) / s
