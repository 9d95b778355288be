"""ZIE loads: constant impedance + constant current + exponential power.

The current drawn at PC voltage ``V`` is::

    I_L(V) = Y V + I_bar + V**(r - 1) * P_star

``r = 0`` gives a constant-power term (ZIP load), ``r = 1`` a constant
current and ``r = 2`` a conductance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class VoltageDomainError(ValueError):
    """A load was evaluated at a non-positive voltage (voltage collapse)."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True)
class ZieLoad:
    Y: float = 0.0
    I_bar: float = 0.0
    P_star: float = 0.0
    r: float = 1.0

    def __post_init__(self):
        if self.Y < 0:
            raise ValueError(f"load conductance must be >= 0, got {self.Y}")

    @property
    def is_zip(self) -> bool:
        return self.r == 0 or self.P_star == 0


def _power(V, exponent):
    # exp/log form keeps negative bases out of the picture; V > 0 is enforced by callers
    return np.exp(exponent * np.log(V))


def _check_positive(V):
    V = np.asarray(V, dtype=float)
    bad = np.flatnonzero(~(V > 0))
    if bad.size:
        node = int(bad[0])
        raise VoltageDomainError(f"load evaluated at non-positive voltage V[{node}] = {V.flat[node]}", node)
    return V


def load_current(load: ZieLoad, V: float) -> float:
    V = float(_check_positive(np.array([V]))[0])
    return load.Y * V + load.I_bar + float(_power(V, load.r - 1.0)) * load.P_star


def incremental_admittance(load: ZieLoad, V: float) -> float:
    """dI_L/dV; negative for an E term with r < 1 and positive power."""
    V = float(_check_positive(np.array([V]))[0])
    return load.Y + (load.r - 1.0) * float(_power(V, load.r - 2.0)) * load.P_star


def exponential_current(V, P_star, r):
    """Vectorized E-part current ``V**(r-1) * P_star``."""
    V = _check_positive(V)
    return _power(V, np.asarray(r, dtype=float) - 1.0) * P_star


def load_currents(V, Y, I_bar, P_star, r):
    V = _check_positive(V)
    return Y * V + I_bar + _power(V, np.asarray(r, dtype=float) - 1.0) * P_star


def incremental_admittances(V, Y, P_star, r):
    V = _check_positive(V)
    r = np.asarray(r, dtype=float)
    return Y + (r - 1.0) * _power(V, r - 2.0) * P_star
