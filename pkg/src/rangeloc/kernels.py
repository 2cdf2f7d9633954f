"""Robust M-estimator kernels: loss rho, influence psi, IRLS weight w.

Seven families over whitened (unitless) residuals. The tuning constant c
trades robustness against relative efficiency under Gaussian noise; the
table below indexes c by the four standard efficiency levels. All
functions accept scalars or arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import quad


class KernelFamily(str, Enum):
    L2 = "l2"
    FAIR = "fair"
    CAUCHY = "cauchy"
    GEMAN_MCCLURE = "geman-mcclure"
    WELSCH = "welsch"
    HUBER = "huber"
    TUKEY = "tukey"


MONOTONIC = "monotonic"
SOFT_REDESCENDING = "soft-redescending"
HARD_REDESCENDING = "hard-redescending"

KERNEL_CATEGORY = {
    KernelFamily.FAIR: MONOTONIC,
    KernelFamily.CAUCHY: SOFT_REDESCENDING,
    KernelFamily.GEMAN_MCCLURE: SOFT_REDESCENDING,
    KernelFamily.WELSCH: SOFT_REDESCENDING,
    KernelFamily.HUBER: HARD_REDESCENDING,
    KernelFamily.TUKEY: HARD_REDESCENDING,
}

EFFICIENCY_LEVELS = (0.95, 0.90, 0.85, 0.80)

# Tuning constant c per (family, efficiency). c applies to whitened
# residuals, so the values are unitless and portable across problems.
TUNING_TABLE = {
    KernelFamily.FAIR: {0.95: 1.3998, 0.90: 0.6351, 0.85: 0.3333, 0.80: 0.1760},
    KernelFamily.CAUCHY: {0.95: 2.3849, 0.90: 1.7249, 0.85: 1.3737, 0.80: 1.1385},
    KernelFamily.GEMAN_MCCLURE: {0.95: 3.8557, 0.90: 2.8937, 0.85: 2.5731, 0.80: 2.2926},
    KernelFamily.WELSCH: {0.95: 2.9846, 0.90: 2.3831, 0.85: 2.0595, 0.80: 1.8383},
    KernelFamily.HUBER: {0.95: 1.3450, 0.90: 0.9818, 0.85: 0.7317, 0.80: 0.5294},
    KernelFamily.TUKEY: {0.95: 4.6851, 0.90: 3.8827, 0.85: 3.4437, 0.80: 3.1369},
}


# Efficiencies actually attained by the tabulated constants under the
# classical Geman-McClure parameterization used here. The GM efficiency
# convention varies across the literature; the 90% entry matches exactly,
# which pins the parameterization, so the residual deviations below are a
# property of the published table, not of this implementation. They are
# logged by verify_tuning_table() instead of being fudged away.
KNOWN_EFFICIENCY_DEVIATIONS = {
    (KernelFamily.GEMAN_MCCLURE, 0.80): 0.8328,
}


class NoTuningError(ValueError):
    """L2 takes no tuning constant."""


@dataclass(frozen=True)
class KernelConfig:
    family: KernelFamily
    c: float = 1.0

    def __post_init__(self):
        if self.family is not KernelFamily.L2 and not self.c > 0:
            raise ValueError(f"tuning constant must be positive, got {self.c}")

    @classmethod
    def from_efficiency(cls, family: KernelFamily, efficiency: float) -> "KernelConfig":
        if family is KernelFamily.L2:
            return cls(KernelFamily.L2)
        return cls(family, tuning_constant(family, efficiency))


def tuning_constant(family: KernelFamily, efficiency: float) -> float:
    if family is KernelFamily.L2:
        raise NoTuningError("L2 has no tuning constant")
    table = TUNING_TABLE[KernelFamily(family)]
    for level, c in table.items():
        if abs(level - efficiency) < 1e-9:
            return c
    raise ValueError(f"efficiency must be one of {EFFICIENCY_LEVELS}, got {efficiency}")


def loss(k: KernelConfig, x):
    """rho(x): symmetric, rho(0) = 0. L2 gives x^2/2."""
    x = np.asarray(x, dtype=float)
    c = k.c
    f = k.family
    if f is KernelFamily.L2:
        out = 0.5 * x * x
    elif f is KernelFamily.FAIR:
        a = np.abs(x) / c
        out = c * c * (a - np.log1p(a))
    elif f is KernelFamily.CAUCHY:
        out = 0.5 * c * c * np.log1p((x / c) ** 2)
    elif f is KernelFamily.GEMAN_MCCLURE:
        out = 0.5 * c * c * x * x / (c * c + x * x)
    elif f is KernelFamily.WELSCH:
        out = 0.5 * c * c * (1.0 - np.exp(-((x / c) ** 2)))
    elif f is KernelFamily.HUBER:
        a = np.abs(x)
        out = np.where(a <= c, 0.5 * x * x, c * (a - 0.5 * c))
    elif f is KernelFamily.TUKEY:
        u = np.clip((x / c) ** 2, None, 1.0)
        out = (c * c / 6.0) * (1.0 - (1.0 - u) ** 3)
    else:  # pragma: no cover
        raise ValueError(f"unknown family {f}")
    return out if out.ndim else float(out)


def influence(k: KernelConfig, x):
    """psi(x) = d rho / dx. Odd, continuous at branch points."""
    x = np.asarray(x, dtype=float)
    c = k.c
    f = k.family
    if f is KernelFamily.L2:
        out = x.copy()
    elif f is KernelFamily.FAIR:
        out = x / (1.0 + np.abs(x) / c)
    elif f is KernelFamily.CAUCHY:
        out = x / (1.0 + (x / c) ** 2)
    elif f is KernelFamily.GEMAN_MCCLURE:
        out = c**4 * x / (c * c + x * x) ** 2
    elif f is KernelFamily.WELSCH:
        out = x * np.exp(-((x / c) ** 2))
    elif f is KernelFamily.HUBER:
        out = np.clip(x, -c, c)
    elif f is KernelFamily.TUKEY:
        out = np.where(np.abs(x) <= c, x * (1.0 - (x / c) ** 2) ** 2, 0.0)
    else:  # pragma: no cover
        raise ValueError(f"unknown family {f}")
    return out if out.ndim else float(out)


def weight(k: KernelConfig, x):
    """IRLS weight w(x) = psi(x)/x, extended by continuity to w(0) = 1."""
    x = np.asarray(x, dtype=float)
    c = k.c
    f = k.family
    if f is KernelFamily.L2:
        out = np.ones_like(x)
    elif f is KernelFamily.FAIR:
        out = 1.0 / (1.0 + np.abs(x) / c)
    elif f is KernelFamily.CAUCHY:
        out = 1.0 / (1.0 + (x / c) ** 2)
    elif f is KernelFamily.GEMAN_MCCLURE:
        out = (c * c / (c * c + x * x)) ** 2
    elif f is KernelFamily.WELSCH:
        out = np.exp(-((x / c) ** 2))
    elif f is KernelFamily.HUBER:
        a = np.abs(x)
        out = np.where(a <= c, 1.0, c / np.where(a > 0, a, 1.0))
    elif f is KernelFamily.TUKEY:
        out = np.where(np.abs(x) <= c, (1.0 - np.clip((x / c) ** 2, None, 1.0)) ** 2, 0.0)
    else:  # pragma: no cover
        raise ValueError(f"unknown family {f}")
    return out if out.ndim else float(out)


def _influence_derivative(k: KernelConfig, x):
    """psi'(x), piecewise; branch points take the quadratic-side value."""
    x = np.asarray(x, dtype=float)
    c = k.c
    f = k.family
    if f is KernelFamily.L2:
        return np.ones_like(x)
    if f is KernelFamily.FAIR:
        return 1.0 / (1.0 + np.abs(x) / c) ** 2
    if f is KernelFamily.CAUCHY:
        u = (x / c) ** 2
        return (1.0 - u) / (1.0 + u) ** 2
    if f is KernelFamily.GEMAN_MCCLURE:
        return c**4 * (c * c - 3.0 * x * x) / (c * c + x * x) ** 3
    if f is KernelFamily.WELSCH:
        return (1.0 - 2.0 * x * x / (c * c)) * np.exp(-((x / c) ** 2))
    if f is KernelFamily.HUBER:
        return np.where(np.abs(x) <= c, 1.0, 0.0)
    if f is KernelFamily.TUKEY:
        u = (x / c) ** 2
        return np.where(np.abs(x) <= c, (1.0 - u) * (1.0 - 5.0 * u), 0.0)
    raise ValueError(f"unknown family {f}")  # pragma: no cover


def asymptotic_efficiency(k: KernelConfig) -> float:
    """Relative efficiency under standard normal noise.

    (E[psi'(X)])^2 / E[psi(X)^2] with X ~ N(0, 1), by adaptive quadrature
    over [-12, 12]. The efficiency of L2 is 1 by definition and is not
    computed here.
    """
    if k.family is KernelFamily.L2:
        raise NoTuningError("efficiency of L2 is identically 1")
    if not k.c > 0:
        raise ValueError("non-integrable configuration: c must be positive")

    def phi(x):
        return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)

    num, _ = quad(lambda x: _influence_derivative(k, x) * phi(x), -12.0, 12.0,
                  epsabs=1e-10, limit=400, points=[-k.c, 0.0, k.c])
    den, _ = quad(lambda x: influence(k, x) ** 2 * phi(x), -12.0, 12.0,
                  epsabs=1e-10, limit=400, points=[-k.c, 0.0, k.c])
    return num * num / den


def verify_tuning_table(tolerance: float = 0.005, gm_tolerance: float = 0.02):
    """Measure the efficiency attained by every tabulated constant.

    Returns a list of (family, nominal_efficiency, c, measured_efficiency)
    rows. Any row whose deviation exceeds its family tolerance is logged at
    WARNING level; rows listed in KNOWN_EFFICIENCY_DEVIATIONS are expected
    to deviate and are logged with the characterized value.
    """
    log = logging.getLogger(__name__)
    rows = []
    for family, table in TUNING_TABLE.items():
        tol = gm_tolerance if family is KernelFamily.GEMAN_MCCLURE else tolerance
        for nominal, c in table.items():
            measured = asymptotic_efficiency(KernelConfig(family, c))
            rows.append((family, nominal, c, measured))
            if abs(measured - nominal) > tol:
                known = KNOWN_EFFICIENCY_DEVIATIONS.get((family, nominal))
                log.warning(
                    "tuning-table deviation: %s at nominal %.2f (c=%.4f) "
                    "attains efficiency %.4f%s",
                    family.value, nominal, c, measured,
                    "" if known is None else f" (known deviation, characterized {known:.4f})",
                )
    return rows
