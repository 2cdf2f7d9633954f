"""Pseudorange observation model: prediction, residuals, whitening, Jacobians.

A pseudorange is the geometric range plus receiver clock bias minus
satellite clock bias plus known per-satellite corrections. Multipath/NLOS
bias and thermal noise are unknown disturbances and never enter the
prediction; in simulation their sum is carried on the observation as
``true_error`` for evaluation only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geo import DegenerateGeometryError

LOS = "LOS"
NLOS = "NLOS"
UNLABELED = "unlabeled"


class InvalidNoiseError(ValueError):
    """Non-positive noise sigma."""


@dataclass(frozen=True)
class SatelliteState:
    """Known satellite quantities at one epoch: position, clock, corrections."""

    id: str
    position: np.ndarray  # ECEF, m
    clock_bias: float = 0.0  # meters (c * satellite clock offset)
    corrections: float = 0.0  # combined known atmospheric corrections, m

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class PseudorangeObservation:
    sat_id: str
    epoch: int
    rho: float  # measured pseudorange, m
    cn0: float = 45.0  # dB-Hz
    label: str = UNLABELED
    true_error: float | None = None  # simulation-only: injected bias + noise, m

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"pseudorange must be positive, got {self.rho}")
        if not (0.0 <= self.cn0 <= 60.0):
            raise ValueError(f"C/N0 out of range [0, 60]: {self.cn0}")
        if self.label not in (LOS, NLOS, UNLABELED):
            raise ValueError(f"unknown label {self.label!r}")


@dataclass
class ReceiverHypothesis:
    position: np.ndarray  # ECEF, m
    clock_bias: float = 0.0  # meters

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)


def geometric_range(rx_position, sat_position) -> float:
    d = np.asarray(rx_position, dtype=float) - np.asarray(sat_position, dtype=float)
    rng = float(np.linalg.norm(d))
    if rng < 1e-6:
        raise DegenerateGeometryError("receiver and satellite positions coincide")
    return rng


def predict_pseudorange(rx: ReceiverHypothesis, sat: SatelliteState) -> float:
    """Modeled pseudorange: range + rx clock bias - sat clock bias + corrections."""
    return geometric_range(rx.position, sat.position) + rx.clock_bias - sat.clock_bias + sat.corrections


def residual(obs: PseudorangeObservation, rx: ReceiverHypothesis, sat: SatelliteState) -> float:
    """Measured minus predicted pseudorange."""
    return obs.rho - predict_pseudorange(rx, sat)


def jacobian(rx: ReceiverHypothesis, sat: SatelliteState) -> np.ndarray:
    """d(prediction)/d[x, y, z, clock_bias] as a 4-vector.

    The spatial part is the unit vector from satellite toward receiver;
    the clock entry is 1. Velocity and clock drift do not enter a
    single-epoch pseudorange.
    """
    d = rx.position - np.asarray(sat.position, dtype=float)
    rng = np.linalg.norm(d)
    if rng < 1e-6:
        raise DegenerateGeometryError("receiver and satellite positions coincide")
    return np.concatenate([d / rng, [1.0]])


def whiten(res: float, sigma: float) -> float:
    """Scale a scalar residual by its standard deviation."""
    if not sigma > 0:
        raise InvalidNoiseError(f"sigma must be positive, got {sigma}")
    return res / sigma
