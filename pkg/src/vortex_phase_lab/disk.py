"""Closed-form thermodynamics of the mean-field equation on a single disk.

On a disk of area ``a`` the mean-field equation -Lap(psi) = exp(-beta psi) / Z
is solved explicitly for beta > -8 pi.  With mu = -beta / (8 pi) the energy
per unit mass squared and the partition function are

    e(mu) = (-mu - log(1 - mu)) / (8 pi mu**2),      z(mu) = a / (1 - mu).

The energy does not depend on the area.  The entropy of a mass-M state is
S = M log(Z / M) + 2 beta E.

Note: the form ``(mu - log(1 - mu))`` that appears in some write-ups is a sign
typo; it disagrees with the beta form of the energy and is not used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError

EIGHT_PI = 8.0 * math.pi
MU_MIN = 1e-9
E_UNIFORM = 1.0 / (16.0 * math.pi)

_SERIES_X = 1e-2
_SERIES_TERMS = 14


@dataclass(frozen=True)
class DiskSpec:
    area: float

    def __post_init__(self):
        if not self.area > 0:
            raise DomainError(f"disk area must be positive, got {self.area}")

    @property
    def radius(self) -> float:
        return math.sqrt(self.area / math.pi)


@dataclass(frozen=True)
class DiskProfile:
    mu: float
    radius: float
    r: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)

    @property
    def samples(self):
        return list(zip(self.r.tolist(), self.psi.tolist(), self.rho.tolist()))


@dataclass(frozen=True)
class MassEnergyState:
    mass: float
    energy: float
    entropy: float
    beta: float
    partition: float


def log_excess(x, nu=None):
    """(-x - log(1 - x)) / x**2 for x < 1, stable near x = 0.

    ``nu`` may carry 1 - x computed without cancellation (useful for x near 1).
    """
    x = np.asarray(x, dtype=float)
    if nu is None:
        log_nu = np.log1p(-x)
    else:
        log_nu = np.log(np.asarray(nu, dtype=float))
    small = np.abs(x) < _SERIES_X
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (-x - log_nu) / (x * x)
    xs = np.where(small, x, 0.0)
    series = np.zeros_like(xs)
    for n in range(_SERIES_TERMS + 1, 1, -1):
        series = series * xs + 1.0 / n
    out = np.where(small, series, direct)
    return out if out.ndim else float(out)


def _check_mu(mu, allow_zero=False):
    mu_arr = np.asarray(mu, dtype=float)
    lo_ok = mu_arr >= 0 if allow_zero else mu_arr > 0
    if not np.all(lo_ok & (mu_arr < 1)):
        raise DomainError(f"mu must lie in (0, 1), got {mu}")
    return mu_arr


def e_of_mu(mu, nu=None):
    """Energy of the unit-mass disk solution at mu = -beta / 8 pi.

    Strictly increasing on (0, 1), e(0+) = 1 / (16 pi), log-divergent at 1.
    """
    _check_mu(mu, allow_zero=True)
    return log_excess(mu, nu) / EIGHT_PI


def z_of_mu(mu, area):
    m = _check_mu(mu, allow_zero=True)
    if not np.all(np.asarray(area) > 0):
        raise DomainError("area must be positive")
    out = area / (1.0 - m)
    return out if np.ndim(out) else float(out)


def disk_energy_of_beta(beta):
    """Energy (8 pi / beta^2) (beta / 8 pi - log(1 + beta / 8 pi)) for beta > -8 pi."""
    b = np.asarray(beta, dtype=float)
    if not np.all(b > -EIGHT_PI):
        raise DomainError(f"beta must exceed -8 pi, got {beta}")
    return log_excess(-b / EIGHT_PI) / EIGHT_PI


def disk_partition_of_beta(beta, area=1.0):
    b = np.asarray(beta, dtype=float)
    if not np.all(b > -EIGHT_PI):
        raise DomainError(f"beta must exceed -8 pi, got {beta}")
    out = area / (1.0 + b / EIGHT_PI)
    return out if np.ndim(out) else float(out)


def disk_entropy_of_beta(beta, area=1.0):
    """Entropy log Z + 2 beta E of the unit-mass disk solution."""
    b = np.asarray(beta, dtype=float)
    out = np.log(disk_partition_of_beta(b, area)) + 2.0 * b * disk_energy_of_beta(b)
    return out if np.ndim(out) else float(out)


def disk_state(beta, area=1.0, mass=1.0) -> MassEnergyState:
    """Mass-M state on a disk, using E(M, beta) = M^2 E(M beta), Z(M, beta) = Z(M beta)."""
    mb = mass * beta
    energy = mass**2 * float(disk_energy_of_beta(mb))
    z = float(disk_partition_of_beta(mb, area))
    return MassEnergyState(
        mass=mass,
        energy=energy,
        entropy=mass * math.log(z / mass) + 2.0 * beta * energy,
        beta=beta,
        partition=z,
    )


def stream_profile(mu, radius, r_grid) -> DiskProfile:
    """Closed-form psi and rho of the unit-mass solution; any mu < 1 (beta > -8 pi)."""
    r = np.asarray(r_grid, dtype=float)
    if not mu < 1:
        raise DomainError(f"mu must be below 1, got {mu}")
    if radius <= 0:
        raise DomainError("radius must be positive")
    if np.any(r < 0) or np.any(r > radius * (1 + 1e-14)):
        raise DomainError("r_grid must lie inside [0, R]")
    t = np.clip(1.0 - (r / radius) ** 2, 0.0, 1.0)
    x = mu * t
    # log1p(-x) / (-x) -> 1 as x -> 0
    nonzero = x != 0
    ratio = np.ones_like(x)
    ratio[nonzero] = np.log1p(-x[nonzero]) / -x[nonzero]
    psi = t * ratio / (4.0 * math.pi)
    area = math.pi * radius**2
    z = area / (1.0 - mu)
    rho = 1.0 / (z * (1.0 - x) ** 2)
    return DiskProfile(mu=float(mu), radius=float(radius), r=r, psi=psi, rho=rho)


def scaled_entropy(M: float, E: float, unit_entropy: Callable[[float], float]) -> float:
    """S(M, E) = M S(E / M^2) - M log M."""
    if not (M > 0 and E > 0):
        raise DomainError(f"mass and energy must be positive, got M={M}, E={E}")
    return M * unit_entropy(E / M**2) - M * math.log(M)
