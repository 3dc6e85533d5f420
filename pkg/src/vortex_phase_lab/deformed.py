"""First-order thermodynamics of conformally deformed disks.

The unit disk is pushed through z -> z + eps z^3 and rescaled to area ``a``;
``eta`` is the small deformation parameter.  To first order in eta

    e_eta(mu) = e(mu) - eta tau(mu) / (8 pi)
    z_eta(mu) = a / (1 - mu) * (1 + eta zeta(mu))

with tau = -dg/dmu, zeta = g + mu dg/dmu and g(mu) = 6 (1 - mu) / (1 - 2 mu / 3).
The o(eta) remainder is dropped; this first-order model is treated as exact
when branches are built on top of it.
"""

from __future__ import annotations

import math
import warnings
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .disk import EIGHT_PI, e_of_mu
from .errors import DomainError, FoldError, ValidityError

ETA_MAX = 0.05


def g_of_mu(mu):
    mu = np.asarray(mu, dtype=float)
    return 6.0 * (1.0 - mu) / (1.0 - 2.0 * mu / 3.0)


def g_of_beta(beta):
    """Free-energy correction g(beta) = 6 (1 - mu) / (1 - 2 mu / 3), mu = -beta / 8 pi."""
    out = g_of_mu(-np.asarray(beta, dtype=float) / EIGHT_PI)
    return out if np.ndim(out) else float(out)


def tau(mu):
    mu = np.asarray(mu, dtype=float)
    out = 2.0 / (1.0 - 2.0 * mu / 3.0) ** 2
    return out if out.ndim else float(out)


def zeta(mu):
    mu = np.asarray(mu, dtype=float)
    out = 6.0 * (1.0 - 2.0 * mu + 2.0 * mu**2 / 3.0) / (1.0 - 2.0 * mu / 3.0) ** 2
    return out if out.ndim else float(out)


def _check_eta(eta, eta_max, override):
    if eta < 0:
        raise DomainError(f"eta must be non-negative, got {eta}")
    if eta > eta_max:
        if not override:
            raise ValidityError(f"eta={eta} exceeds the first-order validity guard {eta_max}")
        warnings.warn(f"eta={eta} beyond validity guard {eta_max}", stacklevel=3)


def perturbed_e(mu, eta, *, nu=None, eta_max=ETA_MAX, override=False):
    _check_eta(eta, eta_max, override)
    base = e_of_mu(mu, nu)
    if eta == 0:
        return base
    return base - eta * tau(mu) / EIGHT_PI


def perturbed_z(mu, eta, area, *, nu=None, eta_max=ETA_MAX, override=False):
    _check_eta(eta, eta_max, override)
    mu_a = np.asarray(mu, dtype=float)
    if np.any(mu_a < 0) or np.any(mu_a >= 1):
        raise DomainError(f"mu must lie in (0, 1), got {mu}")
    one_minus = 1.0 - mu_a if nu is None else np.asarray(nu, dtype=float)
    out = area / one_minus
    if eta != 0:
        out = out * (1.0 + eta * zeta(mu_a))
    return out if np.ndim(out) else float(out)


def _reduced_gamma(mu, eta, nu=None):
    """mu (1 - mu) / (1 + eta zeta(mu)): gamma * area as a function of the root."""
    nu = 1.0 - mu if nu is None else nu
    return mu * nu / (1.0 + eta * zeta(mu))


@lru_cache(maxsize=256)
def fold_point(eta: float) -> tuple[float, float]:
    """(mu_fold, h_max) where h(mu) = mu (1 - mu) / (1 + eta zeta(mu)) peaks."""
    if eta == 0:
        return 0.5, 0.25
    res = minimize_scalar(
        lambda m: -_reduced_gamma(m, eta),
        bounds=(0.25, 0.75),
        method="bounded",
        options={"xatol": 1e-13},
    )
    return float(res.x), float(-res.fun)


def perturbed_roots(gamma: float, area: float, eta: float, sign: str) -> tuple[float, float]:
    """Root (mu, 1 - mu) of mu (1 - mu) = gamma a (1 + eta zeta(mu)).

    ``sign`` is '-' for the small-mass root and '+' for the root near 1.
    The '+' root is solved for nu = 1 - mu to keep 1 - mu accurate.
    """
    if sign not in "+-" or len(sign) != 1:
        raise DomainError(f"sign must be '+' or '-', got {sign!r}")
    if gamma <= 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    target = gamma * area
    if eta == 0:
        disc = 1.0 - 4.0 * target
        if disc < 0:
            raise FoldError(f"4 a gamma = {4 * target} > 1: no real root")
        small = 2.0 * target / (1.0 + math.sqrt(disc))
        return (small, 1.0 - small) if sign == "-" else (1.0 - small, small)
    mu_f, h_max = fold_point(eta)
    if target > h_max * (1 + 1e-14):
        raise FoldError(f"gamma a = {target} beyond fold {h_max}")
    if target >= h_max:
        return mu_f, 1.0 - mu_f
    opts = dict(xtol=1e-17 * target, rtol=1e-15, maxiter=400)
    if sign == "-":
        mu = brentq(lambda m: _reduced_gamma(m, eta) - target, 0.0, mu_f, **opts)
        return mu, 1.0 - mu
    nu = brentq(lambda n: _reduced_gamma(1.0 - n, eta, n) - target, 0.0, 1.0 - mu_f, **opts)
    return 1.0 - nu, nu


def asymptotic_roots(gamma, area, eta):
    """Small-gamma forms of the two roots.

    Since zeta(0) = 6 and zeta(1) = -18, mu- ~ gamma a (1 + 6 eta) and
    mu+ ~ 1 - gamma a (1 - 18 eta), both to first order in eta and gamma.
    """
    return gamma * area * (1.0 + 6.0 * eta), 1.0 - gamma * area * (1.0 - 18.0 * eta)


def high_energy_mu(gamma: float, area: float, eta: float, sign: str) -> float:
    return perturbed_roots(gamma, area, eta, sign)[0]
