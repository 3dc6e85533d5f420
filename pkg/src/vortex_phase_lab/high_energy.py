"""High-energy transitions on N slightly different deformed disks.

Component i has area 1 + alpha_i eta and deformation q_i eta.  The branch B_i
puts component i on the root near 1 and every other component on its small
root.  At high energy (small gamma) the entropies of the B_i differ by

    eta (alpha_i + 2 gamma c_i),   c_i = 6 q_i - N alpha_i / 2,

up to terms common to all i and higher orders.  Choosing alpha decreasing and
c increasing makes the maximizing branch change N -> N-1 -> ... -> 1 as gamma
decreases (energy increases), one first-order transition per change.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .branches import Component, DomainSpec, from_gamma
from .errors import DomainError, FoldError
from .transitions import TransitionReport

log = logging.getLogger(__name__)

# the first-order comparator is only predictive when eta * max(|alpha|, |q|) is tiny
PLAN_EFFECTIVE_ETA = 2e-6


@dataclass(frozen=True)
class HighEnergyPlan:
    N: int
    eta: float
    alpha: tuple
    q: tuple
    gamma_crossings: tuple = ()
    E_crossings: tuple = ()
    window: tuple = (0.002, 0.02)

    def __post_init__(self):
        if len(self.alpha) != self.N or len(self.q) != self.N:
            raise DomainError("alpha and q need one entry per component")
        if self.eta < 0 or any(x < 0 for x in self.q):
            raise DomainError("eta and q must be non-negative")

    @property
    def c(self) -> np.ndarray:
        return 6.0 * np.asarray(self.q) - 0.5 * self.N * np.asarray(self.alpha)

    def domain(self) -> DomainSpec:
        comps = tuple(Component(1.0 + a * self.eta, qq * self.eta) for a, qq in zip(self.alpha, self.q))
        return DomainSpec(comps)

    def as_dict(self) -> dict:
        return {
            "N": self.N,
            "eta": self.eta,
            "alpha": list(self.alpha),
            "q": list(self.q),
            "gamma_crossings": list(self.gamma_crossings),
            "E_crossings": list(self.E_crossings),
            "window": list(self.window),
        }


def comparator(i: int, gamma, plan: HighEnergyPlan):
    """i-dependent part of the B_i entropy at fixed energy (1-based i)."""
    a, qq = plan.alpha[i - 1], plan.q[i - 1]
    return plan.eta * (a + 2.0 * np.asarray(gamma) * (6.0 * qq - 0.5 * plan.N * a))


def variant_comparator(i: int, gamma, plan: HighEnergyPlan):
    """The variant eta (alpha_i + 2 gamma (24 q_i - alpha_i)).

    Kept for comparison; it does not track the exact crossings of the
    first-order model (see ``comparator``).
    """
    a, qq = plan.alpha[i - 1], plan.q[i - 1]
    return plan.eta * (a + 2.0 * np.asarray(gamma) * (24.0 * qq - a))


def pairwise_crossings(alpha, c) -> np.ndarray:
    """gamma*_i where lines alpha_i + 2 gamma c_i and alpha_{i+1} + 2 gamma c_{i+1} meet."""
    alpha, c = np.asarray(alpha, float), np.asarray(c, float)
    with np.errstate(divide="ignore"):
        return (alpha[:-1] - alpha[1:]) / (2.0 * (c[1:] - c[:-1]))


def comparator_winners(plan: HighEnergyPlan, gammas, which=comparator) -> np.ndarray:
    vals = np.array([which(i, gammas, plan) for i in range(1, plan.N + 1)])
    return np.argmax(vals, axis=0) + 1


def plan_sequences(N: int, eta: float, gamma_window=(0.002, 0.02), samples: int = 4000) -> HighEnergyPlan:
    """Constructive alpha, q with crossings inside ``gamma_window``.

    Pair (i, i+1) crosses at gamma*_i; these are log-spaced in the window and
    increase with i, so the winner runs N, ..., 1 as gamma decreases.  alpha
    and q are scaled so that eta * max(|alpha|, |q|) stays at 2e-6.
    """
    if N < 1:
        raise DomainError("N must be positive")
    lo, hi = gamma_window
    if not 0 < lo < hi:
        raise DomainError(f"gamma window must satisfy 0 < lo < hi, got {gamma_window}")
    if N == 1:
        return HighEnergyPlan(1, eta, (0.0,), (0.0,), (), (), (lo, hi))
    if not eta > 0:
        raise DomainError("eta must be positive to plan transitions")
    # interior log-spaced targets, one per adjacent pair
    targets = np.geomspace(lo, hi, N + 1)[1:-1]
    alpha = -np.arange(N, dtype=float)
    c = np.concatenate([[0.0], np.cumsum((alpha[:-1] - alpha[1:]) / (2.0 * targets))])
    q = (c + 0.5 * N * alpha) / 6.0
    if np.any(q < -1e-12):
        j = int(np.argmin(q))
        raise DomainError(
            f"infeasible window: q_{j + 1} = {q[j]:.3g} < 0 (crossings need gamma* <= about 1/N)"
        )
    q = np.maximum(q, 0.0)
    scale = PLAN_EFFECTIVE_ETA / (eta * max(np.abs(alpha).max(), np.abs(q).max()))
    alpha, q = alpha * scale, q * scale
    crossings = pairwise_crossings(alpha, 6.0 * q - 0.5 * N * alpha)
    plan = HighEnergyPlan(N, eta, tuple(alpha.tolist()), tuple(q.tolist()), (), (), (lo, hi))
    # non-adjacent pairs must not preempt: the winner sequence over the window is N..1
    g = np.geomspace(lo, hi, samples)[::-1]
    w = comparator_winners(plan, g)
    seq = [int(w[0])] + [int(b) for a, b in zip(w[:-1], w[1:]) if a != b]
    if seq != list(range(N, 0, -1)):
        raise DomainError(f"winner sequence {seq} is not N..1 over the window")
    encounter = tuple(float(x) for x in crossings[::-1])
    E_cross = []
    for gs, i in zip(encounter, range(N - 1, 0, -1)):
        try:
            E_cross.append(branch_state(plan.domain(), i, gs)[0])
        except FoldError:
            E_cross.append(math.nan)
    return HighEnergyPlan(N, eta, plan.alpha, plan.q, encounter, tuple(E_cross), (lo, hi))


def branch_signs(N: int, i: int) -> list[str]:
    return ["+" if j == i else "-" for j in range(1, N + 1)]


def branch_state(domain: DomainSpec, i: int, gamma: float) -> tuple[float, float, float]:
    """(E, S, beta) on B_i at gamma."""
    p = from_gamma(domain, gamma, branch_signs(domain.N, i))
    return p.E, p.S, p.beta


def high_energy_entropy(i: int, gamma: float, plan: HighEnergyPlan) -> float:
    """Entropy of B_i at gamma in the first-order model (1-based i)."""
    return branch_state(plan.domain(), i, gamma)[1]


class _BranchOfEnergy:
    """S and beta on B_i as functions of E, by inverting the monotone E(gamma)."""

    def __init__(self, domain, i, gammas):
        self.domain, self.i = domain, i
        states = np.array([branch_state(domain, i, g) for g in gammas])
        order = np.argsort(states[:, 0])
        self.E = states[order, 0]
        self.g = np.asarray(gammas)[order]
        if np.any(np.diff(self.E) <= 0):
            raise DomainError(f"E(gamma) on B_{i} is not monotone over the gamma range")

    @property
    def E_range(self):
        return self.E[0], self.E[-1]

    def gamma_at(self, E):
        j = int(np.clip(np.searchsorted(self.E, E), 1, len(self.E) - 1))
        g1, g2 = sorted((self.g[j - 1], self.g[j]))
        f = lambda g: branch_state(self.domain, self.i, g)[0] - E
        return brentq(f, g1, g2, xtol=1e-16 * g1, rtol=4 * np.finfo(float).eps, maxiter=300)

    def at(self, E):
        g = self.gamma_at(E)
        e, s, b = branch_state(self.domain, self.i, g)
        return s, b, g


def locate_high_energy_transitions(domain: DomainSpec, plan: HighEnergyPlan | None = None,
                                   E_range=None, gamma_range=None, samples: int = 600):
    """Crossings between the entropies of the branches B_1..B_N, in increasing E.

    The gamma range defaults to the plan window widened by 2 on both sides.
    Returns (reports, info) where info holds the winner sequence in
    increasing energy and a ``partial`` flag.
    """
    N = domain.N
    info = {"winners": [], "partial": False}
    if N < 2 or domain.identical and all(c.eta == domain.components[0].eta for c in domain.components):
        return [], info
    if gamma_range is None:
        lo, hi = plan.window if plan is not None else (0.002, 0.02)
        gamma_range = (lo / 2.0, min(hi * 2.0, 0.2))
    gammas = np.geomspace(gamma_range[0], gamma_range[1], samples)
    fns = [_BranchOfEnergy(domain, i, gammas) for i in range(1, N + 1)]
    E_lo = max(f.E_range[0] for f in fns)
    E_hi = min(f.E_range[1] for f in fns)
    if E_range is not None:
        E_lo, E_hi = max(E_lo, E_range[0]), min(E_hi, E_range[1])
    if not E_lo < E_hi:
        raise DomainError("branches share no energy interval in the requested range")
    grid = np.linspace(E_lo, E_hi, samples)[1:-1]
    S = np.array([[f.at(E)[0] for E in grid] for f in fns])
    win = np.argmax(S, axis=0)
    info["winners"] = [int(win[0]) + 1] + [int(b) + 1 for a, b in zip(win[:-1], win[1:]) if a != b]
    reports = []
    for j in np.nonzero(win[1:] != win[:-1])[0]:
        a, b = fns[win[j]], fns[win[j + 1]]
        f = lambda E: a.at(E)[0] - b.at(E)[0]
        E_star = brentq(f, grid[j], grid[j + 1], xtol=1e-15 * grid[j], rtol=4 * np.finfo(float).eps)
        s_a, b_a, _ = a.at(E_star)
        s_b, b_b, g_b = b.at(E_star)
        rep = TransitionReport(
            True,
            E_star=float(E_star),
            S_star=float(0.5 * (s_a + s_b)),
            beta_minus=float(b_a),
            beta_plus=float(b_b),
            left_segment=f"B{a.i}",
            right_segment=f"B{b.i}",
            bracket=(float(grid[j]), float(grid[j + 1])),
        )
        rep.endpoints = {"gamma_star": float(g_b), "gamma_star_left": float(a.gamma_at(E_star))}
        reports.append(rep)
    if plan is not None and len(reports) < N - 1:
        info["partial"] = True
        log.warning("found %d of %d planned crossings in the energy range", len(reports), N - 1)
    return reports, info
