"""Branches of mean-field solutions on a disjoint union of (deformed) disks.

Every component i carries mu_i = gamma z_i(mu_i); on a disk this reads
mu_i (1 - mu_i) = a_i gamma with roots mu_i^- <= 1/2 <= mu_i^+.  A branch picks
one root per component and is parametrized by mu = mu_1 of the largest
component, gamma = mu (1 - mu) / a_1.  From the roots

    beta = -8 pi sum(mu_i),  M_i = mu_i / sum(mu_i),  Z = sum(mu_i) / gamma,
    E = sum(M_i^2 e_i(mu_i)),  S = log Z + 2 beta E,  lambda = -beta / Z.

For identical disks the k-merged branches put n - k components on mu and k on
1 - mu, with mu running over all of (0, 1).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import deformed
from .disk import EIGHT_PI, log_excess
from .errors import DomainError, FoldError

log = logging.getLogger(__name__)

EQUAL_AREA_TOL = 1e-12


@dataclass(frozen=True)
class Component:
    area: float
    eta: float = 0.0

    def __post_init__(self):
        if not self.area > 0:
            raise DomainError(f"component area must be positive, got {self.area}")
        if self.eta < 0:
            raise DomainError(f"eta must be non-negative, got {self.eta}")

    @property
    def kind(self) -> str:
        return "deformed" if self.eta > 0 else "disk"

    def energy(self, mu, nu):
        if self.eta == 0:
            # log_excess also covers mu < 0 (beta > 0)
            return log_excess(mu, nu) / EIGHT_PI
        return deformed.perturbed_e(mu, self.eta, nu=nu)

    def partition(self, mu, nu):
        if self.eta == 0:
            return self.area / np.asarray(nu, dtype=float)
        return deformed.perturbed_z(mu, self.eta, self.area, nu=nu)

    def roots(self, gamma: float, sign: str) -> tuple[float, float]:
        return deformed.perturbed_roots(gamma, self.area, self.eta, sign)


@dataclass(frozen=True)
class DomainSpec:
    """Ordered components with non-increasing areas.

    ``scale`` records the factor the areas were divided by on loading
    (entropies of the original domain are larger by log(scale)).
    """

    components: tuple[Component, ...]
    scale: float = 1.0

    def __post_init__(self):
        if len(self.components) < 1:
            raise DomainError("a domain needs at least one component")
        areas = [c.area for c in self.components]
        if any(a2 > a1 for a1, a2 in zip(areas, areas[1:])):
            raise DomainError(f"areas must be non-increasing, got {areas}")

    @classmethod
    def from_areas(cls, areas: Sequence[float], etas: Sequence[float] | None = None,
                   normalize: bool = True) -> "DomainSpec":
        etas = [0.0] * len(areas) if etas is None else list(etas)
        if len(etas) != len(areas):
            raise DomainError("areas and etas differ in length")
        for a in areas:
            if not a > 0:
                raise DomainError(f"component area must be positive, got {a}")
        pairs = list(zip(map(float, areas), map(float, etas)))
        ordered = sorted(pairs, key=lambda p: -p[0])
        if ordered != pairs:
            warnings.warn("component areas were not sorted; reordered non-increasing", stacklevel=2)
        scale = ordered[0][0] if normalize else 1.0
        comps = tuple(Component(a / scale, e) for a, e in ordered)
        return cls(comps, scale)

    @property
    def N(self) -> int:
        return len(self.components)

    @property
    def areas(self) -> np.ndarray:
        return np.array([c.area for c in self.components])

    @property
    def total_area(self) -> float:
        return math.fsum(c.area for c in self.components)

    @property
    def all_disks(self) -> bool:
        return all(c.eta == 0 for c in self.components)

    @property
    def identical(self) -> bool:
        a1 = self.components[0].area
        return self.all_disks and all(abs(c.area - a1) <= EQUAL_AREA_TOL * a1 for c in self.components)

    def rescaled(self, factor: float) -> "DomainSpec":
        """Same shapes with every area multiplied by ``factor`` (not renormalized)."""
        return DomainSpec(tuple(Component(c.area * factor, c.eta) for c in self.components), self.scale)


@dataclass(frozen=True)
class KBranch:
    plus_set: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "plus_set", frozenset(int(i) for i in self.plus_set))
        if 1 in self.plus_set or any(i < 1 for i in self.plus_set):
            raise DomainError("plus_set must be a subset of {2, ..., N}")

    @property
    def k(self) -> int:
        return len(self.plus_set)

    @property
    def label(self) -> str:
        if not self.plus_set:
            return "0-branch"
        return f"{self.k}-branch+" + ",".join(str(i) for i in sorted(self.plus_set))


@dataclass(frozen=True)
class MergedBranch:
    k: int

    @property
    def label(self) -> str:
        return f"{self.k}-merged"


BranchSelector = KBranch | MergedBranch


@dataclass(frozen=True)
class BranchPoint:
    mu: float
    mu_i: tuple
    M_i: tuple
    E_i: tuple
    Z_i: tuple
    beta: float
    Z: float
    lam: float
    E: float
    S: float
    gamma: float


_SCALARS = ("mu", "gamma", "beta", "lam", "Z", "E", "S")
_VECTORS = ("mu_i", "M_i", "E_i", "Z_i")


@dataclass
class BranchCurve:
    """Columns of a sampled branch, ordered by mu.

    Per-component columns are (n_points, N) arrays.
    """

    selector: object
    columns: dict = field(repr=False)
    dropped: list = field(default_factory=list)
    domain: DomainSpec | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.columns["mu"])

    def __getattr__(self, name):
        cols = self.__dict__.get("columns", {})
        if name in cols:
            return cols[name]
        raise AttributeError(name)

    def point(self, j: int) -> BranchPoint:
        c = self.columns
        kw = {k: float(c[k][j]) for k in _SCALARS}
        kw.update({k: tuple(float(v) for v in c[k][j]) for k in _VECTORS})
        return BranchPoint(**kw)

    @property
    def points(self) -> list[BranchPoint]:
        return [self.point(j) for j in range(len(self))]

    @property
    def N(self) -> int:
        return self.columns["mu_i"].shape[1]


def mu_pm(gamma: float, area: float, sign: str) -> float:
    """Root of mu (1 - mu) = area * gamma: '-' in (0, 1/2], '+' in [1/2, 1)."""
    if sign not in ("+", "-"):
        raise DomainError(f"sign must be '+' or '-', got {sign!r}")
    if gamma < 0 or area <= 0:
        raise DomainError("gamma must be non-negative and area positive")
    disc = 1.0 - 4.0 * area * gamma
    if disc < 0:
        raise FoldError(f"4 a gamma = {4 * area * gamma:.17g} > 1: gamma beyond the fold")
    small = 2.0 * area * gamma / (1.0 + math.sqrt(disc))
    return small if sign == "-" else 1.0 - small


# -- core assembly ---------------------------------------------------------


def _assemble(domain: DomainSpec, mu_i, nu_i, gamma, mu):
    """Thermodynamics from per-component roots; mu_i, nu_i are (N, n) arrays."""
    s = mu_i.sum(axis=0)
    beta = -EIGHT_PI * s
    with np.errstate(divide="ignore", invalid="ignore"):
        M = mu_i / s
    e = np.empty_like(mu_i)
    zc = np.empty_like(mu_i)
    for i, c in enumerate(domain.components):
        e[i] = c.energy(mu_i[i], nu_i[i])
        zc[i] = c.partition(mu_i[i], nu_i[i])
    flat = gamma == 0
    if np.any(flat):
        # beta = 0 limit: uniform density, M_i = a_i / |Lambda|
        M[:, flat] = (domain.areas / domain.total_area)[:, None]
    E_i = M * M * e
    E = E_i.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        Z = np.where(flat, domain.total_area, s / np.where(flat, 1.0, gamma))
    S = np.log(Z) + 2.0 * beta * E
    return {
        "mu": np.asarray(mu, dtype=float),
        "gamma": gamma,
        "beta": beta,
        "lam": EIGHT_PI * gamma,
        "Z": Z,
        "E": E,
        "S": S,
        "mu_i": mu_i.T.copy(),
        "M_i": M.T.copy(),
        "E_i": E_i.T.copy(),
        "Z_i": zc.T.copy(),
    }


def _kbranch_roots_disks(domain: DomainSpec, plus: frozenset, mu):
    a = domain.areas
    a1 = a[0]
    nu = 1.0 - mu
    g = mu * nu
    n_c = domain.N
    mu_i = np.empty((n_c, mu.size))
    nu_i = np.empty_like(mu_i)
    mu_i[0], nu_i[0] = mu, nu
    for i in range(1, n_c):
        r = a[i] / a1
        # 1 - 4 a_i gamma, written to avoid cancellation when a_i ~ a_1, mu ~ 1/2
        disc = (1.0 - 2.0 * mu) ** 2 + 4.0 * g * (1.0 - r)
        small = 2.0 * r * g / (1.0 + np.sqrt(disc))
        if (i + 1) in plus:
            mu_i[i], nu_i[i] = 1.0 - small, small
        else:
            mu_i[i], nu_i[i] = small, 1.0 - small
    return mu_i, nu_i, g / a1, np.ones(mu.size, dtype=bool), [None] * mu.size


def _kbranch_roots_general(domain: DomainSpec, plus: frozenset, mu):
    comps = domain.components
    c1 = comps[0]
    mu_i = np.full((domain.N, mu.size), np.nan)
    nu_i = np.full_like(mu_i, np.nan)
    gamma = np.full(mu.size, np.nan)
    ok = np.ones(mu.size, dtype=bool)
    bad = [None] * mu.size
    for j, m in enumerate(mu):
        n = 1.0 - m
        gam = float(m / c1.partition(m, n))
        gamma[j] = gam
        mu_i[0, j], nu_i[0, j] = m, n
        for i in range(1, domain.N):
            try:
                mu_i[i, j], nu_i[i, j] = comps[i].roots(gam, "+" if (i + 1) in plus else "-")
            except FoldError:
                ok[j] = False
                bad[j] = i
                mu_i[:, j] = nu_i[:, j] = 0.5
                break
    return mu_i, nu_i, gamma, ok, bad


def _merged_roots(N: int, k: int, mu):
    mu_i = np.empty((N, mu.size))
    nu_i = np.empty_like(mu_i)
    mu_i[: N - k], nu_i[: N - k] = mu, 1.0 - mu
    mu_i[N - k:], nu_i[N - k:] = 1.0 - mu, mu
    return mu_i, nu_i


def _check_merged(domain: DomainSpec, k: int):
    if not domain.identical:
        raise DomainError("merged branches need identical components")
    if not (0 <= k <= domain.N / 2):
        raise DomainError(f"k must lie in [0, N/2], got {k}")


def extends_to_positive_beta(domain: DomainSpec, selector) -> bool:
    """0-branches of disk domains continue through the uniform state to mu < 0."""
    if not domain.all_disks:
        return False
    if isinstance(selector, KBranch):
        return not selector.plus_set
    return isinstance(selector, MergedBranch) and selector.k == 0


def _columns(domain: DomainSpec, selector, mu):
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    lo_ok = np.isfinite(mu) if extends_to_positive_beta(domain, selector) else mu > 0
    if not np.all(lo_ok & (mu < 1)):
        raise DomainError("mu must lie in (0, 1)")
    if isinstance(selector, MergedBranch):
        _check_merged(domain, selector.k)
        mu_i, nu_i = _merged_roots(domain.N, selector.k, mu)
        a = domain.components[0].area
        cols = _assemble(domain, mu_i, nu_i, mu * (1.0 - mu) / a, mu)
        # exact sum of the roots: k + (n - 2k) mu
        s = selector.k + (domain.N - 2 * selector.k) * mu
        cols["beta"] = -EIGHT_PI * s
        with np.errstate(divide="ignore", invalid="ignore"):
            cols["Z"] = s / cols["gamma"]
        cols["Z"] = np.where(mu == 0, domain.total_area, cols["Z"])
        cols["S"] = np.log(cols["Z"]) + 2.0 * cols["beta"] * cols["E"]
        return cols, np.ones(mu.size, dtype=bool), [None] * mu.size
    if not isinstance(selector, KBranch):
        raise DomainError(f"unknown selector {selector!r}")
    if any(i > domain.N for i in selector.plus_set):
        raise DomainError("plus_set refers to a missing component")
    if domain.all_disks:
        mu_i, nu_i, gamma, ok, bad = _kbranch_roots_disks(domain, selector.plus_set, mu)
    else:
        mu_i, nu_i, gamma, ok, bad = _kbranch_roots_general(domain, selector.plus_set, mu)
    return _assemble(domain, mu_i, nu_i, gamma, mu), ok, bad


def branch_columns(domain: DomainSpec, selector, mu):
    """Vectorized evaluation; raises FoldError if any mu is infeasible."""
    cols, ok, bad = _columns(domain, selector, mu)
    if not ok.all():
        j = int(np.argmin(ok))
        raise FoldError(f"component {bad[j] + 1} has no root at mu={cols['mu'][j]}", index=bad[j])
    return cols


def branch_point(domain: DomainSpec, selector, mu: float) -> BranchPoint:
    cols = branch_columns(domain, selector, [mu])
    return BranchCurve(selector, cols, domain=domain).point(0)


def merged_branch_point(N: int, k: int, mu: float, area: float = 1.0) -> BranchPoint:
    domain = DomainSpec(tuple(Component(area) for _ in range(N)))
    if N < 2:
        raise DomainError("merged branches need N >= 2")
    return branch_point(domain, MergedBranch(k), mu)


def branch_state(domain: DomainSpec, selector, mu: float) -> tuple[float, float, float]:
    """(beta, E, S) at a single mu; the hot path for root finding."""
    cols = branch_columns(domain, selector, [mu])
    return float(cols["beta"][0]), float(cols["E"][0]), float(cols["S"][0])


def from_gamma(domain: DomainSpec, gamma: float, signs: Sequence[str]) -> BranchPoint:
    if len(signs) != domain.N:
        raise DomainError("one sign per component is required")
    roots = []
    for i, (c, sg) in enumerate(zip(domain.components, signs)):
        try:
            roots.append(c.roots(gamma, sg))
        except FoldError as exc:
            raise FoldError(str(exc), index=i) from None
    mu_i = np.array([[r[0]] for r in roots])
    nu_i = np.array([[r[1]] for r in roots])
    cols = _assemble(domain, mu_i, nu_i, np.array([gamma]), mu_i[0])
    return BranchCurve(None, cols).point(0)


def entropy_from_gamma(gamma: float, beta: float, energy: float) -> float:
    """S = -log gamma + log(beta / -8 pi) + 2 beta E."""
    return -math.log(gamma) + math.log(beta / -EIGHT_PI) + 2.0 * beta * energy


def entropy_from_components(point: BranchPoint) -> float:
    """Sum over components of M_i log(Z_i / M_i) + 2 beta E_i."""
    return math.fsum(
        m * math.log(z / m) + 2.0 * point.beta * e for m, z, e in zip(point.M_i, point.Z_i, point.E_i)
    )


def default_mu_grid(n: int = 2000, edge: float = 1e-6) -> np.ndarray:
    return np.linspace(edge, 1.0 - edge, n)


def _refine_extrema(domain, selector, mu, E, levels):
    """Extra samples around each sign change of dE/dmu (ternary narrowing)."""
    d = np.diff(E)
    sgn = np.sign(d)
    extra = []
    for j in np.nonzero(sgn[1:] * sgn[:-1] < 0)[0]:
        lo, hi = mu[j], mu[j + 2]
        is_max = d[j] > 0
        for _ in range(levels):
            m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
            e1, e2 = branch_columns(domain, selector, [m1, m2])["E"]
            extra += [m1, m2]
            if (e1 < e2) == is_max:
                lo = m1
            else:
                hi = m2
    return np.array(extra)


def sample_branch(domain: DomainSpec, selector, mu_grid: Iterable[float] | None = None,
                  refine_levels: int = 12) -> BranchCurve:
    mu = default_mu_grid() if mu_grid is None else np.asarray(list(mu_grid), dtype=float)
    if mu.size == 0:
        raise DomainError("empty mu grid")
    lowest = -np.inf if extends_to_positive_beta(domain, selector) else 0.0
    if np.any(np.diff(mu) <= 0) or mu[0] <= lowest or mu[-1] >= 1:
        raise DomainError("mu grid must be strictly increasing inside (0, 1)")
    cols, ok, bad = _columns(domain, selector, mu)
    dropped = [(float(mu[j]), bad[j]) for j in np.nonzero(~ok)[0]]
    if dropped:
        log.info("%s: dropped %d points beyond folds", getattr(selector, "label", selector), len(dropped))
    keep = {k: v[ok] for k, v in cols.items()}
    if len(keep["mu"]) == 0:
        raise DomainError("no feasible point on the requested branch")
    curve = BranchCurve(selector, keep, dropped, domain)
    if refine_levels and len(curve) >= 3:
        extra = _refine_extrema(domain, selector, curve.mu, curve.E, refine_levels)
        if extra.size:
            mu_all = np.unique(np.concatenate([curve.mu, extra]))
            refined = sample_branch(domain, selector, mu_all, refine_levels=0)
            refined.dropped = dropped + refined.dropped
            return refined
    return curve

