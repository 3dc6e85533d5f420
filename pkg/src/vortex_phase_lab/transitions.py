"""Entropy envelope, first/second kind classification and transition search.

A branch curve E(mu) is split into monotone segments at its critical points.
On each segment the energy can be inverted, so every segment defines a
function S(E).  The microcanonical entropy is the upper envelope of these
functions; a first-order transition is an energy where the maximizing
segment changes while S stays continuous and beta jumps up.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .branches import (
    BranchCurve,
    DomainSpec,
    KBranch,
    MergedBranch,
    branch_columns,
    default_mu_grid,
    extends_to_positive_beta,
    sample_branch,
)
from .disk import EIGHT_PI
from .errors import DomainError, RangeError

log = logging.getLogger(__name__)

ENERGY_RTOL = 1e-12
TIE_RTOL = 1e-12
_BISECT_STEPS = 64


@dataclass(frozen=True)
class BranchSegment:
    """Piece of a branch between two critical points of E(mu)."""

    parent: str
    index: int
    domain: DomainSpec = field(repr=False)
    selector: object = field(repr=False)
    mu_range: tuple[float, float]
    E_range: tuple[float, float]
    increasing: bool
    role: str | None = None
    mu_samples: np.ndarray = field(default=None, repr=False, compare=False)
    E_samples: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def id(self) -> str:
        return f"{self.parent}:{self.role or self.index}"

    @property
    def monotone(self) -> str:
        return "E-increasing" if self.increasing else "E-decreasing"

    def contains(self, E, rtol: float = ENERGY_RTOL):
        E = np.asarray(E, dtype=float)
        lo, hi = self.E_range
        return (E >= lo * (1 - rtol)) & (E <= hi * (1 + rtol))

    def evaluate(self, mu):
        """Branch columns at the given mu values (array input)."""
        return branch_columns(self.domain, self.selector, np.atleast_1d(mu))

    def entropy(self, E):
        """(S, beta, mu) on this segment at energies E."""
        mu = invert_energy(self, E)
        cols = self.evaluate(mu)
        return cols["S"], cols["beta"], cols["mu"]


@dataclass
class EntropyEnvelope:
    E_grid: np.ndarray
    S_values: np.ndarray
    beta_values: np.ndarray
    winner: list
    gap: np.ndarray
    segments: list = field(default_factory=list, repr=False)
    E_m: float = math.nan
    S_m: float = math.nan

    @property
    def multi_winner(self) -> np.ndarray:
        return np.array([len(w) > 1 for w in self.winner], dtype=bool)

    def rows(self):
        for E, S, b, w, g in zip(self.E_grid, self.S_values, self.beta_values, self.winner, self.gap):
            yield {"E": float(E), "S": float(S), "beta": float(b), "winner": "|".join(w), "gap": bool(g)}


@dataclass
class TransitionReport:
    found: bool
    E_star: float = math.nan
    S_star: float = math.nan
    beta_minus: float = math.nan
    beta_plus: float = math.nan
    left_segment: str | None = None
    right_segment: str | None = None
    bracket: tuple[float, float] = (math.nan, math.nan)
    entropy_gap_scale: float = math.nan
    gap_ratios: dict = field(default_factory=dict)
    l_dominated: bool | None = None
    endpoints: dict = field(default_factory=dict)
    reason: str = ""

    def as_dict(self) -> dict:
        out = {
            "found": self.found,
            "E_star": self.E_star,
            "S_star": self.S_star,
            "beta_minus": self.beta_minus,
            "beta_plus": self.beta_plus,
            "left_segment": self.left_segment,
            "right_segment": self.right_segment,
            "bracket": list(self.bracket),
            "entropy_gap_scale": self.entropy_gap_scale,
            "gap_ratios": dict(self.gap_ratios),
            "l_dominated": self.l_dominated,
            "endpoints": dict(self.endpoints),
            "reason": self.reason,
        }
        return out


def _label(selector) -> str:
    return getattr(selector, "label", str(selector))


def _critical_mu(domain, selector, lo, hi, is_max):
    sign = -1.0 if is_max else 1.0

    def f(m):
        return sign * branch_columns(domain, selector, [m])["E"][0]

    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-15, "maxiter": 500})
    return float(res.x), float(sign * res.fun)


def segment_branch(curve: BranchCurve, noise: float = 1e-13) -> list[BranchSegment]:
    """Split a sampled branch at the critical points of E(mu).

    Differences |dE| below ``noise * E`` are treated as flat and do not count as
    sign changes; this keeps rounding wiggles near mu -> 0 from creating
    spurious critical points.
    """
    if len(curve) < 3:
        raise DomainError("need at least 3 samples to segment a branch")
    if curve.domain is None:
        raise DomainError("curve carries no domain; build it with sample_branch")
    mu, E = np.asarray(curve.mu), np.asarray(curve.E)
    d = np.diff(E)
    sgn = np.where(np.abs(d) <= noise * np.abs(E[1:]), 0, np.sign(d)).astype(int)
    nz = np.nonzero(sgn)[0]
    if nz.size == 0:
        raise DomainError("branch energy is flat to rounding; cannot segment")
    # vertex j+1 between diffs j and j' (next non-flat diff) is critical when signs differ
    crit = []
    for j0, j1 in zip(nz[:-1], nz[1:]):
        if sgn[j0] != sgn[j1]:
            crit.append((j0, j1 + 1, sgn[j0] > 0))
    label = _label(curve.selector)
    bounds_mu = [float(mu[0])]
    bounds_E = [float(E[0])]
    kinds = []
    for lo_j, hi_j, is_max in crit:
        m, e = _critical_mu(curve.domain, curve.selector, mu[lo_j], mu[hi_j], is_max)
        if m <= bounds_mu[-1] + 1e-14:
            raise DomainError(
                "ambiguous oscillation of E(mu): critical points are not separated; refine the mu grid"
            )
        bounds_mu.append(m)
        bounds_E.append(e)
        kinds.append("max" if is_max else "min")
    bounds_mu.append(float(mu[-1]))
    bounds_E.append(float(E[-1]))
    if len(bounds_mu) > 2 and bounds_mu[-1] <= bounds_mu[-2]:
        raise DomainError("ambiguous oscillation of E(mu) at the grid edge; refine the mu grid")

    is_zero = (isinstance(curve.selector, KBranch) and not curve.selector.plus_set) or (
        isinstance(curve.selector, MergedBranch) and curve.selector.k == 0
    )
    roles = [None] * (len(bounds_mu) - 1)
    if is_zero and kinds == ["max", "min"]:
        roles = ["d", "l", "r"]

    segs = []
    for i in range(len(bounds_mu) - 1):
        m_lo, m_hi = bounds_mu[i], bounds_mu[i + 1]
        inside = (mu > m_lo) & (mu < m_hi)
        ms = np.concatenate([[m_lo], mu[inside], [m_hi]])
        es = np.concatenate([[bounds_E[i]], E[inside], [bounds_E[i + 1]]])
        inc = bounds_E[i + 1] > bounds_E[i]
        # enforce monotone samples (flat rounding noise near mu -> 0)
        es = np.maximum.accumulate(es) if inc else np.minimum.accumulate(es)
        segs.append(
            BranchSegment(
                parent=label,
                index=i,
                domain=curve.domain,
                selector=curve.selector,
                mu_range=(m_lo, m_hi),
                E_range=(min(bounds_E[i], bounds_E[i + 1]), max(bounds_E[i], bounds_E[i + 1])),
                increasing=inc,
                role=roles[i],
                mu_samples=ms,
                E_samples=es,
            )
        )
    return segs


def invert_energy(segment: BranchSegment, E):
    """mu on the segment with E(mu) = E (vectorized bracketed bisection).

    Returns a float for scalar input.
    """
    scalar = np.ndim(E) == 0
    E = np.atleast_1d(np.asarray(E, dtype=float))
    if not np.all(segment.contains(E)):
        bad = E[~segment.contains(E)]
        raise RangeError(f"energy {bad[0]:.17g} outside segment range {segment.E_range}")
    E = np.clip(E, *segment.E_range)
    ms, es = segment.mu_samples, segment.E_samples
    key = es if segment.increasing else es[::-1]
    mk = ms if segment.increasing else ms[::-1]
    j = np.clip(np.searchsorted(key, E, side="left"), 1, len(key) - 1)
    a, b = mk[j - 1].copy(), mk[j].copy()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    sign = 1.0 if segment.increasing else -1.0
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        active = (mid > lo) & (mid < hi)
        if not active.any():
            break
        em = segment.evaluate(mid)["E"]
        up = sign * (em - E) < 0
        lo = np.where(active & up, mid, lo)
        hi = np.where(active & ~up, mid, hi)
    # pick whichever bracket end is closer in energy
    e_lo, e_hi = segment.evaluate(lo)["E"], segment.evaluate(hi)["E"]
    mu = np.where(np.abs(e_lo - E) <= np.abs(e_hi - E), lo, hi)
    return float(mu[0]) if scalar else mu


def uniform_point(domain: DomainSpec) -> tuple[float, float]:
    """(E_m, S_m) of the beta = 0 state: uniform density on the whole domain."""
    A = domain.total_area
    mass = domain.areas / A
    e0 = 1.0 / (2.0 * EIGHT_PI)
    return math.fsum(m * m * e0 for m in mass), math.log(A)


def default_selectors(domain: DomainSpec) -> list:
    if domain.identical and domain.N > 1:
        return [MergedBranch(k) for k in range(domain.N // 2 + 1)]
    return [KBranch(frozenset())]


def default_energy_grid(domain: DomainSpec, n: int = 400, lo: float = 0.5, hi: float = 20.0) -> np.ndarray:
    E_m, _ = uniform_point(domain)
    return np.geomspace(lo * E_m, hi * E_m, n)


def envelope_mu_grid(domain: DomainSpec, selector, E_min: float, E_max: float) -> np.ndarray:
    """mu samples reaching down to E_min (through beta > 0 when allowed) and up to E_max."""
    base = default_mu_grid()
    tail = 1.0 - np.geomspace(1e-7, 1e-13, 13)
    head = np.geomspace(1e-13, 1e-7, 13)
    parts = [head, base, tail]
    if extends_to_positive_beta(domain, selector):
        m = -1.0
        for _ in range(60):
            if branch_columns(domain, selector, [m])["E"][0] < E_min:
                break
            m *= 2.0
        parts.insert(0, np.concatenate([-np.geomspace(-m, 1e-7, 400), [0.0]]))
    mu = np.unique(np.concatenate(parts))
    return mu[(mu < 1.0)]


def _refine_grid(E_grid, segments, points=201):
    """Add segment endpoint energies and dense samples between nearby ones."""
    ends = sorted({e for s in segments for e in s.E_range})
    extra = [np.asarray(ends)]
    for e1, e2 in zip(ends[:-1], ends[1:]):
        if e2 - e1 < 0.05 * e2:
            extra.append(np.linspace(e1, e2, points))
    lo, hi = E_grid.min(), E_grid.max()
    extra = np.concatenate(extra)
    extra = extra[(extra >= lo) & (extra <= hi)]
    return np.unique(np.concatenate([E_grid, extra]))


def _evaluate_segments(segments, E):
    """(n_seg, n_E) arrays of S and beta, NaN where a segment does not reach E."""
    S = np.full((len(segments), E.size), np.nan)
    B = np.full_like(S, np.nan)
    for i, seg in enumerate(segments):
        inside = seg.contains(E)
        if inside.any():
            s, b, _ = seg.entropy(E[inside])
            S[i, inside], B[i, inside] = s, b
    return S, B


def entropy_envelope(domain: DomainSpec, selectors=None, E_grid=None, refine: bool = True) -> EntropyEnvelope:
    """Upper envelope of the segment entropies on an energy grid."""
    selectors = default_selectors(domain) if selectors is None else list(selectors)
    if not selectors:
        raise DomainError("at least one selector is required")
    E_grid = default_energy_grid(domain) if E_grid is None else np.asarray(E_grid, dtype=float)
    if E_grid.ndim != 1 or E_grid.size == 0 or np.any(E_grid <= 0):
        raise DomainError("energy grid must be a non-empty list of positive values")
    E_grid = np.unique(E_grid)
    segments = []
    for sel in selectors:
        mu = envelope_mu_grid(domain, sel, E_grid.min(), E_grid.max())
        curve = sample_branch(domain, sel, mu)
        segments.extend(segment_branch(curve))
    E_m, S_m = uniform_point(domain)
    if refine:
        E_grid = _refine_grid(E_grid, segments)
    S_all, B_all = _evaluate_segments(segments, E_grid)
    gap = np.all(np.isnan(S_all), axis=0)
    S_best = np.where(gap, np.nan, np.nanmax(np.where(np.isnan(S_all), -np.inf, S_all), axis=0))
    winner, beta = [], np.full(E_grid.size, np.nan)
    for j in range(E_grid.size):
        if gap[j]:
            winner.append(())
            continue
        col = S_all[:, j]
        tol = TIE_RTOL * max(1.0, abs(S_best[j]))
        idx = [i for i in range(len(segments)) if not np.isnan(col[i]) and col[i] >= S_best[j] - tol]
        winner.append(tuple(segments[i].id for i in idx))
        beta[j] = B_all[idx[0], j]
    # the beta = 0 point is exact: use it when the grid contains E_m
    at_m = np.isclose(E_grid, E_m, rtol=ENERGY_RTOL, atol=0)
    S_best = np.where(at_m, S_m, S_best)
    beta = np.where(at_m, 0.0, beta)
    if gap.any():
        log.warning("%d energies not reached by any candidate segment", int(gap.sum()))
    return EntropyEnvelope(E_grid, S_best, beta, winner, gap, segments, E_m, S_m)


# -- transitions -----------------------------------------------------------


def _bisect_difference(fa, fb, lo, hi, rtol=ENERGY_RTOL):
    """Root of fa - fb on [lo, hi] (scalar functions of E), by bisection."""
    dlo = fa(lo) - fb(lo)
    dhi = fa(hi) - fb(hi)
    if dlo == 0:
        return lo
    if dhi == 0:
        return hi
    if np.sign(dlo) == np.sign(dhi):
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        dm = fa(mid) - fb(mid)
        if dm == 0:
            return mid
        if np.sign(dm) == np.sign(dlo):
            lo, dlo = mid, dm
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return 0.5 * (lo + hi)


def _entropy_fn(seg):
    return lambda E: float(seg.entropy(E)[0][0])


def _finish(report: TransitionReport, left, right, E_star):
    S_l, b_l, _ = left.entropy(E_star)
    S_r, b_r, _ = right.entropy(E_star)
    report.E_star = float(E_star)
    report.S_star = float(0.5 * (S_l[0] + S_r[0]))
    report.beta_minus, report.beta_plus = float(b_l[0]), float(b_r[0])
    report.left_segment, report.right_segment = left.id, right.id
    if not report.beta_minus < report.beta_plus:
        log.warning("beta does not jump upward at E*=%.17g", E_star)
    return report


def _dlr_transition(segs, samples=401) -> TransitionReport:
    d, l, r = (next(s for s in segs if s.role == k) for k in "dlr")
    Ebar_c, E0 = d.E_range[1], r.E_range[0]
    Sbar_c = float(d.evaluate([d.mu_range[1]])["S"][0])
    S0 = float(r.evaluate([r.mu_range[0]])["S"][0])
    ends = {"Ebar_c": Ebar_c, "E0": E0, "Sbar_c": Sbar_c, "S0": S0}
    if not E0 < Ebar_c:
        return TransitionReport(False, endpoints=ends, reason="energy ranges of d and r do not overlap")
    rep = TransitionReport(True, bracket=(E0, Ebar_c), endpoints=ends)
    # S_1 = S_d(E0), S_2 = S_r(Ebar_c) for the monotone comparison
    ends["S1"] = float(d.entropy(E0)[0][0])
    ends["S2"] = float(r.entropy(Ebar_c)[0][0])
    E_star = _bisect_difference(_entropy_fn(d), _entropy_fn(r), E0, Ebar_c)
    if E_star is None:
        return TransitionReport(False, endpoints=ends, reason="S_d - S_r has no sign change on (E0, Ebar_c)")
    Es = np.linspace(E0, Ebar_c, samples)
    Sd, Sl, Sr = (s.entropy(Es)[0] for s in (d, l, r))
    scale = abs(Sbar_c - S0)
    rep.entropy_gap_scale = float(np.max(np.abs(Sd - Sr)) / scale)
    rep.gap_ratios = {
        "d-r": rep.entropy_gap_scale,
        "d-l": float(np.max(np.abs(Sd - Sl)) / scale),
        "r-l": float(np.max(np.abs(Sr - Sl)) / scale),
    }
    inner = slice(1, -1)
    rep.l_dominated = bool(np.all(Sl[inner] < np.minimum(Sd, Sr)[inner]))
    if not rep.l_dominated:
        log.warning("S_l is not below min(S_d, S_r) on the bracket")
    return _finish(rep, d, r, E_star)


def _envelope_transitions(env: EntropyEnvelope) -> list[TransitionReport]:
    by_id = {s.id: s for s in env.segments}
    out = []
    for j in range(env.E_grid.size - 1):
        w0, w1 = env.winner[j], env.winner[j + 1]
        if not w0 or not w1 or set(w0) & set(w1):
            continue
        a, b = by_id[w0[0]], by_id[w1[0]]
        lo, hi = env.E_grid[j], env.E_grid[j + 1]
        if not (a.contains(hi) and b.contains(lo)):
            continue
        E_star = _bisect_difference(_entropy_fn(a), _entropy_fn(b), lo, hi)
        if E_star is None:
            continue
        rep = TransitionReport(True, bracket=(float(lo), float(hi)))
        out.append(_finish(rep, a, b, E_star))
    return out


def locate_transition(source) -> TransitionReport:
    """First-order transition from a 0-branch curve (d/l/r roles) or an envelope.

    Returns a report with ``found=False`` when there is none.
    """
    if isinstance(source, EntropyEnvelope):
        reps = _envelope_transitions(source)
        if not reps:
            return TransitionReport(False, reason="winner never switches between crossing segments")
        return reps[0]
    if isinstance(source, BranchCurve):
        segs = segment_branch(source)
    else:
        segs = list(source)
    if {s.role for s in segs} >= {"d", "l", "r"}:
        return _dlr_transition(segs)
    return TransitionReport(False, reason="branch has no d/l/r structure")


def transition_for_domain(domain: DomainSpec) -> TransitionReport:
    """Convenience: identical areas use merged branches, others the 0-branch."""
    if domain.identical and domain.N > 1:
        E_m, _ = uniform_point(domain)
        return locate_transition(entropy_envelope(domain, E_grid=default_energy_grid(domain, lo=1.0)))
    curve = sample_branch(domain, KBranch(frozenset()))
    return locate_transition(curve)


def classify_kind(domain: DomainSpec, curve: BranchCurve | None = None) -> str:
    """'second' iff the 0-branch reaches beta <= -8 pi, else 'first'."""
    curve = sample_branch(domain, KBranch(frozenset())) if curve is None else curve
    # identical components sit exactly on beta = -8 pi up to one rounding
    return "second" if float(np.min(curve.beta)) <= -EIGHT_PI * (1.0 - 1e-12) else "first"
