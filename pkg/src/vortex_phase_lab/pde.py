"""Finite-difference solver for -Lap U = lambda exp(U) on rasterized planar domains.

Domains are unions of disks and capsule-shaped channels (or the image of the
unit disk under z -> z + eps z^3).  The Laplacian is the 5-point stencil; at
nodes next to the boundary the missing neighbour is replaced by the boundary
point itself at fractional distance theta h, giving the symmetric cut-cell
operator

    (A U)_i = h^-2 [ sum_{inner j} (U_i - U_j) + sum_{cut links} U_i / theta ].

Integrals use the piecewise linear interpolant on triangles clipped by the
linear interpolant of the level set, so areas and boundary-vanishing
integrands are second-order accurate.

With U = -beta psi and lambda = -beta / Z a solution carries

    Z = int exp(U),  beta = -Z lambda,
    E = int |grad U|^2 / (2 lambda^2 Z^2) = int U exp(U) / (2 lambda Z^2),
    S = log Z + 2 beta E.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy import ndimage

from .disk import EIGHT_PI
from .errors import ConvergenceError, DomainError

log = logging.getLogger(__name__)

THETA_MIN = 1e-3
_PERMC = "MMD_AT_PLUS_A"


# -- geometry --------------------------------------------------------------


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    r: float

    def phi(self, x, y):
        return np.hypot(x - self.cx, y - self.cy) - self.r

    @property
    def area(self) -> float:
        return math.pi * self.r**2


@dataclass(frozen=True)
class Channel:
    """Capsule of the given width joining the centers of disks i and j."""

    i: int
    j: int
    width: float


@dataclass(frozen=True)
class ConformalDisk:
    """Image of the unit disk under z -> z + eps z^3 (univalent for eps < 1/3)."""

    epsilon: float

    def phi(self, x, y):
        z = np.asarray(x) + 1j * np.asarray(y)
        w = z.copy()
        for _ in range(60):
            step = (w + self.epsilon * w**3 - z) / (1.0 + 3.0 * self.epsilon * w**2)
            w = w - step
            if np.all(np.abs(step) < 1e-15):
                break
        return np.abs(w) - 1.0


def _capsule_phi(x, y, a: Disk, b: Disk, width):
    ax, ay, bx, by = a.cx, a.cy, b.cx, b.cy
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = np.clip(((x - ax) * dx + (y - ay) * dy) / L2, 0.0, 1.0)
    return np.hypot(x - (ax + t * dx), y - (ay + t * dy)) - 0.5 * width


@dataclass(frozen=True)
class GeometrySpec:
    disks: tuple = ()
    channels: tuple = ()
    conformal: ConformalDisk | None = None

    def __post_init__(self):
        if not self.disks and self.conformal is None:
            raise DomainError("geometry needs at least one primitive")
        for ch in self.channels:
            if not (0 <= ch.i < len(self.disks) and 0 <= ch.j < len(self.disks)) or ch.i == ch.j:
                raise DomainError(f"channel refers to missing disks: {ch}")
            if not ch.width > 0:
                raise DomainError("channel width must be positive")
            if ch.width >= 2 * min(self.disks[ch.i].r, self.disks[ch.j].r):
                raise DomainError("channel wider than the disks it joins")

    def phi(self, x, y):
        """Level set: negative inside the union of primitives."""
        parts = [d.phi(x, y) for d in self.disks]
        parts += [_capsule_phi(x, y, self.disks[c.i], self.disks[c.j], c.width) for c in self.channels]
        if self.conformal is not None:
            parts.append(self.conformal.phi(x, y))
        return np.minimum.reduce(parts) if len(parts) > 1 else parts[0]

    @property
    def bbox(self):
        xs, ys = [], []
        for d in self.disks:
            xs += [d.cx - d.r, d.cx + d.r]
            ys += [d.cy - d.r, d.cy + d.r]
        if self.conformal is not None:
            e = abs(self.conformal.epsilon)
            xs += [-(1 + e), 1 + e]
            ys += [-(1 + e), 1 + e]
        return min(xs), max(xs), min(ys), max(ys)

    @property
    def expected_components(self) -> int:
        """Number of connected pieces implied by the channel graph."""
        n = len(self.disks) + (1 if self.conformal is not None else 0)
        parent = list(range(len(self.disks)))

        def find(k):
            while parent[k] != k:
                parent[k] = parent[parent[k]]
                k = parent[k]
            return k

        for c in self.channels:
            ri, rj = find(c.i), find(c.j)
            if ri != rj:
                parent[ri] = rj
                n -= 1
        return n

    @property
    def reference_radius(self) -> float:
        if self.disks:
            return max(d.r for d in self.disks)
        return 1.0

    @classmethod
    def disk(cls, area: float = 1.0):
        return cls(disks=(Disk(0.0, 0.0, math.sqrt(area / math.pi)),))

    @classmethod
    def unit_disk(cls, epsilon: float = 0.0):
        if epsilon == 0:
            return cls(disks=(Disk(0.0, 0.0, 1.0),))
        return cls(conformal=ConformalDisk(epsilon))

    @classmethod
    def dumbbell(cls, areas, width_factor: float | None, gap_factor: float = 0.25):
        """Disks in a row with the first area in the middle, joined by capsules.

        ``width_factor`` and ``gap_factor`` are relative to the largest radius;
        width None gives the disconnected union.  The layout is mirror
        symmetric about the middle disk when the two outer areas agree.
        """
        areas = [float(a) for a in areas]
        if any(a <= 0 for a in areas):
            raise DomainError("areas must be positive")
        radii = [math.sqrt(a / math.pi) for a in areas]
        R = max(radii)
        gap = gap_factor * R
        n = len(radii)
        # order along x: ..., 3, 1, 2, 4, ... keeps component 1 central
        left = [k for k in range(1, n) if k % 2 == 0][::-1]
        right = [k for k in range(1, n) if k % 2 == 1]
        order = left + [0] + right
        centers = {0: 0.0}
        x = 0.0
        prev = 0
        for k in right:
            x += radii[prev] + gap + radii[k]
            centers[k] = x
            prev = k
        x, prev = 0.0, 0
        for k in left[::-1]:
            x -= radii[prev] + gap + radii[k]
            centers[k] = x
            prev = k
        disks = tuple(Disk(centers[k], 0.0, radii[k]) for k in range(n))
        chans = ()
        if width_factor is not None:
            chans = tuple(Channel(a, b, width_factor * R) for a, b in zip(order[:-1], order[1:]))
        return cls(disks=disks, channels=chans)


# -- mesh ------------------------------------------------------------------


@dataclass
class Mesh:
    h: float
    x: np.ndarray = field(repr=False)          # node x coordinates (1D)
    y: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)        # level set at nodes (ny, nx)
    mask: np.ndarray = field(repr=False)       # interior nodes (ny, nx)
    index: np.ndarray = field(repr=False)      # (ny, nx) -> unknown index or -1
    A: sp.csc_matrix = field(repr=False)       # symmetric cut-cell -Lap
    weights: np.ndarray = field(repr=False)    # quadrature weights for boundary-vanishing integrands
    area: float = 0.0
    geometry: GeometrySpec | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.mask.sum())

    @property
    def nodes(self):
        """(x, y) coordinates of the unknowns, in index order."""
        jj, ii = np.nonzero(self.mask)
        return self.x[ii], self.y[jj]

    def integrate(self, values) -> float:
        """Integral of a function that vanishes on the boundary, from interior values."""
        return float(math.fsum((self.weights * np.asarray(values)).tolist()))

    def dirichlet_form(self, U) -> float:
        """h^2 U^T A U, the discrete integral of |grad U|^2."""
        return float(self.h**2 * U @ (self.A @ U))

    def to_grid(self, U) -> np.ndarray:
        out = np.zeros(self.mask.shape)
        out[self.mask] = U
        return out


def _link_theta(geometry, x0, y0, dx, dy, h, steps=48):
    """Fraction t in (0, 1] along the link where the level set crosses zero."""
    lo = np.zeros_like(x0)
    hi = np.ones_like(x0)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        inside = geometry.phi(x0 + mid * dx * h, y0 + mid * dy * h) < 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def _triangle_weights(phi, h, boundary_fn=None, X=None, Y=None):
    """Node weights of the clipped-triangle quadrature and the boundary term.

    Returns (W, C): the integral of the linear interpolant of f on {phi < 0},
    with f = 0 at crossing points, is sum W f; C is the extra term
    contributed by f = boundary_fn at the crossing points (0 if None).
    Both cell diagonals are used and averaged so the rule is mirror symmetric.
    """
    ny, nx = phi.shape
    W = np.zeros_like(phi)
    C = 0.0
    area_t = 0.5 * h * h
    corners = {
        "a": (slice(0, ny - 1), slice(0, nx - 1)),
        "b": (slice(0, ny - 1), slice(1, nx)),
        "c": (slice(1, ny), slice(1, nx)),
        "d": (slice(1, ny), slice(0, nx - 1)),
    }
    tris = [("a", "b", "c"), ("a", "c", "d"), ("a", "b", "d"), ("b", "c", "d")]
    for tri in tris:
        idx = [corners[k] for k in tri]
        f = [phi[s] for s in idx]
        w = [np.zeros_like(f[0]) for _ in range(3)]
        inside = [fk < 0 for fk in f]
        count = inside[0].astype(int) + inside[1] + inside[2]
        full = count == 3
        for k in range(3):
            w[k] += np.where(full, area_t / 3.0, 0.0)
        for k in range(3):
            o1, o2 = (k + 1) % 3, (k + 2) % 3
            # only vertex k inside
            one = (count == 1) & inside[k]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = np.where(one, f[k] / (f[k] - f[o1]), 0.0)
                t2 = np.where(one, f[k] / (f[k] - f[o2]), 0.0)
            a1 = area_t * t1 * t2
            w[k] += np.where(one, a1 / 3.0, 0.0)
            if boundary_fn is not None:
                C += _crossing_sum(boundary_fn, X, Y, idx, k, o1, t1, one, a1 / 3.0)
                C += _crossing_sum(boundary_fn, X, Y, idx, k, o2, t2, one, a1 / 3.0)
            # vertex k outside, the other two inside
            two = (count == 2) & ~inside[k]
            with np.errstate(divide="ignore", invalid="ignore"):
                s1 = np.where(two, f[k] / (f[k] - f[o1]), 0.0)   # from k toward o1
                s2 = np.where(two, f[k] / (f[k] - f[o2]), 0.0)
                u = np.where(two, f[o2] / (f[o2] - f[k]), 0.0)    # from o2 toward k
            reg = area_t * (1.0 - s1 * s2)
            # fan from o1: (o1, o2, p_{o2 k}) and (o1, p_{o2 k}, p_{o1 k})
            first = u * area_t
            w[o1] += np.where(two, reg / 3.0, 0.0)
            w[o2] += np.where(two, first / 3.0, 0.0)
            if boundary_fn is not None:
                C += _crossing_sum(boundary_fn, X, Y, idx, o2, k, u, two, reg / 3.0)
                C += _crossing_sum(boundary_fn, X, Y, idx, o1, k, 1.0 - s1, two, (reg - first) / 3.0)
        for k in range(3):
            W[idx[k]] += w[k]
    return 0.5 * W, 0.5 * C


def _crossing_sum(fn, X, Y, idx, frm, to, t, sel, weight):
    if not np.any(sel):
        return 0.0
    xa, ya = X[idx[frm]][sel], Y[idx[frm]][sel]
    xb, yb = X[idx[to]][sel], Y[idx[to]][sel]
    tt = t[sel]
    vals = fn(xa + tt * (xb - xa), ya + tt * (yb - ya))
    return float(math.fsum((np.asarray(weight)[sel] * vals).tolist()))


def rasterize(geometry: GeometrySpec, h: float, check_connected: bool = True) -> Mesh:
    """Uniform grid centred on the bounding box, with cut-cell boundary links."""
    if not h > 0:
        raise DomainError("mesh spacing must be positive")
    for ch in geometry.channels:
        if ch.width < 2 * h:
            raise DomainError(f"channel width {ch.width:.4g} is below 2h = {2 * h:.4g}")
        if ch.width < 4 * h:
            log.warning("channel width %.4g spans fewer than 4 cells", ch.width)
    x0, x1, y0, y1 = geometry.bbox
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    mx = int(math.ceil(0.5 * (x1 - x0) / h)) + 2
    my = int(math.ceil(0.5 * (y1 - y0) / h)) + 2
    x = cx + h * np.arange(-mx, mx + 1)
    y = cy + h * np.arange(-my, my + 1)
    X, Y = np.meshgrid(x, y)
    phi = geometry.phi(X, Y)
    # nodes within THETA_MIN * h of the boundary count as boundary nodes
    mask = phi < -THETA_MIN * h
    if check_connected:
        _, pieces = ndimage.label(mask)
        if pieces != geometry.expected_components:
            raise DomainError(
                f"rasterized domain has {pieces} connected pieces, geometry implies "
                f"{geometry.expected_components}; refine h"
            )
    index = -np.ones(mask.shape, dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))
    n = int(mask.sum())
    jj, ii = np.nonzero(mask)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        nj, ni = jj + dj, ii + di
        nb = index[nj, ni]
        inner = nb >= 0
        rows.append(index[jj[inner], ii[inner]])
        cols.append(nb[inner])
        vals.append(np.full(int(inner.sum()), -1.0))
        diag[inner] += 1.0
        cut = ~inner
        theta = _link_theta(geometry, x[ii[cut]], y[jj[cut]], di, dj, h)
        diag[cut] += 1.0 / np.maximum(theta, THETA_MIN)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ) / (h * h)
    W, _ = _triangle_weights(phi, h)
    Wn = W[mask]
    # area: integral of 1 = interior weights + the boundary crossings' share
    _, C1 = _triangle_weights(phi, h, lambda a, b: np.ones_like(a), X, Y)
    area = float(Wn.sum() + W[~mask].sum() + C1)
    return Mesh(h, x, y, phi, mask, index, A, Wn, area, geometry)


# -- solutions -------------------------------------------------------------


@dataclass
class PDESolution:
    lam: float
    U: np.ndarray = field(repr=False)
    Z: float = math.nan
    beta: float = math.nan
    E: float = math.nan
    E_grad: float = math.nan
    S: float = math.nan
    residual: float = math.nan
    iterations: int = 0
    tag: str = ""

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "beta": self.beta,
            "Z": self.Z,
            "E": self.E,
            "E_grad": self.E_grad,
            "S": self.S,
            "U_max": float(np.max(self.U)) if self.U.size else 0.0,
            "residual": self.residual,
            "iterations": self.iterations,
            "tag": self.tag,
        }


def derive(mesh: Mesh, lam: float, U, residual=math.nan, iterations=0, tag="") -> PDESolution:
    eU = np.exp(U)
    Z = mesh.area + mesh.integrate(eU - 1.0)
    beta = -Z * lam
    E = mesh.integrate(U * eU) / (2.0 * lam * Z * Z)
    E_grad = mesh.dirichlet_form(U) / (2.0 * lam * lam * Z * Z)
    S = math.log(Z) + 2.0 * beta * E
    return PDESolution(lam, U, Z, beta, E, E_grad, S, residual, iterations, tag)


def _residual(mesh, lam, U):
    with np.errstate(over="ignore", invalid="ignore"):
        return mesh.A @ U - lam * np.exp(U)


def solve_lambda(mesh: Mesh, lam: float, U0=None, tol: float = 1e-10, max_iter: int = 60) -> PDESolution:
    """Damped Newton for A U = lam exp(U).

    The residual reported (and tested against ``tol``) is the sup norm of
    h^2 (A U - lam e^U), the flux imbalance per cell.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    U = np.zeros(mesh.n) if U0 is None else np.array(U0, dtype=float)
    h2 = mesh.h**2
    F = _residual(mesh, lam, U)
    res = float(np.max(np.abs(F))) * h2
    for it in range(1, max_iter + 1):
        if res <= tol:
            return derive(mesh, lam, U, res, it - 1)
        J = (mesh.A - sp.diags(lam * np.exp(U))).tocsc()
        try:
            step = sla.splu(J, permc_spec=_PERMC).solve(-F)
        except RuntimeError as exc:
            raise ConvergenceError(f"singular Jacobian at lambda={lam}: {exc}", last_iterate=U) from None
        t = 1.0
        norm0 = float(np.linalg.norm(F))
        for _ in range(30):
            trial = U + t * step
            Ft = _residual(mesh, lam, trial)
            if np.all(np.isfinite(Ft)) and np.linalg.norm(Ft) < (1.0 - 1e-4 * t) * norm0:
                break
            t *= 0.5
        else:
            raise ConvergenceError(f"line search failed at lambda={lam}", last_iterate=U)
        U, F = trial, Ft
        res = float(np.max(np.abs(F))) * h2
        if np.max(np.abs(t * step)) > 1e3:
            raise ConvergenceError(f"Newton diverging at lambda={lam}", last_iterate=U)
    if res <= tol:
        return derive(mesh, lam, U, res, max_iter)
    raise ConvergenceError(f"Newton did not reach {tol} (residual {res:.3g}) at lambda={lam}", last_iterate=U)


def disk_seed(mesh: Mesh, mus) -> np.ndarray:
    """Initial iterate from the closed-form disk solutions, U = -2 log(1 - mu_i t_i).

    Channel nodes get 0.
    """
    gx, gy = mesh.nodes
    U = np.zeros(mesh.n)
    disks = mesh.geometry.disks
    if len(mus) != len(disks):
        raise DomainError("one mu per disk is required")
    for d, mu in zip(disks, mus):
        t = 1.0 - ((gx - d.cx) ** 2 + (gy - d.cy) ** 2) / d.r**2
        inside = t > 0
        U[inside] = -2.0 * np.log1p(-mu * t[inside])
    return U


def seed_for_lambda(mesh: Mesh, lam: float, signs=None) -> np.ndarray:
    """Closed-form seed on each disk for the given lambda; '-' roots unless ``signs`` says otherwise.

    Geometries without disks (the conformal map) get the zero iterate.
    """
    disks = mesh.geometry.disks
    if not disks:
        return np.zeros(mesh.n)
    gamma = lam / EIGHT_PI
    signs = ["-"] * len(disks) if signs is None else list(signs)
    mus = []
    for d, sg in zip(disks, signs):
        disc = 1.0 - 4.0 * d.area * gamma
        if disc < 0:
            raise DomainError(f"lambda = {lam:.6g} exceeds the disk fold 2 pi / a = {2 * math.pi / d.area:.6g}")
        small = 2.0 * d.area * gamma / (1.0 + math.sqrt(disc))
        mus.append(small if sg == "-" else 1.0 - small)
    return disk_seed(mesh, mus)


def lambda_of_mu(mu: float, area: float = 1.0) -> float:
    """lambda = 8 pi mu (1 - mu) / a on a disk of area a."""
    return EIGHT_PI * mu * (1.0 - mu) / area


# -- continuation ----------------------------------------------------------


@dataclass
class ContinuationResult:
    solutions: list
    complete: bool
    message: str = ""


def _bordered_solve(J, col, row, corner, rhs, rhs_last):
    """Solve [[J, col], [row, corner]] [x, y] = [rhs, rhs_last] by block elimination.

    One sparse factorization of J serves both right-hand sides; J is only
    singular exactly at a fold, which the continuation steps over.
    """
    lu = sla.splu(J, permc_spec=_PERMC)
    a = lu.solve(rhs)
    b = lu.solve(col)
    y = (rhs_last - row @ a) / (corner - row @ b)
    return a - y * b, y


def continue_branch(mesh: Mesh, start: PDESolution, second: PDESolution | None = None, ds: float = 0.05,
                    steps: int = 40, tol: float = 1e-10, lam_min: float = 0.0, stop=None) -> ContinuationResult:
    """Pseudo-arclength continuation in (U, lambda).

    The tangent is the secant of the last two accepted solutions (a natural
    step in lambda supplies the second point when none is given).  Arclength
    uses the discrete L2 norm of U.  Each accepted point is tagged 'lower' or
    'upper' according to the sign of d lambda / ds; a step is retried with
    half the length up to 5 times.  ``stop(solution)`` may end the run early.
    """
    h2 = mesh.h**2
    sols = [start]
    if second is None:
        try:
            second = solve_lambda(mesh, start.lam * (1.0 + 1e-3), start.U, tol)
        except ConvergenceError as exc:
            return ContinuationResult(sols, False, f"could not take the first step: {exc}")
    sols.append(second)
    side = "lower"
    start.tag = second.tag = side
    for _ in range(steps):
        p, q = sols[-2], sols[-1]
        dU, dl = q.U - p.U, q.lam - p.lam
        norm = math.sqrt(h2 * float(dU @ dU) + dl * dl)
        tU, tl = dU / norm, dl / norm
        length = ds
        for attempt in range(6):
            U = q.U + length * tU
            lam = q.lam + length * tl
            ok = False
            for it in range(30):
                F = _residual(mesh, lam, U)
                g = h2 * float(tU @ (U - q.U)) + tl * (lam - q.lam) - length
                res = float(np.max(np.abs(F))) * h2
                if res <= tol and abs(g) <= 1e-12:
                    ok = True
                    break
                # a diverging trial step is rejected below; its overflow is expected
                with np.errstate(over="ignore", invalid="ignore"):
                    eU = np.exp(U)
                    J = (mesh.A - sp.diags(lam * eU)).tocsc()
                    dUn, dln = _bordered_solve(J, -eU, h2 * tU, tl, -F, -g)
                U, lam = U + dUn, lam + dln
                if not np.all(np.isfinite(U)) or lam <= lam_min:
                    break
            if ok:
                break
            length *= 0.5
        else:
            return ContinuationResult(sols, False, "step failed after 5 halvings")
        new_side = "lower" if lam >= q.lam else "upper"
        if new_side != side:
            log.info("fold passed near lambda=%.6g", q.lam)
            side = new_side
        sol = derive(mesh, lam, U, res, it, side)
        sols.append(sol)
        if stop is not None and stop(sol):
            break
    return ContinuationResult(sols, True)


# -- conformally deformed disk ---------------------------------------------


@dataclass
class FreeEnergyResult:
    epsilon: float
    beta: float
    F: float
    E: float
    Z: float
    residual: float
    iterations: int
    phi: np.ndarray = field(repr=False)


def _jacobian_weight(x, y, eps):
    r2 = x * x + y * y
    return 1.0 + 6.0 * eps * (x * x - y * y) + 9.0 * eps * eps * r2 * r2


class _DiskProblem:
    """-Lap Phi = J_eps exp(-beta Phi) / Z_eps on the unit disk, Z by quadrature."""

    def __init__(self, h):
        self.mesh = rasterize(GeometrySpec.unit_disk(), h)
        self.h = h
        X, Y = np.meshgrid(self.mesh.x, self.mesh.y)
        self.X, self.Y = X, Y
        self._lu = None

    def weight_terms(self, eps):
        gx, gy = self.mesh.nodes
        Jn = _jacobian_weight(gx, gy, eps)
        phi = self.mesh.phi
        W, C = _triangle_weights(phi, self.h, lambda a, b: _jacobian_weight(a, b, eps), self.X, self.Y)
        Jg = _jacobian_weight(self.X, self.Y, eps)
        # integral of J: interior nodes, nodes on the boundary side, crossings
        total = float(math.fsum((W[self.mesh.mask] * Jn).tolist()) + (W[~self.mesh.mask] * Jg[~self.mesh.mask]).sum() + C)
        return Jn, total

    def solve(self, beta, eps, phi0, tol=1e-12, max_iter=200, refactor=True):
        mesh = self.mesh
        A, Wn, h2 = mesh.A, mesh.weights, self.h**2
        Jn, CJ = self.weight_terms(eps)
        phi = phi0.copy()
        lu = None if refactor else self._lu
        for it in range(1, max_iter + 1):
            ex = Jn * np.exp(-beta * phi)
            Z = CJ + float(Wn @ (ex - Jn))
            G = A @ phi - ex / Z
            res = float(np.max(np.abs(G))) * h2
            if lu is None:
                M = (A + sp.diags(beta * ex / Z)).tocsc()
                lu = sla.splu(M, permc_spec=_PERMC)
                if refactor:
                    self._lu = lu
            u = ex / Z**2
            v = -beta * Wn * ex
            y = lu.solve(-G)
            z = lu.solve(u)
            step = y - z * (v @ y) / (1.0 + v @ z)
            phi = phi + step
            if np.max(np.abs(step)) <= 1e-13 * max(1.0, np.max(np.abs(phi))):
                ex = Jn * np.exp(-beta * phi)
                Z = CJ + float(Wn @ (ex - Jn))
                res = float(np.max(np.abs(A @ phi - ex / Z))) * h2
                return phi, Z, res, it
            if refactor:
                lu = None
        raise ConvergenceError(f"normalized Newton did not converge (eps={eps}, beta={beta})", last_iterate=phi)


def deformed_free_energy_check(epsilons, beta: float, h: float = 1.0 / 512):
    """F_eps(beta) = -E - log(Z_eps) / beta on the image of the unit disk.

    Solved on the unit disk with the conformal weight J_eps = |1 + 3 eps z^2|^2.
    eps = 0 uses full Newton from the closed form; other amplitudes reuse the
    eps = 0 factorization (chord iterations with an exact rank-one update).
    Returns a list of FreeEnergyResult in the order given.
    """
    if not -EIGHT_PI < beta < 0:
        raise DomainError("beta must lie in (-8 pi, 0)")
    eps_list = [float(e) for e in np.atleast_1d(epsilons)]
    if any(abs(e) > 0.15 for e in eps_list):
        raise DomainError("epsilon must not exceed 0.15")
    prob = _DiskProblem(h)
    gx, gy = prob.mesh.nodes
    mu = -beta / EIGHT_PI
    t = np.clip(1.0 - gx * gx - gy * gy, 0.0, 1.0)
    phi_cf = t * (np.log1p(-mu * t) / (-mu * t)) / (4.0 * math.pi) if mu != 0 else t / (4.0 * math.pi)
    phi0, Z0, res0, it0 = prob.solve(beta, 0.0, phi_cf, refactor=True)
    out = []
    for eps in eps_list:
        if eps == 0:
            phi, Z, res, it = phi0, Z0, res0, it0
        else:
            phi, Z, res, it = prob.solve(beta, eps, phi0, refactor=False)
        E = 0.5 * prob.mesh.dirichlet_form(phi)
        F = -E - math.log(Z) / beta
        out.append(FreeEnergyResult(eps, beta, F, E, Z, res, it, phi))
    return out


def richardson_slope(results) -> dict:
    """Slope (F_eps - F_0)/eps^2 at each eps and its eps -> 0 extrapolation.

    Expects results for 0, e and 2e (F is even in eps, so the error is O(eps^2)).
    """
    by_eps = {r.epsilon: r for r in results}
    if 0.0 not in by_eps:
        raise DomainError("an eps = 0 reference is required")
    F0 = by_eps[0.0].F
    slopes = {e: (r.F - F0) / (e * e) for e, r in sorted(by_eps.items()) if e != 0}
    es = sorted(slopes)
    if len(es) < 2:
        raise DomainError("two non-zero amplitudes are needed")
    e1, e2 = es[0], es[1]
    r = (e2 / e1) ** 2
    extrap = (r * slopes[e1] - slopes[e2]) / (r - 1.0)
    return {"slopes": slopes, "extrapolated": extrap}


# -- dumbbells ---------------------------------------------------------------


def _reference_domain(areas):
    from .branches import DomainSpec

    return DomainSpec.from_areas(sorted(areas, reverse=True), normalize=False)


def dumbbell_convergence(areas, widths, h: float, mu: float = 0.3, gap: float = 0.25, tol: float = 1e-10):
    """Lower-branch values on dumbbells of shrinking channel width against the disjoint union.

    Every run uses lambda = 8 pi mu (1 - mu) / a_1.  The reference is the
    0-branch of the disconnected disks at the same lambda; a run with width
    None (the disconnected union on the same grid) is prepended so the
    discretization error can be told apart from the channel effect.
    """
    from .branches import from_gamma

    dom = _reference_domain(areas)
    a1 = max(areas)
    lam = lambda_of_mu(mu, a1)
    ref = from_gamma(dom, lam / EIGHT_PI, ["-"] * dom.N)
    rows = []
    for w in [None, *sorted(widths, reverse=True)]:
        mesh = rasterize(GeometrySpec.dumbbell(areas, w, gap), h)
        sol = solve_lambda(mesh, lam, seed_for_lambda(mesh, lam), tol=tol)
        rows.append({
            "width": math.nan if w is None else w,
            "n": mesh.n,
            "lambda": lam,
            "beta": sol.beta, "Z": sol.Z, "E": sol.E, "S": sol.S,
            "ref_beta": ref.beta, "ref_Z": ref.Z, "ref_E": ref.E, "ref_S": ref.S,
            "err_beta": abs(sol.beta / ref.beta - 1.0),
            "err_Z": abs(sol.Z / ref.Z - 1.0),
            "err_E": abs(sol.E / ref.E - 1.0),
            "err_S": abs(sol.S - ref.S),
            "solution": sol,
        })
    return rows


def solve_amplitude(mesh: Mesh, level: float, U0, lam0: float, tol: float = 1e-10, max_iter: int = 40) -> PDESolution:
    """Solve A U = lam exp(U) together with int U = level, lambda unknown.

    The amplitude grows monotonically along the branches used here, so
    this parametrization passes through the fold in lambda without special
    treatment.  Newton with step halving on the augmented residual.
    """
    U = np.array(U0, dtype=float)
    lam = float(lam0)
    ell = mesh.weights
    h2 = mesh.h**2

    def resid(U, lam):
        F = _residual(mesh, lam, U)
        return F, float(ell @ U) - level

    F, g = resid(U, lam)
    for it in range(max_iter):
        res = float(np.max(np.abs(F))) * h2
        if res <= tol and abs(g) <= 1e-12 * max(1.0, abs(level)):
            return derive(mesh, lam, U, res, it)
        J = (mesh.A - sp.diags(lam * np.exp(U))).tocsc()
        dU, dl = _bordered_solve(J, -np.exp(U), ell, 0.0, -F, -g)
        norm0 = math.hypot(float(np.linalg.norm(F)) * h2, g)
        t = 1.0
        for _ in range(30):
            Ut, lt = U + t * dU, lam + t * dl
            Ft, gt = resid(Ut, lt)
            if lt > 0 and np.all(np.isfinite(Ft)) and math.hypot(float(np.linalg.norm(Ft)) * h2, gt) < (1 - 1e-4 * t) * norm0:
                break
            t *= 0.5
        else:
            raise ConvergenceError(f"amplitude Newton stalled at level {level}", last_iterate=U)
        U, lam, F, g = Ut, lt, Ft, gt
    raise ConvergenceError(f"amplitude Newton did not converge at level {level}", last_iterate=U)


def solve_energy(mesh: Mesh, energy: float, U0, lam0: float, tol: float = 1e-10, max_iter: int = 40) -> PDESolution:
    """Solve A U = lam exp(U) with the energy fixed to ``energy``, lambda unknown.

    The energy uses the U e^U quadrature.  The bordered row is the exact
    gradient of E(U, lam); the constraint is singular where E is stationary
    along the branch, so the seed should sit on a monotone stretch.
    """
    U = np.array(U0, dtype=float)
    lam = float(lam0)
    W = mesh.weights
    h2 = mesh.h**2

    def resid(U, lam):
        F = _residual(mesh, lam, U)
        with np.errstate(over="ignore", invalid="ignore"):
            eU = np.exp(U)
            Z = mesh.area + float(W @ (eU - 1.0))
            E = float(W @ (U * eU)) / (2.0 * lam * Z * Z)
        return F, E / energy - 1.0, eU, Z, E

    F, g, eU, Z, E = resid(U, lam)
    for it in range(max_iter):
        res = float(np.max(np.abs(F))) * h2
        if res <= tol and abs(g) <= 1e-13:
            return derive(mesh, lam, U, res, it)
        J = (mesh.A - sp.diags(lam * eU)).tocsc()
        row = (W * eU * (1.0 + U) / (2.0 * lam * Z * Z) - 2.0 * E * W * eU / Z) / energy
        corner = -E / (lam * energy)
        dU, dl = _bordered_solve(J, -eU, row, corner, -F, -g)
        norm0 = math.hypot(float(np.linalg.norm(F)) * h2, g)
        t = 1.0
        for _ in range(30):
            Ut, lt = U + t * dU, lam + t * dl
            Ft, gt, eUt, Zt, Et = resid(Ut, lt)
            if lt > 0 and np.all(np.isfinite(Ft)) and math.hypot(float(np.linalg.norm(Ft)) * h2, gt) < (1 - 1e-4 * t) * norm0:
                break
            t *= 0.5
        else:
            raise ConvergenceError(f"energy Newton stalled at E = {energy}", last_iterate=U)
        U, lam, F, g, eU, Z, E = Ut, lt, Ft, gt, eUt, Zt, Et
    raise ConvergenceError(f"energy Newton did not converge at E = {energy}", last_iterate=U)


@dataclass
class DumbbellTransition:
    """Two solution families on one dumbbell compared at equal energies.

    ``pairs`` holds (E, left, right) triples; ``E_star`` is where the
    entropies cross (nan when no sign change was found).  ``mu_left`` and
    ``mu_right`` are the middle-disk masses of the seeds actually used.
    """

    width: float
    h: float
    pairs: list
    E_star: float = math.nan
    found: bool = False
    message: str = ""
    mu_left: float = math.nan
    mu_right: float = math.nan

    def rows(self) -> list:
        out = []
        for E, a, b in self.pairs:
            row = {"E": E, "S_left": a.S, "S_right": b.S, "dS": a.S - b.S,
                   "beta_left": a.beta, "beta_right": b.beta,
                   "lambda_left": a.lam, "lambda_right": b.lam,
                   "E_left": a.E, "E_right": b.E}
            out.append({k: float(v) for k, v in row.items()})
        return out


def _branch_seed(mesh, areas, mu1, step, tries=16):
    """Amplitude solve seeded from the disjoint-disk branch with the middle disk at ``mu1``.

    The other disks sit on their small roots at the shared gamma.  When the
    solve fails (the channel moves the folds) the middle mass is moved by
    ``step`` away from 1/2 and the solve retried.  Returns (mu1, solution).
    """
    from .branches import mu_pm

    last = None
    start = mu1
    for k in range(tries):
        mu1 = start + k * step
        gamma = mu1 * (1.0 - mu1) / areas[0]
        mus = [mu1] + [mu_pm(gamma, a, "-") for a in areas[1:]]
        seed = disk_seed(mesh, mus)
        try:
            return mu1, solve_amplitude(mesh, float(mesh.weights @ seed), seed, EIGHT_PI * gamma)
        except ConvergenceError as exc:
            last = exc
    raise last


def dumbbell_transition(areas, width: float, h: float, mu_left: float = 0.497, mu_right: float = 0.52,
                        gap: float = 0.25, max_iter: int = 12, tol_S: float = 1e-12) -> DumbbellTransition:
    """Equal-energy solutions on two families of a near-symmetric dumbbell, and their entropy crossing.

    The left family continues the all-small-root branch (middle disk at
    ``mu_left`` < 1/2); the right family has the middle disk past its fold
    (``mu_right`` > 1/2) on the side where the energy increases with the
    middle mass.  Both seeds come from the disjoint disks.  The shared energy
    window runs from the right family's seed energy to the left family's;
    the entropy difference is evaluated at both ends with energy-constrained
    Newton and the sign change is refined by regula falsi (Illinois variant)
    until the entropies agree to ``tol_S``.
    """
    mesh = rasterize(GeometrySpec.dumbbell(areas, width, gap), h)
    ordered = [float(areas[0])] + [float(a) for a in areas[1:]]
    mu_left, left = _branch_seed(mesh, ordered, mu_left, -0.0025)
    mu_right, right = _branch_seed(mesh, ordered, mu_right, 0.0025)
    res = DumbbellTransition(width, h, [], mu_left=mu_left, mu_right=mu_right)
    lo, hi = right.E, left.E
    if not lo < hi:
        res.message = f"families share no energy window (right starts at {lo:.10g}, left ends at {hi:.10g})"
        return res

    def pair(E, a_seed, b_seed):
        a = solve_energy(mesh, E, a_seed.U, a_seed.lam)
        b = solve_energy(mesh, E, b_seed.U, b_seed.lam)
        res.pairs.append((E, a, b))
        return a, b

    a_lo, b_lo = pair(lo, left, right)
    a_hi, b_hi = pair(hi, left, right)
    f_lo, f_hi = a_lo.S - b_lo.S, a_hi.S - b_hi.S
    if f_lo * f_hi > 0:
        res.message = f"entropy difference keeps its sign on [{lo:.10g}, {hi:.10g}]"
        return res
    side = 0
    for _ in range(max_iter):
        E = lo - f_lo * (hi - lo) / (f_hi - f_lo)
        near_lo = abs(E - lo) < abs(hi - E)
        a, b = pair(E, a_lo if near_lo else a_hi, b_lo if near_lo else b_hi)
        f = a.S - b.S
        if abs(f) <= tol_S:
            break
        if f * f_lo > 0:
            lo, f_lo, a_lo, b_lo = E, f, a, b
            if side == -1:
                f_hi *= 0.5
            side = -1
        else:
            hi, f_hi, a_hi, b_hi = E, f, a, b
            if side == 1:
                f_lo *= 0.5
            side = 1
    else:
        res.message = f"crossing not resolved to {tol_S:g} in {max_iter} steps"
    res.E_star = res.pairs[-1][0]
    res.found = True
    res.pairs.sort(key=lambda t: t[0])
    return res
