"""Independent checks: brute-force entropy maximization and a radial ODE solver.

Nothing here uses the branch construction.  ``grid_mvp`` maximizes the sum of
single-disk entropies over mass and energy splits on a lattice, and
``radial_mfe_solve`` integrates the disk mean-field equation numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import solve_banded
from scipy.optimize import minimize

from .disk import EIGHT_PI, DiskProfile, log_excess
from .errors import ConvergenceError, DomainError


@dataclass
class OracleReport:
    target: str
    reference: list
    oracle: list
    max_abs_err: float
    max_rel_err: float
    meta: dict = field(default_factory=dict)

    @classmethod
    def compare(cls, target, reference, oracle, **meta):
        ref = np.asarray(reference, dtype=float)
        orc = np.asarray(oracle, dtype=float)
        err = np.abs(ref - orc)
        rel = err / np.maximum(np.abs(ref), np.finfo(float).tiny)
        return cls(target, ref.tolist(), orc.tolist(), float(err.max(initial=0.0)),
                   float(rel.max(initial=0.0)), meta)

    def as_dict(self) -> dict:
        return {
            "target": self.target,
            "reference": self.reference,
            "oracle": self.oracle,
            "max_abs_err": self.max_abs_err,
            "max_rel_err": self.max_rel_err,
            "meta": self.meta,
        }


# -- single disk S(E) ------------------------------------------------------


def _energy_of_y(y):
    """Unit-mass disk energy with 1 - mu = exp(y); decreasing in y."""
    x = -np.expm1(y)
    small = np.abs(x) < 1e-2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        direct = (-x - y) / (x * x)
    return np.where(small, log_excess(np.where(small, x, 0.0)), direct) / EIGHT_PI


_Y_TABLE = np.concatenate([-np.geomspace(1e6, 1e-8, 6000), [0.0], np.geomspace(1e-8, 300.0, 6000)])
_LOGE_TABLE = np.log(_energy_of_y(_Y_TABLE))[::-1]   # increasing
_Y_TABLE_REV = _Y_TABLE[::-1]


def _bisect_y(E):
    lo = -(EIGHT_PI * E + 10.0) * 1.5
    hi = np.ones_like(E)
    for _ in range(80):
        short = _energy_of_y(hi) > E
        if not short.any():
            break
        hi = np.where(short, 2.0 * hi, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi)):
            break
        above = _energy_of_y(mid) > E
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def _invert_y(E):
    """y = log(1 - mu) with E(mu) = E.

    Table interpolation in log E, then Newton steps with a centered-difference
    slope; entries that do not settle fall back to bisection.
    """
    E = np.asarray(E, dtype=float)
    y = np.interp(np.log(E), _LOGE_TABLE, _Y_TABLE_REV)
    for _ in range(4):
        d = 1e-6 * np.maximum(1.0, np.abs(y))
        slope = (_energy_of_y(y + d) - _energy_of_y(y - d)) / (2.0 * d)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = (_energy_of_y(y) - E) / slope
        y = y - np.where(np.isfinite(step), step, 0.0)
    bad = ~(np.abs(_energy_of_y(y) - E) <= 1e-14 * E)
    if np.any(bad):
        y = np.where(bad, _bisect_y(np.where(bad, E, 1.0)), y)
    return y


def disk_entropy_of_energy(E, area=1.0):
    """Entropy of the unit-mass disk state with energy E (any E > 0).

    With y = log(1 - mu), S = log(area) - y - 16 pi mu E.
    """
    E_arr = np.asarray(E, dtype=float)
    if not np.all(E_arr > 0):
        raise DomainError("energy must be positive")
    y = _invert_y(E_arr)
    mu = -np.expm1(y)
    out = np.log(area) - y - 2.0 * EIGHT_PI * mu * E_arr
    return out if out.ndim else float(out)


def disk_beta_of_energy(E):
    y = _invert_y(np.asarray(E, dtype=float))
    out = EIGHT_PI * np.expm1(y)
    return out if np.ndim(out) else float(out)


def component_entropy(M, E, area):
    """S of a mass-M, energy-E state on a disk of the given area.

    M S(E / M^2) - M log M, where the unit-mass entropy carries log(area).
    """
    M = np.asarray(M, dtype=float)
    E = np.asarray(E, dtype=float)
    return M * disk_entropy_of_energy(E / (M * M), area) - M * np.log(M)


def component_beta(M, E):
    """dS/dE for a mass-M state: beta(E / M^2) / M."""
    M = np.asarray(M, dtype=float)
    return disk_beta_of_energy(np.asarray(E, dtype=float) / (M * M)) / M


# -- grid maximization -----------------------------------------------------


@dataclass
class GridOptimum:
    masses: tuple
    energies: tuple
    entropy: float
    betas: tuple
    meta: dict = field(default_factory=dict)


def _areas(domain):
    areas = getattr(domain, "areas", domain)
    return np.asarray(areas, dtype=float)


def _finish(areas, M, Ei, meta):
    M = np.asarray(M, float)
    Ei = np.asarray(Ei, float)
    S = float(math.fsum(component_entropy(M, Ei, areas).tolist()))
    betas = tuple(float(b) for b in component_beta(M, Ei))
    return GridOptimum(tuple(M.tolist()), tuple(Ei.tolist()), S, betas, meta)


def _grid2(areas, E, m_vals, t_vals):
    M1 = m_vals[:, None]
    E1 = E * t_vals[None, :]
    S = component_entropy(M1, E1, areas[0]) + component_entropy(1.0 - M1, E - E1, areas[1])
    k = int(np.argmax(S))
    i, j = np.unravel_index(k, S.shape)
    return float(m_vals[i]), float(t_vals[j]), float(S[i, j])


def _grid3_coarse(areas, E, K):
    """Exhaustive lattice: masses and energies in units of 1/K."""
    idx = np.arange(1, K)
    frac = idx / K
    # T_c[k, j] = entropy of component c with mass (k+1)/K and energy (j+1) E / K
    # single precision is enough to pick the basin; refinement runs in double
    T = [component_entropy(frac[:, None], E * frac[None, :], a).astype(np.float32) for a in areas]
    # Hankel layout for the third component: H[k, j1, j2] = T_2[k, K - 3 - j1 - j2]
    # (the energy left after j1 + 1 and j2 + 1 units), -inf when nothing is left
    pad = np.full((K - 1, 2 * K - 3), -np.inf, dtype=np.float32)
    pad[:, : K - 2] = T[2][:, K - 3:: -1][:, : K - 2]
    H = sliding_window_view(pad, K - 1, axis=1)
    best = (-np.inf, None)
    for k1 in range(1, K - 1):
        L = K - 1 - k1                             # k2 = 1..L, k3 = K - k1 - k2
        tot = T[1][:L][:, None, :] + H[L - 1:: -1]
        tot += T[0][k1 - 1][None, :, None]
        k = int(np.argmax(tot))
        if tot.flat[k] > best[0]:
            a_, b_, c_ = np.unravel_index(k, tot.shape)
            best = (float(tot.flat[k]), (k1, a_ + 1, b_ + 1, c_ + 1))
    S, (k1, k2, j1, j2) = best
    return np.array([k1, k2]) / K, np.array([j1, j2]) / K, S


def grid_mvp(domain, E: float, mass_grid: int = 200, energy_grid: int | None = None,
             refine_rounds: int = 3, refine_points: int | None = None, method: str = "auto") -> GridOptimum:
    """Maximize sum_i S_i(M_i, E_i) over sum M_i = 1, sum E_i = E.

    N <= 3 runs an exhaustive lattice with ``mass_grid`` points per free
    dimension followed by ``refine_rounds`` local passes (box shrunk 10x each
    time).  Larger N uses a multi-start local ascent, which is not exhaustive.
    """
    areas = _areas(domain)
    N = areas.size
    if not E > 0:
        raise DomainError("energy must be positive")
    K = int(mass_grid)
    if energy_grid is not None and int(energy_grid) != K:
        raise DomainError("mass and energy lattices share one resolution")
    if K < 200 and method != "coarse":
        raise DomainError("exhaustive grids need at least 200 points per free dimension")
    if N == 1:
        return _finish(areas, [1.0], [E], {"grid": 0})
    if N > 3:
        if method == "exhaustive":
            raise DomainError("exhaustive grids are limited to N <= 3; use the branch construction")
        return _multistart(areas, E)
    meta = {"mass_grid": K, "refine_rounds": refine_rounds}
    if N == 2:
        n = refine_points or 51
        vals = np.arange(1, K) / K
        m, t, S = _grid2(areas, E, vals, vals)
        x = np.array([m, t])
    else:
        n = refine_points or 11
        M12, t12, S = _grid3_coarse(areas, E, K)
        x = np.concatenate([M12, t12])
    shares = _shares(x)
    k = N - 1
    z = np.concatenate([np.log(shares[:k] / shares[k]), np.log(shares[k + 1:-1] / shares[-1])])
    z, rounds = _pattern_refine(lambda axes: _objective_logit(areas, E, axes), z, 0.5, n, refine_rounds)
    meta.update(refine_points=n, refine_iterations=rounds, refine_coordinates="log share ratios")
    M, t = _from_logits(z, N)
    return _finish(areas, M, E * t, meta)


def _from_logits(z, N):
    z = np.asarray(z, dtype=float)
    M = _softmax(z[: N - 1][::-1])[::-1]
    t = _softmax(z[N - 1:][::-1])[::-1]
    return M, t


def _objective_logit(areas, E, axes):
    """Entropy on a product lattice of log share ratios (last share is the reference)."""
    N = areas.size
    g = np.meshgrid(*axes, indexing="ij")
    zero = np.zeros_like(g[0])
    zm = np.stack([*g[: N - 1], zero])
    zt = np.stack([*g[N - 1:], zero])
    M = np.exp(zm - zm.max(axis=0))
    M /= M.sum(axis=0)
    t = np.exp(zt - zt.max(axis=0))
    t /= t.sum(axis=0)
    return sum(component_entropy(M[i], E * t[i], areas[i]) for i in range(N))


def _shares(x):
    """All mass and energy shares implied by the free coordinates."""
    k = x.size // 2
    return np.concatenate([x[:k], [1.0 - x[:k].sum()], x[k:], [1.0 - x[k:].sum()]])


def _pattern_refine(objective, x, half, n, min_rounds, max_iter=200, tol=1e-6):
    """Local lattice search: recenter while the optimum sits on the box edge,
    otherwise shrink the box 10x, for at least ``min_rounds`` shrinks and until
    the half-width is below ``tol``."""
    shrinks = 0
    for it in range(1, max_iter + 1):
        axes = [np.linspace(v - half, v + half, n) for v in x]
        vals = objective(axes)
        k = np.unravel_index(int(np.argmax(vals)), vals.shape)
        x = np.array([ax[i] for ax, i in zip(axes, k)])
        if any(i in (0, n - 1) for i in k):
            continue
        half /= 10.0
        shrinks += 1
        if shrinks >= min_rounds and half <= tol:
            break
    return x, it


def _softmax(z):
    z = np.concatenate([[0.0], z])
    w = np.exp(z - z.max())
    return w / w.sum()


def _multistart(areas, E, starts: int = 8, seed: int = 0) -> GridOptimum:
    N = areas.size

    def neg(z):
        M = _softmax(z[: N - 1])
        t = _softmax(z[N - 1:])
        return -float(np.sum(component_entropy(M, E * t, areas)))

    rng = np.random.default_rng(seed)
    logs = np.log(areas[1:] / areas[0])
    inits = [np.zeros(2 * N - 2), np.concatenate([logs, 2 * logs])]
    inits += [rng.normal(scale=1.0, size=2 * N - 2) for _ in range(starts)]
    best = None
    for z0 in inits:
        res = minimize(neg, z0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000, "maxfev": 40000})
        if best is None or res.fun < best.fun:
            best = res
    M = _softmax(best.x[: N - 1])
    t = _softmax(best.x[N - 1:])
    return _finish(areas, M, E * t, {"method": "multistart", "starts": len(inits)})


# -- radial ODE ------------------------------------------------------------


@dataclass
class RadialSolution:
    profile: DiskProfile
    Z: float
    E: float
    beta: float
    iterations: int


def _radial_newton(beta, R2, n, psi0=None, tol=1e-13, max_iter=200):
    """Finite volumes in s = r^2 for 4 (s psi_s)_s = -exp(-beta psi) / Z.

    Unknowns psi_0..psi_{n-1} (psi_n = 0); Z is the trapezoid of
    pi exp(-beta psi) ds, so the Jacobian is tridiagonal plus rank one.
    """
    h = R2 / n
    s_half = (np.arange(n) + 0.5) * h          # s_{j+1/2}, j = 0..n-1
    c = 4.0 * s_half / h                        # flux coefficients
    w = np.full(n, h)
    w[0] = 0.5 * h
    tz = np.full(n, h)
    tz[0] = 0.5 * h                             # trapezoid weights (node n adds h/2 * 1)
    psi = np.zeros(n) if psi0 is None else psi0.copy()

    def parts(p):
        ex = np.exp(-beta * p)
        Z = math.pi * (float(np.dot(tz, ex)) + 0.5 * h)
        return ex, Z

    def residual(p, ex, Z):
        flux = np.empty(n + 1)
        pe = np.append(p, 0.0)
        flux[1:] = c * (pe[1:] - pe[:-1])       # F_{j+1/2}
        flux[0] = 0.0
        return flux[1:] - flux[:-1] + w * ex / Z

    for it in range(1, max_iter + 1):
        ex, Z = parts(psi)
        F = residual(psi, ex, Z)
        # banded Jacobian of the flux part plus -beta w ex / Z on the diagonal
        ab = np.zeros((3, n))
        diag = -c.copy()
        diag[1:] -= c[:-1]
        ab[1] = diag - beta * w * ex / Z
        ab[0, 1:] = c[:-1]
        ab[2, :-1] = c[:-1]
        u = -w * ex / Z**2
        v = -beta * math.pi * tz * ex
        y = solve_banded((1, 1), ab, -F)
        zv = solve_banded((1, 1), ab, u)
        step = y - zv * (v @ y) / (1.0 + v @ zv)
        psi = psi + step
        if np.max(np.abs(step)) <= tol * max(1.0, np.max(np.abs(psi))):
            ex, Z = parts(psi)
            return psi, Z, it
    raise ConvergenceError(f"radial Newton did not converge in {max_iter} iterations", last_iterate=psi)


def _radial_energy(psi, R2, n):
    h = R2 / n
    s_half = (np.arange(n) + 0.5) * h
    pe = np.append(psi, 0.0)
    grad2 = 4.0 * s_half * ((pe[1:] - pe[:-1]) / h) ** 2
    return 0.5 * math.pi * float(np.sum(grad2) * h)


def _continued(beta, R2, n):
    """Newton with continuation in beta from 0 (steps of pi / 2)."""
    steps = max(1, int(math.ceil(abs(beta) / (math.pi / 2))))
    psi, total = None, 0
    for b in np.linspace(0.0, beta, steps + 1)[1:] if beta != 0 else [0.0]:
        psi, Z, it = _radial_newton(b, R2, n, psi)
        total += it
    return psi, Z, total


def radial_mfe_solve(beta: float, area: float = 1.0, nodes: int = 20000) -> RadialSolution:
    """Numerical radial solution of -Lap psi = exp(-beta psi) / Z on a disk.

    Two grids (n and n/2 intervals in s = r^2) are combined by Richardson
    extrapolation, giving fourth-order profiles, Z and E.
    """
    if not beta > -EIGHT_PI:
        raise DomainError(f"beta must exceed -8 pi, got {beta}")
    if not area > 0:
        raise DomainError("area must be positive")
    n = 2 * (max(int(nodes), 200) // 2)
    R2 = area / math.pi
    psi_f, Z_f, it_f = _continued(beta, R2, n)
    psi_c, Z_c, it_c = _continued(beta, R2, n // 2)
    E_f, E_c = _radial_energy(psi_f, R2, n), _radial_energy(psi_c, R2, n // 2)
    psi = (4.0 * psi_f[::2] - psi_c) / 3.0
    psi = np.append(psi, 0.0)
    Z = (4.0 * Z_f - Z_c) / 3.0
    E = (4.0 * E_f - E_c) / 3.0
    s = np.linspace(0.0, R2, n // 2 + 1)
    rho = np.exp(-beta * psi) / Z
    prof = DiskProfile(mu=-beta / EIGHT_PI, radius=math.sqrt(R2), r=np.sqrt(s), psi=psi, rho=rho)
    return RadialSolution(prof, float(Z), float(E), float(beta), it_f + it_c)
