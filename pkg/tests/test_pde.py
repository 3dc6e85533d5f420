import math

import numpy as np
import pytest

from vortex_phase_lab.disk import EIGHT_PI, e_of_mu, z_of_mu
from vortex_phase_lab.errors import ConvergenceError, DomainError
from vortex_phase_lab.pde import (
    Channel,
    Disk,
    GeometrySpec,
    continue_branch,
    deformed_free_energy_check,
    dumbbell_convergence,
    dumbbell_transition,
    derive,
    lambda_of_mu,
    rasterize,
    richardson_slope,
    seed_for_lambda,
    solve_amplitude,
    solve_energy,
    solve_lambda,
)


@pytest.fixture(scope="module")
def disk64():
    return rasterize(GeometrySpec.disk(1.0), 1 / 64)


def test_disk_area_within_two_percent():
    m = rasterize(GeometrySpec.unit_disk(), 1 / 256)
    assert abs(m.area - math.pi) / math.pi <= 0.02
    # the clipped-triangle quadrature is far better than the requirement
    assert abs(m.area - math.pi) / math.pi <= 1e-4


def test_channel_narrower_than_two_cells_rejected():
    geo = GeometrySpec.dumbbell([1.0, 1.0], 0.05)
    with pytest.raises(DomainError):
        rasterize(geo, 1 / 16)


def test_dumbbell_mask_connected():
    from scipy import ndimage

    m = rasterize(GeometrySpec.dumbbell([1.0, 0.9], 0.2), 1 / 64)
    assert ndimage.label(m.mask)[1] == 1
    apart = rasterize(GeometrySpec.dumbbell([1.0, 0.9], None), 1 / 64)
    assert ndimage.label(apart.mask)[1] == 2


def test_disconnected_raster_of_connected_geometry_rejected():
    # the channel misses the second disk entirely
    geo = GeometrySpec(disks=(Disk(0, 0, 0.5), Disk(1.5, 0, 0.5)), channels=(Channel(0, 1, 0.2),))
    m = rasterize(geo, 1 / 32)
    assert m.n > 0
    bad = GeometrySpec(disks=(Disk(0, 0, 0.5), Disk(1.5, 0, 0.5)))
    assert bad.expected_components == 2


def test_small_lambda_linear_regime(disk64):
    lam = 1e-6
    sol = solve_lambda(disk64, lam)
    gx, gy = disk64.nodes
    R2 = 1 / math.pi
    lin = lam * (R2 - gx**2 - gy**2) / 4
    assert np.max(np.abs(sol.U - lin)) <= 1e-3 * lam * R2 / 4 + 1e-15


def test_disk_beta_at_mu_03():
    m = rasterize(GeometrySpec.disk(1.0), 1 / 128)
    lam = lambda_of_mu(0.3)
    sol = solve_lambda(m, lam, seed_for_lambda(m, lam))
    assert sol.residual <= 1e-10
    assert sol.beta == pytest.approx(-EIGHT_PI * 0.3, rel=10 * m.h**2)
    assert sol.Z == pytest.approx(z_of_mu(0.3, 1.0), rel=10 * m.h**2)
    assert sol.E == pytest.approx(e_of_mu(0.3), rel=10 * m.h**2)
    assert np.all(sol.U > 0)
    # the two energy quadratures
    assert abs(sol.E_grad / sol.E - 1) <= 10 * m.h**2
    assert sol.S == pytest.approx(math.log(sol.Z) + 2 * sol.beta * sol.E, rel=1e-15)


def test_above_critical_lambda_fails(disk64):
    lam = 2 * math.pi * 1.02
    with pytest.raises((ConvergenceError, DomainError)):
        solve_lambda(disk64, lam, seed_for_lambda(disk64, 2 * math.pi * 0.999), max_iter=40)
    with pytest.raises(DomainError):
        seed_for_lambda(disk64, lam)


def test_negative_lambda_rejected(disk64):
    with pytest.raises(DomainError):
        solve_lambda(disk64, -1.0)


def test_energy_converges_at_second_order():
    lam = lambda_of_mu(0.3)
    errs = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        m = rasterize(GeometrySpec.disk(1.0), h)
        errs.append(abs(solve_lambda(m, lam, seed_for_lambda(m, lam)).E - e_of_mu(0.3)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 1.7) & (orders <= 2.3)), orders


def test_single_disk_continuation_through_fold():
    m = rasterize(GeometrySpec.disk(1.0), 1 / 32)
    lam0 = lambda_of_mu(0.3)
    start = solve_lambda(m, lam0, seed_for_lambda(m, lam0))
    res = continue_branch(m, start, ds=0.4, steps=40, stop=lambda s: s.beta < -EIGHT_PI * 0.75)
    assert res.complete
    lams = np.array([s.lam for s in res.solutions])
    E = np.array([s.E for s in res.solutions])
    assert {s.tag for s in res.solutions} == {"lower", "upper"}
    assert lams.max() == pytest.approx(2 * math.pi, rel=5e-3)
    assert np.all(np.diff(E) > 0)
    assert np.all(np.diff(-np.array([s.beta for s in res.solutions])) > 0)


def test_amplitude_and_energy_parametrizations_agree():
    m = rasterize(GeometrySpec.disk(1.0), 1 / 32)
    lam = lambda_of_mu(0.6)
    U0 = seed_for_lambda(m, lam, "+")
    a = solve_amplitude(m, float(m.weights @ U0), U0, lam)
    assert a.beta < -4 * math.pi
    b = solve_energy(m, a.E, U0, lam)
    assert b.lam == pytest.approx(a.lam, rel=1e-9)
    assert b.E == pytest.approx(a.E, rel=1e-12)
    c = solve_lambda(m, a.lam, a.U)
    assert c.beta == pytest.approx(a.beta, rel=1e-9)


def test_derive_identities(disk64):
    lam = 1.0
    sol = solve_lambda(disk64, lam)
    again = derive(disk64, lam, sol.U)
    assert again.beta == pytest.approx(-again.Z * lam, rel=1e-15)


def test_appendix_check_unperturbed_and_slope():
    res = deformed_free_energy_check([0.0, 0.02, 0.04], -4 * math.pi, h=1 / 64)
    by = {r.epsilon: r for r in res}
    # eps = 0 is the disk: F = -E - log(Z) / beta with the closed forms at mu = 1/2
    F0 = -e_of_mu(0.5) - math.log(z_of_mu(0.5, math.pi)) / (-4 * math.pi)
    assert by[0.0].F == pytest.approx(F0, rel=1e-3)
    slope = richardson_slope(res)["extrapolated"]
    assert slope > 0
    assert all(r.residual <= 1e-10 for r in res)


def test_appendix_check_preconditions():
    with pytest.raises(DomainError):
        deformed_free_energy_check([0.0, 0.02], -9 * math.pi, h=1 / 32)
    with pytest.raises(DomainError):
        deformed_free_energy_check([0.0, 0.2], -math.pi, h=1 / 32)


def test_dumbbell_convergence_rows_coarse():
    rows = dumbbell_convergence([1.0, 0.9], [0.2, 0.1], 1 / 64, mu=0.3)
    assert [r["width"] for r in rows][1:] == [0.2, 0.1] and math.isnan(rows[0]["width"])
    # without a channel only discretization error remains
    assert rows[0]["err_beta"] < 1e-2
    assert all(r["beta"] > -EIGHT_PI for r in rows)
    assert rows[2]["err_beta"] < rows[1]["err_beta"]


def test_dumbbell_transition_reports_missing_window():
    tr = dumbbell_transition([1.0, 0.99997, 0.99997], 0.2, 1 / 64)
    assert not tr.found and math.isnan(tr.E_star)
    assert "window" in tr.message
    assert tr.mu_left < 0.497 and tr.mu_right > 0.52
