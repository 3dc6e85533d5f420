import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vortex_phase_lab.disk import (
    E_UNIFORM,
    EIGHT_PI,
    DiskSpec,
    disk_energy_of_beta,
    disk_entropy_of_beta,
    disk_partition_of_beta,
    disk_state,
    e_of_mu,
    scaled_entropy,
    stream_profile,
    z_of_mu,
)
from vortex_phase_lab.errors import DomainError
from vortex_phase_lab.oracle import component_entropy, disk_entropy_of_energy, radial_mfe_solve


def test_e_of_mu_uniform_limit():
    assert e_of_mu(1e-12) == pytest.approx(1 / (16 * math.pi), rel=1e-12)
    assert e_of_mu(0.0) == pytest.approx(E_UNIFORM, rel=1e-15)


def test_e_of_mu_half_matches_formula_and_radial_oracle():
    expected = (-0.5 - math.log(0.5)) / (8 * math.pi * 0.25)
    assert e_of_mu(0.5) == pytest.approx(expected, rel=1e-14)
    assert e_of_mu(0.5) == pytest.approx(0.030735, rel=1e-3)
    assert radial_mfe_solve(-4 * math.pi).E == pytest.approx(e_of_mu(0.5), rel=1e-9)


def test_e_of_mu_diverges_near_one():
    assert e_of_mu(1 - 1e-12) > 10 * e_of_mu(0.5)
    assert e_of_mu(1 - 1e-15) > e_of_mu(1 - 1e-12)


@pytest.mark.parametrize("mu", [-0.1, 1.0, 1.5])
def test_e_of_mu_rejects_out_of_range(mu):
    with pytest.raises(DomainError):
        e_of_mu(mu)


def test_e_of_mu_strictly_increasing():
    mu = np.linspace(1e-6, 1 - 1e-6, 5001)
    assert np.all(np.diff(e_of_mu(mu)) > 0)


@pytest.mark.parametrize("mu,area,expected", [(0.0, 1.0, 1.0), (0.5, 1.0, 2.0), (0.75, 2.0, 8.0)])
def test_z_of_mu_examples(mu, area, expected):
    assert z_of_mu(mu, area) == pytest.approx(expected, rel=1e-15)


def test_z_of_mu_rejects_mu_one():
    with pytest.raises(DomainError):
        z_of_mu(1.0, 1.0)


def test_disk_energy_examples():
    assert disk_energy_of_beta(0.0) == pytest.approx(1 / (16 * math.pi), rel=1e-14)
    assert disk_energy_of_beta(-4 * math.pi) == pytest.approx(e_of_mu(0.5), rel=1e-14)
    assert disk_energy_of_beta(8 * math.pi) == pytest.approx((1 - math.log(2)) / (8 * math.pi), rel=1e-14)
    assert disk_energy_of_beta(8 * math.pi) == pytest.approx(0.012211, rel=1e-3)
    assert radial_mfe_solve(8 * math.pi).E == pytest.approx(disk_energy_of_beta(8 * math.pi), rel=1e-9)


def test_disk_energy_small_beta_continuous():
    b = np.array([-1e-7, -1e-9, 0.0, 1e-9, 1e-7])
    assert np.allclose(disk_energy_of_beta(b), E_UNIFORM, rtol=1e-8, atol=0)


def test_disk_energy_rejects_below_minus_eight_pi():
    with pytest.raises(DomainError):
        disk_energy_of_beta(-EIGHT_PI)


def test_stream_profile_uniform_limit():
    r = np.linspace(0, 1, 11)
    prof = stream_profile(1e-14, 1.0, r)
    assert np.allclose(prof.rho, 1 / math.pi, rtol=1e-12)
    # -Lap psi = 1/pi on the unit disk with zero boundary values
    assert np.allclose(prof.psi, (1 - r**2) / (4 * math.pi), rtol=1e-12)


def test_stream_profile_half():
    prof = stream_profile(0.5, 1.0, [0.0, 1.0])
    assert prof.rho[0] == pytest.approx(4 * prof.rho[1], rel=1e-14)
    assert prof.psi[1] == 0.0


def test_stream_profile_center_value_and_radial_oracle():
    mu = 0.9
    beta = -EIGHT_PI * mu
    prof = stream_profile(mu, 1.0, [0.0])
    assert prof.psi[0] == pytest.approx((2 / beta) * math.log(1 - mu), rel=1e-14)
    assert prof.psi[0] == pytest.approx(0.2037, rel=1e-3)
    ode = radial_mfe_solve(beta, area=math.pi)
    assert ode.profile.psi[0] == pytest.approx(prof.psi[0], abs=1e-8)


def test_stream_profile_unit_mass():
    r = np.linspace(0, 1, 20001)
    for mu in (0.1, 0.5, 0.9, -0.5):
        prof = stream_profile(mu, 1.0, r)
        f = 2 * math.pi * r * prof.rho
        mass = float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(r)))
        assert mass == pytest.approx(1.0, abs=1e-8)


def test_stream_profile_rejects_outside_grid():
    with pytest.raises(DomainError):
        stream_profile(0.5, 1.0, [1.5])


def test_disk_spec_radius():
    assert DiskSpec(math.pi).radius == pytest.approx(1.0)
    with pytest.raises(DomainError):
        DiskSpec(0.0)


def test_scaled_entropy_examples():
    S = lambda E: math.log(1 + E)  # any unit entropy
    assert scaled_entropy(1.0, 0.3, S) == S(0.3)
    E0 = 0.05
    assert scaled_entropy(2.0, 4 * E0, S) == pytest.approx(2 * S(E0) - 2 * math.log(2), rel=1e-14)


def test_scaled_entropy_half_mass_disk_against_oracle():
    E = e_of_mu(0.5) / 4
    value = scaled_entropy(0.5, E, disk_entropy_of_energy)
    expected = 0.5 * disk_entropy_of_energy(e_of_mu(0.5)) + 0.5 * math.log(2)
    assert value == pytest.approx(expected, rel=1e-12)
    assert component_entropy(0.5, E, 1.0) == pytest.approx(expected, rel=1e-10)


def test_disk_state_identity():
    st_ = disk_state(-3.0, area=2.0, mass=0.7)
    assert st_.entropy == pytest.approx(st_.mass * math.log(st_.partition / st_.mass) + 2 * st_.beta * st_.energy)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-9, max_value=0.9999))
def test_e_of_mu_equals_beta_form(mu):
    assert e_of_mu(mu) == pytest.approx(float(disk_energy_of_beta(-EIGHT_PI * mu)), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=-7.5 * math.pi, max_value=20 * math.pi))
def test_entropy_slope_is_beta(beta):
    d = 1e-5 * max(1.0, abs(beta))
    dS = disk_entropy_of_beta(beta + d) - disk_entropy_of_beta(beta - d)
    dE = disk_energy_of_beta(beta + d) - disk_energy_of_beta(beta - d)
    assert dS / dE == pytest.approx(beta, rel=1e-6, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=-7.9 * math.pi, max_value=10.0), st.floats(min_value=0.1, max_value=10.0))
def test_area_dilation_shifts_entropy_by_log_ratio(beta, factor):
    s1 = disk_entropy_of_beta(beta, 1.0)
    s2 = disk_entropy_of_beta(beta, factor)
    assert s2 - math.log(factor) == pytest.approx(s1, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=1e-6, max_value=0.999), st.floats(min_value=0.01, max_value=100.0))
def test_energy_independent_of_area(mu, area):
    z1, z2 = z_of_mu(mu, 1.0), z_of_mu(mu, area)
    assert z2 == pytest.approx(area * z1, rel=1e-14)
    assert float(disk_partition_of_beta(-EIGHT_PI * mu, area)) == pytest.approx(z2, rel=1e-12)
