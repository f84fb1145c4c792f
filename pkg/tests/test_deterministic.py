import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from bdfluct.deterministic import (bd_rhs, compute_R, equilibrium_density, integrate_bd)
from bdfluct.errors import DomainError, NoFixedPointError, StiffnessError
from bdfluct.operators import RateKernel, mass

from oracles import equilibrium_c1_constant, s_ref, tau_ref


def monomers(K):
    c = np.zeros(K)
    c[0] = 1.0
    return c


def rhs_ref(c, a, b):
    return tau_ref(s_ref(c, a, b))


def test_rhs_matches_reference():
    rng = np.random.default_rng(0)
    k = RateKernel(rng.uniform(0.5, 2, 15), rng.uniform(0.5, 2, 15))
    c = rng.random(15) / 50
    np.testing.assert_allclose(bd_rhs(c, k), rhs_ref(c, k.a, k.b), atol=1e-15)


def test_ode_default_grid_and_mass():
    traj = integrate_bd(monomers(50), RateKernel.constant(50), 10.0)
    assert traj.times.size == 33
    assert np.all(np.abs(mass(traj.states) - 1) <= 1e-8)
    assert traj.mass_drift <= 1e-8
    assert traj.states.min() >= -1e-12


def test_ode_zero_horizon():
    traj = integrate_bd(monomers(10), RateKernel.constant(10), 0.0, [0.0])
    np.testing.assert_array_equal(traj.states, [monomers(10)])


def test_ode_from_equilibrium_stays_put():
    k = RateKernel.constant(30)
    eq = equilibrium_density(k)
    traj = integrate_bd(eq.profile, k, 10.0)
    assert np.abs(traj.states - eq.profile).max() <= 1e-8


def test_ode_matches_scipy_reference():
    k = RateKernel.constant(8, a=1.3, b=0.7)
    times = np.linspace(0, 5, 11)
    ours = integrate_bd(monomers(8), k, 5.0, times, rtol=1e-10, atol=1e-13)
    ref = solve_ivp(lambda t, y: rhs_ref(y, k.a, k.b), (0, 5), monomers(8), method="DOP853",
                    t_eval=times, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(ours.states, ref.y.T, atol=1e-9)
    # dense interpolation between steps
    mid = ours.at(2.345)
    ref2 = solve_ivp(lambda t, y: rhs_ref(y, k.a, k.b), (0, 2.345), monomers(8),
                     method="DOP853", rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(mid, ref2.y[:, -1], atol=1e-7)


def test_ode_rejects_bad_output_times():
    k = RateKernel.constant(4)
    with pytest.raises(ValueError):
        integrate_bd(monomers(4), k, 1.0, [0.5, 0.2])
    with pytest.raises(ValueError):
        integrate_bd(monomers(4), k, 1.0, [2.0])
    with pytest.raises(DomainError):
        integrate_bd([0.8, 0.2, 0.1, 0.0], k, 1.0)


def test_ode_stiffness_error_path():
    k = RateKernel.power_law(40, 1.0, 2.0, 1.0, 2.0)
    with pytest.raises(StiffnessError):
        integrate_bd(monomers(40), k, 10.0, max_steps=5)


def test_richardson_tolerance_halving():
    k = RateKernel.constant(20)
    c0 = monomers(20)
    ref = integrate_bd(c0, k, 5.0, [5.0], rtol=1e-10, atol=1e-16).states[-1]
    e1 = np.abs(integrate_bd(c0, k, 5.0, [5.0], rtol=1e-6, atol=1e-16).states[-1] - ref).max()
    e2 = np.abs(integrate_bd(c0, k, 5.0, [5.0], rtol=5e-7, atol=1e-16).states[-1] - ref).max()
    assert e1 / e2 >= 1.5


def test_convergence_to_equilibrium_k100():
    k = RateKernel.constant(100)
    eq = equilibrium_density(k)
    times = np.linspace(0, 200, 201)
    traj = integrate_bd(monomers(100), k, 200.0, times)
    dist = np.abs(traj.states - eq.profile).sum(axis=1)
    assert dist[-1] < 1e-3
    # monotone after the transient, while the distance is above the integrator floor
    sel = (times >= 5) & (dist > 1e-6)
    assert np.all(np.diff(dist[sel]) < 0)


# --- equilibrium --------------------------------------------------------------


def test_compute_R_constant():
    np.testing.assert_allclose(compute_R(RateKernel.constant(5, 1.0, 2.0)),
                               -np.arange(5) * math.log(2))


def test_compute_R_rejects_zero_rates():
    k = RateKernel([1.0, 0.0, 1.0], [0.0, 1.0, 1.0], allow_zero=True)
    with pytest.raises(DomainError):
        compute_R(k)


def test_equilibrium_constant_rates_closed_form():
    eq = equilibrium_density(RateKernel.constant(1000))
    assert abs(eq.c1 - (3 - math.sqrt(5)) / 2) <= 1e-10
    assert eq.balance_residual <= 1e-12
    assert eq.mass_residual <= 1e-12


def test_equilibrium_b_equals_two():
    # R_k = 2^(1-k): 2 (z/2) / (1 - z/2)^2 = 1, hence z = 4 - 2 sqrt(3)
    eq = equilibrium_density(RateKernel.constant(1000, 1.0, 2.0))
    assert eq.c1 == pytest.approx(4 - 2 * math.sqrt(3), abs=1e-10)
    assert eq.c1 == pytest.approx(equilibrium_c1_constant(1.0, 2.0), abs=1e-12)


def test_equilibrium_matches_bracketed_root():
    rng = np.random.default_rng(3)
    k = RateKernel(rng.uniform(0.5, 2, 40), rng.uniform(0.5, 2, 40))
    log_R = compute_R(k)
    kk = np.arange(1, 41)

    def g(z):
        return kk @ np.exp(log_R + kk * math.log(z)) - 1.0

    z_ref = brentq(g, 1e-12, 0.999, xtol=1e-15)
    eq = equilibrium_density(k)
    assert eq.c1 == pytest.approx(z_ref, rel=1e-12)
    np.testing.assert_allclose(eq.profile[1:], (k.a[:-1] / k.b[1:]) * eq.c1 * eq.profile[:-1],
                               rtol=1e-12)


def test_equilibrium_k2():
    eq = equilibrium_density(RateKernel.from_lists([1.0], [1.0]))
    np.testing.assert_allclose(eq.profile, [0.5, 0.25], atol=1e-14)


def test_equilibrium_supercritical_kernel_has_no_fixed_point():
    # R_k = 4^(k-1) k^-6: radius 1/4 and sum k R_k 4^-k = zeta(5)/4 < 1
    K = 500
    k = np.arange(1, K + 1.0)
    kernel = RateKernel(4 * (k / (k + 1)) ** 6, np.ones(K))
    with pytest.raises(NoFixedPointError):
        equilibrium_density(kernel)


def test_equilibrium_profile_flushes_subnormal_tail():
    eq = equilibrium_density(RateKernel.constant(2000, 1.0, 50.0))
    nz = eq.profile[eq.profile > 0]
    assert nz.min() >= 1e-300
    assert eq.profile[-1] == 0.0


def test_ode_at_clips_interpolation_and_checks_range():
    traj = integrate_bd(monomers(10), RateKernel.constant(10), 1.0)
    assert traj.at(np.linspace(0, 1, 57)).min() >= 0
    with pytest.raises(ValueError):
        traj.at(1.5)
