import numpy as np
import pytest

from bdfluct.deterministic import equilibrium_density, integrate_bd
from bdfluct.errors import DimensionError, InstabilityError, NumericalError
from bdfluct.fluctuation import (covariance_ode, em_integrate, lyapunov_residual,
                                 mass_functional, noise_covariance, ou_equilibrium_sample,
                                 psd_sqrt, spectral_radius_estimate, stationary_covariance)
from bdfluct.operators import RateKernel, drift_matrix

from oracles import k2_stationary_sigma

K2 = RateKernel.from_lists([1.0], [1.0])
C2 = np.array([0.5, 0.25])


def test_k2_drift_by_hand():
    np.testing.assert_allclose(drift_matrix(C2, K2), [[-2.0, 2.0], [1.0, -1.0]])
    np.testing.assert_allclose(noise_covariance(C2, K2), [[2.0, -1.0], [-1.0, 0.5]])


def test_k2_stationary_covariance_closed_form():
    cov = stationary_covariance(C2, K2)
    np.testing.assert_allclose(cov.sigma, k2_stationary_sigma(), atol=1e-12)
    np.testing.assert_allclose(cov.eigenvalues, [-3.0])


def test_stationary_covariance_k50_residual_and_mass():
    k = RateKernel.constant(50)
    eq = equilibrium_density(k)
    cov = stationary_covariance(eq, k)
    scale = np.linalg.norm(noise_covariance(eq.profile, k))
    assert lyapunov_residual(cov.sigma, eq.profile, k) <= 1e-8 * scale
    np.testing.assert_allclose(mass_functional(cov.sigma), 0.0, atol=1e-12)
    assert cov.min_eigenvalue() >= -1e-12
    assert np.all(cov.eigenvalues.real < 0)


def test_stationary_covariance_rejects_non_equilibrium():
    k = RateKernel.constant(5)
    with pytest.raises(ValueError):
        stationary_covariance(np.eye(5)[0], k)
    with pytest.raises(DimensionError):
        stationary_covariance(C2, RateKernel.constant(3))


def test_stationary_covariance_not_hurwitz():
    k = RateKernel(np.zeros(3), np.zeros(3), allow_zero=True)
    with pytest.raises(InstabilityError):
        stationary_covariance(np.array([1.0, 0.0, 0.0]), k)


def test_covariance_ode_relaxes_to_stationary():
    k = RateKernel.constant(6)
    eq = equilibrium_density(k)
    cov = stationary_covariance(eq, k)
    lam_min = np.abs(cov.eigenvalues.real).min()
    out = covariance_ode(np.zeros((6, 6)), eq.profile, k, 20.0 / lam_min, dt=2e-3)
    assert np.abs(out.sigma - cov.sigma).max() <= 1e-6


def test_covariance_ode_without_drift_or_noise_keeps_initial():
    k = RateKernel(np.zeros(3), np.zeros(3), allow_zero=True)
    S0 = np.array([[1.0, 0.2, 0.0], [0.2, 2.0, 0.1], [0.0, 0.1, 0.5]])
    out = covariance_ode(S0, np.array([1.0, 0.0, 0.0]), k, 3.0)
    np.testing.assert_allclose(out.sigma, S0, atol=1e-15)


def test_covariance_ode_rejects_asymmetric_initial():
    with pytest.raises(NumericalError):
        covariance_ode(np.array([[1.0, 0.5], [0.0, 1.0]]), C2, K2, 1.0)


def test_covariance_ode_follows_time_dependent_mean():
    k = RateKernel.constant(5)
    ode = integrate_bd(np.eye(5)[0], k, 1.0)
    out = covariance_ode(np.zeros((5, 5)), ode, k, 1.0, dt=1e-3)
    ref = covariance_ode(np.zeros((5, 5)), ode, k, 1.0, dt=5e-4)
    np.testing.assert_allclose(out.sigma, ref.sigma, atol=1e-10)
    np.testing.assert_allclose(mass_functional(out.sigma), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        covariance_ode(np.zeros((5, 5)), ode, k, 2.0)


def test_em_keeps_mass_functional():
    k = RateKernel.constant(10)
    ode = integrate_bd(np.eye(10)[0], k, 1.0)
    rng = np.random.default_rng(0)
    W0 = rng.standard_normal((20, 10))
    path = em_integrate(W0, ode, k, 1e-3, rng)
    drift = np.abs(mass_functional(path.W) - mass_functional(W0)).max()
    assert drift <= 1e-10
    assert path.W.shape == (1001, 20, 10)
    assert not path.stability_warning


def test_em_noise_off_solves_linear_ode():
    # frozen mean, no noise: W(t) = expm(A t) W0
    from scipy.linalg import expm
    W0 = np.array([1.0, -0.5])
    path = em_integrate(W0, C2, K2, 1e-4, np.random.default_rng(0), t_end=1.0, noise=False)
    np.testing.assert_allclose(path.W[-1], expm(drift_matrix(C2, K2)) @ W0, atol=1e-3)


def test_em_stability_warning_and_radius():
    rho = spectral_radius_estimate(C2, K2)
    assert rho == pytest.approx(3.0, rel=1e-6)
    path = em_integrate(np.zeros(2), C2, K2, 0.9, np.random.default_rng(0), t_end=1.8)
    assert path.stability_warning


def test_em_covariance_matches_covariance_ode():
    k = RateKernel.constant(4)
    ode = integrate_bd(np.eye(4)[0], k, 1.0)
    P = 4000
    path = em_integrate(np.zeros((P, 4)), ode, k, 1e-3, np.random.default_rng(3))
    W = path.W[-1]
    emp = W.T @ W / P
    se = np.sqrt(((W[:, :, None] * W[:, None, :] - emp) ** 2).mean(axis=0) / P)
    ref = covariance_ode(np.zeros((4, 4)), ode, k, 1.0).sigma
    z = np.abs(emp - ref) / np.maximum(se, 1e-12)
    assert z.max() <= 5.0


def test_psd_sqrt():
    S = k2_stationary_sigma()
    R = psd_sqrt(S)
    np.testing.assert_allclose(R @ R, S, atol=1e-14)
    np.testing.assert_allclose(R, R.T)
    with pytest.raises(NumericalError):
        psd_sqrt(np.diag([1.0, -0.5]))
    # tiny negative round-off is clipped
    R2 = psd_sqrt(np.diag([1.0, -1e-14]))
    assert R2[1, 1] == 0.0


def test_ou_autocovariance_decays_at_drift_rate():
    # on the mass-null line the K = 2 drift has the single eigenvalue -3
    P, dt = 4000, 1e-3
    path = ou_equilibrium_sample(C2, K2, 0.5, dt, np.random.default_rng(4), n_paths=P,
                                 record_every=50)
    W1 = path.W[:, :, 0]
    ac = (W1 * W1[0]).mean(axis=1)
    slope = np.polyfit(path.times, np.log(ac), 1)[0]
    assert abs(slope + 3.0) <= 0.3
