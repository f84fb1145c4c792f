import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import LinearOperator

from bdfluct.errors import DimensionError, DomainError
from bdfluct.operators import (RateKernel, WeightSequence, apply_tau, check_concentration,
                               diffusion_matrix, drift_lower_bound_diagnostic, drift_matrix,
                               eval_s, gamma_drift, gamma_tau, jacobian_apply, mass, net_flux,
                               noise_apply, tau_matrix, tau_t_apply, weighted_norm)

from oracles import jac_ref, s_ref, tau_ref


def random_conc(rng, K):
    c = rng.random(K) * rng.random(K) ** 4
    return c / mass(c) * rng.uniform(0.3, 1.0)


# --- RateKernel -----------------------------------------------------------


def test_kernel_truncation_forces_last_aggregation_to_zero():
    k = RateKernel.constant(5)
    assert k.K == 5
    assert k.a[-1] == 0 and k.b[0] == 0
    assert np.all(k.a[:-1] == 1) and np.all(k.b[1:] == 1)
    assert k.lambda_max == 1


def test_kernel_rejects_nonpositive_rates():
    with pytest.raises(DomainError):
        RateKernel.constant(4, a=1.0, b=0.0)
    with pytest.raises(DomainError):
        RateKernel.from_lists([1.0, -1.0], [1.0, 1.0])


def test_kernel_from_lists_and_power_law():
    k = RateKernel.from_lists([1.0], [1.0])
    assert k.K == 2
    p = RateKernel.power_law(6, 2.0, 1.0, 3.0, 0.5)
    np.testing.assert_allclose(p.a[:5], 2.0 * np.arange(1, 6))
    np.testing.assert_allclose(p.b[1:], 3.0 * np.arange(2, 7) ** 0.5)


def test_kernel_truncate():
    k = RateKernel.constant(10).truncate(4)
    assert k.K == 4 and k.a[-1] == 0


# --- WeightSequence -------------------------------------------------------


def test_power_law_weights():
    w = WeightSequence.power_law(2.0)
    assert w.gamma0 == 4.0
    assert w.inv_sum == pytest.approx(math.pi ** 2 / 6, rel=1e-14)
    assert w.inv_sum_estimate() == pytest.approx(w.inv_sum, rel=1e-12)
    np.testing.assert_array_equal(w.values(3), [1.0, 4.0, 9.0])


@pytest.mark.parametrize("alpha", [1.0, 0.5])
def test_power_law_rejects_divergent_sum(alpha):
    with pytest.raises(DomainError):
        WeightSequence.power_law(alpha)


def test_constant_weights_rejected():
    with pytest.raises(DomainError):
        WeightSequence.constant()


def test_explicit_weights():
    w = WeightSequence.from_values([1.0, 2.0, 4.0, 8.0])
    assert w.inv_sum == pytest.approx(1.875)
    assert w.gamma0 == pytest.approx(4.0)  # w_4 / w_2
    with pytest.raises(DomainError):
        WeightSequence.from_values([2.0, 1.0])


def test_companion_check():
    w = WeightSequence.power_law(1.5)
    w.check_companion(WeightSequence.power_law(2.0))
    with pytest.raises(DomainError):
        w.check_companion(WeightSequence.power_law(1.5))
    with pytest.raises(DomainError):
        WeightSequence.power_law(2.0).check_companion(WeightSequence.power_law(1.5))


# --- s and tau ------------------------------------------------------------


def test_eval_s_hand_value():
    k = RateKernel.constant(4)
    np.testing.assert_allclose(eval_s([0.5, 0.25, 0, 0], k), [0.25, 0.25, 0.125, 0, 0, 0])


def test_eval_s_zero_and_equilibrium_balance():
    k = RateKernel.constant(6)
    np.testing.assert_array_equal(eval_s(np.zeros(6), k), np.zeros(10))
    c1 = (3 - math.sqrt(5)) / 2
    c = c1 ** np.arange(1, 7)
    z = eval_s(c, k).reshape(-1, 2)
    np.testing.assert_allclose(z[:, 0], z[:, 1], rtol=1e-14)


def test_eval_s_dimension_error():
    with pytest.raises(DimensionError):
        eval_s(np.zeros(3), RateKernel.constant(4))


def test_apply_tau_unit_channels():
    e = np.zeros(8)
    e[0] = 1
    np.testing.assert_array_equal(apply_tau(e), [-2, 1, 0, 0, 0])
    e = np.zeros(8)
    e[1] = 1
    np.testing.assert_array_equal(apply_tau(e), [2, -1, 0, 0, 0])
    np.testing.assert_array_equal(apply_tau(np.zeros(8)), np.zeros(5))


def test_apply_tau_odd_length_rejected():
    with pytest.raises(DimensionError):
        apply_tau(np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_apply_tau_matches_componentwise_definition(K, seed):
    z = np.random.default_rng(seed).standard_normal(2 * (K - 1))
    out = apply_tau(z)
    np.testing.assert_allclose(out, tau_ref(z), atol=1e-12)
    assert abs(mass(out)) <= 1e-12 * (1 + np.abs(z).sum() * K)


def test_apply_tau_batched():
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((4, 3, 10))
    out = apply_tau(Z)
    assert out.shape == (4, 3, 6)
    np.testing.assert_allclose(out[2, 1], apply_tau(Z[2, 1]))


def test_tau_adjoint():
    rng = np.random.default_rng(2)
    T = tau_matrix(7)
    y = rng.standard_normal(7)
    np.testing.assert_allclose(tau_t_apply(y), T.T @ y, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 25), st.integers(0, 2**32 - 1))
def test_eval_s_and_jacobian_match_reference(K, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.2, 3, K), rng.uniform(0.2, 3, K)
    k = RateKernel(a, b)
    c, x = random_conc(rng, K), rng.standard_normal(K)
    np.testing.assert_allclose(eval_s(c, k), s_ref(c, k.a, k.b), rtol=1e-14)
    np.testing.assert_allclose(jacobian_apply(c, x, k), jac_ref(c, x, k.a, k.b), atol=1e-14)


# --- Jacobian and drift -----------------------------------------------------


def test_jacobian_hand_value():
    k = RateKernel.from_lists([1.0], [1.0])
    np.testing.assert_allclose(jacobian_apply([0.5, 0.25], [1.0, 0.0], k), [1.0, 0.0])
    np.testing.assert_array_equal(jacobian_apply([0.5, 0.25], [0.0, 0.0], k), [0.0, 0.0])


@pytest.mark.parametrize("eps", [1e-4, 1e-5])
def test_jacobian_finite_difference_first_order(eps):
    rng = np.random.default_rng(3)
    k = RateKernel.constant(12)
    c, x = random_conc(rng, 12), rng.standard_normal(12)
    fd = (eval_s(c + eps * x, k) - eval_s(c, k)) / eps
    # only the aggregation fluxes are quadratic: their forward-difference error
    # is exactly eps * a_k x_1 x_k, the fragmentation ones are exact
    quad = eval_s(x, k)
    quad[1::2] = 0.0
    np.testing.assert_allclose(fd - jacobian_apply(c, x, k), eps * quad, atol=1e-9)


def test_drift_matrix_hand_value():
    k = RateKernel.from_lists([1.0], [1.0])
    np.testing.assert_allclose(drift_matrix([0.5, 0.25], k), [[-2, 2], [1, -1]])


def test_drift_matrix_columns_and_mass_null():
    rng = np.random.default_rng(4)
    k = RateKernel(rng.uniform(0.5, 2, 9), rng.uniform(0.5, 2, 9))
    c = random_conc(rng, 9)
    A = drift_matrix(c, k)
    for j in range(9):
        np.testing.assert_allclose(A[:, j], apply_tau(jacobian_apply(c, np.eye(9)[j], k)))
    assert np.abs(np.arange(1, 10) @ A).max() <= 1e-12


def test_drift_matrix_zero_concentration_has_only_fragmentation():
    k = RateKernel.constant(5, a=2.0, b=3.0)
    A = drift_matrix(np.zeros(5), k)
    # Jacobian at c = 0: only the fragmentation rows b_{k+1} e_{k+1} survive
    J = np.zeros((8, 5))
    for kk in range(1, 5):
        J[2 * kk - 1, kk] = 3.0
    np.testing.assert_allclose(A, tau_matrix(5) @ J)
    assert np.all(A[:, 0] == 0)


def test_drift_matrix_operator_above_cap():
    k = RateKernel.constant(20)
    c = random_conc(np.random.default_rng(5), 20)
    op = drift_matrix(c, k, dense_cap=10)
    assert isinstance(op, LinearOperator)
    v = np.random.default_rng(6).standard_normal(20)
    A = drift_matrix(c, k)
    np.testing.assert_allclose(op @ v, A @ v, atol=1e-13)
    np.testing.assert_allclose(op.T @ v, A.T @ v, atol=1e-13)


# --- diffusion -------------------------------------------------------------


def test_diffusion_hand_value():
    k = RateKernel.from_lists([1.0], [1.0])
    np.testing.assert_allclose(diffusion_matrix([0.5, 0.25], k), [[-1, 1], [0.5, -0.5]])


def test_diffusion_zero_and_domain_error():
    k = RateKernel.constant(4)
    np.testing.assert_array_equal(diffusion_matrix(np.zeros(4), k), np.zeros((4, 6)))
    with pytest.raises(DomainError):
        diffusion_matrix([-0.1, 0.2, 0, 0], k)
    with pytest.raises(DimensionError):
        diffusion_matrix(np.zeros(4), k, dense_cap=3)


def test_diffusion_gram_is_psd_and_noise_apply_matches():
    rng = np.random.default_rng(7)
    k = RateKernel.constant(8)
    c = random_conc(rng, 8)
    B = diffusion_matrix(c, k)
    G = B @ B.T
    np.testing.assert_allclose(G, G.T, atol=1e-15)
    assert np.linalg.eigvalsh(G).min() >= -1e-14
    xi = rng.standard_normal(14)
    np.testing.assert_allclose(noise_apply(c, xi, k), B @ xi, atol=1e-14)


# --- norms and bounds --------------------------------------------------------


def test_weighted_norm():
    w = WeightSequence.power_law(2.0)
    e = np.zeros(5)
    e[3] = 1
    assert weighted_norm(e, w) == pytest.approx(4.0)
    assert weighted_norm(np.zeros(5), w) == 0
    rng = np.random.default_rng(8)
    u, v = rng.standard_normal((2, 50, 5))
    assert np.all(weighted_norm(u + v, w) <= weighted_norm(u, w) + weighted_norm(v, w) + 1e-12)


def test_gamma_tau_closed_form():
    # sqrt(4 * zeta(2) + 8 + 4) with zeta(2) = pi^2 / 6
    expected = math.sqrt(12 + 2 * math.pi ** 2 / 3)
    assert gamma_tau(WeightSequence.power_law(2.0)) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(4.3104, abs=1e-4)


def test_gamma_drift_values():
    w = WeightSequence.power_law(2.0)
    k = RateKernel.constant(2)
    assert gamma_drift(np.zeros(2), w, k) == pytest.approx(12.0)
    assert gamma_drift([0.5, 0.25], w, k) == pytest.approx(24.0)


def test_gamma_drift_bounds_jacobian():
    rng = np.random.default_rng(9)
    w = WeightSequence.power_law(2.0)
    k = RateKernel(rng.uniform(0.1, 1, 30), rng.uniform(0.1, 1, 30))
    c = random_conc(rng, 30)
    g = gamma_drift(c, w, k)
    x = rng.standard_normal((500, 30))
    # flux vectors are weighted by their own (channel) index
    lhs = weighted_norm(jacobian_apply(c, x, k), w) ** 2
    assert np.all(lhs <= g * weighted_norm(x, w) ** 2)


def test_net_flux():
    k = RateKernel.constant(4)
    c = np.array([0.5, 0.25, 0.1, 0.0])
    assert net_flux(c, k, 1) == pytest.approx(0.25 - 0.25)
    assert net_flux(c, k, 2) == pytest.approx(0.125 - 0.1)
    with pytest.raises(IndexError):
        net_flux(c, k, 4)


def test_drift_lower_bound_diagnostic_grows_with_rates():
    w = WeightSequence.power_law(2.0)
    K = 40
    k = RateKernel.power_law(K, 1.0, 1.0, 1.0, 1.0)
    c = np.zeros(K)
    c[0] = 0.5
    vals = [drift_lower_bound_diagnostic(c, k, w, j) for j in (5, 10, 20)]
    assert vals[0] < vals[1] < vals[2]
    with pytest.raises(IndexError):
        drift_lower_bound_diagnostic(c, k, w, 1)


def test_check_concentration():
    assert check_concentration([0.5, 0.25]).shape == (2,)
    with pytest.raises(DomainError):
        check_concentration([-0.1, 0.0])
    with pytest.raises(DomainError):
        check_concentration([0.6, 0.3])
