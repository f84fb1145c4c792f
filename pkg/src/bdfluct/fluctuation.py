"""Numerics for the linear fluctuation SDE around a Becker-Doring trajectory.

The SDE is ``dW = A(c(t)) W dt + B(c(t)) dbeta`` with ``A = tau o grad s(c)``
and ``B = tau . diag(sqrt(s(c)))``.  Everything runs in plain species
coordinates; weighted norms only appear in diagnostics.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .deterministic import EquilibriumProfile, OdeTrajectory
from .errors import DimensionError, DomainError, InstabilityError, NumericalError
from .operators import (RateKernel, WeightSequence, apply_tau, drift_matrix, eval_s,
                        jacobian_apply, mass, noise_apply, tau_matrix, weighted_norm)

logger = logging.getLogger(__name__)


@dataclass
class FluctuationPath:
    times: np.ndarray
    W: np.ndarray  # (n_times, K) or (n_times, n_paths, K)
    w_norm: np.ndarray
    stability_warning: bool = False
    dt: float = 0.0


@dataclass
class CovarianceMatrix:
    sigma: np.ndarray
    time: float
    eigenvalues: np.ndarray | None = None  # drift spectrum on the mass-null subspace

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.sigma + self.sigma.T)).min())

    def summary(self, block: int = 4) -> dict:
        return {
            "time": self.time,
            "trace": float(np.trace(self.sigma)),
            "min_eigenvalue": self.min_eigenvalue(),
            "top_left": self.sigma[:block, :block].tolist(),
        }


def _mean_function(mean):
    """Turn an ``OdeTrajectory`` or a fixed concentration into ``t -> c(t)``."""
    if isinstance(mean, OdeTrajectory):
        return mean.at, mean.K, mean.t_end
    if isinstance(mean, EquilibriumProfile):
        c = np.asarray(mean.profile, dtype=float)
    else:
        c = np.asarray(mean, dtype=float)
    return (lambda t: c), c.size, np.inf


def noise_covariance(c, kernel: RateKernel) -> np.ndarray:
    """``B B^T = tau diag(s(c)) tau^T``."""
    s = eval_s(c, kernel)
    if np.any(s < 0):
        raise DomainError("negative flux: concentration outside the phase space")
    T = tau_matrix(kernel.K)
    return (T * s) @ T.T


def spectral_radius_estimate(c, kernel: RateKernel, iters: int = 200, seed: int = 0) -> float:
    """Power-iteration estimate of ``max |eig(A(c))|`` (matrix-free)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(kernel.K)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = apply_tau(jacobian_apply(c, v, kernel))
        nu = np.linalg.norm(u)
        if nu == 0:
            return 0.0
        lam = nu
        v = u / nu
    # one more A^2 step to damp oscillation between a +/- eigenpair
    u2 = apply_tau(jacobian_apply(c, apply_tau(jacobian_apply(c, v, kernel)), kernel))
    return float(max(lam, np.sqrt(np.linalg.norm(u2))))


def em_integrate(W0, mean, kernel: RateKernel, dt: float, rng: np.random.Generator, *,
                 t_end: float | None = None, t0: float = 0.0, noise: bool = True,
                 record_every: int = 1, weights: WeightSequence | None = None) -> FluctuationPath:
    """Euler-Maruyama paths of the fluctuation SDE.

    ``W0`` may be a single ``(K,)`` vector or a batch ``(P, K)`` of independent
    paths; ``mean`` is an :class:`OdeTrajectory` (interpolated every step) or a
    frozen concentration.  ``stability_warning`` is set when ``dt`` exceeds
    ``2 / max|eig A|`` at any of a few probe times.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    c_of_t, K, horizon = _mean_function(mean)
    W = np.array(W0, dtype=float)
    if W.shape[-1] != K:
        raise DimensionError(f"W0 has length {W.shape[-1]}, mean trajectory has K={K}")
    if t_end is None:
        if not np.isfinite(horizon):
            raise ValueError("t_end required with a frozen mean")
        t_end = horizon
    if t_end > horizon * (1 + 1e-12):
        raise ValueError("mean trajectory does not cover the requested horizon")
    n_steps = int(round((t_end - t0) / dt))
    weights = weights or WeightSequence.power_law(2.0)
    probes = np.linspace(t0, t0 + n_steps * dt, 3)
    rho = max(spectral_radius_estimate(c_of_t(p), kernel) for p in probes)
    warn = rho > 0 and dt > 2.0 / rho
    if warn:
        logger.warning("dt=%g above the explicit stability limit %g", dt, 2.0 / rho)
    sq = np.sqrt(dt)
    times = [t0]
    rec = [W.copy()]
    for n in range(n_steps):
        t = t0 + n * dt
        c = c_of_t(t)
        dW = apply_tau(jacobian_apply(c, W, kernel)) * dt
        if noise:
            xi = rng.standard_normal(W.shape[:-1] + (2 * (K - 1),))
            dW += noise_apply(c, xi, kernel) * sq
        W = W + dW
        if (n + 1) % record_every == 0 or n + 1 == n_steps:
            times.append(t0 + (n + 1) * dt)
            rec.append(W.copy())
    rec = np.array(rec)
    return FluctuationPath(np.array(times), rec, weighted_norm(rec, weights), warn, dt)


def _lyap_rhs(S, A, Q):
    AS = A @ S
    return AS + AS.T + Q


def covariance_ode(Sigma0, mean, kernel: RateKernel, t_end: float, dt: float = 1e-3, *,
                   t0: float = 0.0, noise: bool = True, asym_tol: float = 1e-9) -> CovarianceMatrix:
    """Integrate ``dS/dt = A S + S A^T + B B^T`` with fixed-step RK4.

    For a deterministic initial fluctuation this is the exact covariance of
    the Gaussian solution at ``t_end``.
    """
    c_of_t, K, horizon = _mean_function(mean)
    S = np.array(Sigma0, dtype=float)
    if S.shape != (K, K):
        raise DimensionError(f"Sigma0 must be {K}x{K}")
    if t_end > horizon * (1 + 1e-12):
        raise ValueError("mean trajectory does not cover the requested horizon")
    if np.max(np.abs(S - S.T), initial=0.0) > asym_tol * max(1.0, np.abs(S).max()):
        raise NumericalError("Sigma0 is not symmetric")
    n = int(np.ceil((t_end - t0) / dt - 1e-9)) if t_end > t0 else 0
    h = (t_end - t0) / n if n else 0.0
    zero = np.zeros((K, K))

    def coeffs(t):
        c = c_of_t(t)
        return drift_matrix(c, kernel), (noise_covariance(c, kernel) if noise else zero)

    t = t0
    A0, Q0 = coeffs(t)
    for _ in range(n):
        Am, Qm = coeffs(t + 0.5 * h)
        A1, Q1 = coeffs(t + h)
        k1 = _lyap_rhs(S, A0, Q0)
        k2 = _lyap_rhs(S + 0.5 * h * k1, Am, Qm)
        k3 = _lyap_rhs(S + 0.5 * h * k2, Am, Qm)
        k4 = _lyap_rhs(S + h * k3, A1, Q1)
        S = S + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        asym = np.abs(S - S.T).max()
        if asym > asym_tol * max(1.0, np.abs(S).max()):
            raise NumericalError(f"covariance lost symmetry ({asym:.3e})")
        S = 0.5 * (S + S.T)
        t += h
        A0, Q0 = A1, Q1
    return CovarianceMatrix(S, float(t_end))


def mass_null_basis(K: int) -> np.ndarray:
    """Orthonormal ``K x (K-1)`` basis of ``{v : sum k v_k = 0}``."""
    m = np.arange(1, K + 1, dtype=float)[None, :]
    return scipy.linalg.null_space(m)


def stationary_covariance(c_eq, kernel: RateKernel, balance_tol: float = 1e-10) -> CovarianceMatrix:
    """Stationary covariance of the equilibrium fluctuation process.

    The drift has the left null vector ``(1, 2, ..., K)`` from mass
    conservation, so the Lyapunov equation is solved on the mass-null
    subspace and embedded back.

    Raises
    ------
    InstabilityError
        If the reduced drift is not Hurwitz.
    """
    c = np.asarray(c_eq.profile if isinstance(c_eq, EquilibriumProfile) else c_eq, dtype=float)
    K = kernel.K
    if c.size != K:
        raise DimensionError(f"equilibrium has length {c.size}, kernel K={K}")
    s = eval_s(c, kernel).reshape(K - 1, 2)
    residual = np.abs(s[:, 0] - s[:, 1]).max()
    if residual > balance_tol:
        raise DomainError(f"not a fixed point: detailed-balance residual {residual:.3e}")
    V = mass_null_basis(K)
    A = drift_matrix(c, kernel)
    Q = noise_covariance(c, kernel)
    Ar = V.T @ A @ V
    Qr = V.T @ Q @ V
    eig = np.linalg.eigvals(Ar)
    if eig.real.max() >= -1e-12:
        raise InstabilityError(
            f"reduced drift not Hurwitz (spectral abscissa {eig.real.max():.3e})")
    Sr = scipy.linalg.solve_continuous_lyapunov(Ar, -Qr)
    Sr = 0.5 * (Sr + Sr.T)
    S = V @ Sr @ V.T
    return CovarianceMatrix(0.5 * (S + S.T), np.inf, eig)


def lyapunov_residual(sigma, c, kernel: RateKernel) -> float:
    """Frobenius norm of ``A S + S A^T + B B^T`` projected on the mass-null subspace."""
    V = mass_null_basis(kernel.K)
    A = drift_matrix(c, kernel)
    R = A @ sigma + sigma @ A.T + noise_covariance(c, kernel)
    return float(np.linalg.norm(V.T @ R @ V))


def psd_sqrt(sigma, clip_tol: float = 1e-10) -> np.ndarray:
    """Symmetric square root; eigenvalues above ``-clip_tol * trace`` are clipped to 0."""
    sigma = 0.5 * (np.asarray(sigma) + np.asarray(sigma).T)
    lam, U = np.linalg.eigh(sigma)
    if lam.min() < -clip_tol * max(np.trace(sigma), 1e-300):
        raise NumericalError(f"covariance has negative eigenvalue {lam.min():.3e}")
    return (U * np.sqrt(np.clip(lam, 0.0, None))) @ U.T


def ou_equilibrium_sample(c_eq, kernel: RateKernel, t_end: float, dt: float,
                          rng: np.random.Generator, *, n_paths: int | None = None,
                          record_every: int = 1, stationary: CovarianceMatrix | None = None,
                          weights: WeightSequence | None = None) -> FluctuationPath:
    """Stationary OU paths: ``W(0) ~ N(0, Sigma)`` then Euler-Maruyama at frozen ``c_eq``."""
    c = np.asarray(c_eq.profile if isinstance(c_eq, EquilibriumProfile) else c_eq, dtype=float)
    if stationary is None:
        stationary = stationary_covariance(c, kernel)
    root = psd_sqrt(stationary.sigma)
    shape = (kernel.K,) if n_paths is None else (n_paths, kernel.K)
    W0 = rng.standard_normal(shape) @ root
    return em_integrate(W0, c, kernel, dt, rng, t_end=t_end, record_every=record_every,
                        weights=weights)


def mass_functional(W) -> np.ndarray:
    """``sum_k k W_k`` along the last axis."""
    return mass(W)
