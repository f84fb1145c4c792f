"""Truncated Becker-Doring ODEs: right-hand side, integration and equilibrium."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, NoFixedPointError, StiffnessError
from .operators import RateKernel, apply_tau, check_concentration, eval_s, mass

logger = logging.getLogger(__name__)

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension: y(t + th) = y + h * K^T P [th, th^2, th^3, th^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


@dataclass
class OdeTrajectory:
    """Concentrations at the requested output times.

    ``knot_t``, ``knot_c`` and ``knot_f`` hold every accepted step with its
    derivative, so :meth:`at` can evaluate a cubic Hermite interpolant anywhere
    in ``[times[0], t_end]``.
    """

    times: np.ndarray
    states: np.ndarray
    mass_drift: float
    kernel: RateKernel
    knot_t: np.ndarray
    knot_c: np.ndarray
    knot_f: np.ndarray
    n_steps: int = 0
    n_rejected: int = 0

    @property
    def K(self) -> int:
        return self.states.shape[1]

    @property
    def t_end(self) -> float:
        return float(self.knot_t[-1])

    def at(self, t) -> np.ndarray:
        """Cubic Hermite interpolation between accepted steps (scalar or array ``t``)."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < self.knot_t[0] - 1e-12) or np.any(t > self.knot_t[-1] + 1e-12):
            raise ValueError("requested time outside the integrated horizon")
        if self.knot_t.size == 1:
            out = np.repeat(self.knot_c[:1], t.size, axis=0)
            return out[0] if scalar else out
        i = np.clip(np.searchsorted(self.knot_t, t, side="right") - 1, 0, self.knot_t.size - 2)
        t0, t1 = self.knot_t[i], self.knot_t[i + 1]
        h = (t1 - t0)[:, None]
        s = ((t - t0) / (t1 - t0))[:, None]
        y0, y1 = self.knot_c[i], self.knot_c[i + 1]
        f0, f1 = self.knot_f[i], self.knot_f[i + 1]
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        out = h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
        np.maximum(out, 0.0, out=out)
        return out[0] if scalar else out

    def to_csv_rows(self):
        for t, c in zip(self.times, self.states):
            yield [t, *c, mass(c)]


@dataclass
class EquilibriumProfile:
    """Fixed point ``c_k = R_k c_1**k`` of the truncated equations."""

    c1: float
    profile: np.ndarray
    zs: float
    log_R: np.ndarray
    bracket: tuple[float, float]
    mass_residual: float
    balance_residual: float


def bd_rhs(c, kernel: RateKernel) -> np.ndarray:
    """Right-hand side of the truncated Becker-Doring system, ``tau(s(c))``."""
    return apply_tau(eval_s(c, kernel))


def _initial_step(f, y0, f0, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = f(y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def integrate_bd(c0, kernel: RateKernel, t_end: float, output_times=None, *,
                 rtol: float = 1e-8, atol: float = 1e-12, max_steps: int = 1_000_000,
                 h_min_factor: float = 1e-14) -> OdeTrajectory:
    """Integrate the truncated Becker-Doring equations from ``c0`` to ``t_end``.

    Adaptive Dormand-Prince 5(4) with local error control.  Steps producing a
    concentration below ``-atol`` are rejected; smaller negative entries are
    clipped to zero.  Output times are served by the pair's continuous
    extension.

    Raises
    ------
    StiffnessError
        If the step size underflows or ``max_steps`` is exceeded.
    """
    c0 = check_concentration(c0, kernel.K, mass_tol=1e-9)
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if output_times is None:
        output_times = np.linspace(0.0, t_end, 33)
    output_times = np.asarray(output_times, dtype=float)
    if output_times.size and (np.any(np.diff(output_times) <= 0)
                              or output_times[0] < 0 or output_times[-1] > t_end * (1 + 1e-12)):
        raise ValueError("output_times must be strictly increasing inside [0, t_end]")

    def f(y):
        return bd_rhs(y, kernel)

    y = c0.astype(float).copy()
    m0 = mass(y)
    t = 0.0
    fy = f(y)
    knots_t, knots_c, knots_f = [t], [y.copy()], [fy.copy()]
    out = np.empty((output_times.size, kernel.K))
    j = 0
    while j < output_times.size and output_times[j] <= 0.0:
        out[j] = y
        j += 1
    n_steps = n_rej = 0
    if t_end > 0:
        h = min(_initial_step(f, y, fy, rtol, atol), t_end)
    Kst = np.empty((7, kernel.K))
    while t < t_end:
        if n_steps + n_rej >= max_steps:
            raise StiffnessError(f"exceeded {max_steps} steps at t={t}")
        h_min = h_min_factor * max(1.0, abs(t))
        if h < h_min:
            raise StiffnessError(f"step size underflow (h={h:.3e}) at t={t}")
        h = min(h, t_end - t)
        Kst[0] = fy
        for s in range(1, 7):
            Kst[s] = f(y + h * (_A[s] @ Kst[:s]))
        y_new = y + h * (_A[6] @ Kst[:6])
        err_vec = h * (_E @ Kst)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if err > 1.0 or y_new.min() < -atol:
            n_rej += 1
            if err > 1.0:
                h *= max(0.2, 0.9 * err ** -0.2)
            else:
                h *= 0.5
            continue
        t_new = t + h if t_end - (t + h) > 1e-14 * max(1.0, t_end) else t_end
        while j < output_times.size and output_times[j] <= t_new:
            theta = (output_times[j] - t) / h
            out[j] = y + h * (Kst.T @ (_P @ theta ** np.arange(1, 5)))
            j += 1
        np.maximum(y_new, 0.0, out=y_new)
        y, t = y_new, t_new
        fy = Kst[6] if y.min() > 0 else f(y)
        knots_t.append(t)
        knots_c.append(y.copy())
        knots_f.append(fy.copy())
        n_steps += 1
        h *= min(5.0, max(0.2, 0.9 * max(err, 1e-10) ** -0.2))
    np.maximum(out, 0.0, out=out)
    drift = float(np.max(np.abs(mass(out) - m0))) if out.size else 0.0
    drift = max(drift, float(np.max(np.abs(mass(np.array(knots_c)) - m0))))
    return OdeTrajectory(output_times, out, drift, kernel, np.array(knots_t),
                         np.array(knots_c), np.array(knots_f), n_steps, n_rej)


def compute_R(kernel: RateKernel) -> np.ndarray:
    """``log R_k = sum_{i=2}^k (log a_{i-1} - log b_i)`` for ``k = 1..K``."""
    a = kernel.a[:kernel.K - 1]
    b = kernel.b[1:]
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError("compute_R needs strictly positive a_1..a_{K-1}, b_2..b_K")
    return np.concatenate([[0.0], np.cumsum(np.log(a) - np.log(b))])


def _mass_function(log_R, z):
    """``g(z) = sum k R_k z^k`` and its derivative, evaluated in log space."""
    k = np.arange(1, log_R.size + 1, dtype=float)
    terms = np.exp(log_R + k * np.log(z))
    return float(k @ terms), float((k * k) @ terms) / z


def equilibrium_density(kernel: RateKernel, tol: float = 1e-13) -> EquilibriumProfile:
    """Solve ``sum_k k R_k z^k = 1`` for the equilibrium monomer density.

    Bisection on ``[tol, min(zs(1-1e-9), 1-1e-9)]`` followed by Newton
    polishing, where ``zs`` is a radius estimate from the growth rate of
    ``log R_k`` over the tail half of the truncation.

    Raises
    ------
    NoFixedPointError
        If the mass function stays below 1 on the whole bracket.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    log_R = compute_R(kernel)
    K = log_R.size
    k = np.arange(1, K + 1, dtype=float)
    # radius estimate: least-squares slope of log R_k against k over the tail
    # half.  Unlike max log R_k / k it is not inflated by polynomial factors,
    # and unlike the largest increment it averages out rough rate sequences.
    if K >= 4:
        tail = slice(K // 2, K)
        slope = float(np.polyfit(k[tail], log_R[tail], 1)[0])
    else:
        slope = float(np.mean(np.diff(log_R)))
    zs = float(np.exp(-slope))
    hi = min(zs * (1 - 1e-9), 1 - 1e-9)
    lo = tol
    g_hi, _ = _mass_function(log_R, hi)
    if g_hi <= 1.0:
        raise NoFixedPointError(
            f"mass function reaches only {g_hi:.6g} < 1 below the radius estimate {zs:.6g}")
    g_lo, _ = _mass_function(log_R, lo)
    if g_lo >= 1.0:
        raise NoFixedPointError("mass function exceeds 1 at the lower bracket end")
    a_, b_ = lo, hi
    for _ in range(200):
        mid = 0.5 * (a_ + b_)
        g, _ = _mass_function(log_R, mid)
        if g > 1.0:
            b_ = mid
        else:
            a_ = mid
        if b_ - a_ < 1e-6 * b_:
            break
    z = 0.5 * (a_ + b_)
    for _ in range(50):
        g, dg = _mass_function(log_R, z)
        step = (g - 1.0) / dg
        z_new = min(max(z - step, a_), b_)
        if abs(z_new - z) <= 1e-16 * z:
            z = z_new
            break
        z = z_new
    g, _ = _mass_function(log_R, z)
    if abs(g - 1.0) > max(tol, 4e-16 * K):
        raise NoFixedPointError(f"root polishing stalled with |g-1|={abs(g - 1.0):.3e}")
    log_c = log_R + k * np.log(z)
    profile = np.where(log_c < np.log(1e-300), 0.0, np.exp(log_c))
    balance = np.abs(kernel.a[:K - 1] * profile[0] * profile[:K - 1] - kernel.b[1:] * profile[1:])
    return EquilibriumProfile(float(z), profile, zs, log_R, (lo, hi),
                              float(abs(mass(profile) - 1.0)), float(balance.max()))
