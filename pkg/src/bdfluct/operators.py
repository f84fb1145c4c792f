"""Rate kernels, weights and the flux/stoichiometry operators.

Conventions
-----------
Species vectors have length ``K`` with ``v[k-1]`` holding cluster size ``k``.
Flux vectors have length ``2*(K-1)`` and interleave the two reaction
families, so that with 1-based channel numbers

* channel ``2k-1`` (array index ``2k-2``) is aggregation ``(1) + (k) -> (k+1)``,
* channel ``2k``   (array index ``2k-1``) is fragmentation ``(k+1) -> (1) + (k)``,

for ``1 <= k <= K-1``.  Reshaping a flux array to ``(..., K-1, 2)`` gives the
aggregation column ``[..., 0]`` and the fragmentation column ``[..., 1]``.

All operators accept leading batch dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator
from scipy.special import zeta

from .errors import DimensionError, DomainError

DENSE_CAP = 512


@dataclass(frozen=True)
class RateKernel:
    """Aggregation and fragmentation rates truncated at cluster size ``K``.

    ``a[k-1]`` is the aggregation rate ``a_k`` and ``b[k-1]`` the fragmentation
    rate ``b_k``.  The top aggregation rate ``a_K`` is forced to zero so that no
    mass leaves the truncation, and ``b_1`` is unused (stored as 0).
    """

    a: np.ndarray
    b: np.ndarray
    lambda_max: float = field(init=False)

    def __init__(self, a, b, allow_zero: bool = False):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
            raise DimensionError(
                f"rate arrays must be 1-d of equal length, got {a.shape} and {b.shape}")
        K = a.size
        if K < 2:
            raise DimensionError(f"truncation K must be >= 2, got {K}")
        a = a.copy()
        b = b.copy()
        a[K - 1] = 0.0
        b[0] = 0.0
        active = np.concatenate([a[:K - 1], b[1:]])
        if not np.all(np.isfinite(active)):
            raise DomainError("rates must be finite")
        if allow_zero:
            if np.any(active < 0):
                raise DomainError("rates must be nonnegative")
        elif np.any(active <= 0):
            raise DomainError("rates a_1..a_{K-1} and b_2..b_K must be positive")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lambda_max", float(active.max()))

    @property
    def K(self) -> int:
        return self.a.size

    @classmethod
    def constant(cls, K: int, a: float = 1.0, b: float = 1.0, **kw) -> "RateKernel":
        return cls(np.full(K, float(a)), np.full(K, float(b)), **kw)

    @classmethod
    def power_law(cls, K: int, a0: float = 1.0, a_exp: float = 0.0,
                  b0: float = 1.0, b_exp: float = 0.0, **kw) -> "RateKernel":
        """``a_k = a0 * k**a_exp`` and ``b_k = b0 * k**b_exp``."""
        k = np.arange(1, K + 1, dtype=float)
        return cls(a0 * k ** a_exp, b0 * k ** b_exp, **kw)

    @classmethod
    def from_lists(cls, a, b, **kw) -> "RateKernel":
        """Build from ``a_1..a_{K-1}`` and ``b_2..b_K``."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.size != b.size:
            raise DimensionError(
                f"need as many a_k (k=1..K-1) as b_k (k=2..K): {a.size} vs {b.size}")
        return cls(np.append(a, 0.0), np.insert(b, 0, 0.0), **kw)

    def truncate(self, K: int) -> "RateKernel":
        """Kernel restricted to sizes ``<= K`` (with the new ``a_K = 0``)."""
        if K > self.K:
            raise DimensionError(f"cannot extend truncation from {self.K} to {K}")
        return RateKernel(self.a[:K], self.b[:K], allow_zero=True)


@dataclass(frozen=True)
class WeightSequence:
    """Nondecreasing weights ``w_n`` defining the space ``L2(w)``.

    Use :meth:`power_law` for the ``w_n = n**alpha`` family; explicit finite
    lists are accepted through :meth:`from_values`.
    """

    family: str
    alpha: float | None
    gamma0: float
    inv_sum: float
    explicit: np.ndarray | None = None

    @classmethod
    def power_law(cls, alpha: float) -> "WeightSequence":
        alpha = float(alpha)
        if not alpha > 1.0:
            raise DomainError(f"power-law weights need alpha > 1 for a summable 1/w, got {alpha}")
        return cls("power_law", alpha, 2.0 ** alpha, float(zeta(alpha)))

    @classmethod
    def from_values(cls, w) -> "WeightSequence":
        """Finite weight list; ``inv_sum`` is the finite sum and ``gamma0`` the
        smallest doubling constant visible inside the list."""
        w = np.asarray(w, dtype=float)
        if w.ndim != 1 or w.size < 2:
            raise DimensionError("explicit weights need at least two entries")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be positive and finite")
        if np.any(np.diff(w) < 0):
            raise DomainError("weights must be nondecreasing")
        n = np.arange(1, w.size // 2 + 1)
        gamma0 = float(np.max(w[2 * n - 1] / w[n - 1]))
        w = w.copy()
        w.setflags(write=False)
        return cls("explicit", None, gamma0, float(np.sum(1.0 / w)), w)

    @classmethod
    def constant(cls, value: float = 1.0) -> "WeightSequence":
        raise DomainError("constant weights have a divergent sum of reciprocals")

    def values(self, n: int) -> np.ndarray:
        """First ``n`` weights ``w_1..w_n``."""
        if self.family == "power_law":
            return np.arange(1, n + 1, dtype=float) ** self.alpha
        if n > self.explicit.size:
            raise DimensionError(f"only {self.explicit.size} explicit weights, {n} requested")
        return np.array(self.explicit[:n])

    def inv_sum_estimate(self, n_terms: int = 10_000) -> float:
        """Partial sum of ``1/w_k`` plus an Euler-Maclaurin tail estimate.

        Independent of the closed form used for ``inv_sum``.
        """
        if self.family != "power_law":
            return float(np.sum(1.0 / self.explicit))
        s = self.alpha
        k = np.arange(1, n_terms + 1, dtype=float)
        partial = np.sum(k[::-1] ** -s)
        m = float(n_terms)
        # tail sum_{k>m} k^-s
        tail = (m ** (1 - s) / (s - 1) - 0.5 * m ** -s + s * m ** (-s - 1) / 12.0
                - s * (s + 1) * (s + 2) * m ** (-s - 3) / 720.0)
        return float(partial + tail)

    def check_companion(self, r: "WeightSequence", n: int = 4096) -> None:
        """Validate that ``r`` may serve as the moment sequence paired with these
        weights: ``r_k >= w_k`` and ``w_k / r_k`` decreasing (checked on a prefix,
        and to zero in the limit for power laws)."""
        for seq in (self, r):
            if seq.explicit is not None:
                n = min(n, seq.explicit.size)
        w_v, r_v = self.values(n), r.values(n)
        if np.any(r_v < w_v):
            raise DomainError("companion sequence must dominate the weights")
        ratio = w_v / r_v
        if np.any(np.diff(ratio) > 0):
            raise DomainError("w_k / r_k must be nonincreasing")
        if self.family == "power_law" and r.family == "power_law" and not r.alpha > self.alpha:
            raise DomainError("w_k / r_k must tend to zero: need beta > alpha")


def _check_species(v, K=None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        raise DimensionError("species vector must be at least 1-d")
    if K is not None and v.shape[-1] != K:
        raise DimensionError(f"species vector has length {v.shape[-1]}, expected {K}")
    return v


def _check_flux(z, K=None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 or z.shape[-1] % 2 or z.shape[-1] < 2:
        raise DimensionError(f"flux vector must have even length >= 2, got {z.shape}")
    if K is not None and z.shape[-1] != 2 * (K - 1):
        raise DimensionError(f"flux vector has length {z.shape[-1]}, expected {2 * (K - 1)}")
    return z


def check_concentration(c, K: int | None = None, mass_tol: float = 1e-12) -> np.ndarray:
    """Return ``c`` as an array after checking nonnegativity and ``sum k c_k <= 1``."""
    c = _check_species(c, K)
    if np.any(c < 0):
        raise DomainError("concentrations must be nonnegative")
    if mass(c) > 1.0 + mass_tol:
        raise DomainError(f"total mass {mass(c)!r} exceeds 1")
    return c


def mass(v) -> np.ndarray | float:
    """``sum_k k v_k`` along the last axis."""
    v = np.asarray(v, dtype=float)
    return v @ np.arange(1, v.shape[-1] + 1, dtype=float)


def eval_s(c, kernel: RateKernel) -> np.ndarray:
    """Per-channel reaction fluxes ``s(c)``."""
    c = _check_species(c, kernel.K)
    K = kernel.K
    out = np.empty(c.shape[:-1] + (K - 1, 2))
    out[..., 0] = kernel.a[:K - 1] * c[..., :1] * c[..., :K - 1]
    out[..., 1] = kernel.b[1:] * c[..., 1:]
    return out.reshape(c.shape[:-1] + (2 * (K - 1),))


def apply_tau(z) -> np.ndarray:
    """Stoichiometric map from channel fluxes to species net rates."""
    z = _check_flux(z)
    K = z.shape[-1] // 2 + 1
    zz = z.reshape(z.shape[:-1] + (K - 1, 2))
    agg, frag = zz[..., 0], zz[..., 1]
    out = np.zeros(z.shape[:-1] + (K,))
    out[..., 0] = -agg.sum(axis=-1) - agg[..., 0] + frag.sum(axis=-1) + frag[..., 0]
    out[..., 1:] = agg - frag
    out[..., 1:K - 1] += frag[..., 1:] - agg[..., 1:]
    return out


def jacobian_apply(c, x, kernel: RateKernel) -> np.ndarray:
    """Directional derivative ``grad s(c) . x``."""
    K = kernel.K
    c = _check_species(c, K)
    x = _check_species(x, K)
    shape = np.broadcast_shapes(c.shape, x.shape)[:-1]
    out = np.empty(shape + (K - 1, 2))
    out[..., 0] = kernel.a[:K - 1] * (x[..., :1] * c[..., :K - 1] + c[..., :1] * x[..., :K - 1])
    out[..., 1] = kernel.b[1:] * x[..., 1:]
    return out.reshape(shape + (2 * (K - 1),))


def tau_matrix(K: int) -> np.ndarray:
    """Dense ``K x 2(K-1)`` matrix of ``apply_tau``."""
    return apply_tau(np.eye(2 * (K - 1))).T


def jacobian_matrix(c, kernel: RateKernel) -> np.ndarray:
    """Dense ``2(K-1) x K`` Jacobian of ``s`` at ``c``."""
    return jacobian_apply(c, np.eye(kernel.K), kernel).T


def drift_matrix(c, kernel: RateKernel, dense_cap: int = DENSE_CAP):
    """Linearised drift ``tau o grad s(c)`` as a ``K x K`` matrix.

    Above ``dense_cap`` a matrix-free :class:`~scipy.sparse.linalg.LinearOperator`
    is returned instead.
    """
    K = kernel.K
    c = _check_species(c, K)
    if K > dense_cap:
        return LinearOperator(
            (K, K), dtype=float,
            matvec=lambda v: apply_tau(jacobian_apply(c, np.ravel(v), kernel)),
            rmatvec=lambda v: jacobian_matrix_t_apply(c, tau_t_apply(np.ravel(v)), kernel))
    return tau_matrix(K) @ jacobian_matrix(c, kernel)


def tau_t_apply(y) -> np.ndarray:
    """Adjoint of ``apply_tau`` (species -> flux)."""
    y = _check_species(y)
    K = y.shape[-1]
    out = np.empty(y.shape[:-1] + (K - 1, 2))
    agg = y[..., 1:] - y[..., :1]
    agg[..., 0] -= y[..., 0]
    agg[..., 1:] -= y[..., 1:K - 1]
    out[..., 0] = agg
    out[..., 1] = -agg
    return out.reshape(y.shape[:-1] + (2 * (K - 1),))


def jacobian_matrix_t_apply(c, y, kernel: RateKernel) -> np.ndarray:
    """Adjoint of ``jacobian_apply`` (flux -> species)."""
    K = kernel.K
    c = _check_species(c, K)
    yy = _check_flux(y, K).reshape(-1, K - 1, 2)
    ya, yf = yy[..., 0] * kernel.a[:K - 1], yy[..., 1] * kernel.b[1:]
    out = np.zeros((yy.shape[0], K))
    out[:, 0] = ya @ c[:K - 1]
    out[:, :K - 1] += c[0] * ya
    out[:, 1:] += yf
    return out.reshape(np.shape(y)[:-1] + (K,))


def diffusion_matrix(c, kernel: RateKernel, dense_cap: int = DENSE_CAP) -> np.ndarray:
    """Noise loading ``tau . diag(sqrt(s(c)))`` as a ``K x 2(K-1)`` matrix."""
    s = eval_s(c, kernel)
    if np.any(s < 0):
        raise DomainError("negative flux: concentration outside the phase space")
    if kernel.K > dense_cap:
        raise DimensionError(
            f"K={kernel.K} exceeds the dense cap {dense_cap}; use noise_apply instead")
    return tau_matrix(kernel.K) * np.sqrt(s)


def noise_apply(c, xi, kernel: RateKernel) -> np.ndarray:
    """Matrix-free ``tau(sqrt(s(c)) * xi)``."""
    s = eval_s(c, kernel)
    if np.any(s < 0):
        raise DomainError("negative flux: concentration outside the phase space")
    return apply_tau(np.sqrt(s) * xi)


def weighted_norm(v, w: WeightSequence) -> np.ndarray | float:
    """``sqrt(sum_k w_k v_k**2)`` along the last axis."""
    v = np.asarray(v, dtype=float)
    return np.sqrt((v * v) @ w.values(v.shape[-1]))


def gamma_tau(w: WeightSequence) -> float:
    """Operator-norm bound of ``tau`` on ``L2(w)``."""
    w1, w2 = w.values(2)
    return float(np.sqrt(4.0 * w1 * w.inv_sum + 8.0 + w2 / w1))


def gamma_drift(c, w: WeightSequence, kernel: RateKernel) -> float:
    """Bound ``gamma`` with ``||grad s(c) . x||_w**2 <= gamma ||x||_w**2``."""
    c = _check_species(c, kernel.K)
    return float(w.gamma0 * kernel.lambda_max ** 2 * (3.0 + 2.0 * (w.values(c.size) @ c)))


def net_flux(c, kernel: RateKernel, k: int) -> float:
    """``J_k(c) = a_k c_1 c_k - b_{k+1} c_{k+1}`` for ``1 <= k <= K-1``."""
    c = _check_species(c, kernel.K)
    if not 1 <= k <= kernel.K - 1:
        raise IndexError(f"net flux index {k} outside 1..{kernel.K - 1}")
    return float(kernel.a[k - 1] * c[0] * c[k - 1] - kernel.b[k] * c[k])


def drift_lower_bound_diagnostic(c, kernel: RateKernel, w: WeightSequence, k: int) -> float:
    """``||(tau o grad s(c)) h_k||_w`` for the normalised basis vector ``h_k``.

    Grows like ``b_k + a_k c_1`` when the rates are unbounded.
    """
    K = kernel.K
    if not 2 <= k <= K:
        raise IndexError(f"diagnostic index {k} outside 2..{K}")
    h = np.zeros(K)
    h[k - 1] = 1.0 / np.sqrt(w.values(k)[-1])
    return float(weighted_norm(apply_tau(jacobian_apply(c, h, kernel)), w))
