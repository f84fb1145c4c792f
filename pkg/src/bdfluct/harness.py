"""Ensemble orchestration and statistical checks of the large-N limits.

Every check runs the exact simulator for ``M`` replicas at each mass size
``N`` and compares replica statistics against the deterministic limit or the
Gaussian fluctuation model.  All numbers are finite-N, finite-truncation
estimates: they can support the limit theorems, never prove them.

Replicas are independent and run on a thread pool (the compiled event loop
releases the GIL).  Replica ``r`` at size ``N`` always draws from the stream
``replica_rng(master_seed, N, r)`` and results are reduced in replica order,
so every report is bit-identical for any worker count.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .deterministic import OdeTrajectory, equilibrium_density, integrate_bd
from .errors import ConfigError, DomainError
from .fluctuation import covariance_ode, ou_equilibrium_sample, stationary_covariance
from .operators import RateKernel, WeightSequence, apply_tau, eval_s, mass
from .ssa import (ClusterState, SsaTrajectory, init_from_profile, replica_rng, run,
                  sim_truncation)

logger = logging.getLogger(__name__)

WORKERS_ENV = "BDFLUCT_WORKERS"

FINITE_NOTE = ("Finite-N, finite-truncation Monte Carlo check: agreement supports the "
               "large-N limit but cannot establish convergence in distribution.")


def worker_count(workers: int | None = None) -> int:
    """Explicit value, else ``$BDFLUCT_WORKERS``, else the available cores."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


@dataclass
class EnsembleSpec:
    """What to simulate: kernel, sizes, replica count, horizon and sampling grid.

    ``c0`` is the initial concentration profile (monomers when ``None``);
    every replica starts from its deterministic rounding.  ``K_stat`` is the
    number of leading species used for covariance statistics.
    """

    kernel: RateKernel
    N_list: tuple
    M: int
    T: float
    n_samples: int = 32
    K_stat: int = 10
    master_seed: int = 0
    c0: np.ndarray | None = None
    weights: WeightSequence = field(default_factory=lambda: WeightSequence.power_law(2.0))
    workers: int | None = None

    def __post_init__(self):
        self.N_list = tuple(int(n) for n in self.N_list)
        if not self.N_list or min(self.N_list) < 1:
            raise ConfigError("N_list needs positive sizes")
        if self.M < 2:
            raise ConfigError("need at least two replicas")
        if not self.T >= 0:
            raise ConfigError("horizon T must be nonnegative")
        if self.n_samples < 1:
            raise ConfigError("need at least one sample time")
        if not 1 <= self.K_stat <= self.kernel.K:
            raise ConfigError(f"K_stat={self.K_stat} must lie in 1..K={self.kernel.K}")
        if self.c0 is None:
            c0 = np.zeros(self.kernel.K)
            c0[0] = 1.0
            self.c0 = c0
        self.c0 = np.asarray(self.c0, dtype=float)
        if self.c0.size != self.kernel.K:
            raise ConfigError(f"initial profile has length {self.c0.size}, K={self.kernel.K}")
        if abs(mass(self.c0) - 1.0) > 1e-9:
            raise ConfigError("initial profile must carry unit mass")

    @property
    def K(self) -> int:
        return self.kernel.K

    @property
    def sample_times(self) -> np.ndarray:
        if self.n_samples == 1:
            return np.array([self.T])
        return np.linspace(0.0, self.T, self.n_samples)

    def describe(self) -> dict:
        """JSON-ready description (used for the fingerprint)."""
        return {
            "a": self.kernel.a.tolist(), "b": self.kernel.b.tolist(),
            "N_list": list(self.N_list), "M": self.M, "T": self.T,
            "n_samples": self.n_samples, "K_stat": self.K_stat,
            "master_seed": self.master_seed, "c0": self.c0.tolist(),
            "weights": [self.weights.family, self.weights.alpha],
        }

    def fingerprint(self) -> str:
        return config_fingerprint(self.describe())


def config_fingerprint(obj) -> str:
    """Short content hash of a JSON-serialisable object."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


# --------------------------------------------------------------------------
# ensemble execution


def _initial_state(spec: EnsembleSpec, N: int) -> ClusterState:
    K_sim = sim_truncation(N, spec.K)
    c0 = spec.c0
    if K_sim < spec.K:
        if np.any(c0[K_sim:] > 0):
            raise ConfigError(f"initial profile has clusters larger than N={N}")
        c0 = c0[:K_sim]
    return init_from_profile(c0, N)


def run_ensemble(spec: EnsembleSpec, N: int, *, qv: bool = False, qv_snapshots: bool = False,
                 sample_times=None, T: float | None = None) -> list[SsaTrajectory]:
    """``spec.M`` independent trajectories at size ``N``, in replica order."""
    T = spec.T if T is None else T
    sample_times = spec.sample_times if sample_times is None else np.asarray(sample_times)
    state0 = _initial_state(spec, N)
    kernel = spec.kernel.truncate(state0.K) if state0.K < spec.K else spec.kernel

    def one(r: int) -> SsaTrajectory:
        return run(state0, kernel, T, sample_times, replica_rng(spec.master_seed, N, r),
                   qv=qv, qv_snapshots=qv_snapshots)

    n_workers = min(worker_count(spec.workers), spec.M)
    if n_workers == 1:
        return [one(r) for r in range(spec.M)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(one, range(spec.M)))


def _padded(x: np.ndarray, K: int) -> np.ndarray:
    if x.shape[-1] == K:
        return x
    out = np.zeros(x.shape[:-1] + (K,), dtype=x.dtype)
    out[..., :x.shape[-1]] = x
    return out


def _mean_path(spec: EnsembleSpec, times=None) -> OdeTrajectory:
    times = spec.sample_times if times is None else times
    return integrate_bd(spec.c0, spec.kernel, spec.T, times)


def center_scale(x, c_t, N: int, K_stat: int | None = None) -> np.ndarray:
    """Fluctuation ``(x - N c) / sqrt(N)`` on the first ``K_stat`` species.

    ``x`` may carry extra leading axes (samples, replicas); shorter ``x`` are
    padded with zeros to the length of ``c_t``.
    """
    x = np.asarray(x, dtype=float)
    c_t = np.asarray(c_t, dtype=float)
    K = c_t.shape[-1]
    if x.shape[-1] > K:
        raise DomainError("state longer than the concentration vector")
    x = _padded(x, K)
    K_stat = K if K_stat is None else K_stat
    return (x[..., :K_stat] - N * c_t[..., :K_stat]) / np.sqrt(N)


def _loglog_slope(N, err) -> tuple[float, float]:
    fit = stats.linregress(np.log(N), np.log(err))
    return float(fit.slope), float(fit.stderr)


# --------------------------------------------------------------------------
# reports


@dataclass
class LlnRow:
    N: int
    M: int
    mean_error: float
    se: float
    wide_ci: bool


@dataclass
class LlnReport:
    rows: list[LlnRow]
    slope: float
    slope_se: float
    strictly_decreasing: bool
    seed: int
    fingerprint: str
    note: str = FINITE_NOTE

    def passed(self, band=(-0.65, -0.35)) -> bool:
        return self.strictly_decreasing and band[0] <= self.slope <= band[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "lln"
        d["passed"] = self.passed()
        return d


def lln_rate(spec: EnsembleSpec) -> LlnReport:
    """Mean over replicas of ``max_t sum_k |x_k(t)/N - c_k(t)|`` on the sample grid.

    The sup is taken over the discrete grid, so it slightly underestimates
    the sup over ``[0, T]``.  The slope is a least-squares fit of
    ``log(error)`` against ``log(N)``.
    """
    ode = _mean_path(spec)
    rows = []
    for N in spec.N_list:
        err = np.empty(spec.M)
        for r, traj in enumerate(run_ensemble(spec, N)):
            x = _padded(traj.x, spec.K) / N
            err[r] = np.abs(x - ode.states).sum(axis=1).max()
        mean = float(err.mean())
        se = float(err.std(ddof=1) / np.sqrt(spec.M))
        wide = bool(mean > 0 and se > 0.25 * mean)
        if wide:
            logger.warning("N=%d: wide confidence interval (SE %.2g of mean %.2g)", N, se, mean)
        rows.append(LlnRow(N, spec.M, mean, se, wide))
    errs = np.array([r.mean_error for r in rows])
    if len(rows) >= 2 and np.all(errs > 0):
        slope, slope_se = _loglog_slope([r.N for r in rows], errs)
    else:
        slope, slope_se = float("nan"), float("nan")
    dec = bool(len(rows) >= 2 and np.all(np.diff(errs) < 0))
    return LlnReport(rows, slope, slope_se, dec, spec.master_seed, spec.fingerprint())


def _cov_with_se(W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance over axis 0 and the standard error of every entry."""
    M = W.shape[0]
    D = W - W.mean(axis=0)
    prod = D[:, :, None] * D[:, None, :]
    cov = prod.sum(axis=0) / (M - 1)
    se = prod.std(axis=0, ddof=1) / np.sqrt(M)
    return cov, se


@dataclass
class CltEntry:
    N: int
    t: float
    empirical: list
    model: list
    frobenius_rel_error: float
    max_abs_z: float
    z: list
    mean_sq_wnorm: float
    mean_sq_wnorm_se: float


@dataclass
class CltReport:
    entries: list[CltEntry]
    K_stat: int
    M: int
    seed: int
    fingerprint: str
    max_rel_error: float = 0.2
    note: str = FINITE_NOTE

    def errors_at(self, t: float) -> list[float]:
        return [e.frobenius_rel_error for e in self.entries if e.t == t]

    def decreasing(self, t: float | None = None) -> bool:
        t = self.entries[-1].t if t is None else t
        e = np.array(self.errors_at(t))
        return bool(e.size >= 2 and np.all(np.diff(e) < 0))

    def passed(self) -> bool:
        final = self.errors_at(self.entries[-1].t)
        return self.decreasing() and final[-1] <= self.max_rel_error

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "clt"
        d["passed"] = self.passed()
        return d


def clt_compare(spec: EnsembleSpec, report_times=None, *, cov_dt: float = 1e-3) -> CltReport:
    """Empirical covariance of the scaled fluctuation against the Gaussian model.

    The model covariance solves the covariance ODE from ``Sigma(0) = 0`` along
    the deterministic solution; every replica starts from the rounding of
    ``N c(0)``, so the initial fluctuation vanishes up to ``O(1/sqrt(N))``.
    Comparison is restricted to the top-left ``K_stat`` block.
    """
    times = spec.sample_times
    report_times = [spec.T] if report_times is None else list(report_times)
    idx = [int(np.argmin(np.abs(times - t))) for t in report_times]
    ode = integrate_bd(spec.c0, spec.kernel, spec.T, times, rtol=1e-10, atol=1e-14)
    if abs(ode.mass_drift) > 1e-9:
        raise DomainError(f"ODE mass drift {ode.mass_drift:.2e} exceeds 1e-9")
    ks = spec.K_stat
    models = {}
    for i in idx:
        S = covariance_ode(np.zeros((spec.K, spec.K)), ode, spec.kernel, times[i], dt=cov_dt)
        models[i] = S.sigma[:ks, :ks]
    w = spec.weights.values(spec.K)
    entries = []
    for N in spec.N_list:
        trajs = run_ensemble(spec, N)
        X = np.stack([_padded(tr.x, spec.K) for tr in trajs]).astype(float)
        for i in idx:
            W_full = center_scale(X[:, i], ode.states[i], N)
            W = W_full[:, :ks]
            cov, se = _cov_with_se(W)
            model = models[i]
            diff = cov - model
            # entries that never vary across replicas (clusters too large to
            # appear at this N) carry no z-score
            live = se > 1e-9 * se.max() if se.max() > 0 else np.zeros_like(se, dtype=bool)
            z = np.where(live, diff / np.where(live, se, 1.0), np.nan)
            nm = np.linalg.norm(model)
            rel = float(np.linalg.norm(diff) / nm) if nm > 0 else float(np.linalg.norm(diff))
            sq = (W_full ** 2 * w).sum(axis=1)
            z_list = [[None if np.isnan(v) else float(v) for v in row] for row in z]
            max_z = float(np.nanmax(np.abs(z))) if live.any() else 0.0
            entries.append(CltEntry(N, float(times[i]), cov.tolist(), model.tolist(), rel,
                                    max_z, z_list, float(sq.mean()),
                                    float(sq.std(ddof=1) / np.sqrt(spec.M))))
    return CltReport(entries, ks, spec.M, spec.master_seed, spec.fingerprint())


@dataclass
class QvRow:
    N: int
    channel: int
    active: bool
    mean_integrated_rate: float
    limit: float
    rel_error: float | None
    variance_ratio: float | None
    variance_ratio_se: float | None
    note: str = ""


@dataclass
class QvReport:
    rows: list[QvRow]
    M: int
    seed: int
    fingerprint: str
    rel_tol: float = 0.05
    ratio_band: tuple = (0.8, 1.2)
    note: str = FINITE_NOTE

    @property
    def active(self) -> list[QvRow]:
        return [r for r in self.rows if r.active]

    def passed(self) -> bool:
        lo, hi = self.ratio_band
        return bool(self.active) and all(
            r.rel_error <= self.rel_tol and lo <= r.variance_ratio <= hi for r in self.active)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "qv"
        d["passed"] = self.passed()
        return d


def integrated_flux(ode: OdeTrajectory, kernel: RateKernel, t_end: float,
                    order: int = 8) -> np.ndarray:
    """``int_0^t_end s(c(u)) du`` by Gauss-Legendre on every accepted ODE step."""
    nodes, wts = np.polynomial.legendre.leggauss(order)
    knots = ode.knot_t[ode.knot_t <= t_end]
    if knots[-1] < t_end:
        knots = np.append(knots, t_end)
    total = np.zeros(2 * (kernel.K - 1))
    for t0, t1 in zip(knots[:-1], knots[1:]):
        u = 0.5 * (t1 - t0) * nodes + 0.5 * (t1 + t0)
        total += 0.5 * (t1 - t0) * (wts @ eval_s(ode.at(u), kernel))
    return total


def qv_limit_check(spec: EnsembleSpec, active_threshold: float = 100.0) -> QvReport:
    """Integrated channel intensities and compensated-count variances.

    For channel ``i`` the scaled intensity ``integrated_rate / N`` should
    approach ``int_0^T s_i(c(u)) du``.  The compensated count
    ``counts - integrated_rate`` is a martingale with predictable quadratic
    variation ``integrated_rate``, so the ratio
    ``mean((counts - rate)**2) / mean(rate)`` should be close to one.
    Channels whose mean integrated rate is below ``active_threshold`` are
    listed as inactive and excluded from the pass/fail decision.
    """
    ode = integrate_bd(spec.c0, spec.kernel, spec.T, [spec.T], rtol=1e-10, atol=1e-14)
    limit = integrated_flux(ode, spec.kernel, spec.T)
    n_ch = limit.size
    rows = []
    for N in spec.N_list:
        trajs = run_ensemble(spec, N, qv=True)
        counts = np.zeros((spec.M, n_ch))
        rates = np.zeros((spec.M, n_ch))
        for r, tr in enumerate(trajs):
            m = tr.qv.jump_counts.size
            counts[r, :m] = tr.qv.jump_counts
            rates[r, :m] = tr.qv.integrated_rate
        mean_rate = rates.mean(axis=0)
        sq = (counts - rates) ** 2
        for i in range(n_ch):
            ch = i + 1
            if mean_rate[i] < active_threshold:
                note = "inactive: mean integrated rate below threshold"
                if not np.any(rates[:, i] > 0) and np.any(counts[:, i] > 0):
                    note = "fired without intensity"
                rows.append(QvRow(N, ch, False, float(mean_rate[i]), float(limit[i]),
                                  None, None, None, note))
                continue
            rel = abs(mean_rate[i] / N - limit[i]) / limit[i]
            ratio = sq[:, i].mean() / mean_rate[i]
            ratio_se = sq[:, i].std(ddof=1) / np.sqrt(spec.M) / mean_rate[i]
            rows.append(QvRow(N, ch, True, float(mean_rate[i]), float(limit[i]), float(rel),
                              float(ratio), float(ratio_se)))
    return QvReport(rows, spec.M, spec.master_seed, spec.fingerprint())


@dataclass
class MomentRow:
    N: int
    zeta: float
    zeta_se: float
    kappa: float
    kappa_se: float


@dataclass
class MomentReport:
    rows: list[MomentRow]
    zeta_ratio: float
    kappa_ratio: float
    companion: list
    seed: int
    fingerprint: str
    zeta_limit: float = 1.5
    kappa_limit: float = 2.0
    note: str = FINITE_NOTE

    def passed(self) -> bool:
        return self.zeta_ratio <= self.zeta_limit and self.kappa_ratio <= self.kappa_limit

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "moments"
        d["passed"] = self.passed()
        return d


def moment_diagnostics(spec: EnsembleSpec, r: WeightSequence) -> MomentReport:
    """Uniform-in-N moment proxies.

    ``zeta`` is the replica mean of ``max_t sum_k r_k x_k(t) / N`` and
    ``kappa`` the replica mean of ``max_t sum_k |tau(D(t))_k| / sqrt(N)``,
    where ``D`` are the compensated channel counts.  Both should stay bounded
    as ``N`` grows; the ratios of largest to smallest value across ``N`` are
    reported.
    """
    spec.weights.check_companion(r)
    rv = r.values(spec.K)
    rows = []
    for N in spec.N_list:
        trajs = run_ensemble(spec, N, qv=True, qv_snapshots=True)
        zeta = np.empty(spec.M)
        kappa = np.empty(spec.M)
        for i, tr in enumerate(trajs):
            x = tr.x.astype(float)
            zeta[i] = (x @ rv[:x.shape[1]]).max() / N
            kappa[i] = np.abs(apply_tau(tr.qv.snapshots)).sum(axis=1).max() / np.sqrt(N)
        rows.append(MomentRow(N, float(zeta.mean()), float(zeta.std(ddof=1) / np.sqrt(spec.M)),
                              float(kappa.mean()), float(kappa.std(ddof=1) / np.sqrt(spec.M))))
    z = np.array([row.zeta for row in rows])
    k = np.array([row.kappa for row in rows])
    return MomentReport(rows, float(z.max() / z.min()), float(k.max() / k.min()),
                        rv[:8].tolist(), spec.master_seed, spec.fingerprint())


# --------------------------------------------------------------------------
# equilibrium checks


@dataclass
class VarianceCheck:
    label: str
    estimate: float
    target: float
    se: float
    z: float
    max_z: float
    n_samples: int
    note: str = FINITE_NOTE

    def passed(self) -> bool:
        return abs(self.z) <= self.max_z

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed()
        return d


def equilibrium_variance_check(kernel: RateKernel, N: int, M: int, T: float, *,
                               coord: int = 0, master_seed: int = 0, max_z: float = 3.0,
                               workers: int | None = None) -> VarianceCheck:
    """SSA started at the rounded equilibrium; variance of ``W_coord(T)`` against
    the stationary Lyapunov value."""
    eq = equilibrium_density(kernel)
    sigma = stationary_covariance(eq.profile, kernel).sigma
    spec = EnsembleSpec(kernel, (N,), M, T, n_samples=1, K_stat=min(kernel.K, 10),
                        master_seed=master_seed, c0=eq.profile, workers=workers)
    X = np.stack([_padded(tr.x[-1], kernel.K) for tr in run_ensemble(spec, N)]).astype(float)
    W = center_scale(X, eq.profile, N)[:, coord]
    D2 = (W - W.mean()) ** 2
    est = float(D2.sum() / (M - 1))
    se = float(D2.std(ddof=1) / np.sqrt(M))
    target = float(sigma[coord, coord])
    return VarianceCheck(f"ssa Var(W_{coord + 1}) at N={N}, t={T}", est, target, se,
                         (est - target) / se, max_z, M)


def ou_time_average_check(kernel: RateKernel, *, n_paths: int = 200, t_end: float = 50.0,
                          dt: float = 1e-3, burn_in: float = 0.0, coord: int = 0,
                          master_seed: int = 0, max_z: float = 5.0) -> VarianceCheck:
    """Time-averaged ``W_coord**2`` of stationary OU paths against the Lyapunov value.

    The standard error treats the per-path time averages as independent
    samples.
    """
    eq = equilibrium_density(kernel)
    stat = stationary_covariance(eq.profile, kernel)
    rng = replica_rng(master_seed, 0)
    path = ou_equilibrium_sample(eq.profile, kernel, t_end, dt, rng, n_paths=n_paths,
                                 stationary=stat, record_every=10)
    keep = path.times >= burn_in
    sq = path.W[keep, :, coord] ** 2
    per_path = sq.mean(axis=0)
    est = float(per_path.mean())
    se = float(per_path.std(ddof=1) / np.sqrt(n_paths))
    target = float(stat.sigma[coord, coord])
    return VarianceCheck(f"ou time-average Var(W_{coord + 1})", est, target, se,
                         (est - target) / se, max_z, int(sq.size))


@dataclass
class GaussianityCheck:
    skewness: list
    excess_kurtosis: list
    n_samples: int
    spacing: float
    skew_band: float = 0.1
    kurt_band: float = 0.2
    note: str = FINITE_NOTE

    def passed(self) -> bool:
        return (max(abs(s) for s in self.skewness) <= self.skew_band
                and max(abs(k) for k in self.excess_kurtosis) <= self.kurt_band)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed()
        return d


def ou_gaussianity_check(kernel: RateKernel, *, n_samples: int = 10_000,
                         samples_per_path: int = 10, dt: float = 1e-3, coords=None,
                         master_seed: int = 0, gap_factor: float = 5.0) -> GaussianityCheck:
    """Skewness and excess kurtosis of stationary OU marginals.

    Samples are taken every ``gap_factor / |slowest decay rate|`` time units
    so consecutive samples of one path are nearly uncorrelated.
    """
    eq = equilibrium_density(kernel)
    stat = stationary_covariance(eq.profile, kernel)
    slow = float(np.abs(stat.eigenvalues.real).min())
    n_paths = int(np.ceil(n_samples / samples_per_path))
    steps_gap = int(np.ceil(gap_factor / slow / dt))
    spacing = steps_gap * dt
    rng = replica_rng(master_seed, 1)
    path = ou_equilibrium_sample(eq.profile, kernel, spacing * (samples_per_path - 1), dt, rng,
                                 n_paths=n_paths, stationary=stat, record_every=steps_gap)
    coords = range(min(kernel.K, 4)) if coords is None else coords
    sample = path.W.reshape(-1, kernel.K)[:n_samples]
    sk = [float(stats.skew(sample[:, j])) for j in coords]
    ku = [float(stats.kurtosis(sample[:, j])) for j in coords]
    return GaussianityCheck(sk, ku, int(sample.shape[0]), spacing)


# --------------------------------------------------------------------------
# presets used by the command line


def preset(name: str, *, master_seed: int = 2024, K: int = 200, **overrides) -> EnsembleSpec:
    """Default desk-scale ensembles for the ``verify`` subcommands."""
    kernel = RateKernel.constant(K)
    base = {
        "lln": dict(N_list=(10**3, 10**4, 10**5), M=100, T=1.0),
        "clt": dict(N_list=(10**3, 10**4, 10**5), M=500, T=1.0, K_stat=10),
        "qv": dict(N_list=(10**5,), M=500, T=1.0, n_samples=2),
        "moments": dict(N_list=(10**3, 10**4, 10**5), M=100, T=1.0,
                        weights=WeightSequence.power_law(1.5)),
    }
    if name not in base:
        raise ConfigError(f"unknown preset {name!r}")
    kw = {**base[name], **{k: v for k, v in overrides.items() if v is not None}}
    return EnsembleSpec(kernel=kw.pop("kernel", kernel), master_seed=master_seed, **kw)


def report_json(report) -> str:
    """Canonical JSON text of a report (stable key order, full float precision)."""
    return json.dumps(report.to_dict(), sort_keys=True, allow_nan=True)


__all__ = [
    "EnsembleSpec", "run_ensemble", "center_scale", "lln_rate", "clt_compare",
    "qv_limit_check", "moment_diagnostics", "equilibrium_variance_check",
    "ou_time_average_check", "ou_gaussianity_check", "integrated_flux", "preset",
    "report_json", "worker_count", "config_fingerprint", "LlnReport", "CltReport",
    "QvReport", "MomentReport", "VarianceCheck", "GaussianityCheck", "FINITE_NOTE",
]
