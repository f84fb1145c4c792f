"""Exact event-driven simulation of the stochastic Becker-Doring chain.

The state is the vector ``x`` of cluster counts with ``sum k x_k = N``.  Rates
follow the jump matrix of the model:

* aggregation ``(1) + (k) -> (k+1)`` at ``a_k x_1 (x_k - 1{k=1}) / N``,
* fragmentation ``(k+1) -> (1) + (k)`` at ``b_{k+1} x_{k+1}``.

Every aggregation rate carries the common factor ``x_1 / N``, so the
aggregation family is kept in its own Fenwick tree storing
``a_k (x_k - 1{k=1})`` and the factor is applied when sampling.  A monomer
count change therefore costs ``O(log K)`` instead of ``O(K)``.

Quadratic-variation bookkeeping uses the same idea: with ``A1 = int x_1 du``
and ``A2 = int x_1**2 du`` advanced once per event, the integral of
``x_1 x_k`` only needs updating when ``x_k`` itself changes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InfeasibleProfileError, InvariantViolation
from .operators import RateKernel, apply_tau

REBUILD_EVERY = 1 << 20
MASS_CHECK_EVERY = 1 << 16

# status codes returned by the compiled loop
_OK, _NEGATIVE, _MASS = 0, 1, 2


def replica_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(master_seed, *key)``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class ClusterState:
    x: np.ndarray
    N: int
    t: float = 0.0
    event_count: int = 0

    @property
    def K(self) -> int:
        return self.x.size

    def mass(self) -> int:
        return int(np.arange(1, self.x.size + 1, dtype=np.int64) @ self.x)

    def copy(self) -> "ClusterState":
        return ClusterState(self.x.copy(), self.N, self.t, self.event_count)


def sim_truncation(N: int, K: int) -> int:
    """Largest cluster size tracked by the simulator for mass ``N``."""
    return max(2, min(int(N), int(K)))


def init_monomers(N: int, K: int) -> ClusterState:
    if N < 1 or K < 2:
        raise ValueError("need N >= 1 and K >= 2")
    x = np.zeros(K, dtype=np.int64)
    x[0] = N
    return ClusterState(x, int(N))


def init_from_profile(c0, N: int, rng: np.random.Generator | None = None,
                      mode: str = "floor") -> ClusterState:
    """Round ``N * c0`` to an integer state of mass exactly ``N``.

    ``mode="floor"`` floors every ``k >= 2`` entry and gives the deficit to the
    monomers.  ``mode="largest_remainder"`` additionally hands the leftover
    mass, cluster by cluster, to the largest fractional parts (random tie
    break), as long as it fits.
    """
    c0 = np.asarray(c0, dtype=float)
    K = c0.size
    k = np.arange(1, K + 1)
    if abs(k @ c0 - 1.0) > 1e-9:
        raise InfeasibleProfileError(f"profile mass {k @ c0!r} differs from 1")
    if np.any(c0 < 0):
        raise InfeasibleProfileError("negative concentration in profile")
    target = N * c0
    x = np.floor(target).astype(np.int64)
    x[0] = 0
    if mode == "largest_remainder":
        rng = rng if rng is not None else np.random.default_rng(0)
        frac = target - np.floor(target)
        frac[0] = -1.0
        order = np.lexsort((rng.random(K), -frac))
        left = N - int(k @ x)
        for i in order:
            if frac[i] <= 0 or left <= 0:
                break
            if k[i] <= left:
                x[i] += 1
                left -= k[i]
    elif mode != "floor":
        raise ValueError(f"unknown rounding mode {mode!r}")
    deficit = N - int(k[1:] @ x[1:])
    if deficit < 0:
        raise InfeasibleProfileError(f"rounded clusters carry {-deficit} more mass than N")
    x[0] = deficit
    return ClusterState(x, int(N))


# --------------------------------------------------------------------------
# compiled core


@numba.njit(cache=True, nogil=True)
def _fw_add(tree, i, delta):
    n = tree.size
    j = i + 1
    while j <= n:
        tree[j - 1] += delta
        j += j & (-j)


@numba.njit(cache=True, nogil=True)
def _fw_build(weights, tree):
    n = weights.size
    for i in range(n):
        tree[i] = weights[i]
    for j in range(1, n + 1):
        p = j + (j & (-j))
        if p <= n:
            tree[p - 1] += tree[j - 1]


@numba.njit(cache=True, nogil=True)
def _fw_search(tree, weights, target):
    """Smallest index whose inclusive prefix sum exceeds ``target``."""
    n = tree.size
    step = 1
    while step * 2 <= n:
        step *= 2
    pos = 0
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt - 1] <= target:
            pos = nxt
            target -= tree[nxt - 1]
        step >>= 1
    if pos >= n:
        pos = n - 1
    # rounding can land on an empty channel; fall back to the nearest live one
    if weights[pos] <= 0.0:
        j = pos
        while j >= 0 and weights[j] <= 0.0:
            j -= 1
        if j < 0:
            j = pos
            while j < n and weights[j] <= 0.0:
                j += 1
        pos = j
    return pos


@numba.njit(cache=True, nogil=True)
def _refresh_agg(j, x, a, wa, ta, sums):
    # helpers stay tiny so LLVM inlines them; otherwise every array argument
    # costs an atomic refcount pair per call
    if j < wa.size:
        w = a[j] * (x[j] - (j == 0))
        d = w - wa[j]
        wa[j] = w
        _fw_add(ta, j, d)
        sums[0] += d


@numba.njit(cache=True, nogil=True)
def _refresh_frag(j, x, b, wf, tf, sums):
    if j >= 1:
        w = b[j] * x[j]
        d = w - wf[j - 1]
        wf[j - 1] = w
        _fw_add(tf, j - 1, d)
        sums[1] += d


@numba.njit(cache=True, nogil=True)
def _rebuild(x, a, b, wa, wf, ta, tf, sums):
    K = x.size
    for i in range(K - 1):
        wa[i] = a[i] * (x[i] - (1 if i == 0 else 0))
        wf[i] = b[i + 1] * x[i + 1]
    _fw_build(wa, ta)
    _fw_build(wf, tf)
    sa = 0.0
    sf = 0.0
    for i in range(K - 1):
        sa += wa[i]
        sf += wf[i]
    sums[0] = sa
    sums[1] = sf


@numba.njit(cache=True, nogil=True)
def _qv_flush(j, x, t, A1, Ix, Ixx1, lastT, lastA):
    Ix[j] += x[j] * (t - lastT[j])
    Ixx1[j] += x[j] * (A1 - lastA[j])
    lastT[j] = t
    lastA[j] = A1


@numba.njit(cache=True, nogil=True)
def _integrated_rates(x, N, a, b, t, A1, A2, Ix, Ixx1, lastT, lastA, out):
    K = x.size
    for i in range(K - 1):
        if i == 0:
            out[0] = a[0] * (A2 - A1) / N
        else:
            out[2 * i] = a[i] * (Ixx1[i] + x[i] * (A1 - lastA[i])) / N
        j = i + 1
        out[2 * i + 1] = b[j] * (Ix[j] + x[j] * (t - lastT[j]))


@numba.njit(cache=True, nogil=True)
def _mass(x):
    m = 0
    for k in range(x.size):
        m += (k + 1) * x[k]
    return m


@numba.njit(cache=True, nogil=True)
def _run(x, N, a, b, wa, wf, ta, tf, sums, t0, t_end, max_events, sample_times, out_x,
         out_meta, qv, snap_D, counts, ir, rng, mass_check_every, rebuild_every, last):
    """Event loop.  Mutates ``x`` and the tree arrays in place.

    ``out_meta[n]`` receives ``(events so far, mass)`` at sample ``n`` and
    ``last`` the ``(channel, dt)`` of the final jump.  Returns
    ``(t, events, absorbed, status, max_rebuild_error)``.
    """
    K = x.size
    Ix = np.zeros(K)
    Ixx1 = np.zeros(K)
    lastT = np.full(K, t0)
    lastA = np.zeros(K)
    tmp_ir = np.zeros(2 * (K - 1))
    A1 = 0.0
    A2 = 0.0
    t = t0
    comp = 0.0
    ns = sample_times.size
    k_out = min(out_x.shape[1], K)
    n_snap_ch = snap_D.shape[1]
    nxt = 0
    events = 0
    status = _OK
    absorbed = False
    max_rebuild_err = 0.0
    while True:
        if events >= max_events:
            break
        agg = x[0] * sums[0] / N
        total = agg + sums[1]
        if total <= 0.0:
            absorbed = True
            dt = np.inf
        else:
            dt = -np.log(1.0 - rng.random()) / total
        t_next = t + dt
        # samples strictly before the next jump see the current state
        while nxt < ns and sample_times[nxt] < t_next and sample_times[nxt] <= t_end:
            ts = sample_times[nxt]
            for k in range(k_out):
                out_x[nxt, k] = x[k]
            out_meta[nxt, 0] = events
            out_meta[nxt, 1] = _mass(x)
            if qv and n_snap_ch > 0:
                A1s = A1 + x[0] * (ts - t)
                A2s = A2 + x[0] * x[0] * (ts - t)
                _integrated_rates(x, N, a, b, ts, A1s, A2s, Ix, Ixx1, lastT, lastA, tmp_ir)
                for c in range(n_snap_ch):
                    snap_D[nxt, c] = counts[c] - tmp_ir[c]
            nxt += 1
        if t_next > t_end or absorbed:
            t_stop = t_end if t_end < np.inf else t
            if qv and t_stop > t:
                A1 += x[0] * (t_stop - t)
                A2 += x[0] * x[0] * (t_stop - t)
            if t_stop > t:
                t = t_stop
            break
        if qv:
            A1 += x[0] * dt
            A2 += x[0] * x[0] * dt
        # compensated time accumulation
        y = dt - comp
        tt = t + y
        comp = (tt - t) - y
        t = tt

        target = rng.random() * total
        if target < agg and agg > 0.0:
            i = _fw_search(ta, wa, target * N / x[0])
            ch = 2 * i
        else:
            i = _fw_search(tf, wf, target - agg)
            ch = 2 * i + 1
        if qv:
            counts[ch] += 1
            _qv_flush(i, x, t, A1, Ix, Ixx1, lastT, lastA)
            _qv_flush(i + 1, x, t, A1, Ix, Ixx1, lastT, lastA)
        if ch & 1 == 0:
            if i == 0:
                x[0] -= 2
            else:
                x[0] -= 1
                x[i] -= 1
            x[i + 1] += 1
        else:
            x[i + 1] -= 1
            if i == 0:
                x[0] += 2
            else:
                x[0] += 1
                x[i] += 1
        events += 1
        last[0] = ch
        last[1] = dt
        if x[0] < 0 or x[i] < 0 or x[i + 1] < 0:
            status = _NEGATIVE
            break
        _refresh_agg(0, x, a, wa, ta, sums)
        if i > 0:
            _refresh_agg(i, x, a, wa, ta, sums)
            _refresh_frag(i, x, b, wf, tf, sums)
        _refresh_agg(i + 1, x, a, wa, ta, sums)
        _refresh_frag(i + 1, x, b, wf, tf, sums)

        if mass_check_every > 0 and events % mass_check_every == 0:
            if _mass(x) != N:
                status = _MASS
                break
        if events % rebuild_every == 0:
            before = sums[0] * x[0] / N + sums[1]
            _rebuild(x, a, b, wa, wf, ta, tf, sums)
            after = sums[0] * x[0] / N + sums[1]
            if after > 0.0:
                err = abs(after - before) / after
                if err > max_rebuild_err:
                    max_rebuild_err = err
    if qv:
        _integrated_rates(x, N, a, b, t, A1, A2, Ix, Ixx1, lastT, lastA, ir)
    if status == _OK and _mass(x) != N:
        status = _MASS
    return t, events, absorbed, status, max_rebuild_err


# --------------------------------------------------------------------------
# Python-level API


class ChannelRateTree:
    """Per-channel propensities in two Fenwick trees.

    ``rates()`` returns the interleaved flux-ordered propensities; ``total`` is
    the cached sum.
    """

    def __init__(self, state: ClusterState, kernel: RateKernel):
        K = state.K
        if kernel.K < K:
            raise ValueError("kernel truncation smaller than state length")
        self.N = state.N
        self.x = state.x
        self.a = np.ascontiguousarray(kernel.a[:K], dtype=float).copy()
        self.a[K - 1] = 0.0
        self.b = np.ascontiguousarray(kernel.b[:K], dtype=float)
        self.wa = np.zeros(K - 1)
        self.wf = np.zeros(K - 1)
        self.ta = np.zeros(K - 1)
        self.tf = np.zeros(K - 1)
        self.sums = np.zeros(2)
        self.rebuild()

    def rebuild(self) -> float:
        """Recompute everything from ``x``; returns the relative change of the total."""
        before = self.total if self.sums.any() else None
        _rebuild(self.x, self.a, self.b, self.wa, self.wf, self.ta, self.tf, self.sums)
        if before is None or self.total == 0:
            return 0.0
        return abs(self.total - before) / self.total

    @property
    def total(self) -> float:
        return float(self.x[0] * self.sums[0] / self.N + self.sums[1])

    def rates(self) -> np.ndarray:
        out = np.empty(2 * self.wa.size)
        out[0::2] = self.wa * self.x[0] / self.N
        out[1::2] = self.wf
        return out


@dataclass
class JumpEvent:
    channel: int  # 1-based flux channel number
    dt: float
    t: float

    @property
    def kind(self) -> str:
        return "aggregation" if self.channel % 2 else "fragmentation"

    @property
    def size(self) -> int:
        """``k`` of the reaction ``(1)+(k) <-> (k+1)``."""
        return (self.channel + 1) // 2


def step(state: ClusterState, tree: ChannelRateTree, rng: np.random.Generator) -> JumpEvent | None:
    """Perform one exact jump in place.  Returns ``None`` when absorbed."""
    if tree.x is not state.x:
        raise ValueError("tree was built for a different state")
    last = np.zeros(2)
    empty = np.zeros(0)
    t, events, absorbed, status, _ = _run(
        state.x, int(state.N), tree.a, tree.b, tree.wa, tree.wf, tree.ta, tree.tf, tree.sums,
        float(state.t), np.inf, 1, empty, np.zeros((0, 0), dtype=np.int64),
        np.zeros((0, 2), dtype=np.int64), False,
        np.zeros((0, 0)), np.zeros(0, dtype=np.int64), empty, rng, 0, REBUILD_EVERY, last)
    _check_status(status)
    if absorbed or events == 0:
        return None
    state.t = float(t)
    state.event_count += 1
    return JumpEvent(int(last[0]) + 1, float(last[1]), state.t)


def _check_status(status: int) -> None:
    if status == _NEGATIVE:
        raise InvariantViolation("negative cluster count after jump")
    if status == _MASS:
        raise InvariantViolation("mass invariant violated")


@dataclass
class QvTracker:
    """Per-channel jump counts and integrated propensities since the run start.

    ``channels`` lists the tracked 1-based flux channels; ``snapshots`` holds
    the compensated counts ``counts - integrated_rate`` at each sample time for
    those channels (empty unless requested).
    """

    jump_counts: np.ndarray
    integrated_rate: np.ndarray
    channels: np.ndarray
    snapshots: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def compensated(self) -> np.ndarray:
        return self.jump_counts - self.integrated_rate


@dataclass
class SsaTrajectory:
    sample_times: np.ndarray
    x: np.ndarray  # (n_samples, K_out) counts
    state: ClusterState
    absorbed: bool
    qv: QvTracker | None
    max_rebuild_error: float
    x0: np.ndarray
    events: np.ndarray  # cumulative jump count at each sample time
    sample_mass: np.ndarray  # full-state mass at each sample time

    @property
    def mass(self) -> np.ndarray:
        return self.sample_mass


def run(state: ClusterState, kernel: RateKernel, t_end: float, sample_times=(),
        rng: np.random.Generator | None = None, *, qv: bool = False,
        qv_snapshots: bool = False, k_out: int | None = None,
        max_events: int | None = None, mass_check_every: int = MASS_CHECK_EVERY,
        rebuild_every: int = REBUILD_EVERY) -> SsaTrajectory:
    """Simulate from ``state`` until ``t_end`` (or ``max_events`` jumps).

    The state at a sample time ``ts`` is the one holding on ``[t_last, t_next)``
    around it, i.e. after every jump at times ``<= ts``.  ``state`` is not
    modified; the final state is returned in the trajectory.
    """
    if rng is None:
        raise ValueError("an explicit Generator is required for reproducibility")
    sample_times = np.asarray(sample_times, dtype=float)
    if sample_times.size and (np.any(np.diff(sample_times) <= 0) or sample_times[-1] > t_end):
        raise ValueError("sample_times must be increasing and <= t_end")
    if sample_times.size and sample_times[0] < state.t:
        raise ValueError("sample_times precede the current state time")
    K = state.K
    k_out = K if k_out is None else int(k_out)
    x0 = state.x.astype(np.int64).copy()
    work = ClusterState(x0.copy(), state.N, state.t, state.event_count)
    tree = ChannelRateTree(work, kernel)
    x = work.x
    out_x = np.zeros((sample_times.size, k_out), dtype=np.int64)
    meta = np.zeros((sample_times.size, 2), dtype=np.int64)
    n_ch = 2 * (K - 1)
    counts = np.zeros(n_ch, dtype=np.int64)
    ir = np.zeros(n_ch)
    snap = np.zeros((sample_times.size if qv_snapshots else 0, n_ch if qv_snapshots else 0))
    max_ev = np.iinfo(np.int64).max if max_events is None else int(max_events)
    t, events, absorbed, status, rb = _run(
        x, int(state.N), tree.a, tree.b, tree.wa, tree.wf, tree.ta, tree.tf, tree.sums,
        float(state.t), float(t_end), max_ev, sample_times, out_x, meta, bool(qv), snap, counts, ir,
        rng, int(mass_check_every), int(rebuild_every), np.zeros(2))
    _check_status(status)
    final = ClusterState(x, state.N, float(t), state.event_count + int(events))
    tracker = None
    if qv:
        tracker = QvTracker(counts, ir, np.arange(1, n_ch + 1), snap)
    return SsaTrajectory(sample_times, out_x, final, bool(absorbed), tracker, float(rb), x0,
                         meta[:, 0] + state.event_count, meta[:, 1])


@dataclass
class QvRecord:
    channel: int
    counts: int
    integrated_rate: float
    zscore: float | None


def qv_report(qv: QvTracker, state: ClusterState | None = None) -> list[QvRecord]:
    """Per-channel ``(counts, integrated_rate, (counts - rate)/sqrt(rate))``.

    Channels that never had positive intensity get ``zscore=None``; they must
    also have zero counts.
    """
    out = []
    for ch, n, r in zip(qv.channels, qv.jump_counts, qv.integrated_rate):
        if r <= 0:
            if n != 0:
                raise InvariantViolation(f"channel {ch} fired without intensity")
            out.append(QvRecord(int(ch), int(n), float(r), None))
        else:
            out.append(QvRecord(int(ch), int(n), float(r), float((n - r) / np.sqrt(r))))
    return out


def net_change_from_counts(counts: np.ndarray) -> np.ndarray:
    """Species change implied by per-channel jump counts (exact integers)."""
    return np.rint(apply_tau(np.asarray(counts, dtype=float))).astype(np.int64)
