"""Monte Carlo trajectory engine.

The hot loop (advancing every trajectory through its event sequence and
accumulating moments on the time grid) has two interchangeable backends: a
numba-compiled per-trajectory kernel and a vectorized pure-numpy batch path.
Select with the environment variable ``NMBATH_BACKEND`` (``numba`` | ``numpy``;
default numba when importable).  Both backends consume identical event
streams, so they agree up to floating-point summation order.

Event times come from a counter-based splitmix64 generator keyed by
(seed, trajectory index): every trajectory's sample path is a pure function
of that pair, independent of batching or thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# fixed so that results do not depend on the thread count
CHUNK = 8192

_backend_env = os.environ.get("NMBATH_BACKEND", "").strip().lower()
if _backend_env not in ("", "numba", "numpy"):
    raise RuntimeError(f"NMBATH_BACKEND must be 'numba' or 'numpy', got {_backend_env!r}")

if _backend_env == "numpy":
    HAVE_NUMBA = False
else:
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:
        HAVE_NUMBA = False
        if _backend_env == "numba":
            raise


def active_backend():
    return "numba" if HAVE_NUMBA else "numpy"


def _mix(state):
    """One splitmix64 output per stream; returns (new_state, uniform in (0,1))."""
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    u = ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return state, u


def _stream_init(seed, n):
    idx = np.arange(1, n + 1, dtype=np.uint64)
    return np.uint64(int(seed) % 2**64) + idx * _GOLDEN


def _assemble(n, rounds_idx, rounds_t):
    counts = np.zeros(n, dtype=np.int64)
    for idx in rounds_idx:
        counts[idx] += 1
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    times = np.empty(offsets[-1], dtype=np.float64)
    for r, (idx, tv) in enumerate(zip(rounds_idx, rounds_t)):
        times[offsets[idx] + r] = tv
    return times, offsets


def sample_frozen_events(seed, n, t_max, rates, weights):
    """Poisson event times at a per-trajectory rate drawn once from the ensemble.

    Returns (component index per trajectory, flat event times, offsets).
    """
    state = _stream_init(seed, n)
    state, u = _mix(state)
    cum = np.cumsum(weights)
    comp = np.minimum(np.searchsorted(cum, u, side="right"), len(weights) - 1)
    gam = rates[comp]

    cur = np.zeros(n)
    alive = np.nonzero(gam > 0)[0]
    rounds_idx, rounds_t = [], []
    max_rounds = int(1000 + 20.0 * t_max * max(float(np.max(rates)), 1.0))
    for _ in range(max_rounds):
        if alive.size == 0:
            break
        state_a, u = _mix(state[alive])
        state[alive] = state_a
        cur[alive] += -np.log(u) / gam[alive]
        still = cur[alive] <= t_max
        keep = alive[still]
        rounds_idx.append(keep)
        rounds_t.append(cur[keep])
        alive = keep
    else:
        raise RuntimeError("frozen-rate event sampling did not terminate")
    times, offsets = _assemble(n, rounds_idx, rounds_t)
    return comp, times, offsets


def sample_renewal_events(seed, n, t_max, rates, weights):
    """I.i.d. waiting times from the ensemble mixture density.

    Each event draws a fresh component (probability P_R) and an exponential
    interval at that component's rate.
    """
    state = _stream_init(seed, n)
    cum = np.cumsum(weights)
    cur = np.zeros(n)
    alive = np.arange(n)
    rounds_idx, rounds_t = [], []
    max_rounds = int(1000 + 20.0 * t_max * max(float(np.max(rates)), 1.0))
    for _ in range(max_rounds):
        if alive.size == 0:
            break
        state_a, u1 = _mix(state[alive])
        state_a, u2 = _mix(state_a)
        state[alive] = state_a
        comp = np.minimum(np.searchsorted(cum, u1, side="right"), len(weights) - 1)
        gam = rates[comp]
        with np.errstate(divide="ignore"):
            wait = np.where(gam > 0, -np.log(u2) / np.maximum(gam, 1e-300), np.inf)
        cur[alive] += wait
        still = cur[alive] <= t_max
        keep = alive[still]
        rounds_idx.append(keep)
        rounds_t.append(cur[keep])
        alive = keep
    else:
        raise RuntimeError("renewal event sampling did not terminate")
    times, offsets = _assemble(n, rounds_idx, rounds_t)
    return times, offsets


def _advance_prefix_numpy(v0, tgrid, ev_times, ev_off, use_unitary, U_h, W, Winv, lam, E,
                          out_sum, out_sq):
    """Reversed-composition advance for the renewal unraveling.

    Each trajectory accumulates the prefix map M = U(g_1) E U(g_2) E ... E over
    its inter-event gaps and reports M @ U(t - s_last) @ v0.  Averaging this
    string solves the effective memory-kernel equation; the forward ordering
    of :func:`_advance_chunk_numpy` would not for noncommuting models.
    """
    n = ev_off.size - 1
    dsq = v0.size
    M = np.tile(np.eye(dsq, dtype=np.complex128), (n, 1, 1))
    s_prev = np.zeros(n)
    ptr = ev_off[:-1].copy()
    end = ev_off[1:]
    c0 = Winv @ v0 if use_unitary else v0
    WinvE = Winv @ E
    for k in range(tgrid.size):
        tk = tgrid[k]
        while True:
            cand = np.nonzero(ptr < end)[0]
            if cand.size:
                cand = cand[ev_times[ptr[cand]] <= tk]
            if cand.size == 0:
                break
            te = ev_times[ptr[cand]]
            gap = te - s_prev[cand]
            if use_unitary:
                # M <- M @ U(gap) @ E with U(gap) = W diag(exp(lam*gap)) Winv
                phased = np.exp(np.outer(gap, lam))[:, None, :] * (M[cand] @ W)
                M[cand] = phased @ WinvE
            else:
                M[cand] = M[cand] @ E
            s_prev[cand] = te
            ptr[cand] += 1
        if use_unitary:
            tail = np.exp(np.outer(tk - s_prev, lam)) * c0
            V = np.einsum("nij,nj->ni", M, tail @ W.T)
        else:
            V = M @ v0
        out_sum[k] += V.sum(axis=0)
        out_sq[k] += (V.real**2 + V.imag**2).sum(axis=0)
    return out_sum, out_sq


def _advance_chunk_numpy(v0, tgrid, ev_times, ev_off, use_unitary, U_h, W, Winv, lam, E,
                         out_sum, out_sq):
    """Vectorized batch advance: all trajectories of the chunk move in lockstep."""
    n = ev_off.size - 1
    dsq = v0.size
    V = np.tile(v0, (n, 1))
    cur = np.zeros(n)
    ptr = ev_off[:-1].copy()
    end = ev_off[1:]
    ET = np.ascontiguousarray(E.T)
    WinvT = np.ascontiguousarray(Winv.T) if use_unitary else None
    WT = np.ascontiguousarray(W.T) if use_unitary else None
    UhT = np.ascontiguousarray(U_h.T) if use_unitary else None
    prev_t = 0.0
    for k in range(tgrid.size):
        tk = tgrid[k]
        while True:
            cand = np.nonzero(ptr < end)[0]
            if cand.size:
                cand = cand[ev_times[ptr[cand]] <= tk]
            if cand.size == 0:
                break
            te = ev_times[ptr[cand]]
            if use_unitary:
                dt = te - cur[cand]
                V[cand] = ((V[cand] @ WinvT) * np.exp(np.outer(dt, lam))) @ WT
            V[cand] = V[cand] @ ET
            cur[cand] = te
            ptr[cand] += 1
        if use_unitary and tk > 0.0:
            aligned = cur == prev_t
            if np.any(aligned):
                V[aligned] = V[aligned] @ UhT
            rest = np.nonzero(~aligned)[0]
            if rest.size:
                dt = tk - cur[rest]
                V[rest] = ((V[rest] @ WinvT) * np.exp(np.outer(dt, lam))) @ WT
        cur[:] = tk
        prev_t = tk
        out_sum[k] += V.sum(axis=0)
        out_sq[k] += (V.real**2 + V.imag**2).sum(axis=0)
    return out_sum, out_sq


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _advance_prefix_numba(v0, tgrid, ev_times, ev_off, use_unitary, U_h, W, Winv, lam, E,
                              out_sum, out_sq):  # pragma: no cover - compiled
        n = ev_off.size - 1
        dsq = v0.size
        nt = tgrid.size
        M = np.empty((dsq, dsq), np.complex128)
        tmp = np.empty((dsq, dsq), np.complex128)
        c0 = np.empty(dsq, np.complex128)
        tail = np.empty(dsq, np.complex128)
        v = np.empty(dsq, np.complex128)
        WinvE = np.empty((dsq, dsq), np.complex128)
        for a in range(dsq):
            for b in range(dsq):
                acc = 0.0 + 0.0j
                for c in range(dsq):
                    acc += Winv[a, c] * E[c, b]
                WinvE[a, b] = acc
        if use_unitary:
            for a in range(dsq):
                acc = 0.0 + 0.0j
                for b in range(dsq):
                    acc += Winv[a, b] * v0[b]
                c0[a] = acc
        else:
            for a in range(dsq):
                c0[a] = v0[a]
        for i in range(n):
            for a in range(dsq):
                for b in range(dsq):
                    M[a, b] = 1.0 + 0.0j if a == b else 0.0 + 0.0j
            p = ev_off[i]
            pe = ev_off[i + 1]
            s_prev = 0.0
            for k in range(nt):
                tk = tgrid[k]
                while p < pe and ev_times[p] <= tk:
                    te = ev_times[p]
                    if use_unitary:
                        gap = te - s_prev
                        # tmp = M @ U(gap) @ E, U(gap) = W diag(exp(lam gap)) Winv
                        for a in range(dsq):
                            for b in range(dsq):
                                acc = 0.0 + 0.0j
                                for c in range(dsq):
                                    acc += M[a, c] * W[c, b]
                                tmp[a, b] = acc * np.exp(lam[b] * gap)
                        for a in range(dsq):
                            for b in range(dsq):
                                acc = 0.0 + 0.0j
                                for c in range(dsq):
                                    acc += tmp[a, c] * WinvE[c, b]
                                M[a, b] = acc
                    else:
                        for a in range(dsq):
                            for b in range(dsq):
                                acc = 0.0 + 0.0j
                                for c in range(dsq):
                                    acc += M[a, c] * E[c, b]
                                tmp[a, b] = acc
                        for a in range(dsq):
                            for b in range(dsq):
                                M[a, b] = tmp[a, b]
                    s_prev = te
                    p += 1
                if use_unitary:
                    delta = tk - s_prev
                    for a in range(dsq):
                        tail[a] = np.exp(lam[a] * delta) * c0[a]
                    for a in range(dsq):
                        acc = 0.0 + 0.0j
                        for b in range(dsq):
                            acc += W[a, b] * tail[b]
                        v[a] = acc
                    for a in range(dsq):
                        acc = 0.0 + 0.0j
                        for b in range(dsq):
                            acc += M[a, b] * v[b]
                        tail[a] = acc
                    for a in range(dsq):
                        out_sum[k, a] += tail[a]
                        out_sq[k, a] += tail[a].real * tail[a].real + tail[a].imag * tail[a].imag
                else:
                    for a in range(dsq):
                        acc = 0.0 + 0.0j
                        for b in range(dsq):
                            acc += M[a, b] * c0[b]
                        v[a] = acc
                    for a in range(dsq):
                        out_sum[k, a] += v[a]
                        out_sq[k, a] += v[a].real * v[a].real + v[a].imag * v[a].imag
        return out_sum, out_sq

    @njit(cache=True, nogil=True)
    def _advance_chunk_numba(v0, tgrid, ev_times, ev_off, use_unitary, U_h, W, Winv, lam, E,
                             out_sum, out_sq):  # pragma: no cover - compiled
        n = ev_off.size - 1
        dsq = v0.size
        nt = tgrid.size
        v = np.empty(dsq, np.complex128)
        w = np.empty(dsq, np.complex128)
        for i in range(n):
            for a in range(dsq):
                v[a] = v0[a]
            p = ev_off[i]
            pe = ev_off[i + 1]
            tc = 0.0
            prev_t = 0.0
            for k in range(nt):
                tk = tgrid[k]
                while p < pe and ev_times[p] <= tk:
                    te = ev_times[p]
                    if use_unitary and te > tc:
                        dt = te - tc
                        for a in range(dsq):
                            acc = 0.0 + 0.0j
                            for b in range(dsq):
                                acc += Winv[a, b] * v[b]
                            w[a] = acc * np.exp(lam[a] * dt)
                        for a in range(dsq):
                            acc = 0.0 + 0.0j
                            for b in range(dsq):
                                acc += W[a, b] * w[b]
                            v[a] = acc
                    for a in range(dsq):
                        acc = 0.0 + 0.0j
                        for b in range(dsq):
                            acc += E[a, b] * v[b]
                        w[a] = acc
                    v, w = w, v
                    tc = te
                    p += 1
                if use_unitary and tk > tc:
                    if tc == prev_t:
                        for a in range(dsq):
                            acc = 0.0 + 0.0j
                            for b in range(dsq):
                                acc += U_h[a, b] * v[b]
                            w[a] = acc
                        v, w = w, v
                    else:
                        dt = tk - tc
                        for a in range(dsq):
                            acc = 0.0 + 0.0j
                            for b in range(dsq):
                                acc += Winv[a, b] * v[b]
                            w[a] = acc * np.exp(lam[a] * dt)
                        for a in range(dsq):
                            acc = 0.0 + 0.0j
                            for b in range(dsq):
                                acc += W[a, b] * w[b]
                            v[a] = acc
                tc = tk
                prev_t = tk
                for a in range(dsq):
                    out_sum[k, a] += v[a]
                    out_sq[k, a] += v[a].real * v[a].real + v[a].imag * v[a].imag
        return out_sum, out_sq


def run_trajectories(v0, tgrid, ev_times, ev_off, unitary, E, n_threads=1, backend=None,
                     composition="forward"):
    """Advance all trajectories and return (mean, standard error) per grid point.

    ``unitary`` is None for trivial inter-event evolution, else a tuple
    (U_h, W, Winv, lam) with the single-step propagator and the spectral
    factorization used for off-grid intervals.  ``composition`` selects the
    operator ordering of each realization: "forward" applies the event map
    chronologically (the frozen-rate unraveling of the exact average) while
    "reversed" attaches the drawn gaps to the unitaries in reverse, which is
    the string whose renewal average solves the effective memory-kernel
    equation.  Accumulation is chunked with a fixed chunk size and merged in
    chunk order with compensated summation, so the result is independent of
    the thread count.
    """
    if backend is None:
        backend = active_backend()
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable")
    if composition not in ("forward", "reversed"):
        raise ValueError(f"unknown composition {composition!r}")

    tgrid = np.ascontiguousarray(tgrid, dtype=np.float64)
    if tgrid[0] != 0.0:
        # the aligned-step fast path assumes every interval has the grid step
        raise ValueError("trajectory grids must start at t = 0")
    v0 = np.ascontiguousarray(v0, dtype=np.complex128)
    ev_times = np.ascontiguousarray(ev_times, dtype=np.float64)
    ev_off = np.ascontiguousarray(ev_off, dtype=np.int64)
    E = np.ascontiguousarray(E, dtype=np.complex128)
    dsq = v0.size
    n = ev_off.size - 1
    nt = tgrid.size

    use_unitary = unitary is not None
    if use_unitary:
        U_h, W, Winv, lam = (np.ascontiguousarray(a, dtype=np.complex128) for a in unitary)
    else:
        U_h = W = Winv = np.eye(dsq, dtype=np.complex128)
        lam = np.zeros(dsq, dtype=np.complex128)

    starts = list(range(0, n, CHUNK))
    results = [None] * len(starts)

    def work(j):
        i0 = starts[j]
        i1 = min(i0 + CHUNK, n)
        s = np.zeros((nt, dsq), dtype=np.complex128)
        q = np.zeros((nt, dsq), dtype=np.float64)
        off = ev_off[i0:i1 + 1] - ev_off[i0]
        times = ev_times[ev_off[i0]:ev_off[i1]]
        if backend == "numba":
            fn = _advance_prefix_numba if composition == "reversed" else _advance_chunk_numba
        else:
            fn = _advance_prefix_numpy if composition == "reversed" else _advance_chunk_numpy
        fn(v0, tgrid, times, off, use_unitary, U_h, W, Winv, lam, E, s, q)
        results[j] = (s, q)

    if n_threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(work, range(len(starts))))
    else:
        for j in range(len(starts)):
            work(j)

    total_sum = np.zeros((nt, dsq), dtype=np.complex128)
    total_sq = np.zeros((nt, dsq), dtype=np.float64)
    comp_sum = np.zeros_like(total_sum)
    comp_sq = np.zeros_like(total_sq)
    for s, q in results:
        # Kahan step keeps the chunk merge insensitive to chunk count
        y = s - comp_sum
        t = total_sum + y
        comp_sum = (t - total_sum) - y
        total_sum = t
        y2 = q - comp_sq
        t2 = total_sq + y2
        comp_sq = (t2 - total_sq) - y2
        total_sq = t2

    mean = total_sum / n
    if n > 1:
        var = np.maximum(total_sq / n - np.abs(mean) ** 2, 0.0) * (n / (n - 1))
        stderr = np.sqrt(var / n)
    else:
        stderr = np.zeros_like(total_sq)
    return mean, stderr
