"""Solvers for the reduced density matrix under a random dissipation rate.

Three mutually validating routes:

* ``evolve_ensemble`` - the exact rate average, a weighted sum of fixed-rate
  Lindblad propagations.  Reference for every cross-check.
* ``evolve_volterra`` - integrates the effective memory-kernel equation
  d rho/dt = L_H rho + int K(t-s) exp((t-s) L_H) L rho(s) ds with the kernel
  delta-weight folded into an integrating factor and one auxiliary memory
  variable per exponential kernel mode (exact one-step recursion).
* ``mc_trajectories`` - stochastic unravelings applying the event map E at
  random times: ``frozen_rate`` draws one rate per trajectory (converges to
  the exact average), ``renewal`` draws i.i.d. waiting times from the mixture
  density (converges to the effective equation).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _mc, qops
from .qops import SIGMA_Z, IDENTITY_2
from .ratebath import RateEnsemble, KernelDecomposition, kernel_decompose

PICTURES = ("interaction", "schroedinger")


class SolverError(RuntimeError):
    """Raised when a solver precondition or accuracy contract fails."""


@dataclass(frozen=True)
class ModelSpec:
    """System Hamiltonian, jump operators, and the environment rate ensemble.

    ``picture = "interaction"`` drops the coherent term from all generators;
    the caller asserts that the jump set is form-invariant in the rotating
    frame (true for dephasing, where the jumps commute with H).
    """

    hamiltonian: np.ndarray
    jumps: tuple
    ensemble: RateEnsemble
    picture: str = "interaction"

    def __post_init__(self):
        qops.require_hermitian(self.hamiltonian, "Hamiltonian")
        if self.picture not in PICTURES:
            raise ValueError(f"picture must be one of {PICTURES}")

    @property
    def dim(self):
        return self.hamiltonian.shape[0]


def dephasing_jumps():
    """Jump pair {sigma_z/sqrt(2), I/sqrt(2)}.

    Normalized so that sum V^dag V = I (the event map is trace preserving)
    and coherences decay at exactly the ensemble rate, which makes the
    survival probability the coherence envelope.
    """
    return (SIGMA_Z / np.sqrt(2.0), IDENTITY_2 / np.sqrt(2.0))


def dephasing_model(ensemble, omega=1.0, picture="interaction"):
    return ModelSpec(0.5 * omega * SIGMA_Z, dephasing_jumps(), ensemble, picture)


def coherent_liouvillian(model: ModelSpec):
    """L_H of the model; identically zero in the interaction picture."""
    d = model.dim
    if model.picture == "interaction":
        return np.zeros((d * d, d * d), dtype=complex)
    return qops.hamiltonian_liouvillian(model.hamiltonian)


def dissipator(model: ModelSpec):
    return qops.lindblad_dissipator(model.jumps, dim=model.dim)


def event_map(model: ModelSpec):
    """E with L = E - I; raises when the jumps are not normalized."""
    return qops.jump_superoperator(model.jumps)


def generator(model: ModelSpec, rate):
    """Fixed-rate Lindblad generator L_H + gamma * L."""
    return coherent_liouvillian(model) + rate * dissipator(model)


@dataclass(frozen=True)
class MCConfig:
    trajectories: int
    seed: int
    scheme: str = "frozen_rate"

    def __post_init__(self):
        if self.trajectories < 1:
            raise ValueError("need at least one trajectory")
        if self.scheme not in ("frozen_rate", "renewal"):
            raise ValueError(f"unknown MC scheme {self.scheme!r}")


@dataclass(frozen=True)
class EvolutionResult:
    tgrid: np.ndarray
    states: np.ndarray
    solver: str
    trace_drift: np.ndarray
    min_eigenvalue: np.ndarray
    stderr: np.ndarray | None = None
    n_trajectories: int | None = None
    meta: dict = field(default_factory=dict)

    def coherence(self, i=0, j=1):
        return self.states[:, i, j]


def _diagnose(states):
    herm = 0.5 * (states + np.conj(np.swapaxes(states, 1, 2)))
    drift = np.abs(np.einsum("tii->t", states) - 1.0)
    mineig = np.array([np.linalg.eigvalsh(h)[0] for h in herm])
    return drift, mineig


def _check_grid(tgrid):
    tgrid = np.asarray(tgrid, dtype=float)
    if tgrid.ndim != 1 or tgrid.size < 2:
        raise ValueError("time grid must be a 1-d array with at least two points")
    steps = np.diff(tgrid)
    if np.any(steps <= 0):
        raise ValueError("time grid must be strictly increasing")
    h = steps[0]
    if np.max(np.abs(steps - h)) > 1e-9 * h:
        raise ValueError("time grid must be uniform")
    return tgrid, float(h)


def time_grid(t_max, steps):
    """Uniform grid of ``steps`` intervals on [0, t_max] (steps+1 points)."""
    if steps < 1 or t_max <= 0:
        raise ValueError("need t_max > 0 and at least one step")
    return np.linspace(0.0, float(t_max), int(steps) + 1)


def evolve_ensemble(model: ModelSpec, rho0, tgrid) -> EvolutionResult:
    """Exact solution: weighted average of fixed-rate Lindblad evolutions."""
    rho0 = qops.require_density_matrix(rho0)
    tgrid, _ = _check_grid(tgrid)
    v0 = qops.vectorize(rho0)
    acc = np.zeros((tgrid.size, v0.size), dtype=complex)
    for rate, weight in zip(model.ensemble.rates, model.ensemble.weights):
        fac = qops.generator_factorization(generator(model, rate))
        acc += weight * fac.apply_many(tgrid, v0)
    d = model.dim
    states = np.array([qops.devectorize(row, d) for row in acc])
    drift, mineig = _diagnose(states)
    return EvolutionResult(tgrid, states, "ensemble", drift, mineig)


def ensemble_propagator_series(model: ModelSpec, tgrid):
    """Averaged propagator superoperator at every grid time, shape (nt, d^2, d^2)."""
    tgrid, _ = _check_grid(tgrid)
    dsq = model.dim ** 2
    out = np.zeros((tgrid.size, dsq, dsq), dtype=complex)
    for rate, weight in zip(model.ensemble.rates, model.ensemble.weights):
        fac = qops.generator_factorization(generator(model, rate))
        out += weight * fac.expm_many(tgrid)
    return out


def _volterra_sweep(x0, tgrid, h, U_loc, mode_props, amps, L, LH_free):
    """One pass of the exponential-trapezoidal predictor-corrector scheme.

    ``x0`` may be a vectorized state (d^2,) or a full map (d^2, d^2); the
    scheme is linear so both propagate identically.
    """
    n_modes = len(amps)
    x = x0.astype(complex)
    modes = [np.zeros_like(x) for _ in range(n_modes)]
    out = np.empty((tgrid.size,) + x.shape, dtype=complex)
    out[0] = x
    half = 0.5 * h
    for k in range(1, tgrid.size):
        s = L @ x
        msum = modes[0].copy() if n_modes else np.zeros_like(x)
        for j in range(1, n_modes):
            msum += modes[j]
        base = U_loc @ (x + half * msum)
        # z_j = E_j (m_j + h/2 c_j L x_n), the exactly-propagated old content
        z = [mode_props[j] @ (modes[j] + half * amps[j] * s) for j in range(n_modes)]
        # predictor: rectangle rule for the new-memory contribution
        x_new = U_loc @ (x + h * msum) if n_modes else U_loc @ x
        for _ in range(2):
            if n_modes:
                s_new = L @ x_new
                msum_new = z[0] + half * amps[0] * s_new
                for j in range(1, n_modes):
                    msum_new += z[j] + half * amps[j] * s_new
                x_new = base + half * msum_new
            else:
                x_new = base
        if n_modes:
            s_new = L @ x_new
            for j in range(n_modes):
                modes[j] = z[j] + half * amps[j] * s_new
        x = x_new
        out[k] = x
    return out


def _volterra_matrices(model, kernel, h):
    L_H = coherent_liouvillian(model)
    L = dissipator(model)
    U_loc = scipy.linalg.expm(h * (L_H + kernel.markov_weight * L))
    mode_props = [scipy.linalg.expm(h * (p * np.eye(L.shape[0]) + L_H)) for p in kernel.poles]
    return U_loc, mode_props, list(kernel.amplitudes), L, L_H


def _volterra_run(model, x0, tgrid, kernel, check_step, step_tol):
    tgrid, h = _check_grid(tgrid)
    if tgrid[0] != 0.0:
        raise ValueError("Volterra integration must start at t = 0")
    U_loc, mode_props, amps, L, L_H = _volterra_matrices(model, kernel, h)
    out = _volterra_sweep(x0, tgrid, h, U_loc, mode_props, amps, L, L_H)
    richardson = None
    if check_step:
        fine = np.linspace(tgrid[0], tgrid[-1], 2 * (tgrid.size - 1) + 1)
        U2, props2, amps2, L2, _ = _volterra_matrices(model, kernel, 0.5 * h)
        out2 = _volterra_sweep(x0, fine, 0.5 * h, U2, props2, amps2, L2, L_H)
        richardson = float(np.max(np.abs(out - out2[::2])))
        if richardson > step_tol:
            raise SolverError(
                f"Volterra step size too coarse: Richardson residual {richardson:.3e} "
                f"exceeds {step_tol:g}; refine the grid"
            )
        out = out2[::2]
    return tgrid, out, richardson


def evolve_volterra(model: ModelSpec, rho0, tgrid, kernel: KernelDecomposition | None = None,
                    check_step=True, step_tol=1e-4) -> EvolutionResult:
    """Integrate the effective memory-kernel evolution.

    The kernel defaults to the exact partial-fraction decomposition of the
    model ensemble.  With ``check_step`` the integration is repeated at half
    step and the halved-step solution is returned; the Richardson residual is
    stored in ``meta`` and must stay below ``step_tol``.
    """
    rho0 = qops.require_density_matrix(rho0)
    if kernel is None:
        kernel = kernel_decompose(model.ensemble)
    v0 = qops.vectorize(rho0)
    tgrid, vecs, richardson = _volterra_run(model, v0, tgrid, kernel, check_step, step_tol)
    states = np.array([qops.devectorize(v, model.dim) for v in vecs])
    drift, mineig = _diagnose(states)
    meta = {} if richardson is None else {"richardson_residual": richardson}
    return EvolutionResult(tgrid, states, "volterra", drift, mineig, meta=meta)


def volterra_propagator_series(model: ModelSpec, tgrid, kernel=None,
                               check_step=False, step_tol=1e-4):
    """Propagate the identity map through the Volterra scheme (for CP checks)."""
    if kernel is None:
        kernel = kernel_decompose(model.ensemble)
    dsq = model.dim ** 2
    x0 = np.eye(dsq, dtype=complex)
    _, maps, _ = _volterra_run(model, x0, tgrid, kernel, check_step, step_tol)
    return maps


def exact_memory_superop(model: ModelSpec, u):
    """Memory superoperator in the Laplace domain.

    Solves <G_R(u)> LL(u) = <G_R(u) L_R> for LL(u), with G_R the fixed-rate
    resolvent.  For a single rate this is gamma * L independent of u.
    """
    L = dissipator(model)
    avg = np.zeros_like(L)
    avg_rate = np.zeros_like(L)
    for rate, weight in zip(model.ensemble.rates, model.ensemble.weights):
        G = qops.resolvent(generator(model, rate), u)
        avg += weight * G
        avg_rate += weight * (G @ (rate * L))
    try:
        out = np.linalg.solve(avg, avg_rate)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"average resolvent is singular at u = {u}") from exc
    resid = np.max(np.abs(avg @ out - avg_rate))
    if resid > 1e-9 * max(1.0, float(np.max(np.abs(avg_rate)))):
        raise SolverError(
            f"memory superoperator solve at u = {u} left residual {resid:.3e}"
        )
    return out


def _unitary_factorization(model, h):
    """(U_h, W, W^dag, lam) for exp(t L_H) applied between jump events."""
    H = np.asarray(model.hamiltonian, dtype=complex)
    energies, basis = np.linalg.eigh(H)
    d = H.shape[0]
    lam = -1j * (np.tile(energies, d) - np.repeat(energies, d))
    W = np.kron(basis.conj(), basis)
    U_h = (W * np.exp(lam * h)) @ W.conj().T
    return U_h, W, W.conj().T, lam


def mc_trajectories(model: ModelSpec, rho0, tgrid, cfg: MCConfig,
                    n_threads=None, backend=None):
    """Monte Carlo unraveling; returns the averaged result with standard errors.

    Standard errors are per matrix entry: sqrt(var/n) with the complex sample
    variance E|z|^2 - |Ez|^2.  Parallelism is capped by ``n_threads`` or the
    NMBATH_THREADS environment variable; the average is independent of the
    thread count.
    """
    rho0 = qops.require_density_matrix(rho0)
    tgrid, _ = _check_grid(tgrid)
    if tgrid[0] != 0.0:
        raise ValueError("MC grids must start at t = 0")
    E = event_map(model)
    rates = model.ensemble.rates
    weights = model.ensemble.weights
    t_max = float(tgrid[-1])

    if cfg.scheme == "frozen_rate":
        _, ev_times, ev_off = _mc.sample_frozen_events(
            cfg.seed, cfg.trajectories, t_max, rates, weights)
        tag, composition = "mc_frozen", "forward"
    else:
        ev_times, ev_off = _mc.sample_renewal_events(
            cfg.seed, cfg.trajectories, t_max, rates, weights)
        # reversed string: its renewal average solves the effective equation
        tag, composition = "mc_renewal", "reversed"

    if model.picture == "interaction" or np.max(np.abs(model.hamiltonian)) == 0.0:
        unitary = None
    else:
        unitary = _unitary_factorization(model, float(tgrid[1] - tgrid[0]))

    if n_threads is None:
        n_threads = int(os.environ.get("NMBATH_THREADS", "1"))
    n_threads = max(1, n_threads)

    mean, stderr = _mc.run_trajectories(
        qops.vectorize(rho0), tgrid, ev_times, ev_off, unitary, E,
        n_threads=n_threads, backend=backend, composition=composition)
    d = model.dim
    states = np.array([qops.devectorize(v, d) for v in mean])
    errs = np.array([err.reshape(d, d, order="F") for err in stderr])
    drift, mineig = _diagnose(states)
    return EvolutionResult(tgrid, states, tag, drift, mineig,
                           stderr=errs, n_trajectories=cfg.trajectories,
                           meta={"backend": backend or _mc.active_backend(),
                                 "scheme": cfg.scheme})
