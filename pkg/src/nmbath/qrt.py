"""Expectation values, two-time correlators, and regression-theorem residuals.

The regression "prediction" propagates the measured equal-time correlator
with the deterministic one-time propagator of expectation values; the
residual against the exact rate-averaged correlator measures how far the
dynamics is from obeying the Markovian regression rule.  For pure dephasing
the residual has the closed form I0 * [P0(t+tau) - P0(t) P0(tau)].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qops
from .dynamics import ModelSpec, generator
from .ratebath import RateEnsemble, survival
from .qops import SIGMA_X, SIGMA_Y, SIGMA_Z, IDENTITY_2

GRAM_COND_LIMIT = 1e6


def pauli_basis():
    """The default complete observable set {sigma_x, sigma_y, sigma_z, I}."""
    return (SIGMA_X, SIGMA_Y, SIGMA_Z, IDENTITY_2)


def _basis_matrices(basis):
    """Trace row map T, reconstruction columns A, and the Gram inverse.

    a_mu = Tr(A_mu rho) = T @ vec(rho); vec(rho) = A @ g^-1 @ a for Hermitian
    bases, with g the Hilbert-Schmidt Gram matrix.
    """
    mats = [np.asarray(A, dtype=complex) for A in basis]
    d = mats[0].shape[0]
    if len(mats) != d * d:
        raise ValueError(f"need {d*d} basis operators for dimension {d}, got {len(mats)}")
    T = np.array([qops.vectorize(A.T) for A in mats])
    cols = np.array([qops.vectorize(A) for A in mats]).T
    gram = np.array([[np.trace(A.conj().T @ B) for B in mats] for A in mats])
    cond = np.linalg.cond(gram)
    if cond > GRAM_COND_LIMIT:
        raise ValueError(f"observable basis is ill-conditioned (Gram cond {cond:.3e})")
    gram_inv = np.linalg.inv(gram)
    return T, cols, gram_inv


def expectation_series(model: ModelSpec, rho0, basis, tgrid):
    """<A_mu(t)> = Tr(A_mu rho(t)) from the exact ensemble evolution.

    Returns a complex array of shape (len(basis), len(tgrid)).
    """
    rho0 = qops.require_density_matrix(rho0)
    v0 = qops.vectorize(rho0)
    T = np.array([qops.vectorize(np.asarray(A, dtype=complex).T) for A in basis])
    acc = np.zeros((len(basis), len(tgrid)), dtype=complex)
    for rate, weight in zip(model.ensemble.rates, model.ensemble.weights):
        fac = qops.generator_factorization(generator(model, rate))
        vecs = fac.apply_many(tgrid, v0)
        acc += weight * (T @ vecs.T)
    return acc


def observable_propagator(model: ModelSpec, basis, taugrid):
    """Matrix G(tau) with <A(tau)> = G(tau) <A(0)> for any initial state.

    Shape (len(taugrid), k, k).  This is the deterministic propagator whose
    generator is the (implicit) memory matrix of the one-time evolution.
    """
    T, cols, gram_inv = _basis_matrices(basis)
    taugrid = np.asarray(taugrid, dtype=float)
    dsq = cols.shape[0]
    phi = np.zeros((taugrid.size, dsq, dsq), dtype=complex)
    for rate, weight in zip(model.ensemble.rates, model.ensemble.weights):
        fac = qops.generator_factorization(generator(model, rate))
        phi += weight * fac.expm_many(taugrid)
    return np.einsum("mi,tij,jn->tmn", T, phi, cols @ gram_inv)


def two_time_correlation(model: ModelSpec, rho0, S, basis, t, tau):
    """Exact <S(t) A_mu(t+tau)>: rate-resolved propagation of rho_R(t) S.

    ``tau`` may be a scalar or a grid; the result has shape
    (len(basis),) or (len(basis), len(tau)).
    """
    rho0 = qops.require_density_matrix(rho0)
    S = np.asarray(S, dtype=complex)
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
    if t < 0 or np.any(tau_arr < 0):
        raise ValueError("correlation times must be nonnegative")
    T = np.array([qops.vectorize(np.asarray(A, dtype=complex).T) for A in basis])
    v0 = qops.vectorize(rho0)
    out = np.zeros((len(basis), tau_arr.size), dtype=complex)
    d = model.dim
    for rate, weight in zip(model.ensemble.rates, model.ensemble.weights):
        fac = qops.generator_factorization(generator(model, rate))
        rho_t = qops.devectorize(fac.apply_many([t], v0)[0], d)
        seed = qops.vectorize(rho_t @ S)
        vecs = fac.apply_many(tau_arr, seed)
        out += weight * (T @ vecs.T)
    return out if np.ndim(tau) else out[:, 0]


def qrt_prediction(model: ModelSpec, rho0, S, basis, t, taugrid):
    """Regression-rule prediction: G(tau) applied to the measured tau=0 value."""
    taugrid = np.asarray(taugrid, dtype=float)
    anchor = two_time_correlation(model, rho0, S, basis, t, 0.0)
    G = observable_propagator(model, basis, taugrid)
    return np.einsum("tmn,n->mt", G, anchor)


@dataclass(frozen=True)
class CorrelationSurface:
    tgrid: np.ndarray
    taugrid: np.ndarray
    actual: np.ndarray      # (n_t, n_tau, n_obs)
    predicted: np.ndarray
    residual: np.ndarray

    def max_residual_per_t(self):
        return np.max(np.abs(self.residual), axis=(1, 2))


def qrt_residual(model: ModelSpec, rho0, S, basis, tgrid, taugrid) -> CorrelationSurface:
    """Actual minus predicted correlators over the full (t, tau) surface."""
    tgrid = np.asarray(tgrid, dtype=float)
    taugrid = np.asarray(taugrid, dtype=float)
    G = observable_propagator(model, basis, taugrid)
    n_obs = len(basis)
    actual = np.empty((tgrid.size, taugrid.size, n_obs), dtype=complex)
    predicted = np.empty_like(actual)
    # the equal-time anchor is always tau = 0, whatever the tau grid contains
    taug_full = np.concatenate(([0.0], taugrid))
    for k, t in enumerate(tgrid):
        corr = two_time_correlation(model, rho0, S, basis, t, taug_full)
        actual[k] = corr[:, 1:].T
        predicted[k] = np.einsum("tmn,n->tm", G, corr[:, 0])
    return CorrelationSurface(tgrid, taugrid, actual, predicted, actual - predicted)


def heisenberg_generator(model: ModelSpec, rate, basis):
    """Matrix M_R with Tr{A (L_H + gamma L)[S]} = M_R Tr{A S} for all S.

    The adjoint (observable-side) form of the fixed-rate generator, expressed
    in the given complete basis.
    """
    T, cols, gram_inv = _basis_matrices(basis)
    return T @ generator(model, rate) @ (cols @ gram_inv)


def stationary_state(model: ModelSpec, rho0):
    """Projection of rho0 onto the null space of the average generator.

    Pure dephasing has a conserved population sector, so the stationary state
    is resolved by the initial condition.
    """
    rho0 = qops.require_density_matrix(rho0)
    avg = np.zeros((model.dim ** 2, model.dim ** 2), dtype=complex)
    for rate, weight in zip(model.ensemble.rates, model.ensemble.weights):
        avg += weight * generator(model, rate)
    w, V = np.linalg.eig(avg)
    left = np.linalg.inv(V)
    scale = max(1.0, float(np.max(np.abs(w))))
    null = np.abs(w) <= 1e-12 * scale
    proj = V[:, null] @ left[null, :]
    return qops.devectorize(proj @ qops.vectorize(rho0), model.dim)


def dephasing_h(ens: RateEnsemble, t, tau):
    """Memory witness h(t, tau) = P0(t+tau) - P0(t) P0(tau)."""
    return survival(ens, np.asarray(t) + np.asarray(tau)) - survival(ens, t) * survival(ens, tau)


def dephasing_analytic(ens: RateEnsemble, rho0, t):
    """Closed-form dephasing map g+ rho + g- sigma_z rho sigma_z.

    g+- = (1 +- P0(t)) / 2; interaction picture, two-level systems only.
    """
    rho0 = qops.require_density_matrix(rho0)
    if rho0.shape != (2, 2):
        raise ValueError("closed-form dephasing is for two-level systems")
    p0 = survival(ens, t)
    g_plus = 0.5 * (1.0 + p0)
    g_minus = 0.5 * (1.0 - p0)
    return g_plus * rho0 + g_minus * (SIGMA_Z @ rho0 @ SIGMA_Z)


def dephasing_residual_closed_form(ens: RateEnsemble, rho0, S, basis, tgrid, taugrid):
    """Closed-form residual I0 * h(t, tau) for the dephasing model.

    I0_mu = Tr{(rho0 - rho_inf) S A_mu} masked to the coherence components
    (the sector whose one-time propagator is P0); rho_inf keeps the
    populations of rho0 and erases coherences.  Returns shape
    (n_t, n_tau, n_obs) matching :class:`CorrelationSurface`.
    """
    rho0 = qops.require_density_matrix(rho0)
    S = np.asarray(S, dtype=complex)
    rho_inf = np.diag(np.diag(rho0))
    delta = rho0 - rho_inf
    i0 = np.array([np.trace(delta @ S @ np.asarray(A, dtype=complex)) for A in basis])
    mask = np.array([_is_coherence_observable(A) for A in basis], dtype=float)
    i0 = i0 * mask
    tgrid = np.asarray(tgrid, dtype=float)
    taugrid = np.asarray(taugrid, dtype=float)
    h = dephasing_h(ens, tgrid[:, None], taugrid[None, :])
    return h[:, :, None] * i0[None, None, :]


def _is_coherence_observable(A):
    """True when A lives purely off-diagonal (decays with P0 under dephasing)."""
    A = np.asarray(A, dtype=complex)
    return np.max(np.abs(np.diag(A))) < 1e-12 and np.max(np.abs(A)) > 0
