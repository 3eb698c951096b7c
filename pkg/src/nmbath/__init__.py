"""Non-Markovian open-system dynamics from composite environments.

The environment is a finite ensemble of dissipation rates with weights; the
package provides the exact rate-averaged solver, the effective memory-kernel
(Volterra) solver, Monte Carlo trajectory unravelings, renewal-process
analytics for the kernel, and regression-theorem diagnostics.
"""

from .qops import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    IDENTITY_2,
    vectorize,
    devectorize,
    hamiltonian_liouvillian,
    lindblad_dissipator,
    jump_superoperator,
    propagate,
    resolvent,
    choi_matrix,
    choi_min_eigenvalue,
)
from .ratebath import (
    RateEnsemble,
    rate_ensemble,
    single_rate_ensemble,
    two_state_ensemble,
    manifold_ensemble,
    stats,
    survival,
    waiting_density,
    spectral_w,
    spectral_p0,
    spectral_f,
    kernel_decompose,
    KernelDecomposition,
    sprinkling,
    fractional_model,
    FractionalKernelModel,
    talbot_invert,
    fit_power_law,
)
from .dynamics import (
    ModelSpec,
    MCConfig,
    EvolutionResult,
    SolverError,
    dephasing_jumps,
    dephasing_model,
    evolve_ensemble,
    evolve_volterra,
    exact_memory_superop,
    mc_trajectories,
    time_grid,
)
from .qrt import (
    pauli_basis,
    expectation_series,
    observable_propagator,
    two_time_correlation,
    qrt_prediction,
    qrt_residual,
    CorrelationSurface,
    dephasing_analytic,
    dephasing_h,
    stationary_state,
)

__version__ = "0.1.0"
