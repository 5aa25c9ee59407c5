"""Desk-scale laboratory for nonlocal third-order damped wave models.

Spectral fractional operators on a box grid, linear/semilinear/Westervelt
forward solvers, exterior flux measurements with their structural identities,
higher-order linearization, reconstruction algorithms, and a parabolic
regularization study, all behind one experiment CLI.

Set MGTLAB_THREADS to cap BLAS/OpenMP thread counts; it is translated into
the usual OMP/OPENBLAS/MKL variables before numpy is first imported, so it
only takes effect when mgtlab is imported ahead of other numerical packages.
"""

import os as _os

_threads = _os.environ.get("MGTLAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
del _os, _threads

from ._backend import BACKEND, available_backends
from . import errors
from .envelopes import (
    Envelope,
    bump_profile,
    interior_plateau_profile,
    monomial_envelope,
    plateau_envelope,
    pulse_envelope,
    ramp_envelope,
)
from .fracgrid import (
    FracOp,
    Grid,
    OperatorLawReport,
    SpaceTimeField,
    build_fracop,
    build_grid,
    check_operator_laws,
    frac_apply,
    frac_pairing,
    load_fracop,
    save_fracop,
    st_inner,
    st_norm,
    standard_grid,
    trapezoid_weights,
)
from .forward import (
    EnergyLedger,
    ExteriorInput,
    ExteriorSum,
    MGTParams,
    Nonlinearity,
    PolynomialType,
    Polyhomogeneous,
    Potential,
    StateTrajectory,
    WesterveltBeta,
    WesterveltKappa,
    energy_identity_check,
    lift_exterior,
    manufactured_solution,
    mms_convergence,
    solve_backward_adjoint,
    solve_linear_mgt,
    solve_semilinear_mgt,
    solve_westervelt,
    system_third_derivative,
    xnorm_slabs,
)
from .dnmap import (
    DNTrace,
    adjoint_identity_residual,
    dn_pairing,
    dn_trace,
    integral_identity_residual,
    pairing_matrix,
)
from .linearize import (
    BELL,
    ConvergenceReport,
    LinearizationStack,
    Partition,
    build_stack,
    diff_quotient_solution_map,
    dn_derivative,
    dn_derivative_quotient,
    enumerate_partitions,
    faa_di_bruno_source,
    fit_slope,
    linearization_convergence_report,
    proper_partitions,
    solve_linearized,
)
from .inverse import (
    ReconstructionReport,
    RungeProblem,
    add_trace_noise,
    central_quotient,
    generate_solution_family,
    generate_trace_family,
    make_input_bank,
    masked_pointwise_fit,
    recover_g_taylor,
    recover_polyhomogeneous,
    recover_q,
    recover_westervelt_beta,
    recover_westervelt_kappa,
    relative_error,
    runge_control,
    steer_to_plateau,
    taylor_quotient_amplitudes,
)
from .regularize import (
    RegularizationLadder,
    ibp_residual,
    regularization_sweep,
    solve_regularized,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
