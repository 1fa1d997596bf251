"""Exponential-stability certificates for PID passivity-based control of
port-Hamiltonian mechanical systems."""

from phstab.core import (
    MatrixField,
    MechanicalSystem,
    ScalarField,
    State,
    eval_hamiltonian,
    eval_open_loop,
    finite_diff,
    validate_assumptions,
)
from phstab.region import Region
from phstab.pidpbc import (
    ClosedLoopSystem,
    GainSet,
    build_closed_loop,
    check_assignable,
    check_C1_C2_C3,
    check_gain_condition,
    check_underactuated_damping,
    compute_kappa,
    control_signal,
)
from phstab.plvcc import (
    CanonicalPHSystem,
    cholesky_partials,
    inverse_map_state,
    map_state,
    to_canonical,
    upper_cholesky,
)
from phstab.certify import (
    Certificate,
    CertificateInfeasible,
    convexity_bounds,
    envelope,
    lyapunov_value,
    make_certificate,
    max_feasible_epsilon,
    schur_pd_check,
    upsilon_sym,
)
from phstab.sim import (
    Trajectory,
    empirical_decay_rate,
    energy_audit,
    rk4_step,
    simulate,
    verify_envelope,
)
from phstab.tune import beta_max_of_gains, grid_search, predict_ordering
from phstab.pera import PeraParams, build_pera, pera_scenarios

__version__ = "0.1.0"
