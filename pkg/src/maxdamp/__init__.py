"""maxdamp: structure-preserving laboratory for collar-damped Maxwell systems."""

from .grid import StaggeredGrid, DeRhamComplex, build_grid, assemble_complex, apply_pec
from .materials import (
    MaterialPreset,
    SigmaSpec,
    MaterialAssembly,
    NonTrapReport,
    sample_materials,
    check_nontrapping,
    check_sigma_gap,
    collar_mask,
)
from .evolution import (
    FieldState,
    TimeSeries,
    SimulationResult,
    simulate,
    step_midpoint,
    step_leapfrog,
    energies,
    charge_trace,
    apply_generator,
)
from .helmholtz import (
    PotentialSolver,
    solve_p,
    solve_p_dot,
    build_Wi0,
    evolve_homogeneous,
    evolve_inhomogeneous,
    run_split,
    verify_splitting,
    sigma_free,
)
from .observability import (
    Gramian,
    ObservabilityReport,
    ControlSolve,
    gramian_apply,
    estimate_obs_constant,
    observation_quotient,
    hum_control,
    random_charge_free_pair,
)
from .decay import (
    DecayReport,
    fit_decay,
    run_decay_analysis,
    check_contraction,
    check_E_dominated_by_D,
    check_dtH_bound,
    project_equilibrium,
    check_convergence_to_P,
    dense_oracle,
    predicted_kernel_dim,
    KernelProjector,
)
from .config import ExperimentConfig, read_config, parse_config, ConfigError
