"""Spectral normal-form toolkit for the beam equation on the circle.

Truncated Hamiltonian algebra over finitely many Fourier modes, weighted
majorant norms, non-resonance certificates for the dispersion relation
omega_j = sqrt(j^4 + m), an iterative normalization engine with explicit
budget ledgers, symplectic time stepping, and a config-driven experiment
runner with delimited output and figures.
"""

__version__ = "0.1.0"

from .errors import (
    BeamnfError,
    BlowUpError,
    BudgetError,
    DimensionError,
    FlowDomainError,
    InsufficientDataError,
    StepRejectedError,
    ValidationError,
)
from .weights import SeqState, Weight, WeightKind, alg_constant, seq_norm
from .hamiltonian import (
    DegreePart,
    PolyHamiltonian,
    ResonantPart,
    dump_hamiltonian,
    dumps_hamiltonian,
    evaluate,
    lie_transform,
    load_hamiltonian,
    loads_hamiltonian,
    majorant_norm,
    majorant_norm_upper,
    poisson_bracket,
    project_degree,
    project_resonant,
    vector_field,
)
from .divisors import (
    DiophantineReport,
    FrequencyVector,
    LatticeVector,
    MeasureEstimate,
    VanderReport,
    bad_set_measure,
    check_diophantine,
    divisor_grid,
    enumerate_lattice,
    mass_grid,
    vander_check,
)
from .normal_form import (
    BnfReport,
    LifespanParams,
    NormalFormState,
    ParamSchedule,
    StepRecord,
    TimeEstimate,
    adjoint_action,
    bnf_iterate,
    bnf_step,
    diagonal_quadratic,
    is_nonresonant,
    j0_bound,
    lattice_of,
    optimal_sobolev_exponent,
    predicted_times,
    solve_homological,
)
from .dynamics import (
    BeamState,
    NonlinearitySpec,
    Scheme,
    StabilityResult,
    apply_generator_flow,
    build_R0,
    complexify,
    energy,
    momentum,
    r0_norm_bound,
    realify,
    stability_time,
    step,
)
from .experiments import (
    ExperimentConfig,
    ExperimentKind,
    FitResult,
    RunRecord,
    fit_exponent,
    optimal_p,
    run,
)
from .rng import generator
