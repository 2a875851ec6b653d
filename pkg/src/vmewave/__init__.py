"""Two-scale explicit/hybrid solvers for 1-D nonlinear elastic waves.

A coarse grid spans the whole bar while each unit cell carries its own
fine-scale enrichment that vanishes on the cell boundaries. Three
operator-split integrators advance the coupled system; a single-scale
reference solver, scenario builders and error metrics round out the
toolkit.
"""

from .assembly import (
    DnsOperators,
    Operators,
    build_dns_operators,
    build_operators,
    total_energy,
)
from .dns import DnsProblem, DnsState, dns_run, element_stretch_profile
from .errors import (
    DtFloorError,
    InvalidDiscretization,
    InvalidSubstepRatio,
    MissingSnapshot,
    NewtonNonConvergence,
    NonConformingPhase,
    NonPositiveStretch,
    ParseError,
    PointOutsideCoarseElement,
    SingularTangent,
    SplitNonConvergence,
    ValidationError,
    VmeError,
    ZeroReference,
)
from .integrate import (
    IntegratorConfig,
    MultiscaleState,
    implicit_constants,
    initial_accelerations,
    run,
    step_ee_cdm,
    step_ee_ssm,
    step_ei_ssm,
    substep_constants,
)
from .material import energy, stress, tangent, wave_speed_factor
from .mesh import TwoScaleMesh, build_mesh
from .results import RunResult, Snapshot, StepRecord
from .scenario import (
    InitialPulse,
    Microstructure,
    build_initial_condition,
    build_modulus_field,
    find_snapshot,
    nondimensionalize,
    pair_snapshots,
    redimensionalize,
    reference_coords,
    relative_error_linf,
    sample_total,
    split_displacement,
    total_displacement,
)
from .stability import (
    CriticalDt,
    critical_dt_dns,
    critical_dt_multiscale,
    element_max_frequency,
)

__version__ = "0.1.0"
