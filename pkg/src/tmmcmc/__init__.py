"""Adaptive MCMC accelerated by triangular transport maps.

The sampler fits a lower-triangular polynomial map from chain history by
convex optimization and uses it to turn simple reference-space proposals
into non-Gaussian proposals on the target, while remaining an exact MH
scheme.
"""

from .diagnostics import (
    EssReport,
    effective_sample_size,
    efficiency_table,
    ess_report,
    integrated_autocorrelation,
)
from .map_optimizer import (
    ComponentWorkspace,
    FitError,
    OptimizerConfig,
    append_samples,
    fit_map,
    solve_component,
)
from .mcmc import (
    ChainConfig,
    ChainResult,
    TargetDensity,
    estimate_map_discrepancy,
    mh_step,
    run_adaptive,
    run_baseline_rwm,
)
from .polybasis import (
    BasisSpec,
    MultiIndexSet,
    build_diagonal,
    build_no_mixed,
    build_total_order,
    union_sets,
)
from .problems import load_dataset, make_target, save_dataset, synthesize_data
from .proposals import (
    DelayedRejectionGlobal,
    DelayedRejectionLocal,
    Mala,
    Mixture,
    ProposalOutcome,
    RandomWalk,
    dr_two_stage_log_accept,
    mh_accept_log_ratio,
    propose,
    reference_log_density,
    target_proposal_log_density,
)
from .transport_map import (
    InversionError,
    MapComponent,
    MonotonicityError,
    TriangularMap,
    forward,
    identity_map,
    inverse,
    jacobian_diag,
    load_map,
    log_det_jacobian,
    pullback_log_density,
    pushforward_gradient,
    pushforward_log_density,
    save_map,
)

__version__ = "0.1.0"
