"""Numerical laboratory for doubly robust estimating functions on
finite-state probability manifolds."""

from .manifold import (
    Distribution,
    InvalidDistributionError,
    SampleSpace,
    SpaceMismatchError,
    StateFunction,
    center,
    density_ratio,
    expectation,
    inner_product,
    mixture,
    norm,
)
from .tangent import (
    Chart,
    Path,
    Subspace,
    chart_path,
    convex_tangent_basis,
    eic_from_chart,
    full_tangent_space,
    mixture_path,
    orth_complement,
    pathwise_derivative,
    project,
    saturated_chart,
    score_of_path,
    subspace_residual,
    verify_influence_curve,
)
from .transport import (
    TransportReport,
    duality_gap,
    e_transport,
    m_curvature_residual,
    m_flatness_residual,
    m_transport,
    m_transport_subspace,
)
from .models import (
    EstimatingFunction,
    ModelInstance,
    ModelSpecError,
    Parameterization,
    Section,
    ate_estfun,
    build_ate,
    build_odds_ratio,
    build_plm,
    eic_estfun,
    from_spec,
    nuisance_grid,
    parameterize_odds_ratio,
    sample_section,
)
from .robustness import (
    ConvexityReport,
    DRReport,
    EInvarianceReport,
    FlatnessReport,
    IffReport,
    OrthoReport,
    check_estimating_function,
    convexity_check,
    dr_bruteforce,
    e_invariance_check,
    flatness_suite,
    iff_check,
    necessity_check,
)
from .montecarlo import (
    Dataset,
    ExperimentTable,
    RootBracketError,
    default_scenarios,
    population_root,
    run_experiment,
    sample,
    solve_theta,
)

__version__ = "0.1.0"
