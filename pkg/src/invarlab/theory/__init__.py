"""Oracles and calculators for the adversarial domain-generalisation objective."""

from .bounds import (
    BoundInputs,
    WorstCaseBound,
    bound_rhs,
    cells_per_axis,
    combined_vc,
    high_mass_threshold,
    m_k,
    subgaussian_radius,
    worst_case_bound,
)
from .grid import (
    DensityEstimate,
    GridSpec,
    PartitionValue,
    RegionAssignment,
    boundary_interior_counts,
    estimate_density,
    partition_value,
    region_assignment,
    tv_relation_check,
)
from .hdiv import HDivergence, h_divergence_estimate
from .head import axis_forms, constructive_head, head_scores
from .invariance import InvarianceReport, LinearPhiDecomposition, invariance_check, pseudo_inverse
from .limit import LimitTrace, RepWorld, adversary_limit_experiment, gaussian_rep_world, oracle_value
