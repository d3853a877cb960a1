"""
Numerical building blocks for gmcprior
"""

from .spline_basis import (
    Partition,
    build_partition,
    design_matrix,
    eval_basis,
    eval_curve,
    eval_derivative,
    from_b_space,
    omega_factor,
    to_b_space,
)

from .gmc_priors import (
    gaussian_logdensity,
    mixture_indicator_prob,
    nu_full_conditional,
    random_walk_logprior,
    spike_slab_logprior,
)

from .diagnostics import (
    compare_partitions,
    compute_dic,
    compute_rhat,
    diagnose,
    effective_sample_size,
    summarize,
)

from .kaplan_meier import (
    kaplan_meier,
    logrank,
)

__all__ = [
    "Partition",
    "build_partition",
    "design_matrix",
    "eval_basis",
    "eval_curve",
    "eval_derivative",
    "from_b_space",
    "omega_factor",
    "to_b_space",
    "gaussian_logdensity",
    "mixture_indicator_prob",
    "nu_full_conditional",
    "random_walk_logprior",
    "spike_slab_logprior",
    "compare_partitions",
    "compute_dic",
    "compute_rhat",
    "diagnose",
    "effective_sample_size",
    "summarize",
    "kaplan_meier",
    "logrank",
]
