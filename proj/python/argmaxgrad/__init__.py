"""Gradient estimators for discrete latent-variable models.

The heavy lifting lives in the C++ extension; this package re-exports its
surface: Gumbel-Max sampling, the perturbed-argmax (direct) estimator,
pairwise MAP solvers, and the experiment runner.
"""

from ._core import (  # noqa: F401
    EULER_GAMMA,
    PairwisePotentials,
    __version__,
    brute_force_map,
    direct_gradient_norm,
    exact_log_partition,
    fetch,
    gumbel_max_sample,
    gumbel_softmax_relax,
    load_idx,
    maxflow_map,
    perturbed_argmax,
    run_experiment,
    sample_gumbel,
    score,
    structured_perturbed_argmax,
)

__all__ = [
    "EULER_GAMMA",
    "PairwisePotentials",
    "__version__",
    "brute_force_map",
    "direct_gradient_norm",
    "exact_log_partition",
    "fetch",
    "gumbel_max_sample",
    "gumbel_softmax_relax",
    "load_idx",
    "maxflow_map",
    "perturbed_argmax",
    "run_experiment",
    "sample_gumbel",
    "score",
    "structured_perturbed_argmax",
]
