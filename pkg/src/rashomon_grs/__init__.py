"""Sampling generalized Rashomon sets around a black-box reference model.

Members are the reference applied to rescaled inputs, found by a
per-feature line search up to a loss tolerance. Permutation attributions
(feature effects and pairwise interaction excesses) are computed across
the set and summarized by range and search-efficiency metrics.
"""
__version__ = "0.1.0"

from .attribution import AttributionSet, AttributionSpace, Estimator, attribution_set, attribution_space, \
    ground_truth_table, phi, score
from .data import Dataset, LossKind, Perturbation, empirical_loss, load_csv, permuted_loss_full, \
    permuted_loss_mc, split_dataset, subset_family, subset_index
from .metrics import chebyshev_distance, fer, metrics_report, redundancy_filter, ser
from .models import LinearModel, MlpHyper, MlpModel, QuadraticOracle, gen_quadratic, load_bundle, predict, \
    save_bundle, train_linear, train_mlp
from .rashomon import Boundary, RashomonConfig, RashomonSubset, is_member, rashomon_threshold
from .sampler import LineSearch, SamplerConfig, baseline_random_input, baseline_random_weights, \
    convergence_report, epsilon_schedule, grs_sample, grs_sample_nested, line_search_step

__all__ = [
    "AttributionSet", "AttributionSpace", "Boundary", "Dataset", "Estimator", "LineSearch", "LinearModel",
    "LossKind", "MlpHyper", "MlpModel", "Perturbation", "QuadraticOracle", "RashomonConfig", "RashomonSubset",
    "SamplerConfig", "attribution_set", "attribution_space", "baseline_random_input", "baseline_random_weights",
    "chebyshev_distance", "convergence_report", "empirical_loss", "epsilon_schedule", "fer", "gen_quadratic",
    "grs_sample", "grs_sample_nested", "ground_truth_table", "is_member", "line_search_step", "load_bundle",
    "load_csv", "metrics_report", "permuted_loss_full", "permuted_loss_mc", "phi", "predict",
    "rashomon_threshold", "redundancy_filter", "save_bundle", "score", "ser", "split_dataset",
    "subset_family", "subset_index", "train_linear", "train_mlp",
]
