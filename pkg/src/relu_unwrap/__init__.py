"""Unwrap ReLU networks into exact local linear models, then interpret,
diagnose, merge and flatten them."""
from .network import (Dataset, ReluNetwork, forward, forward_batch, load_network, make_network, predict,
                      predict_batch, save_network, toy_network)
from .trainer import TrainConfig, finetune, train
from .unwrapper import (ActivationPattern, LocalLinearModel, RegionRecord, UnwrapResult, activation_pattern,
                        enumerate_regions_grid, llm_coefficients, unwrap)
from .glm import bootstrap_inference, fit_binomial, fit_gaussian, wald_inference
from .interpret import joint_importance, local_profile, parallel_coordinates
from .diagnose import extrapolation_report, polar_projection, region_table, single_census
from .simplify import MergeConfig, MergedModel, compare_models, flatten, merge, predict_merged
from .data import SplitSpec, gen_chirpwave, gen_cocircles, load_csv, split_and_scale
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ReluNetwork", "forward", "forward_batch", "load_network", "make_network", "predict",
    "predict_batch", "save_network", "toy_network",
    "TrainConfig", "finetune", "train",
    "ActivationPattern", "LocalLinearModel", "RegionRecord", "UnwrapResult", "activation_pattern",
    "enumerate_regions_grid", "llm_coefficients", "unwrap",
    "bootstrap_inference", "fit_binomial", "fit_gaussian", "wald_inference",
    "joint_importance", "local_profile", "parallel_coordinates",
    "extrapolation_report", "polar_projection", "region_table", "single_census",
    "MergeConfig", "MergedModel", "compare_models", "flatten", "merge", "predict_merged",
    "SplitSpec", "gen_chirpwave", "gen_cocircles", "load_csv", "split_and_scale",
    "BACKEND",
]
