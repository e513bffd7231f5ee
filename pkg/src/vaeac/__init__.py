"""Variational autoencoder with arbitrary conditioning (VAEAC) on a small numpy autodiff core.

One model learns every conditional ``p(x_b | x_{1-b}, b)``; it imputes missing
tabular features, inpaints images and estimates conditional log-likelihoods.
A Universal Marginalizer baseline is included for comparison.
"""
from .config import TrainConfig
from .data import Dataset, Feature, FeatureSchema
from .masks import MaskSpec
from .model import Checkpoint, VaeacModel, conditional_sample, log_lik_is, log_lik_mc, train
from .marginalizer import UmModel, um_chain_sample, um_log_lik, um_train

__all__ = [
    "Checkpoint",
    "Dataset",
    "Feature",
    "FeatureSchema",
    "MaskSpec",
    "TrainConfig",
    "UmModel",
    "VaeacModel",
    "conditional_sample",
    "log_lik_is",
    "log_lik_mc",
    "train",
    "um_chain_sample",
    "um_log_lik",
    "um_train",
]
