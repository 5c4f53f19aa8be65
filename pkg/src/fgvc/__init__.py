"""Attention-based fine-grained classification at desk scale, with EMD domain
similarity for choosing transfer sources."""

from .augment import AugmentConfig, attention_crop, attention_drop
from .domain import (DomainProfile, build_profile, domain_similarity, emd, rank_sources,
                     similarity, top_k_categories)
from .errors import FGVCError
from .estimator import WSDANClassifier
from .model import ModelParams, forward, init_params, predict_two_pass
from .trainer import TrainConfig, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "DomainProfile", "FGVCError", "ModelParams", "TrainConfig", "WSDANClassifier",
    "attention_crop", "attention_drop", "build_profile", "domain_similarity", "emd", "forward",
    "init_params", "lr_at", "predict_two_pass", "rank_sources", "similarity", "top_k_categories",
    "train",
]
