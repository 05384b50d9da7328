"""Certified L2 robustness toolkit: noise-aware training, transfer by clean
fine-tuning, and Monte Carlo certification of the smoothed classifier."""

from .certifier import (ABSTAIN, CertificationResult, LinearModel, SmoothingParams,
                        betainc_reg, certify, clopper_pearson_lower, inv_norm_cdf,
                        linear_oracle, log_binom_tail, norm_cdf, predict)
from .data import (Dataset, IdxFormatError, NoiseSpec, drawn_sigmas, load_idx,
                   make_transfer_pair, sample_noisy_batch, save_idx, synth_shapes)
from .layers import Conv3x3, Dense, Flatten, ReLU, ShapeError
from .network import (LayerSpec, ModelSpec, Network, conv_classifier,
                      softmax_cross_entropy)
from .model_io import CheckpointError, load_checkpoint, save_checkpoint
from .norms import NORM_KINDS, NormLayer, default_groups
from .optim import SgdConfig, SgdOptimizer, lr_at
from .tensor import Tensor
from .trainer import (TrainPlan, TrainReport, TrainingDiverged, finetune,
                      lr_sweep, pretrain, swap_head)

__all__ = [
    "ABSTAIN", "CertificationResult", "CheckpointError", "Conv3x3", "Dataset",
    "Dense", "Flatten", "IdxFormatError", "LayerSpec", "LinearModel",
    "ModelSpec", "NORM_KINDS", "Network", "NoiseSpec", "NormLayer", "ReLU",
    "SgdConfig", "SgdOptimizer", "ShapeError", "SmoothingParams", "Tensor",
    "TrainPlan", "TrainReport", "TrainingDiverged", "betainc_reg", "certify",
    "clopper_pearson_lower", "conv_classifier", "default_groups", "drawn_sigmas",
    "finetune", "inv_norm_cdf", "linear_oracle", "load_checkpoint", "load_idx",
    "log_binom_tail", "lr_at", "lr_sweep", "make_transfer_pair", "norm_cdf",
    "predict", "pretrain", "sample_noisy_batch", "save_checkpoint", "save_idx",
    "softmax_cross_entropy", "swap_head", "synth_shapes",
]

__version__ = "0.1.0"
