"""Coded-inference prediction serving with learned parity models."""

from .coder import CoefficientMatrix, EncoderKind, decode_multi, decode_single, encode_concat, encode_sum
from .model import MlpClassifier, MlpModel, MlpRegressor, TrainConfig, init_model, load_weights, save_weights
from .parity import AccuracyReport, ParityModel, overall_accuracy

__all__ = [
    "AccuracyReport", "CoefficientMatrix", "EncoderKind", "MlpClassifier", "MlpModel", "MlpRegressor",
    "ParityModel", "TrainConfig", "decode_multi", "decode_single", "encode_concat", "encode_sum",
    "init_model", "load_weights", "overall_accuracy", "save_weights",
]
