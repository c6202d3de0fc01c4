"""Dual importance-aware factorization machines for fraud detection on event sequences."""

from .data import FieldValueDictionary, build_dictionary, encode_sample, make_schema, pack
from .metrics import auc, partial_auc
from .model import ModelConfig, forward, load_model, predict, save_model
from .training import TrainConfig, train

__all__ = [
    "FieldValueDictionary", "ModelConfig", "TrainConfig",
    "auc", "build_dictionary", "encode_sample", "forward", "load_model",
    "make_schema", "pack", "partial_auc", "predict", "save_model", "train",
]
