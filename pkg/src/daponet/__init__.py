"""Numpy reference implementation of a compact one-stage road-damage detector."""
from .detect import Detection, EvalResult, GroundTruthSet, decode, evaluate, iou, nms
from .model import ConfigError, Model, ModelConfig, WeightStore, build, preset, summarize
from .rng import Rng
from .weights import load_weights, save_weights

__all__ = ["Detection", "EvalResult", "GroundTruthSet", "decode", "evaluate", "iou", "nms",
           "ConfigError", "Model", "ModelConfig", "WeightStore", "build", "preset", "summarize",
           "Rng", "load_weights", "save_weights"]
