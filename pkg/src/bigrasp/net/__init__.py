"""Numpy transformer for single and bimanual grasp prediction, with analytic gradients."""
from .layers import linear, multi_head_attention, set_abstraction, sgb_attention, softmax_rows
from .model import (
    GraspHeadOutput,
    ModelConfig,
    bgg_decode,
    check_weights,
    encoder_forward,
    forward,
    init_weights,
    model_forward,
    sgp_decode,
)
from .tensor import Tensor
from .train import AdamW, TrainSample, train_step
from .weights import load_weights, save_weights

__all__ = [
    "AdamW", "GraspHeadOutput", "ModelConfig", "Tensor", "TrainSample", "bgg_decode", "check_weights", "encoder_forward",
    "forward", "init_weights", "linear", "load_weights", "model_forward", "multi_head_attention",
    "save_weights", "set_abstraction", "sgb_attention", "sgp_decode", "softmax_rows", "train_step",
]
