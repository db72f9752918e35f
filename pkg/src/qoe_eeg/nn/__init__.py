from .model import (
    ModelConfig,
    backward,
    build_model,
    forward,
    forward_batch,
    loss_and_grads,
    param_count,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "ModelConfig",
    "adam_step",
    "backward",
    "build_model",
    "forward",
    "forward_batch",
    "loss_and_grads",
    "param_count",
]
