from .autodiff import Tensor
from .nn import EncoderConfig, init_params, forward_encoder, forward_head, forward_model
from .loss import info_nce, LossReport
from .optim import AdamState, adam_step
from .train import (RunningStats, TrainState, TrainConfig, standardize, train,
                    embed, embed_patches, save_train_state, load_train_state)

__all__ = [
    "Tensor", "EncoderConfig", "init_params", "forward_encoder", "forward_head",
    "forward_model", "info_nce", "LossReport", "AdamState", "adam_step",
    "RunningStats", "TrainState", "TrainConfig", "standardize", "train",
    "embed", "embed_patches", "save_train_state", "load_train_state",
]
