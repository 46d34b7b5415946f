"""Desk-scale convolutional encoder and projection head.

The encoder maps a standardized (B, 3, H, W) batch to hidden vectors through
three stride-2 convolution blocks with rectifier activations, global average
pooling, and a final linear layer.  The projection head is a two-layer MLP
whose output feeds the contrastive loss; it is discarded for inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Dict, Tuple

import numpy as np

from .autodiff import Tensor, conv2d, global_avg_pool, linear


@dataclass
class EncoderConfig:
    input_channels: int = 3
    conv_channels: Tuple[int, ...] = (8, 16, 32)
    kernel: int = 3
    stride: int = 2
    hidden_dim: int = 64
    head_hidden: int = 24
    head_out: int = 8

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "EncoderConfig":
        raw = dict(raw)
        if "conv_channels" in raw:
            raw["conv_channels"] = tuple(raw["conv_channels"])
        return cls(**raw)


def init_params(config: EncoderConfig, seed) -> Dict[str, np.ndarray]:
    """He fan-in normal weights, zero biases; seeded and reproducible."""
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    params: Dict[str, np.ndarray] = {}
    layers = []
    cin = config.input_channels
    for i, cout in enumerate(config.conv_channels):
        layers.append((f"conv{i}", (cout, cin, config.kernel, config.kernel),
                       cin * config.kernel ** 2))
        cin = cout
    layers.append(("fc", (cin, config.hidden_dim), cin))
    layers.append(("head0", (config.hidden_dim, config.head_hidden), config.hidden_dim))
    layers.append(("head1", (config.head_hidden, config.head_out), config.head_hidden))
    for child, (name, shape, fan_in) in zip(seq.spawn(len(layers)), layers):
        rng = np.random.default_rng(child)
        params[f"{name}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        bias_dim = shape[0] if name.startswith("conv") else shape[-1]
        params[f"{name}.b"] = np.zeros(bias_dim)
    return params


def forward_encoder(params: Dict[str, Tensor], x: Tensor, config: EncoderConfig) -> Tensor:
    """Hidden representations h of shape (B, hidden_dim)."""
    pad = config.kernel // 2
    out = x
    for i in range(len(config.conv_channels)):
        out = conv2d(out, params[f"conv{i}.w"], params[f"conv{i}.b"],
                     stride=config.stride, padding=pad).relu()
    pooled = global_avg_pool(out)
    return linear(pooled, params["fc.w"], params["fc.b"])


def forward_head(params: Dict[str, Tensor], hidden: Tensor) -> Tensor:
    """Two-layer MLP projection z used by the contrastive objective."""
    out = linear(hidden, params["head0.w"], params["head0.b"]).relu()
    return linear(out, params["head1.w"], params["head1.b"])


def forward_model(params: Dict[str, Tensor], x: Tensor, config: EncoderConfig
                  ) -> Tuple[Tensor, Tensor]:
    hidden = forward_encoder(params, x, config)
    return hidden, forward_head(params, hidden)


def wrap_params(raw: Dict[str, np.ndarray], requires_grad: bool = True) -> Dict[str, Tensor]:
    return {name: Tensor(value, requires_grad=requires_grad) for name, value in raw.items()}
