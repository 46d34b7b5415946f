"""Training loop, input standardization, and sliding-window inference."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..augment import AugmentationSpec
from ..errors import DataError, ShapeMismatch
from ..features import FeatureMap, downsample_mask, tile_grid
from ..sampling import PairSampler, PairSpec, SectionStack, _batch_from_sampler
from ..signal import ParameterMaps, stack_channels
from .autodiff import Tensor
from .loss import info_nce
from .nn import EncoderConfig, forward_encoder, forward_model, init_params, wrap_params
from .optim import AdamState, adam_step

STD_FLOOR = 1e-6


@dataclass
class RunningStats:
    """Streaming per-channel mean/std, frozen after a fixed number of batches."""

    channels: int = 3
    freeze_after: int = 1024
    batches_seen: int = 0
    count: float = 0.0
    total: np.ndarray = None
    total_sq: np.ndarray = None

    def __post_init__(self):
        if self.total is None:
            self.total = np.zeros(self.channels)
        if self.total_sq is None:
            self.total_sq = np.zeros(self.channels)

    @property
    def frozen(self) -> bool:
        return self.batches_seen >= self.freeze_after

    def update(self, batch: np.ndarray) -> None:
        if self.frozen:
            return
        pixels = batch.shape[0] * batch.shape[2] * batch.shape[3]
        self.count += pixels
        self.total += batch.sum(axis=(0, 2, 3))
        self.total_sq += (batch ** 2).sum(axis=(0, 2, 3))
        self.batches_seen += 1

    def mean_std(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.count == 0:
            return np.zeros(self.channels), np.ones(self.channels)
        mean = self.total / self.count
        var = np.maximum(self.total_sq / self.count - mean ** 2, 0.0)
        return mean, np.maximum(np.sqrt(var), STD_FLOOR)


def standardize(batch: np.ndarray, stats: RunningStats, update: bool = True) -> np.ndarray:
    """Per-channel z-scoring with running statistics.

    While fewer than ``freeze_after`` batches have been seen (and ``update``
    is set), the incoming batch first updates the statistics; afterwards they
    stay frozen.  Channels with no variance map to 0 through the std floor.
    """
    if batch.ndim != 4:
        raise ShapeMismatch("expected a (batch, channels, h, w) array")
    if update:
        stats.update(batch)
    mean, std = stats.mean_std()
    return (batch - mean[None, :, None, None]) / std[None, :, None, None]


@dataclass
class TrainConfig:
    n_pairs: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    temperature: float = 0.5
    max_steps: int = 2000
    steps_per_epoch: int = 64
    max_epochs: int = 10_000
    patience_epochs: int = 50
    val_batches: int = 2
    stats_freeze_batches: int = 1024
    dtype: str = "float32"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        return cls(**raw)


@dataclass
class TrainState:
    config: EncoderConfig
    params: Dict[str, np.ndarray]
    adam: AdamState
    stats: RunningStats
    temperature: float = 0.5
    seed: int = 0
    steps: int = 0


def batch_to_array(crops: Sequence[ParameterMaps]) -> np.ndarray:
    """Stack parameter-map crops into a (2N, 3, h, w) channel batch."""
    return np.stack([stack_channels(c) for c in crops])


def init_train_state(config: EncoderConfig, seed: int = 0,
                     temperature: float = 0.5, freeze_after: int = 1024,
                     dtype: str = "float64") -> TrainState:
    params = {k: v.astype(dtype) for k, v in init_params(config, seed).items()}
    return TrainState(config=config, params=params, adam=AdamState.for_params(params),
                      stats=RunningStats(channels=config.input_channels,
                                         freeze_after=freeze_after),
                      temperature=temperature, seed=seed)


def _work_dtype(state: TrainState):
    return next(iter(state.params.values())).dtype


def _loss_and_grads(state: TrainState, x: np.ndarray, pairs) -> Tuple[float, Dict[str, np.ndarray]]:
    tensors = wrap_params(state.params)
    _, z = forward_model(tensors, Tensor(x.astype(_work_dtype(state), copy=False)), state.config)
    loss, _ = info_nce(z, pairs, state.temperature)
    loss.backward()
    return float(loss.data), {name: t.grad for name, t in tensors.items()}


def train(stack: SectionStack, pair_spec: PairSpec, aug_spec: AugmentationSpec,
          encoder: EncoderConfig, config: TrainConfig,
          val_stack: Optional[SectionStack] = None,
          log_every: int = 0) -> Tuple[TrainState, Dict[str, list]]:
    """Contrastive training until the step budget or early stopping.

    Validation uses a fixed, held-out seeded pair stream (by default from the
    training stack) evaluated with the same loss at every epoch end; training
    stops early when it has not improved for ``patience_epochs`` epochs.
    """
    state = init_train_state(encoder, seed=config.seed, temperature=config.temperature,
                             freeze_after=config.stats_freeze_batches, dtype=config.dtype)
    sampler = PairSampler(stack, pair_spec, aug_spec)
    val_sampler = sampler if val_stack is None else PairSampler(val_stack, pair_spec, aug_spec)
    root = np.random.SeedSequence(config.seed)
    data_seed, val_seed = root.spawn(2)
    val_batches = [_batch_from_sampler(val_sampler, config.n_pairs, child)
                   for child in val_seed.spawn(config.val_batches)]
    history: Dict[str, list] = {"train_loss": [], "val_loss": [], "val_epoch_steps": []}
    best_val = np.inf
    stale_epochs = 0
    step = 0
    for _ in range(config.max_epochs):
        if step >= config.max_steps:
            break
        for _ in range(config.steps_per_epoch):
            if step >= config.max_steps:
                break
            batch = _batch_from_sampler(sampler, config.n_pairs, data_seed.spawn(1)[0])
            x = standardize(batch_to_array(batch.crops), state.stats, update=True)
            loss, grads = _loss_and_grads(state, x, batch.pairs)
            adam_step(state.params, grads, state.adam, lr=config.learning_rate,
                      weight_decay=config.weight_decay)
            history["train_loss"].append(loss)
            step += 1
            state.steps = step
            if log_every and step % log_every == 0:
                print(f"step {step}: loss {loss:.4f}")
        val_losses = []
        for batch in val_batches:
            x = standardize(batch_to_array(batch.crops), state.stats, update=False)
            tensors = wrap_params(state.params, requires_grad=False)
            _, z = forward_model(tensors, Tensor(x.astype(_work_dtype(state), copy=False)),
                                 state.config)
            val_loss, _ = info_nce(z, batch.pairs, state.temperature)
            val_losses.append(float(val_loss.data))
        val_mean = float(np.mean(val_losses))
        history["val_loss"].append(val_mean)
        history["val_epoch_steps"].append(step)
        if val_mean < best_val - 1e-9:
            best_val = val_mean
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs > config.patience_epochs:
                break
    return state, history


def embed_patches(crops: Sequence[ParameterMaps] | np.ndarray, state: TrainState,
                  chunk: int = 256) -> np.ndarray:
    """Frozen-encoder hidden vectors for a list of un-augmented crops."""
    if isinstance(crops, np.ndarray):
        x_all = crops
    else:
        x_all = batch_to_array(crops)
    tensors = wrap_params(state.params, requires_grad=False)
    dtype = _work_dtype(state)
    outputs = []
    for start in range(0, x_all.shape[0], chunk):
        x = standardize(x_all[start:start + chunk], state.stats, update=False)
        outputs.append(forward_encoder(tensors, Tensor(x.astype(dtype, copy=False)),
                                       state.config).data.astype(float))
    return np.concatenate(outputs, axis=0)


def embed(maps: ParameterMaps, state: TrainState, tile: int = 128,
          overlap: float = 0.5, mask: Optional[np.ndarray] = None,
          section_id: str = "", chunk: int = 256) -> FeatureMap:
    """Sliding-window hidden features over a whole section.

    Tiles of ``tile`` pixels advance by ``tile * (1 - overlap)``; partial
    border tiles are dropped.  The projection head is discarded; running
    statistics stay frozen.
    """
    stride = max(1, int(round(tile * (1.0 - overlap))))
    tops, lefts = tile_grid(maps.shape, tile, stride)
    channels = stack_channels(maps)
    crops = np.empty((tops.size * lefts.size, channels.shape[0], tile, tile))
    k = 0
    for top in tops:
        for left in lefts:
            crops[k] = channels[:, top:top + tile, left:left + tile]
            k += 1
    hidden = embed_patches(crops, state, chunk=chunk)
    data = hidden.reshape(tops.size, lefts.size, -1)
    return FeatureMap(data=data, mask=downsample_mask(mask, maps.shape, tile, stride),
                      section_id=section_id, extractor="encoder", stride=stride,
                      pixel_size_um=maps.pixel_size)


# ---------------------------------------------------------------------------
# Checkpointing


def save_train_state(path, state: TrainState, extra_meta: Optional[dict] = None) -> None:
    from ..containers import write_checkpoint

    tensors: Dict[str, np.ndarray] = {}
    for name, value in state.params.items():
        tensors[f"param/{name}"] = value
    for name, value in state.adam.m.items():
        tensors[f"adam_m/{name}"] = value
    for name, value in state.adam.v.items():
        tensors[f"adam_v/{name}"] = value
    tensors["stats/total"] = state.stats.total
    tensors["stats/total_sq"] = state.stats.total_sq
    meta = {
        "kind": "train-state",
        "encoder": state.config.to_dict(),
        "temperature": state.temperature,
        "seed": state.seed,
        "steps": state.steps,
        "adam_step": state.adam.step,
        "stats": {"count": state.stats.count, "batches_seen": state.stats.batches_seen,
                  "freeze_after": state.stats.freeze_after,
                  "channels": state.stats.channels},
    }
    if extra_meta:
        meta.update(extra_meta)
    write_checkpoint(path, tensors, meta)


def load_train_state(path) -> TrainState:
    from ..containers import read_checkpoint
    from ..errors import FormatError

    tensors, meta = read_checkpoint(path)
    if meta.get("kind") != "train-state":
        raise FormatError(f"{path}: not a training checkpoint")
    config = EncoderConfig.from_dict(meta["encoder"])
    params = {}
    adam_m = {}
    adam_v = {}
    for name, value in tensors.items():
        group, _, key = name.partition("/")
        if group == "param":
            params[key] = value.astype(np.float32)
        elif group == "adam_m":
            adam_m[key] = value.astype(np.float32)
        elif group == "adam_v":
            adam_v[key] = value.astype(np.float32)
    stats_meta = meta["stats"]
    stats = RunningStats(channels=int(stats_meta["channels"]),
                         freeze_after=int(stats_meta["freeze_after"]),
                         batches_seen=int(stats_meta["batches_seen"]),
                         count=float(stats_meta["count"]),
                         total=tensors["stats/total"].astype(float),
                         total_sq=tensors["stats/total_sq"].astype(float))
    adam = AdamState(m=adam_m, v=adam_v, step=int(meta["adam_step"]))
    return TrainState(config=config, params=params, adam=adam, stats=stats,
                      temperature=float(meta["temperature"]),
                      seed=int(meta["seed"]), steps=int(meta["steps"]))
