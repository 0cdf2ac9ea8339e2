"""Multi-expert feedforward classifier with manual backpropagation.

A shared trunk of affine layers with a Gaussian-bump nonlinearity
(exp(-z^2)) feeds M affine evidence heads; each head ends in a softplus so
its output is valid (non-negative, smooth) evidence.  The bump activation
makes every trunk feature vanish far from the data, so off-distribution
inputs fall back to the heads' bias-level evidence; since the training
objective pushes default evidence down, faraway points come out uncertain
rather than inheriting a saturated extrapolation.  The training loop is
plain SGD with momentum over mini-batches; per sample and per expert, the
fit term is gated by the expert's prefix weight computed from the current
forward pass (gradients do not flow through the gate), while the diversity
term always reaches every head.  Everything is seeded and single-threaded,
so training is bit-reproducible.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .losses import (
    AnnealSchedule,
    LossConfig,
    batched_diversity_terms,
    batched_single_terms,
)
from .opinions import FusionConfig, batched_fusion_trace
from .validation import check_features, check_labels

CHECKPOINT_MAGIC = b"TLCK"
CHECKPOINT_VERSION = 1

_INIT_STREAM = 0
_SHUFFLE_STREAM = 1


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files (magic, version, or length)."""


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture: input dim, trunk widths, class count, expert count, seed."""

    input_dim: int
    hidden_sizes: tuple[int, ...]
    num_classes: int
    num_experts: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if len(self.hidden_sizes) < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be a non-empty tuple of positive ints")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.num_experts < 1:
            raise ValueError("num_experts must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings plus the loss and fusion sub-configs."""

    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 0.02
    momentum: float = 0.9
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError("epochs must be a non-negative integer")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0.0:
            raise ValueError("learning_rate must be non-negative")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class EpochStats:
    """Per-epoch training summary."""

    epoch: int
    mean_loss: float
    mean_engaged: float
    kl_factor: float


class ExpertEnsemble:
    """Shared trunk plus M evidence heads; parameters held as float64 arrays."""

    def __init__(self, config: NetworkConfig, trunk_weights, trunk_biases,
                 head_weights, head_biases):
        self.config = config
        self.trunk_weights = trunk_weights
        self.trunk_biases = trunk_biases
        self.head_weights = head_weights
        self.head_biases = head_biases

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in checkpoint order (trunk pairs, head pairs)."""
        params: list[np.ndarray] = []
        for w, b in zip(self.trunk_weights, self.trunk_biases):
            params.extend((w, b))
        for v, c in zip(self.head_weights, self.head_biases):
            params.extend((v, c))
        return params

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


# Bias init for the bump trunk.  First-layer biases are spread wide so the
# units' response bands tile the input range (roughly unit-to-ten feature
# scales); deeper-layer biases start negative so those units act as mostly
# closed coincidence detectors that open where earlier features co-activate.
_FIRST_BIAS_SPREAD = 4.0
_DEEP_BIAS_RANGE = (-3.0, -1.0)
_DEEP_WEIGHT_GAIN = 2.0


def init_ensemble(config: NetworkConfig) -> ExpertEnsemble:
    """Deterministic init: fan-in-scaled uniform weights, layered bias rules."""
    rng = np.random.default_rng([config.seed, _INIT_STREAM])
    sizes = (config.input_dim, *config.hidden_sizes)
    trunk_w, trunk_b = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        if layer == 0:
            trunk_w.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            trunk_b.append(rng.uniform(-_FIRST_BIAS_SPREAD, _FIRST_BIAS_SPREAD, fan_out))
        else:
            gain = _DEEP_WEIGHT_GAIN * bound
            trunk_w.append(rng.uniform(-gain, gain, size=(fan_in, fan_out)))
            trunk_b.append(rng.uniform(*_DEEP_BIAS_RANGE, fan_out))
    head_w, head_b = [], []
    bound = 1.0 / np.sqrt(sizes[-1])
    for _ in range(config.num_experts):
        head_w.append(rng.uniform(-bound, bound, size=(sizes[-1], config.num_classes)))
        head_b.append(np.zeros(config.num_classes))
    return ExpertEnsemble(config, trunk_w, trunk_b, head_w, head_b)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _bump(z: np.ndarray) -> np.ndarray:
    return np.exp(-(z * z))


def _forward_cache(model: ExpertEnsemble, x: np.ndarray):
    activations = [x]
    preactivations = []
    hidden = x
    for w, b in zip(model.trunk_weights, model.trunk_biases):
        z = hidden @ w + b
        hidden = _bump(z)
        preactivations.append(z)
        activations.append(hidden)
    pre = np.stack(
        [hidden @ v + c for v, c in zip(model.head_weights, model.head_biases)],
        axis=1,
    )
    return _softplus(pre), activations, preactivations, pre


def forward(model: ExpertEnsemble, x) -> np.ndarray:
    """Evidence for one sample (M, K) or a batch (B, M, K); always >= 0."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    batch = check_features(arr, dim=model.config.input_dim, name="input")
    evidence, _, _, _ = _forward_cache(model, batch)
    return evidence[0] if single else evidence


def gate_mask(prefix_weights: np.ndarray, gate_threshold: float) -> np.ndarray:
    """Boolean engagement mask (N, M): expert 0 always, others where w > tau."""
    mask = prefix_weights > gate_threshold
    mask[:, 0] = True
    return mask


def batch_loss_and_grads(model: ExpertEnsemble, x: np.ndarray, y_onehot: np.ndarray,
                         loss_cfg: LossConfig):
    """Joint loss over a batch with exact parameter gradients.

    The loss is the plain sum over samples (no 1/N); callers scale for the
    optimization step.  Returns (loss, grads aligned with model.parameters(),
    engagement mask).  Numeric warnings are silenced: a diverging model turns
    into a non-finite loss, which train_epoch reports as DivergenceError.
    """
    with np.errstate(all="ignore"):
        return _loss_and_grads_impl(model, x, y_onehot, loss_cfg)


def _loss_and_grads_impl(model, x, y_onehot, loss_cfg):
    evidence, activations, preactivations, pre = _forward_cache(model, x)
    _, prefix, _ = batched_fusion_trace(evidence)
    mask = gate_mask(prefix, loss_cfg.gate_threshold)

    schedule = loss_cfg.effective_anneal()
    single_vals, single_grads = batched_single_terms(evidence, y_onehot, schedule)
    div_vals, div_grads = batched_diversity_terms(evidence)

    loss = float((single_vals * mask).sum() + loss_cfg.diversity_weight * div_vals.sum())

    d_evidence = single_grads * mask[:, :, None] + loss_cfg.diversity_weight * div_grads
    d_pre = d_evidence * _sigmoid(pre)

    last_hidden = activations[-1]
    d_hidden = np.zeros_like(last_hidden)
    head_grads: list[np.ndarray] = []
    for m, v in enumerate(model.head_weights):
        dz = d_pre[:, m, :]
        head_grads.extend((last_hidden.T @ dz, dz.sum(axis=0)))
        d_hidden += dz @ v.T

    trunk_grads: list[np.ndarray] = []
    upstream = d_hidden
    for layer in range(len(model.trunk_weights) - 1, -1, -1):
        act = activations[layer + 1]
        d_act_pre = upstream * (-2.0 * preactivations[layer] * act)
        trunk_grads.append(d_act_pre.sum(axis=0))
        trunk_grads.append(activations[layer].T @ d_act_pre)
        upstream = d_act_pre @ model.trunk_weights[layer].T
    trunk_grads.reverse()

    grads = trunk_grads + head_grads
    return loss, grads, mask


def train_epoch(model: ExpertEnsemble, features, labels, cfg: TrainConfig, *,
                epoch: int, velocity: list[np.ndarray] | None = None) -> EpochStats:
    """One pass of shuffled mini-batch SGD with momentum; mutates the model.

    The shuffle order is a pure function of (cfg.seed, epoch).  A velocity
    list (matching model.parameters()) carries momentum across epochs; pass
    the same list to successive calls.  Raises DivergenceError on a
    non-finite loss.
    """
    x = check_features(features, dim=model.config.input_dim)
    y = check_labels(labels, num_classes=model.config.num_classes)
    if x.shape[0] != y.shape[0]:
        raise ValueError("features and labels length mismatch")
    if x.shape[0] == 0:
        raise ValueError("dataset is empty")
    y_onehot = np.eye(model.config.num_classes)[y]

    params = model.parameters()
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]

    loss_cfg = _loss_config_at_epoch(cfg.loss, epoch)
    rng = np.random.default_rng([cfg.seed, _SHUFFLE_STREAM, epoch])
    order = rng.permutation(x.shape[0])

    total_loss = 0.0
    total_engaged = 0.0
    for start in range(0, x.shape[0], cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        loss, grads, mask = batch_loss_and_grads(model, x[idx], y_onehot[idx], loss_cfg)
        if not np.isfinite(loss):
            raise DivergenceError(
                f"non-finite loss at epoch {epoch}, batch starting {start}"
            )
        total_loss += loss
        total_engaged += float(mask.sum())
        scale = cfg.learning_rate / idx.shape[0]
        for p, g, v in zip(params, grads, velocity):
            v *= cfg.momentum
            v -= scale * g
            p += v
    return EpochStats(
        epoch=epoch,
        mean_loss=total_loss / x.shape[0],
        mean_engaged=total_engaged / x.shape[0],
        kl_factor=loss_cfg.effective_anneal().kl_factor,
    )


def train_model(model: ExpertEnsemble, features, labels, cfg: TrainConfig,
                on_epoch=None) -> list[EpochStats]:
    """Full training run; returns the per-epoch stats in order."""
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        stats = train_epoch(model, features, labels, cfg, epoch=epoch, velocity=velocity)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return history


def _loss_config_at_epoch(loss_cfg: LossConfig, epoch: int) -> LossConfig:
    return LossConfig(
        gate_threshold=loss_cfg.gate_threshold,
        diversity_weight=loss_cfg.diversity_weight,
        anneal=loss_cfg.anneal.at(epoch),
        kl_enabled=loss_cfg.kl_enabled,
    )


def engaged_experts(model: ExpertEnsemble, x, gate_threshold: float):
    """Number of engaged experts per sample, always at least 1."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    batch = check_features(arr, dim=model.config.input_dim, name="input")
    evidence, _, _, _ = _forward_cache(model, batch)
    _, prefix, _ = batched_fusion_trace(evidence)
    counts = gate_mask(prefix, gate_threshold).sum(axis=1)
    return int(counts[0]) if single else counts


def save_checkpoint(model: ExpertEnsemble, path, *, configs: dict | None = None,
                    epoch: int = 0) -> None:
    """Write the binary checkpoint; see the format notes in the README.

    Layout: magic "TLCK", version u16 LE, u32 input dim, u32 hidden-layer
    count then each hidden size, u32 class count, u32 expert count, all
    parameters as little-endian float64 in parameters() order, then a
    u32-length-prefixed UTF-8 JSON blob with the seed, epoch, and configs.
    """
    cfg = model.config
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<H", CHECKPOINT_VERSION)
    buf += struct.pack("<I", cfg.input_dim)
    buf += struct.pack("<I", len(cfg.hidden_sizes))
    for h in cfg.hidden_sizes:
        buf += struct.pack("<I", h)
    buf += struct.pack("<I", cfg.num_classes)
    buf += struct.pack("<I", cfg.num_experts)
    for p in model.parameters():
        buf += np.ascontiguousarray(p, dtype="<f8").tobytes()
    meta = {"model_seed": cfg.seed, "epoch": int(epoch), "configs": configs or {}}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf += struct.pack("<I", len(blob))
    buf += blob
    _atomic_write_bytes(path, bytes(buf))


def load_checkpoint(path) -> tuple[ExpertEnsemble, dict]:
    """Read a checkpoint; returns (model, metadata dict)."""
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    offset = 0

    def take(n, what):
        nonlocal offset
        if offset + n > len(data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    if bytes(take(4, "magic")) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (input_dim,) = struct.unpack("<I", take(4, "input dim"))
    (n_hidden,) = struct.unpack("<I", take(4, "hidden count"))
    hidden = tuple(
        struct.unpack("<I", take(4, f"hidden size {i}"))[0] for i in range(n_hidden)
    )
    (num_classes,) = struct.unpack("<I", take(4, "class count"))
    (num_experts,) = struct.unpack("<I", take(4, "expert count"))

    shapes: list[tuple[int, ...]] = []
    sizes = (input_dim, *hidden)
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes.extend(((fan_in, fan_out), (fan_out,)))
    for _ in range(num_experts):
        shapes.extend(((sizes[-1], num_classes), (num_classes,)))

    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        raw = take(8 * count, f"parameter block {shape}")
        arrays.append(np.frombuffer(raw, dtype="<f8").astype(float).reshape(shape))

    (blob_len,) = struct.unpack("<I", take(4, "metadata length"))
    blob = bytes(take(blob_len, "metadata"))
    if offset != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    try:
        meta = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata blob: {exc}") from exc

    config = NetworkConfig(
        input_dim=input_dim,
        hidden_sizes=hidden,
        num_classes=num_classes,
        num_experts=num_experts,
        seed=int(meta.get("model_seed", 0)),
    )
    n_trunk = len(hidden)
    trunk_w = [arrays[2 * i] for i in range(n_trunk)]
    trunk_b = [arrays[2 * i + 1] for i in range(n_trunk)]
    head_w = [arrays[2 * n_trunk + 2 * m] for m in range(num_experts)]
    head_b = [arrays[2 * n_trunk + 2 * m + 1] for m in range(num_experts)]
    return ExpertEnsemble(config, trunk_w, trunk_b, head_w, head_b), meta


def _atomic_write_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
