"""Time-distributed depthwise-separable CNN + bidirectional LSTM classifier.

Every frame of a (T, H, W, 3) sequence goes through the same backbone
(standard 3x3 stem, then depthwise 3x3 + pointwise 1x1 blocks, each followed
by batch norm and ReLU, then global average pooling). The T per-frame
feature vectors feed a bidirectional LSTM; the two final hidden states are
concatenated, passed through dropout and a 2-unit softmax head. Class 1 is
"spoof".
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .tensorcore import Tensor, ops
from .tensorcore.optim import AdamState, adam_step

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SEQPADCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class BackboneConfig:
    input_size: int = 56
    stem_channels: int = 8
    stem_stride: int = 2
    block_channels: List[int] = field(default_factory=lambda: [16, 32, 32, 64])
    block_strides: List[int] = field(default_factory=lambda: [1, 2, 1, 2])
    width_multiplier: float = 1.0

    def __post_init__(self):
        if len(self.block_channels) != len(self.block_strides):
            raise ValueError("block_channels and block_strides differ in length")
        if self.input_size <= 0 or self.width_multiplier <= 0:
            raise ValueError("input_size and width_multiplier must be positive")

    def scaled(self, c: int) -> int:
        return max(1, int(round(c * self.width_multiplier)))

    @property
    def feature_dim(self) -> int:
        return self.scaled(self.block_channels[-1]) if self.block_channels else self.scaled(self.stem_channels)


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    lstm_units: int = 32
    lstm_dropout: float = 0.25
    classes: int = 2
    seq_len: int = 10
    bidirectional: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if self.classes != 2:
            raise ValueError("the classifier head is binary (live vs spoof)")
        if self.lstm_units <= 0 or self.seq_len < 1:
            raise ValueError("lstm_units and seq_len must be positive")
        if not 0.0 <= self.lstm_dropout < 1.0:
            raise ValueError("lstm_dropout must lie in [0, 1)")

    @property
    def recurrent_dim(self) -> int:
        return self.lstm_units * (2 if self.bidirectional else 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def desk_preset(seq_len: int = 10) -> ModelConfig:
    return ModelConfig(BackboneConfig(), lstm_units=32, seq_len=seq_len)


def full_preset(seq_len: int = 10) -> ModelConfig:
    """MobileNet-v1 layout at 224 px input with a 1024-d bottleneck and 256 LSTM units."""
    backbone = BackboneConfig(
        input_size=224, stem_channels=32, stem_stride=2,
        block_channels=[64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024],
        block_strides=[1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1])
    return ModelConfig(backbone, lstm_units=256, lstm_dropout=0.25, seq_len=seq_len)


def tiny_preset(seq_len: int = 3) -> ModelConfig:
    backbone = BackboneConfig(input_size=8, stem_channels=3, stem_stride=1,
                              block_channels=[4, 5], block_strides=[2, 1])
    return ModelConfig(backbone, lstm_units=3, seq_len=seq_len)


PRESETS = {"desk": desk_preset, "full": full_preset, "tiny": tiny_preset}


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 4
    max_epochs: int = 80
    patience: int = 20
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch_size and lr must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


class Model:
    """Parameters plus BN running statistics for one :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.history: List[dict] = []
        self.meta: dict = {}  # free-form provenance saved with checkpoints
        rng = np.random.default_rng(seed)
        bb = config.backbone
        c = bb.scaled(bb.stem_channels)
        self._param("stem.w", rng.normal(0, math.sqrt(2.0 / 27), (3, 3, 3, c)))
        self._bn("stem.bn", c)
        for i, out in enumerate(bb.block_channels):
            out = bb.scaled(out)
            self._param(f"block{i}.dw", rng.normal(0, math.sqrt(2.0 / 9), (3, 3, c)))
            self._bn(f"block{i}.dw_bn", c)
            self._param(f"block{i}.pw", rng.normal(0, math.sqrt(2.0 / c), (c, out)))
            self._bn(f"block{i}.pw_bn", out)
            c = out
        d, u = bb.feature_dim, config.lstm_units
        directions = ("fwd", "bwd") if config.bidirectional else ("fwd",)
        for name in directions:
            self._param(f"lstm.{name}.w_x", rng.uniform(-1, 1, (d, 4 * u)) / math.sqrt(d))
            self._param(f"lstm.{name}.w_h", rng.uniform(-1, 1, (u, 4 * u)) / math.sqrt(u))
            b = np.zeros(4 * u)
            b[u:2 * u] = 1.0  # forget gate
            self._param(f"lstm.{name}.b", b)
        r = config.recurrent_dim
        self._param("head.w", rng.normal(0, math.sqrt(2.0 / r), (r, config.classes)))
        self._param("head.b", np.zeros(config.classes))

    def _param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)

    def _bn(self, name: str, channels: int) -> None:
        self._param(f"{name}.gamma", np.ones(channels))
        self._param(f"{name}.beta", np.zeros(channels))
        self.buffers[f"{name}.running_mean"] = np.zeros(channels, dtype=self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(channels, dtype=self.dtype)

    # -- forward ---------------------------------------------------------------
    def _batch_norm(self, x: Tensor, name: str, training: bool) -> Tensor:
        return ops.batch_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                              self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"],
                              training)

    def backbone(self, images, training: bool = False) -> Tensor:
        """(N, H, W, 3) -> (N, D)."""
        p, bb = self.params, self.config.backbone
        x = ops.conv2d(images, p["stem.w"], stride=bb.stem_stride)
        x = ops.relu(self._batch_norm(x, "stem.bn", training))
        for i, stride in enumerate(bb.block_strides):
            x = ops.depthwise_conv2d(x, p[f"block{i}.dw"], stride=stride)
            x = ops.relu(self._batch_norm(x, f"block{i}.dw_bn", training))
            x = ops.pointwise_conv2d(x, p[f"block{i}.pw"])
            x = ops.relu(self._batch_norm(x, f"block{i}.pw_bn", training))
        return ops.avg_pool_global(x)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self.dtype)
        if x.ndim == 4:
            x = x[None]
        cfg = self.config
        s = cfg.backbone.input_size
        if x.ndim != 5 or x.shape[1:] != (cfg.seq_len, s, s, 3):
            raise ValueError(f"input shape {x.shape[1:] if x.ndim == 5 else x.shape} does not match "
                             f"model input {(cfg.seq_len, s, s, 3)}")
        return x

    def features(self, x, training: bool = False) -> Tensor:
        """Per-frame backbone features, shape (N, T, D)."""
        x = self._check_input(x)
        n, t = x.shape[:2]
        flat = x.reshape((n * t,) + x.shape[2:])
        f = self.backbone(Tensor(flat), training)
        return ops.reshape(f, (n, t, f.shape[-1]))

    def recurrent(self, feats: Tensor) -> Tensor:
        p = self.params
        fwd = (p["lstm.fwd.w_x"], p["lstm.fwd.w_h"], p["lstm.fwd.b"])
        if self.config.bidirectional:
            bwd = (p["lstm.bwd.w_x"], p["lstm.bwd.w_h"], p["lstm.bwd.b"])
            return ops.bidirectional_wrap(feats, fwd, bwd)
        return ops.lstm(feats, *fwd)

    def logits(self, x, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        h = self.recurrent(self.features(x, training))
        h = ops.dropout(h, self.config.lstm_dropout, training, rng)
        return ops.dense(h, self.params["head.w"], self.params["head.b"])

    def forward(self, x, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        return ops.softmax(self.logits(x, training, rng), axis=-1)

    def predict_proba(self, x, batch_size: int = 8) -> np.ndarray:
        """Class probabilities (N, 2) in eval mode."""
        x = self._check_input(x)
        out = [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, 2))

    def zero_head(self) -> None:
        self.params["head.w"].data[...] = 0.0
        self.params["head.b"].data[...] = 0.0

    # -- state -----------------------------------------------------------------
    def state(self) -> Dict[str, np.ndarray]:
        st = {name: t.data for name, t in self.params.items()}
        st.update(self.buffers)
        return st

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state().items()}

    def restore(self, snap: Dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            t.data[...] = snap[name]
        for name, b in self.buffers.items():
            b[...] = snap[name]

    def backbone_param_count(self) -> int:
        return sum(t.size for n, t in self.params.items() if n.startswith(("stem.", "block")))

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())


def build(config: ModelConfig, seed: int = 0) -> Model:
    return Model(config, seed)


def predict(model: Model, x) -> float:
    """Spoof probability of one (T, H, W, 3) input."""
    return float(model.predict_proba(x)[0, 1])


# -- training ------------------------------------------------------------------

def split_validation(labels: np.ndarray, groups: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Boolean validation mask holding out whole groups, drawn per class."""
    mask = np.zeros(len(labels), dtype=bool)
    if fraction <= 0:
        return mask
    rng = np.random.default_rng(seed)
    for cls in (0, 1):
        cls_groups = sorted({g for g, l in zip(groups, labels) if l == cls})
        if len(cls_groups) < 2:
            continue
        n_val = min(len(cls_groups) - 1, max(1, int(round(fraction * len(cls_groups)))))
        chosen = set(rng.permutation(np.array(cls_groups, dtype=object))[:n_val].tolist())
        mask |= np.array([g in chosen for g in groups])
    return mask


def _evaluate(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int):
    probs = model.predict_proba(x, batch_size=max(batch_size, 8))
    p = np.clip(probs[np.arange(len(y)), y], 1e-300, None)
    return float(-np.log(p).mean()), float((probs.argmax(axis=1) == y).mean())


def train(model: Model, x: np.ndarray, y: Sequence[int], cfg: TrainConfig = TrainConfig(),
          groups: Optional[Sequence] = None) -> List[dict]:
    """Fit with Adam on softmax cross-entropy; early-stop on held-out groups.

    ``groups`` names the subject (or fabrication batch) of each sample so the
    validation split never shares a group with training. Without groups
    every sample is its own group. The best-validation weights are restored
    on return; the per-epoch history is returned and kept on the model.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=int)
    if len(np.unique(y)) < 2:
        raise TrainingError("training data must contain both live and spoof samples")
    groups = np.arange(len(y)) if groups is None else np.asarray(groups, dtype=object)
    val = split_validation(y, groups, cfg.val_fraction, cfg.seed)
    tr_idx = np.nonzero(~val)[0]
    va_idx = np.nonzero(val)[0]
    onehot = np.eye(2)[y]
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    params = model.params
    best_loss, best_snap, wait = math.inf, None, 0
    history = []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(tr_idx)
        losses, correct = [], 0
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            logits = model.logits(x[idx], training=True, rng=rng)
            loss = ops.cross_entropy_logits(logits, onehot[idx])
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            for p in params.values():
                p.grad = None
            loss.backward()
            adam_step(params, state)
            losses.append(float(loss.data) * len(idx))
            correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
        rec = {"epoch": epoch, "train_loss": sum(losses) / len(order), "train_acc": correct / len(order)}
        if len(va_idx):
            rec["val_loss"], rec["val_acc"] = _evaluate(model, x[va_idx], y[va_idx], cfg.batch_size)
            monitor = rec["val_loss"]
        else:
            monitor = rec["train_loss"]
        history.append(rec)
        log.info("epoch %d %s", epoch, " ".join(f"{k}={v:.4f}" for k, v in rec.items() if k != "epoch"))
        if monitor < best_loss:
            best_loss, best_snap, wait = monitor, model.snapshot(), 0
        else:
            wait += 1
            if wait >= cfg.patience:
                log.info("early stop after epoch %d", epoch)
                break
    if best_snap is not None:
        model.restore(best_snap)
    model.history = history
    return history


# -- checkpoints ---------------------------------------------------------------

def save(model: Model, path) -> None:
    """Versioned header, JSON table of tensors, then little-endian raw values."""
    table, blobs, offset = [], [], 0
    for name, arr in model.state().items():
        dt = arr.dtype.newbyteorder("<")
        data = np.ascontiguousarray(arr, dtype=dt).tobytes()
        table.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset,
                      "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"config": model.config.to_dict(), "history": model.history, "meta": model.meta,
                         "tensors": table},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load(path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    if len(raw) < pos + 12:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", raw, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    pos += 12
    try:
        header = json.loads(raw[pos:pos + hlen])
    except ValueError:
        raise CheckpointError(f"{path}: corrupt header") from None
    pos += hlen
    model = Model(ModelConfig.from_dict(header["config"]))
    state = model.state()
    names = [t["name"] for t in header["tensors"]]
    if sorted(names) != sorted(state) or len(set(names)) != len(names):
        raise CheckpointError(f"{path}: tensor table does not match the model layout")
    for entry in header["tensors"]:
        start = pos + entry["offset"]
        chunk = raw[start:start + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(chunk, dtype=entry["dtype"]).reshape(entry["shape"])
        state[entry["name"]][...] = arr
    model.history = header.get("history", [])
    model.meta = header.get("meta", {})
    return model
