"""
Per-pixel cross-entropy training with poly-decayed momentum SGD, plus checkpoints.

Checkpoint layout: one line of UTF-8 JSON (the header), a newline, then a
raw little-endian float32 blob. The header's ``blob_offset`` is the byte
offset of the blob; ``tensors`` lists every parameter and buffer with its
shape and element offset into the blob.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .data import AugmentPolicy, DatasetManifest, augment, load_sample, resize_to_training, shuffle_epoch
from .errors import CheckpointError, ConfigError, DimensionError, NumericError, UsageError
from .model import NetworkConfig, ReDNet
from .taxonomy import IGNORE_INDEX
from .tensor import Function, Tensor

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rednet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    base_lr: float = 0.0001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    poly_power: float = 0.9
    max_iter: int = 2000
    batch_size: int = 1
    seed: int = 0
    train_side: int = 64
    save_interval: int = 0  # 0 -> only at the end
    decay_scope: str = "kernels"  # or "all"
    freeze_alpha: bool = False

    def validate(self) -> None:
        for name in ("base_lr", "poly_power"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"train.{name} must be positive, got {getattr(self, name)}")
        for name in ("momentum", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be non-negative, got {getattr(self, name)}")
        if self.max_iter < 1:
            raise ConfigError(f"train.max_iter must be >= 1, got {self.max_iter}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.train_side < 1:
            raise ConfigError(f"train.train_side must be >= 1, got {self.train_side}")
        if self.decay_scope not in ("kernels", "all"):
            raise ConfigError(f"train.decay_scope must be 'kernels' or 'all', got {self.decay_scope!r}")


class TrainingAborted(NumericError):
    def __init__(self, message: str, last_checkpoint: Optional[str]):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


# ---------------------------------------------------------------------------
# schedule, loss, optimiser
# ---------------------------------------------------------------------------


def poly_lr(iteration: int, cfg: TrainConfig) -> float:
    if iteration < 0 or iteration > cfg.max_iter:
        raise UsageError(f"iteration {iteration} outside 0..{cfg.max_iter}")
    return cfg.base_lr * (1.0 - iteration / cfg.max_iter) ** cfg.poly_power


class CrossEntropy(Function):
    """Mean negative log-likelihood over pixels whose label is not ``ignore_index``."""

    def forward(self, logits, target=None, ignore_index=IGNORE_INDEX):
        if logits.ndim != 4 or target.shape != (logits.shape[0],) + logits.shape[2:]:
            raise DimensionError(f"cross entropy: logits {logits.shape} vs labels {target.shape}")
        valid = target != ignore_index
        n_valid = int(valid.sum())
        if n_valid == 0:
            raise NumericError("cross entropy undefined: every pixel is ignored")
        k = logits.shape[1]
        if target.max() >= k or target.min() < 0:
            raise DimensionError(f"cross entropy: labels outside 0..{k - 1}")
        shifted = logits - logits.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        denom = ex.sum(axis=1, keepdims=True)
        log_prob = shifted - np.log(denom)
        idx = target.astype(np.int64)[:, None]
        nll = -np.take_along_axis(log_prob, idx, axis=1)[:, 0]
        self.prob = ex / denom
        self.idx, self.valid, self.n_valid = idx, valid, n_valid
        return np.asarray(nll[valid].sum() / n_valid, dtype=logits.dtype)

    def backward(self, grad):
        g = self.prob.copy()
        np.put_along_axis(g, self.idx, np.take_along_axis(g, self.idx, axis=1) - 1, axis=1)
        g *= self.valid[:, None]
        return (g * (grad / self.n_valid),)


def cross_entropy_loss(logits: Tensor, mask: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Tensor:
    return CrossEntropy.apply(logits, target=np.asarray(mask), ignore_index=ignore_index)


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float, cfg: TrainConfig, decay: Optional[dict] = None):
    """Classical momentum SGD with L2 decay folded into the gradient.

    ``v <- momentum * v + (grad + wd * p)``, ``p <- p - lr * v``.
    ``decay`` maps name -> bool (default: decay every entry). Returns new dicts.
    """
    new_p, new_v = {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise DimensionError(f"sgd: gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        if v.shape != p.shape:
            raise DimensionError(f"sgd: velocity shape {v.shape} != parameter shape {p.shape} for {name}")
        wd = cfg.weight_decay if (decay is None or decay.get(name, True)) else 0.0
        dt = p.dtype
        v = (dt.type(cfg.momentum) * v + (g + dt.type(wd) * p)).astype(dt, copy=False)
        new_v[name] = v
        new_p[name] = (p - dt.type(lr) * v).astype(dt, copy=False)
    return new_p, new_v


def decay_mask(model: ReDNet, cfg: TrainConfig) -> dict:
    if cfg.decay_scope == "all":
        return {name: True for name, _ in model.named_parameters()}
    return {name: p.ndim == 4 for name, p in model.named_parameters()}


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def config_hash(net: NetworkConfig) -> str:
    return hashlib.sha256(json.dumps(net.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    network: NetworkConfig
    iteration: int
    tensors: dict  # name -> float32 array, parameters then buffers
    kinds: dict  # name -> "parameter" | "buffer"
    train: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.network)


def checkpoint_from_model(model: ReDNet, iteration: int, train_cfg: Optional[TrainConfig] = None) -> Checkpoint:
    tensors, kinds = {}, {}
    for name, p in model.named_parameters():
        tensors[name] = p.data.astype("<f4")
        kinds[name] = "parameter"
    for name, b in model.named_buffers():
        tensors[name] = np.asarray(b).astype("<f4")
        kinds[name] = "buffer"
    return Checkpoint(model.cfg, iteration, tensors, kinds, asdict(train_cfg) if train_cfg else {})


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    table, offset = [], 0
    for name, arr in ckpt.tensors.items():
        table.append({"name": name, "kind": ckpt.kinds[name], "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += int(arr.size)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "iteration": ckpt.iteration,
        "config_hash": ckpt.config_hash,
        "network": ckpt.network.to_dict(),
        "train": ckpt.train,
        "dtype": "<f4",
        "blob_length": offset * 4,
        "tensors": table,
        "blob_offset": 0,
    }
    # blob_offset is part of the header, so iterate until its digit count settles
    while True:
        text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        if header["blob_offset"] == len(text) + 1:
            break
        header["blob_offset"] = len(text) + 1
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in ckpt.tensors.values())
    return text + b"\n" + blob


def decode_checkpoint(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    nl = buf.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{source}: missing header line")
    try:
        header = json.loads(buf[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: unreadable header ({exc})") from exc
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint format/version {header.get('format')!r}/{header.get('version')!r}")
    start = header["blob_offset"]
    blob = buf[start:]
    if start != nl + 1 or len(blob) != header["blob_length"]:
        raise CheckpointError(f"{source}: blob is {len(blob)} bytes, header promises {header['blob_length']}")
    flat = np.frombuffer(blob, dtype="<f4")
    tensors, kinds = {}, {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if count != entry["count"] or entry["offset"] + count > flat.size:
            raise CheckpointError(f"{source}: inconsistent table entry for {entry['name']}")
        tensors[entry["name"]] = flat[entry["offset"] : entry["offset"] + count].reshape(entry["shape"]).copy()
        kinds[entry["name"]] = entry["kind"]
    try:
        network = NetworkConfig.from_dict(header["network"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{source}: bad network record ({exc})") from exc
    ckpt = Checkpoint(network, header["iteration"], tensors, kinds, header.get("train", {}))
    if ckpt.config_hash != header["config_hash"]:
        raise CheckpointError(f"{source}: config hash does not match the stored network record")
    return ckpt


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from exc
    return decode_checkpoint(buf, str(path))


def load_into(model: ReDNet, ckpt: Checkpoint) -> ReDNet:
    if config_hash(model.cfg) != ckpt.config_hash:
        raise CheckpointError("checkpoint was written for a different network configuration")
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = set(params) | set(buffers)
    if set(ckpt.tensors) != expected:
        missing, extra = expected - set(ckpt.tensors), set(ckpt.tensors) - expected
        raise CheckpointError(f"checkpoint tensor inventory mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
    for name, arr in ckpt.tensors.items():
        target = params[name].data if name in params else buffers[name]
        if target.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}: model {target.shape}, checkpoint {arr.shape}")
        if name in params:
            params[name].data = arr.astype(target.dtype)
        else:
            model.set_buffer(name, arr.astype(target.dtype))
    return model


def model_from_checkpoint(ckpt: Checkpoint) -> ReDNet:
    return load_into(ReDNet(ckpt.network), ckpt)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: ReDNet
    log: list  # (iteration, lr, loss)
    checkpoint: Checkpoint


class SampleSource:
    """Epoch-ordered sample stream: shuffle, load (cached), augment, resize."""

    def __init__(self, manifest: DatasetManifest, cfg: TrainConfig, policy: Optional[AugmentPolicy]):
        if len(manifest) == 0:
            raise UsageError("training manifest has no entries")
        self.manifest, self.cfg, self.policy = manifest, cfg, policy
        self.cache: dict = {}
        self.epoch, self.pos = 0, 0
        self.order = shuffle_epoch(len(manifest), cfg.seed, 0)

    def next(self):
        if self.pos == len(self.order):
            self.epoch += 1
            self.pos = 0
            self.order = shuffle_epoch(len(self.manifest), self.cfg.seed, self.epoch)
        idx = int(self.order[self.pos])
        self.pos += 1
        if idx not in self.cache:
            self.cache[idx] = load_sample(*self.manifest.entries[idx])
        s = self.cache[idx]
        if self.policy is not None:
            s = augment(s, (self.cfg.seed, idx, self.epoch), self.policy)
        return resize_to_training(s, self.cfg.train_side)

    def batch(self, n: int):
        samples = [self.next() for _ in range(n)]
        images = np.stack([s.image for s in samples])
        masks = np.stack([s.mask for s in samples])
        return images, masks


def train(
    model: ReDNet,
    manifest: DatasetManifest,
    cfg: TrainConfig,
    policy: Optional[AugmentPolicy] = None,
    checkpoint_path: Optional[str | os.PathLike] = None,
    progress: Optional[callable] = None,
) -> TrainResult:
    cfg.validate()
    model.train()
    source = SampleSource(manifest, cfg, policy)
    params = dict(model.named_parameters())
    frozen = {f"pam{k}.alpha" for k in (2, 3)} if cfg.freeze_alpha else set()
    decay = decay_mask(model, cfg)
    velocity: dict = {}
    log = []
    last_saved = None
    dtype = next(iter(params.values())).dtype
    for it in range(cfg.max_iter):
        lr = poly_lr(it, cfg)
        images, masks = source.batch(cfg.batch_size)
        try:
            model.zero_grad()
            loss = cross_entropy_loss(model(Tensor(images.astype(dtype))), masks)
            loss.backward()
        except NumericError as exc:
            raise TrainingAborted(f"iteration {it}: {exc}", last_saved) from exc
        live = {n: p.data for n, p in params.items() if n not in frozen}
        grads = {n: params[n].grad for n in live}
        vel = {n: velocity[n] for n in live if n in velocity}
        new_p, velocity = sgd_step(live, grads, vel, lr, cfg, decay)
        for n, arr in new_p.items():
            params[n].data = arr
        log.append((it, lr, loss.item()))
        if progress is not None:
            progress(it, lr, loss.item())
        if checkpoint_path and cfg.save_interval and (it + 1) % cfg.save_interval == 0 and it + 1 < cfg.max_iter:
            save_checkpoint(checkpoint_path, checkpoint_from_model(model, it + 1, cfg))
            last_saved = str(checkpoint_path)
    ckpt = checkpoint_from_model(model, cfg.max_iter, cfg)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, ckpt)
    model.eval()
    return TrainResult(model, log, ckpt)


def write_log(path: str | os.PathLike, log: list) -> None:
    lines = ["iter,lr,loss"] + [f"{it},{lr!r},{loss!r}" for it, lr, loss in log]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")
