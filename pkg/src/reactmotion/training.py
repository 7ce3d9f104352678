"""Dataset assembly, clip-level split, training loop and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import (
    BadMagicError,
    ChecksumError,
    ConfigError,
    DivergenceError,
    SplitError,
    TruncatedFileError,
    ValidationError,
    VersionMismatchError,
)
from .models import Arch, ModelConfig, MotionModel, build_model
from .nn import OptimizerConfig, clip_gradients, make_optimizer, mse_loss, optimizer_step
from .preprocess import TrainingSample, build_samples, stack_samples
from .skeleton import PairedClip

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RMXC"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")  # magic, version, header length


@dataclass(frozen=True)
class TrainRunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 50
    seed: int = 0
    split_fraction: float = 0.1
    shuffle: bool = True
    max_steps: int | None = None
    grad_clip: float | None = None
    stride: int = 1

    def __post_init__(self):
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie strictly between 0 and 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["optimizer"]["betas"] = list(self.optimizer.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRunConfig":
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d["model"])
        opt = dict(d["optimizer"])
        opt["betas"] = tuple(opt.get("betas", (0.9, 0.999)))
        d["optimizer"] = OptimizerConfig(**opt)
        return cls(**d)


def split_dataset(pairs: Sequence[PairedClip], fraction: float = 0.1, seed: int = 0):
    """Hold out whole clips: returns (train, test), both in original order."""
    n = len(pairs)
    if n < 2:
        raise SplitError(f"need at least 2 clips to split, got {n}")
    if not 0 < fraction < 1:
        raise SplitError("fraction must lie strictly between 0 and 1")
    n_test = min(max(1, round(n * fraction)), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [p for i, p in enumerate(pairs) if i not in test_idx]
    test = [p for i, p in enumerate(pairs) if i in test_idx]
    return train, test


class SampleSet:
    """Stacked float32 tensors for every training window."""

    def __init__(self, samples: Sequence[TrainingSample]):
        if not samples:
            raise ValidationError("no training samples (clips shorter than 31 frames?)")
        arrays = stack_samples(samples)
        self.x_ctx = torch.from_numpy(arrays["x_ctx"])
        self.y_ctx = torch.from_numpy(arrays["y_ctx"])
        self.past = torch.from_numpy(arrays["past"])
        self.target = torch.from_numpy(arrays["target"])

    @classmethod
    def from_pairs(cls, pairs: Sequence[PairedClip], ctx_len=30, past_len=10, stride=1) -> "SampleSet":
        samples = [s for p in pairs for s in build_samples(p, ctx_len, past_len, stride)]
        return cls(samples)

    def __len__(self) -> int:
        return self.target.shape[0]

    def batch(self, idx: torch.Tensor):
        return self.x_ctx[idx], self.y_ctx[idx], self.past[idx], self.target[idx]


@dataclass
class TrainResult:
    model: MotionModel
    history: list[tuple[int, int, float]]
    checkpoint: Path | None = None

    @property
    def losses(self) -> list[float]:
        return [h[2] for h in self.history]


def _as_sample_set(dataset, cfg: TrainRunConfig) -> SampleSet:
    if isinstance(dataset, SampleSet):
        return dataset
    items = list(dataset)
    if items and isinstance(items[0], PairedClip):
        return SampleSet.from_pairs(items, cfg.model.ctx_len, cfg.model.past_len, cfg.stride)
    return SampleSet(items)


def train(
    config: TrainRunConfig,
    dataset,
    out_path: str | Path | None = None,
    model: MotionModel | None = None,
) -> TrainResult:
    """Minibatch MSE training on the counterpart's next frame.

    ``dataset`` is a list of PairedClip, a list of TrainingSample or a
    SampleSet. Every per-batch loss is recorded as (step, epoch, loss).
    A non-finite loss raises DivergenceError carrying the batch index.
    """
    data = _as_sample_set(dataset, config)
    if model is None:
        model = build_model(config.model, seed=config.seed)
    elif model.cfg != config.model:
        raise ConfigError("model does not match the run configuration")
    opt = make_optimizer(model.parameters(), config.optimizer)
    bs = config.optimizer.batch_size
    n = len(data)
    history: list[tuple[int, int, float]] = []
    if config.grad_clip is not None:
        log.info("gradient clipping at norm %g", config.grad_clip)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        gen = torch.Generator().manual_seed(config.seed)
        model.train()
        step = 0
        for epoch in range(config.epochs):
            order = torch.randperm(n, generator=gen) if config.shuffle else torch.arange(n)
            for start in range(0, n, bs):
                if config.max_steps is not None and step >= config.max_steps:
                    break
                x, y, past, target = data.batch(order[start : start + bs])
                pred = model(x, y, past)
                loss = mse_loss(pred, target)
                value = float(loss.detach())
                if not np.isfinite(value):
                    raise DivergenceError(f"non-finite loss at batch {step}", index=step)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                if config.grad_clip is not None:
                    clip_gradients(model.parameters(), config.grad_clip)
                try:
                    optimizer_step(opt)
                except DivergenceError as exc:
                    raise DivergenceError(f"non-finite gradient at batch {step}", index=step) from exc
                history.append((step, epoch, value))
                step += 1
            if config.max_steps is not None and step >= config.max_steps:
                break
            if history:
                log.debug("epoch %d loss %.6g", epoch, history[-1][2])
    model.eval()

    path = None
    if out_path is not None:
        path = Path(out_path)
        save_checkpoint(model, path, seed=config.seed, extra={"run": config.to_dict()})
    return TrainResult(model, history, path)


@torch.no_grad()
def evaluate_loss(model: MotionModel, dataset, batch_size: int = 256) -> float:
    data = dataset if isinstance(dataset, SampleSet) else _as_sample_set(dataset, TrainRunConfig(model=model.cfg))
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(data), batch_size):
        idx = torch.arange(start, min(start + batch_size, len(data)))
        x, y, past, target = data.batch(idx)
        pred = model(x, y, past)
        diff = pred.double() - target.double()
        total += float((diff * diff).sum())
        count += diff.numel()
    model.train(was_training)
    return total / count


def write_loss_csv(history, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "loss"])
        for step, epoch, loss in history:
            w.writerow([step, epoch, repr(float(loss))])


# -- checkpoints -------------------------------------------------------------
#
# layout: "RMXC" | u16 version | u32 header_len | header JSON | payload | u32 crc32
# The header lists each tensor's name, shape, byte offset and size; the payload
# is the concatenation of little-endian float32 tensors. The CRC covers every
# byte before it.


@dataclass
class CheckpointData:
    config: ModelConfig
    seed: int | None
    state: dict[str, torch.Tensor]
    extra: dict


def save_checkpoint(model: MotionModel, path: str | Path, seed: int | None = None, extra: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        raw = tensor.detach().cpu().contiguous().numpy().astype("<f4").tobytes()
        entries.append({"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {
            "format": "reactmotion-checkpoint",
            "config": model.cfg.to_dict(),
            "seed": seed,
            "tensors": entries,
            "payload_bytes": offset,
            "extra": extra or {},
        },
        sort_keys=True,
    ).encode()
    body = _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)) + header + b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_checkpoint(path: str | Path) -> CheckpointData:
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size + 4:
        raise TruncatedFileError(f"{path}: file too short for a checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    hstart = _PREFIX.size
    if len(blob) < hstart + header_len + 4:
        raise TruncatedFileError(f"{path}: truncated header")
    try:
        header = json.loads(blob[hstart : hstart + header_len])
        payload_bytes = int(header["payload_bytes"])
    except (ValueError, KeyError, TypeError) as exc:
        if zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
            raise ChecksumError(f"{path}: checksum mismatch") from exc
        raise TruncatedFileError(f"{path}: unreadable header") from exc
    pstart = hstart + header_len
    if len(blob) != pstart + payload_bytes + 4:
        raise TruncatedFileError(f"{path}: expected {pstart + payload_bytes + 4} bytes, found {len(blob)}")
    if zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise ChecksumError(f"{path}: checksum mismatch")
    payload = blob[pstart:-4]
    state = {}
    for e in header["tensors"]:
        arr = np.frombuffer(payload, dtype="<f4", count=e["nbytes"] // 4, offset=e["offset"])
        state[e["name"]] = torch.from_numpy(arr.astype(np.float32).reshape(e["shape"]))
    return CheckpointData(ModelConfig.from_dict(header["config"]), header["seed"], state, header.get("extra", {}))


def load_checkpoint(path: str | Path, expect_arch: Arch | str | None = None) -> MotionModel:
    """Rebuild the model stored at ``path`` in evaluation mode."""
    data = read_checkpoint(path)
    if expect_arch is not None and Arch(expect_arch) is not data.config.arch:
        raise ConfigError(f"checkpoint holds a {data.config.arch.value} model, expected {Arch(expect_arch).value}")
    model = build_model(data.config, seed=0)
    model.load_state_dict(data.state)
    model.checkpoint_seed = data.seed
    return model.eval()
