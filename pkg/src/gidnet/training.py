"""Desk-scale trainer: Charbonnier/L2 losses, Adam, knee LR schedule, patch sampling."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .archive import save_weights
from .autodiff import GradientTape
from .errors import ConfigError, NonFiniteError, ShapeError
from .imaging import (EvalProtocol, ImagePlane, bicubic_resize, crop_to_multiple, image_to_tensor, psnr,
                      tensor_to_image)
from .model import Model, ModelConfig, model_forward

log = logging.getLogger(__name__)


@dataclass
class KneeSchedule:
    warmup_epochs: int = 10
    exploit_epochs: int = 400
    cooldown_epochs: int = 400
    max_lr: float = 5e-4
    floor_lr: float = 1e-6

    def __post_init__(self):
        if min(self.warmup_epochs, self.exploit_epochs, self.cooldown_epochs) < 0 or self.floor_lr < 0:
            raise ConfigError("schedule lengths and floor_lr must be nonnegative")
        if self.max_lr <= self.floor_lr:
            raise ConfigError("max_lr must exceed floor_lr")


def knee_lr(epoch: int, s: KneeSchedule) -> float:
    """Linear warm-up, flat exploit, linear cool-down to the floor, then the floor."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < s.warmup_epochs:
        return s.max_lr * (epoch + 1) / s.warmup_epochs
    e = epoch - s.warmup_epochs
    if e < s.exploit_epochs:
        return s.max_lr
    e -= s.exploit_epochs
    if e < s.cooldown_epochs:
        return s.max_lr + (s.floor_lr - s.max_lr) * e / s.cooldown_epochs
    return s.floor_lr


@dataclass
class TrainConfig:
    batch_size: int = 8
    hr_patch: int = 512
    steps_per_epoch: int = 800
    epochs: int = 2000
    loss: str = "charbonnier"
    charbonnier_eps: float = 0.1
    seed: int = 0
    scale: int = 4

    def __post_init__(self):
        if self.loss not in ("charbonnier", "l2"):
            raise ConfigError(f"loss must be 'charbonnier' or 'l2', got {self.loss!r}")
        if self.hr_patch < self.scale or self.hr_patch % self.scale:
            raise ConfigError(f"hr_patch {self.hr_patch} must be a positive multiple of scale {self.scale}")
        if self.batch_size < 1 or self.steps_per_epoch < 1 or self.epochs < 0:
            raise ConfigError("batch_size and steps_per_epoch must be >= 1, epochs >= 0")
        if self.charbonnier_eps <= 0:
            raise ConfigError("charbonnier_eps must be > 0")


# ----------------------------------------------------------------------------
# Losses


def _check_pair(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"loss: prediction {pred.shape} vs target {target.shape}")


def charbonnier_loss(pred: np.ndarray, target: np.ndarray, eps: float = 0.1) -> float:
    _check_pair(pred, target)
    d = pred.astype(np.float64) - target
    return float(np.mean(np.sqrt(d * d + eps * eps)))


def charbonnier_backward(pred: np.ndarray, target: np.ndarray, eps: float = 0.1) -> np.ndarray:
    _check_pair(pred, target)
    d = pred.astype(np.float64) - target
    return (d / np.sqrt(d * d + eps * eps) / d.size).astype(pred.dtype)


def l2_loss(pred: np.ndarray, target: np.ndarray) -> float:
    _check_pair(pred, target)
    d = pred.astype(np.float64) - target
    return float(np.mean(d * d))


def l2_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    _check_pair(pred, target)
    d = pred.astype(np.float64) - target
    return (2.0 * d / d.size).astype(pred.dtype)


def loss_and_grad(pred, target, cfg: TrainConfig):
    if cfg.loss == "charbonnier":
        return (charbonnier_loss(pred, target, cfg.charbonnier_eps),
                charbonnier_backward(pred, target, cfg.charbonnier_eps))
    return l2_loss(pred, target), l2_backward(pred, target)


# ----------------------------------------------------------------------------
# Adam


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: OptimState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, adam_eps: float = 1e-8) -> dict:
    """One bias-corrected Adam update; returns new parameter arrays, mutates ``state``."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        step = (m / c1) / (np.sqrt(v / c2) + adam_eps)
        out[name] = (p - lr * step).astype(p.dtype)
    return out


# ----------------------------------------------------------------------------
# Data


def sample_patch_pair(hr_image: ImagePlane, cfg: TrainConfig, rng: np.random.Generator):
    """Random ``hr_patch`` square crop (zero-padded when the image is smaller) and its
    antialiased bicubic downscale, both as ``(1, 3, h, w)`` tensors in [0, 1]."""
    p = cfg.hr_patch
    src = hr_image.data
    h, w = src.shape[:2]
    if h < p or w < p:
        padded = np.zeros((max(h, p), max(w, p), 3), dtype=np.uint8)
        padded[:h, :w] = src
        src = padded
        h, w = src.shape[:2]
    top = int(rng.integers(0, h - p + 1))
    left = int(rng.integers(0, w - p + 1))
    hr = ImagePlane(src[top:top + p, left:left + p].copy())
    lr = bicubic_resize(hr, 1.0 / cfg.scale, antialias=True)
    return image_to_tensor(lr), image_to_tensor(hr)


def sample_batch(dataset: Sequence[ImagePlane], cfg: TrainConfig, rng: np.random.Generator):
    pairs = [sample_patch_pair(dataset[int(rng.integers(len(dataset)))], cfg, rng)
             for _ in range(cfg.batch_size)]
    return np.concatenate([a for a, _ in pairs]), np.concatenate([b for _, b in pairs])


# ----------------------------------------------------------------------------
# Loop


def train_step(model: Model, lr_batch, hr_batch, cfg: TrainConfig, state: OptimState, lr: float) -> float:
    """Forward, backward and one Adam update in place on ``model.params``; returns the loss."""
    names = list(model.params)
    with GradientTape() as tape:
        pred = model_forward(model, lr_batch)
    loss, dpred = loss_and_grad(pred, hr_batch, cfg)
    if not math.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    grads = tape.gradient(pred, dpred, [model.params[n] for n in names])
    model.params.update(adam_step(model.params, dict(zip(names, grads)), state, lr))
    return loss


def validation_psnr(model: Model, images: Sequence[ImagePlane]) -> float:
    """Mean RGB PSNR (full range, shave = scale) of x-scale reconstructions."""
    s = model.config.scale
    proto = EvalProtocol(scale=s, luminance=False)
    scores = []
    for img in images:
        hr = crop_to_multiple(img, s)
        lr = bicubic_resize(hr, 1.0 / s, antialias=True)
        sr = tensor_to_image(model_forward(model, image_to_tensor(lr)))
        scores.append(psnr(sr, hr, proto))
    return float(np.mean(scores))


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    val_psnr: float

    def line(self) -> str:
        return f"{self.epoch} {self.lr:.9g} {self.loss:.9g} {self.val_psnr:.6f}"


@dataclass
class TrainResult:
    model: Model
    epochs: list[EpochLog] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_psnr: float = -math.inf


def train(model: Model, dataset: Sequence[ImagePlane], cfg: TrainConfig, schedule: KneeSchedule,
          val_set: Sequence[ImagePlane] | None = None, out_dir: str | os.PathLike | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs of ``cfg.steps_per_epoch`` Adam steps.

    With ``out_dir`` set, appends ``epoch lr loss val_psnr`` lines to ``train.log`` and
    writes ``checkpoint_eNNNN.gidw`` plus ``best.gidw`` whenever validation PSNR improves.
    Validation falls back to the training images when ``val_set`` is omitted.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if cfg.scale != model.config.scale:
        raise ConfigError(f"train scale {cfg.scale} != model scale {model.config.scale}")
    val_set = list(val_set) if val_set else list(dataset)
    rng = np.random.default_rng(cfg.seed)
    state = OptimState()
    result = TrainResult(model)
    log_path = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        log_path = Path(out_dir) / "train.log"
        log_path.write_text("")
    step = 0
    for epoch in range(cfg.epochs):
        lr = knee_lr(epoch, schedule)
        losses = []
        for _ in range(cfg.steps_per_epoch):
            lr_batch, hr_batch = sample_batch(dataset, cfg, rng)
            try:
                loss = train_step(model, lr_batch, hr_batch, cfg, state, lr)
            except NonFiniteError as e:
                raise NonFiniteError(f"step {step}: {e}") from e
            losses.append(loss)
            step += 1
        result.step_losses.extend(losses)
        entry = EpochLog(epoch, lr, float(np.mean(losses)), validation_psnr(model, val_set))
        result.epochs.append(entry)
        log.info("epoch %s", entry.line())
        if log_path is not None:
            with open(log_path, "a") as f:
                f.write(entry.line() + "\n")
        if entry.val_psnr > result.best_psnr:
            result.best_psnr = entry.val_psnr
            if out_dir is not None:
                save_weights(model, Path(out_dir) / f"checkpoint_e{epoch:04d}.gidw")
                save_weights(model, Path(out_dir) / "best.gidw")
    return result


# ----------------------------------------------------------------------------
# Config files

_MODEL_KEYS = {"core": int, "nla": bool, "nla_tile": int}


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def parse_config_text(text: str) -> tuple[ModelConfig, TrainConfig, KneeSchedule]:
    """Parse ``key = value`` lines (``#`` comments) into model, train and schedule configs."""
    groups = {
        "model": _MODEL_KEYS,
        "train": {f.name: f.type for f in fields(TrainConfig)},
        "schedule": {f.name: f.type for f in fields(KneeSchedule)},
    }
    values: dict[str, dict] = {"model": {}, "train": {}, "schedule": {}}
    casts = {"int": int, "float": float, "str": str}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        group = next((g for g in ("model", "train", "schedule") if key in groups[g]), None)
        if group is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        cast = groups[group][key]
        try:
            if cast is bool:
                values[group][key] = _parse_bool(val)
            else:
                values[group][key] = cast(val) if callable(cast) else casts[cast](val)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from e
    train_cfg = TrainConfig(**values["train"])
    m = values["model"]
    model_cfg = ModelConfig(core=m.get("core", 16), use_nla=m.get("nla", True),
                            scale=train_cfg.scale, nla_tile=m.get("nla_tile", 16))
    return model_cfg, train_cfg, KneeSchedule(**values["schedule"])


def load_config(path: str | os.PathLike):
    return parse_config_text(Path(path).read_text(encoding="utf-8"))
