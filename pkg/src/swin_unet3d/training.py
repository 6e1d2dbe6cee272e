"""MSE training loop with Adam, plateau-driven learning-rate decay, evaluation.

Training is deterministic given the config seed: the validation split, epoch
shuffles, and augmentation draws all come from one seeded generator, and Adam
updates parameters in sorted-name order. Reported MSE values are always in
raw 0..255 units regardless of whether the model trains on normalized values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import HORIZON_MINUTES, TrafficSample, flip_augment, normalize
from .model import SwinUNet3D
from .tensor import ConfigError, Tensor, no_grad, tmean

__all__ = [
    "TrainConfig",
    "Adam",
    "mse_loss",
    "plateau_schedule",
    "train",
    "evaluate",
    "per_horizon_mse",
]


@dataclass
class TrainConfig:
    lr_init: float = 1e-4
    lr_min: float = 1e-7
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    plateau_min_delta: float = 1e-6  # relative improvement that resets patience
    batch_size: int = 2
    max_epochs: int = 10
    max_steps: int | None = None
    seed: int = 0
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    normalize: bool = False
    augment: bool = False
    permute_channels: bool = False
    clip_norm: float | None = None

    def __post_init__(self):
        if self.lr_min > self.lr_init:
            raise ConfigError("lr_min must not exceed lr_init")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    if pred.shape != target.shape:
        raise ConfigError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred - target
    return tmean(diff * diff)


class Adam:
    """Standard bias-corrected Adam over a named parameter dict.

    Updates run in sorted-name order so repeated runs are bitwise identical.
    """

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                raise ConfigError(f"adam_step: missing gradient for parameter {name}")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data = p.data - (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return norm


def plateau_schedule(history, cfg: TrainConfig) -> float:
    """Learning rate implied by a per-epoch validation-loss history.

    The rate decays by ``plateau_factor`` (bounded below by ``lr_min``) each
    time the loss fails to improve on the best seen value by at least
    ``plateau_min_delta`` relative for ``plateau_patience`` consecutive
    epochs; any sufficient improvement resets the patience counter.
    """
    lr = cfg.lr_init
    best = None
    bad = 0
    for loss in history:
        loss = float(loss)
        if best is None or loss < best * (1.0 - cfg.plateau_min_delta):
            best = loss
            bad = 0
        else:
            bad += 1
            if bad >= cfg.plateau_patience:
                lr = max(lr * cfg.plateau_factor, cfg.lr_min)
                bad = 0
    return lr


def _stack_batch(samples: list[TrafficSample], normalized: bool) -> tuple[np.ndarray, np.ndarray]:
    x = normalize(np.stack([s.input for s in samples]), enabled=normalized)
    y = normalize(np.stack([s.target for s in samples]), enabled=normalized)
    return x, y


def _raw_scale(normalized: bool) -> float:
    return 255.0 ** 2 if normalized else 1.0


def split_train_val(samples: list[TrafficSample], cfg: TrainConfig) -> tuple[list, list]:
    if len(samples) < 2:
        raise ConfigError(f"need at least 2 samples to split, got {len(samples)}")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(samples))
    n_val = min(len(samples) - 1, max(1, round(cfg.val_fraction * len(samples))))
    val = [samples[i] for i in order[:n_val]]
    tr = [samples[i] for i in order[n_val:]]
    return tr, val


def evaluate(model: SwinUNet3D, samples: list[TrafficSample], normalized: bool = False, batch_size: int = 2) -> float:
    """Mean squared error in raw 0..255 units, computed without gradient recording."""
    if not samples:
        raise ConfigError("evaluate: no samples")
    total = 0.0
    count = 0
    with no_grad():
        for lo in range(0, len(samples), batch_size):
            batch = samples[lo : lo + batch_size]
            x, y = _stack_batch(batch, normalized)
            pred = model(Tensor(x))
            total += float(np.sum((pred.data.astype(np.float64) - y) ** 2))
            count += y.size
    return total / count * _raw_scale(normalized)


def per_horizon_mse(model: SwinUNet3D, samples: list[TrafficSample], normalized: bool = False, batch_size: int = 2) -> list[float]:
    """One raw-unit MSE per prediction horizon (+5 .. +60 minutes)."""
    if not samples:
        raise ConfigError("per_horizon_mse: no samples")
    totals = np.zeros(len(HORIZON_MINUTES))
    count = 0
    with no_grad():
        for lo in range(0, len(samples), batch_size):
            batch = samples[lo : lo + batch_size]
            x, y = _stack_batch(batch, normalized)
            pred = model(Tensor(x)).data.astype(np.float64)
            sq = (pred - y) ** 2  # (B, 6, C, H, W)
            totals += sq.sum(axis=(0, 2, 3, 4))
            count += sq[:, 0].size
    return [float(t) / count * _raw_scale(normalized) for t in totals]


def train(
    model: SwinUNet3D,
    samples: list[TrafficSample],
    cfg: TrainConfig,
    log_path=None,
) -> dict:
    """Run the full loop and return a report.

    The report carries per-epoch train/val MSE (raw units), per-step batch
    losses, the learning-rate trajectory, and the best-validation parameter
    state (deep copy) with its epoch.
    """
    train_samples, val_samples = split_train_val(samples, cfg)
    if not train_samples or not val_samples:
        raise ConfigError("train: empty train or validation split")

    params = model.parameters()
    opt = Adam(params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    rng = np.random.default_rng(cfg.seed + 1)

    log_lines: list[str] = []
    step_losses: list[float] = []
    epoch_train: list[float] = []
    epoch_val: list[float] = []
    lr_history: list[float] = []
    best_val = np.inf
    best_state: dict[str, np.ndarray] = {k: v.data.copy() for k, v in params.items()}
    best_epoch = -1
    steps_done = 0
    stop = False

    for epoch in range(cfg.max_epochs):
        lr = plateau_schedule(epoch_val, cfg)
        order = rng.permutation(len(train_samples))
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[lo : lo + cfg.batch_size]]
            if cfg.augment:
                flips = rng.integers(0, 2, size=(len(batch), 2))
                batch = [
                    flip_augment(s, bool(f[0]), bool(f[1]), cfg.permute_channels)
                    for s, f in zip(batch, flips)
                ]
            x, y = _stack_batch(batch, cfg.normalize)
            opt.zero_grad()
            loss = mse_loss(model(Tensor(x)), Tensor(y))
            loss.backward()
            if cfg.clip_norm is not None:
                clip_gradients(params, cfg.clip_norm)
            opt.step(lr)
            batch_loss = loss.item() * _raw_scale(cfg.normalize)
            losses.append(batch_loss)
            step_losses.append(batch_loss)
            steps_done += 1
            if cfg.max_steps is not None and steps_done >= cfg.max_steps:
                stop = True
                break
        train_mse = float(np.mean(losses)) if losses else np.nan
        val_mse = evaluate(model, val_samples, normalized=cfg.normalize, batch_size=cfg.batch_size)
        epoch_train.append(train_mse)
        epoch_val.append(val_mse)
        lr_history.append(lr)
        log_lines.append(f"epoch={epoch} train_mse={train_mse:.10g} val_mse={val_mse:.10g} lr={lr:.10g}")
        if val_mse < best_val:
            best_val = val_mse
            best_state = {k: v.data.copy() for k, v in params.items()}
            best_epoch = epoch
        if stop:
            break

    if log_path is not None:
        with open(log_path, "a", encoding="utf-8") as fh:
            for line in log_lines:
                fh.write(line + "\n")

    return {
        "epoch_train_mse": epoch_train,
        "epoch_val_mse": epoch_val,
        "step_losses": step_losses,
        "lr_history": lr_history,
        "best_val_mse": float(best_val),
        "best_epoch": best_epoch,
        "best_state": best_state,
        "log_lines": log_lines,
        "n_train": len(train_samples),
        "n_val": len(val_samples),
    }
