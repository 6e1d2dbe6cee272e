"""Scikit-learn style wrapper: fit on movie clips, predict future frames.

``SwinUNet3DForecaster`` exposes the model plus training loop behind the
standard estimator API (``fit`` / ``predict`` / ``score`` / ``get_params``),
so it drops into pipelines, grid search, and cross-validation. X is an array
of input clips (n_samples, 12, 8, H, W); y holds the matching future frames
(n_samples, 6, 8, H, W). Values are raw 0..255; predictions come back in the
same units.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .data import TrafficSample
from .model import ModelConfig, SwinUNet3D
from .tensor import ConfigError, Tensor, no_grad
from .training import TrainConfig, evaluate, train

__all__ = ["SwinUNet3DForecaster", "check_clip_array"]


def check_clip_array(X, frames: int, channels: int, name: str = "X") -> np.ndarray:
    """Validate a (n_samples, frames, channels, H, W) clip array."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim != 5:
        raise ConfigError(f"{name} must be 5-d (n, frames, channels, H, W), got ndim={arr.ndim}")
    if arr.shape[1] != frames or arr.shape[2] != channels:
        raise ConfigError(
            f"{name} must have {frames} frames x {channels} channels, got {arr.shape[1:3]}"
        )
    if not np.isfinite(arr).all():
        raise ConfigError(f"{name} contains NaN or Inf")
    return arr


class SwinUNet3DForecaster(BaseEstimator, RegressorMixin):
    """Trainable shifted-window transformer forecaster for traffic movies.

    Defaults mirror the full architecture; shrink ``embed_dim`` and the depth
    tuples for desk-scale experiments.
    """

    def __init__(
        self,
        embed_dim: int = 96,
        encoder_depths: tuple = (4, 4, 4, 4),
        neck_depth: int = 2,
        decoder_depths: tuple = (1, 1, 1, 1),
        heads: int | None = None,
        window: tuple = (1, 8, 8),
        shift: tuple = (0, 2, 2),
        patch_size: tuple = (1, 4, 4),
        mlp_ratio: float = 1.0,
        merge_mode: str = "both",
        mix_features: bool = False,
        static_channels: int = 0,
        lr: float = 1e-4,
        batch_size: int = 2,
        max_epochs: int = 10,
        max_steps: int | None = None,
        val_fraction: float = 0.1,
        normalize: bool = True,
        augment: bool = False,
        permute_channels: bool = False,
        seed: int = 0,
    ):
        self.embed_dim = embed_dim
        self.encoder_depths = encoder_depths
        self.neck_depth = neck_depth
        self.decoder_depths = decoder_depths
        self.heads = heads
        self.window = window
        self.shift = shift
        self.patch_size = patch_size
        self.mlp_ratio = mlp_ratio
        self.merge_mode = merge_mode
        self.mix_features = mix_features
        self.static_channels = static_channels
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.max_steps = max_steps
        self.val_fraction = val_fraction
        self.normalize = normalize
        self.augment = augment
        self.permute_channels = permute_channels
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            encoder_depths=tuple(self.encoder_depths),
            neck_depth=self.neck_depth,
            decoder_depths=tuple(self.decoder_depths),
            heads=self.heads,
            window=tuple(self.window),
            shift=tuple(self.shift),
            patch_size=tuple(self.patch_size),
            mlp_ratio=self.mlp_ratio,
            merge_mode=self.merge_mode,
            mix_features=self.mix_features,
            static_channels=self.static_channels,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr_init=self.lr,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            max_steps=self.max_steps,
            seed=self.seed,
            val_fraction=self.val_fraction,
            normalize=self.normalize,
            augment=self.augment,
            permute_channels=self.permute_channels,
        )

    def fit(self, X, y):
        cfg = self._model_config()
        X = check_clip_array(X, cfg.in_frames, cfg.total_in_channels, "X")
        y = check_clip_array(y, cfg.out_frames, cfg.out_channels, "y")
        if X.shape[0] != y.shape[0]:
            raise ConfigError(f"X and y disagree on sample count: {X.shape[0]} vs {y.shape[0]}")
        if X.shape[3:] != y.shape[3:]:
            raise ConfigError(f"X and y disagree on spatial extents: {X.shape[3:]} vs {y.shape[3:]}")
        samples = [
            TrafficSample(input=X[i], target=y[i], origin=(i, 0)) for i in range(X.shape[0])
        ]
        self.model_ = SwinUNet3D(cfg, seed=self.seed)
        self.report_ = train(self.model_, samples, self._train_config())
        self.model_.load_state_dict(self.report_["best_state"])
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise ConfigError("predict called before fit")
        cfg = self.model_.cfg
        X = check_clip_array(X, cfg.in_frames, cfg.total_in_channels, "X")
        outs = []
        scale = 255.0 if self.normalize else 1.0
        with no_grad():
            for lo in range(0, X.shape[0], max(1, self.batch_size)):
                batch = X[lo : lo + max(1, self.batch_size)]
                pred = self.model_(Tensor(batch / np.float32(scale)))
                outs.append(pred.data * scale)
        return np.concatenate(outs, axis=0)

    def score(self, X, y) -> float:
        """Negative raw-unit MSE (higher is better, 0 is perfect)."""
        pred = self.predict(X)
        y = check_clip_array(y, pred.shape[1], pred.shape[2], "y")
        return -float(np.mean((pred.astype(np.float64) - y) ** 2))

    def evaluate(self, X, y) -> float:
        """Raw-unit MSE of the fitted model on (X, y)."""
        if not hasattr(self, "model_"):
            raise ConfigError("evaluate called before fit")
        cfg = self.model_.cfg
        X = check_clip_array(X, cfg.in_frames, cfg.total_in_channels, "X")
        y = check_clip_array(y, cfg.out_frames, cfg.out_channels, "y")
        samples = [TrafficSample(input=X[i], target=y[i]) for i in range(X.shape[0])]
        return evaluate(self.model_, samples, normalized=self.normalize, batch_size=self.batch_size)
