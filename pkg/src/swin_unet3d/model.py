"""Model assembly: feature mixing, patch embedding, UNet encoder/decoder, head.

The pipeline maps a (B, in_frames, in_channels, H, W) movie clip to a
(B, out_frames, out_channels, H, W) forecast:

    mixer (optional) -> patch embed -> encoder stages with 2x merges
    -> neck -> decoder stages with 2x expands and skip merging -> head

Stage ``s`` runs at channel width ``embed_dim * 2**s``. The first decoder
stage works at neck resolution and merges the deepest encoder output across
the neck; each later stage doubles resolution with a learned patch expansion,
then merges the matching encoder stage output. The head recovers the patch
granularity with a pixel-shuffle style expansion and projects the flattened
temporal axis to the requested output frames and channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import SwinBlocks
from .nn import Linear, Module
from .tensor import ConfigError, Tensor, concat, crop, pad, reshape, transpose
from .windowing import WindowSpec

__all__ = [
    "ModelConfig",
    "FeatureMixer",
    "PatchEmbed",
    "PatchMerge",
    "PatchExpand",
    "SkipMerge",
    "PredictionHead",
    "SwinUNet3D",
    "count_parameters",
]

MERGE_MODES = ("concat", "add", "both")


@dataclass(frozen=True)
class ModelConfig:
    """Every architectural hyperparameter of the forecaster."""

    in_frames: int = 12
    in_channels: int = 8
    out_frames: int = 6
    out_channels: int = 8
    static_channels: int = 0
    embed_dim: int = 96
    patch_size: tuple[int, int, int] = (1, 4, 4)
    window: tuple[int, int, int] = (1, 8, 8)
    shift: tuple[int, int, int] = (0, 2, 2)
    encoder_depths: tuple[int, int, int, int] = (4, 4, 4, 4)
    neck_depth: int = 2
    decoder_depths: tuple[int, int, int, int] = (1, 1, 1, 1)
    heads: int | None = None  # stage-0 head count; defaults to embed_dim // 32
    mlp_ratio: float = 1.0
    mlp_gelu: bool = True
    merge_mode: str = "both"
    mix_features: bool = False
    shifted_first: bool = False
    qkv_bias: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.merge_mode not in MERGE_MODES:
            raise ConfigError(f"merge_mode must be one of {MERGE_MODES}, got {self.merge_mode!r}")
        for name in ("in_frames", "in_channels", "out_frames", "out_channels", "embed_dim", "neck_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.static_channels < 0:
            raise ConfigError("static_channels must be nonnegative")
        if len(self.encoder_depths) != 4 or len(self.decoder_depths) != 4:
            raise ConfigError("encoder_depths and decoder_depths must have 4 entries")
        if self.in_frames % self.patch_size[0] != 0:
            raise ConfigError(
                f"in_frames {self.in_frames} not divisible by temporal patch {self.patch_size[0]}"
            )
        if self.embed_dim % self.base_heads != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.base_heads}")
        if self.embed_dim % 8 != 0:
            raise ConfigError("embed_dim must be divisible by 8 (three channel-halving expands)")
        WindowSpec(self.window, self.shift)  # validates extents

    @property
    def base_heads(self) -> int:
        return self.heads if self.heads is not None else max(1, self.embed_dim // 32)

    @property
    def total_in_channels(self) -> int:
        return self.in_channels + self.static_channels

    @property
    def token_frames(self) -> int:
        return self.in_frames // self.patch_size[0]

    def stage_dim(self, stage: int) -> int:
        return self.embed_dim * 2 ** stage

    def stage_heads(self, stage: int) -> int:
        return self.base_heads * 2 ** stage


class FeatureMixer(Module):
    """Per-spatial-site affine transform over the flattened (frames x channels) vector.

    Identity-initialised, so a freshly built mixer is an exact no-op.
    """

    def __init__(self, frames: int, channels: int, dtype=np.float32):
        self.fc = Linear(frames * channels, frames * channels, init="identity", dtype=dtype)
        self.frames = frames
        self.channels = channels

    def __call__(self, x: Tensor) -> Tensor:
        b, t, c, h, w = x.shape
        if t != self.frames or c != self.channels:
            raise ConfigError(
                f"mixer built for {self.frames}x{self.channels}, got input {t}x{c}"
            )
        sites = transpose(x, (0, 3, 4, 1, 2))  # (b, h, w, t, c)
        mixed = self.fc(reshape(sites, (b, h, w, t * c)))
        return transpose(reshape(mixed, (b, h, w, t, c)), (0, 3, 4, 1, 2))


class PatchEmbed(Module):
    """Two-step linear embedding of non-overlapping spatiotemporal patches.

    Patch flattening followed by an affine map to the embed width plays the
    role of a stride-equals-kernel convolution; a second per-token affine map
    is the kernel-size-1 follow-up.
    """

    def __init__(self, cfg: ModelConfig, rng=None, init="trunc_normal", dtype=np.float32):
        pt, ph, pw = cfg.patch_size
        fan_in = cfg.total_in_channels * pt * ph * pw
        self.proj = Linear(fan_in, cfg.embed_dim, rng=rng, init=init, dtype=dtype)
        self.refine = Linear(cfg.embed_dim, cfg.embed_dim, rng=rng, init=init, dtype=dtype)
        self.patch_size = (pt, ph, pw)

    def __call__(self, x: Tensor) -> Tensor:
        b, t, c, h, w = x.shape
        pt, ph, pw = self.patch_size
        if t % pt or h % ph or w % pw:
            raise ConfigError(f"input {x.shape} not divisible by patch {self.patch_size}")
        gt, gh, gw = t // pt, h // ph, w // pw
        grid = reshape(x, (b, gt, pt, c, gh, ph, gw, pw))
        # token vector is the (c, pt, ph, pw) block flattened row-major
        grid = transpose(grid, (0, 1, 4, 6, 3, 2, 5, 7))
        tokens = reshape(grid, (b, gt, gh, gw, c * pt * ph * pw))
        return self.refine(self.proj(tokens))


class PatchMerge(Module):
    """Learned 2x spatial downsampling: concatenate 2x2 neighbours, map 4C -> 2C."""

    def __init__(self, dim: int, rng=None, init="trunc_normal", dtype=np.float32):
        self.reduce = Linear(4 * dim, 2 * dim, rng=rng, init=init, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        b, t, h, w, c = x.shape
        if h % 2 or w % 2:
            x = pad(x, ((0, 0), (0, 0), (0, h % 2), (0, w % 2), (0, 0)))
            b, t, h, w, c = x.shape
        cells = reshape(x, (b, t, h // 2, 2, w // 2, 2, c))
        # concatenation order (h0w0, h0w1, h1w0, h1w1)
        cells = transpose(cells, (0, 1, 2, 4, 3, 5, 6))
        merged = reshape(cells, (b, t, h // 2, w // 2, 4 * c))
        return self.reduce(merged)


class PatchExpand(Module):
    """Learned 2x spatial upsampling: map C -> 2C, rearrange into a 2x2 cell of C/2."""

    def __init__(self, dim: int, rng=None, init="trunc_normal", dtype=np.float32):
        if dim % 2:
            raise ConfigError(f"PatchExpand needs an even channel width, got {dim}")
        self.grow = Linear(dim, 2 * dim, rng=rng, init=init, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        b, t, h, w, c = x.shape
        wide = self.grow(x)  # (b, t, h, w, 2c)
        cells = reshape(wide, (b, t, h, w, 2, 2, c // 2))
        cells = transpose(cells, (0, 1, 2, 4, 3, 5, 6))
        return reshape(cells, (b, t, 2 * h, 2 * w, c // 2))


class SkipMerge(Module):
    """Combine a decoder feature map with its encoder skip at equal shape.

    ``add`` sums them, ``concat`` maps the concatenation 2C -> C, ``both``
    does the concat projection and adds the skip back on top.
    """

    def __init__(self, dim: int, mode: str, rng=None, init="trunc_normal", dtype=np.float32):
        if mode not in MERGE_MODES:
            raise ConfigError(f"unknown merge mode {mode!r}")
        self.mode = mode
        if mode in ("concat", "both"):
            self.reduce = Linear(2 * dim, dim, rng=rng, init=init, dtype=dtype)

    def __call__(self, x: Tensor, skip: Tensor) -> Tensor:
        if x.shape != skip.shape:
            raise ConfigError(f"skip shape {skip.shape} does not match input {x.shape}")
        if self.mode == "add":
            return x + skip
        combined = self.reduce(concat([x, skip], axis=-1))
        if self.mode == "both":
            combined = combined + skip
        return combined


class PredictionHead(Module):
    """Recover patch-level spatial resolution and project to the output movie.

    A single pixel-shuffle style expansion maps each token to a
    (patch_h x patch_w) cell of ``dim // 2`` channels; the temporal token axis
    is then flattened into features and an affine map emits
    out_frames x out_channels values per pixel.
    """

    def __init__(self, cfg: ModelConfig, dim: int, rng=None, init="trunc_normal", dtype=np.float32):
        _, ph, pw = cfg.patch_size
        self.cell_channels = max(1, dim // 2)
        self.expand = Linear(dim, ph * pw * self.cell_channels, rng=rng, init=init, dtype=dtype)
        self.proj = Linear(
            cfg.token_frames * self.cell_channels,
            cfg.out_frames * cfg.out_channels,
            rng=rng,
            init=init,
            dtype=dtype,
        )
        self.patch_hw = (ph, pw)
        self.out_frames = cfg.out_frames
        self.out_channels = cfg.out_channels

    def __call__(self, z: Tensor, out_hw: tuple[int, int]) -> Tensor:
        b, t, h, w, _ = z.shape
        ph, pw = self.patch_hw
        cc = self.cell_channels
        wide = self.expand(z)
        cells = reshape(wide, (b, t, h, w, ph, pw, cc))
        cells = transpose(cells, (0, 1, 2, 4, 3, 5, 6))
        full = reshape(cells, (b, t, h * ph, w * pw, cc))
        hh, ww = out_hw
        if (h * ph, w * pw) != (hh, ww):
            full = crop(full, (0, 0, 0, 0, 0), (b, t, hh, ww, cc))
        pixels = transpose(full, (0, 2, 3, 1, 4))  # (b, H, W, t, cc)
        pixels = reshape(pixels, (b, hh, ww, t * cc))
        out = self.proj(pixels)
        out = reshape(out, (b, hh, ww, self.out_frames, self.out_channels))
        return transpose(out, (0, 3, 4, 1, 2))


class SwinUNet3D(Module):
    """Convolution-free UNet with shifted-window transformer stages."""

    SPATIAL_MULTIPLE = 16  # inputs are right/bottom padded to this granularity

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32, init: str = "trunc_normal"):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.dtype = np.dtype(dtype).type
        spec = WindowSpec(cfg.window, cfg.shift)
        common = dict(
            mlp_ratio=cfg.mlp_ratio,
            mlp_gelu=cfg.mlp_gelu,
            qkv_bias=cfg.qkv_bias,
            ln_eps=cfg.ln_eps,
            shifted_first=cfg.shifted_first,
            rng=rng,
            init=init,
            dtype=dtype,
        )

        self.mixer = (
            FeatureMixer(cfg.in_frames, cfg.total_in_channels, dtype=dtype)
            if cfg.mix_features
            else None
        )
        self.embed = PatchEmbed(cfg, rng=rng, init=init, dtype=dtype)
        self.encoder = [
            SwinBlocks(cfg.stage_dim(s), cfg.encoder_depths[s], cfg.stage_heads(s), spec, **common)
            for s in range(4)
        ]
        self.merges = [
            PatchMerge(cfg.stage_dim(s), rng=rng, init=init, dtype=dtype) for s in range(3)
        ]
        self.neck = SwinBlocks(cfg.stage_dim(3), cfg.neck_depth, cfg.stage_heads(3), spec, **common)
        # Decoder stage 0 merges the deepest encoder output across the neck at
        # unchanged resolution; stages 1..3 expand first, then merge the skip.
        self.expands = [
            PatchExpand(cfg.stage_dim(s), rng=rng, init=init, dtype=dtype) for s in (3, 2, 1)
        ]
        self.skips = [
            SkipMerge(cfg.stage_dim(s), cfg.merge_mode, rng=rng, init=init, dtype=dtype)
            for s in (3, 2, 1, 0)
        ]
        self.decoder = [
            SwinBlocks(cfg.stage_dim(s), cfg.decoder_depths[3 - s], cfg.stage_heads(s), spec, **common)
            for s in (3, 2, 1, 0)
        ]
        self.head = PredictionHead(cfg, cfg.embed_dim, rng=rng, init=init, dtype=dtype)

    def _check_input(self, x: Tensor) -> None:
        cfg = self.cfg
        if x.ndim != 5:
            raise ConfigError(f"expected (B, frames, channels, H, W), got {x.shape}")
        b, t, c, h, w = x.shape
        if t != cfg.in_frames or c != cfg.total_in_channels:
            raise ConfigError(
                f"expected {cfg.in_frames} frames x {cfg.total_in_channels} channels, got {t}x{c}"
            )
        ph, pw = cfg.patch_size[1], cfg.patch_size[2]
        if h < 4 * ph or w < 4 * pw:
            raise ConfigError(
                f"spatial extents {h}x{w} too small for three downsampling stages"
            )

    def __call__(self, x: Tensor) -> Tensor:
        self._check_input(x)
        cfg = self.cfg
        b, t, c, h, w = x.shape
        m = self.SPATIAL_MULTIPLE
        hp, wp = -(-h // m) * m, -(-w // m) * m
        if (hp, wp) != (h, w):
            x = pad(x, ((0, 0), (0, 0), (0, 0), (0, hp - h), (0, wp - w)))

        if self.mixer is not None:
            x = self.mixer(x)
        z = self.embed(x)  # (b, t', hp/ph, wp/pw, C)

        skips = []
        for stage in range(4):
            if stage > 0:
                z = self.merges[stage - 1](z)
            z = self.encoder[stage](z)
            skips.append(z)

        z = self.neck(z)

        z = self.skips[0](z, skips[3])
        z = self.decoder[0](z)
        for i, stage in enumerate((2, 1, 0)):
            z = self.expands[i](z)
            skip = skips[stage]
            if z.shape != skip.shape:
                z = crop(z, (0,) * 5, skip.shape)
            z = self.skips[i + 1](z, skip)
            z = self.decoder[i + 1](z)

        out = self.head(z, (hp, wp))
        if (hp, wp) != (h, w):
            out = crop(out, (0, 0, 0, 0, 0), (b, cfg.out_frames, cfg.out_channels, h, w))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        from .checkpoint import apply_state  # local import to avoid a cycle

        apply_state(self, state)


def count_parameters(cfg: ModelConfig) -> dict[str, int]:
    """Exact learnable-scalar counts per dotted parameter path.

    Builds the model with zero initialisation (allocation only), so counting
    large configurations stays cheap.
    """
    model = SwinUNet3D(cfg, init="zeros")
    return model.count_parameters()


def module_subtotals(counts: dict[str, int]) -> dict[str, int]:
    """Aggregate per-parameter counts by top-level module."""
    totals: dict[str, int] = {}
    for name, n in counts.items():
        top = name.split(".", 1)[0]
        totals[top] = totals.get(top, 0) + n
    return totals
