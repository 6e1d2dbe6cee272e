"""Windowed multi-head self-attention with relative position bias.

One :class:`SwinLayer` is a pre-norm attention sublayer plus a pre-norm MLP
sublayer, each with a residual connection. Layers alternate between plain
windowed attention and the cyclically shifted, masked variant; a
:class:`SwinBlocks` stack of depth two is the canonical pairing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import LayerNorm, Linear, Mlp, Module
from .tensor import (
    ConfigError,
    Parameter,
    Tensor,
    broadcast_to,
    crop,
    cyclic_roll,
    gather_rows,
    matmul,
    pad,
    reshape,
    softmax_last_axis,
    split,
    transpose,
)
from .windowing import (
    WindowSpec,
    compute_shift_mask,
    needs_mask,
    num_bias_rows,
    padded_extents,
    relative_position_index,
    window_partition,
    window_reverse,
)

__all__ = ["AttentionConfig", "RelativePositionBias", "WindowAttention", "SwinLayer", "SwinBlocks"]


@dataclass(frozen=True)
class AttentionConfig:
    dim: int
    heads: int
    qkv_bias: bool = True

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1:
            raise ConfigError(f"attention needs positive dim/heads, got {self.dim}/{self.heads}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} is not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def scale(self) -> float:
        return self.head_dim ** -0.5


class RelativePositionBias(Module):
    """Learnable per-head bias indexed by in-window token displacement.

    The table is sized for the configured window; a clamped effective window
    addresses the subset of rows whose displacements it can realise.
    """

    def __init__(self, window: tuple[int, int, int], heads: int, dtype=np.float32):
        self.table = Parameter(np.zeros((num_bias_rows(window), heads), dtype=dtype))
        self.window = tuple(window)
        self.heads = heads

    def __call__(self, effective_window: tuple[int, int, int] | None = None) -> Tensor:
        window = self.window if effective_window is None else tuple(effective_window)
        index = relative_position_index(window, self.window)  # (L, L), not learnable
        rows = gather_rows(self.table, index)  # (L, L, heads)
        return transpose(rows, (2, 0, 1))  # (heads, L, L)


class WindowAttention(Module):
    """Multi-head self-attention over independent token windows.

    Input is (nW, L, C); per window and head the output is
    ``softmax(q kᵀ · scale + bias + mask) v`` with heads concatenated and
    linearly projected back to C.
    """

    def __init__(
        self,
        cfg: AttentionConfig,
        window: tuple[int, int, int],
        rng: np.random.Generator | None = None,
        init: str = "trunc_normal",
        dtype=np.float32,
    ):
        self.cfg = cfg
        self.qkv = Linear(cfg.dim, 3 * cfg.dim, bias=cfg.qkv_bias, rng=rng, init=init, dtype=dtype)
        self.proj = Linear(cfg.dim, cfg.dim, rng=rng, init=init, dtype=dtype)
        self.rel_bias = RelativePositionBias(window, cfg.heads, dtype=dtype)
        self.window = tuple(window)

    def __call__(
        self,
        tokens: Tensor,
        mask: np.ndarray | None = None,
        window: tuple[int, int, int] | None = None,
    ) -> Tensor:
        n, length, c = tokens.shape
        cfg = self.cfg
        window = self.window if window is None else tuple(window)
        if c != cfg.dim:
            raise ConfigError(f"attention dim {cfg.dim} does not match input channels {c}")
        if length != window[0] * window[1] * window[2]:
            raise ConfigError(f"token count {length} does not match window {window}")

        qkv = self.qkv(tokens)  # (n, L, 3C)
        qkv = reshape(qkv, (n, length, 3, cfg.heads, cfg.head_dim))
        qkv = transpose(qkv, (2, 0, 3, 1, 4))  # (3, n, heads, L, hd)
        q, k, v = split(qkv, (1, 1, 1), axis=0)
        q = reshape(q, (n, cfg.heads, length, cfg.head_dim))
        k = reshape(k, (n, cfg.heads, length, cfg.head_dim))
        v = reshape(v, (n, cfg.heads, length, cfg.head_dim))

        logits = matmul(q * cfg.scale, transpose(k, (0, 1, 3, 2)))  # (n, heads, L, L)
        logits = logits + self.rel_bias(window)
        if mask is not None:
            n_mask = mask.shape[0]
            if n % n_mask != 0:
                raise ConfigError(f"mask windows {n_mask} do not divide batch windows {n}")
            tiled = np.tile(mask.astype(tokens.dtype, copy=False), (n // n_mask, 1, 1))
            logits = logits + broadcast_to(
                reshape(Tensor(tiled), (n, 1, length, length)),
                (n, cfg.heads, length, length),
            )
        weights = softmax_last_axis(logits)
        mixed = matmul(weights, v)  # (n, heads, L, hd)
        mixed = transpose(mixed, (0, 2, 1, 3))
        mixed = reshape(mixed, (n, length, c))
        return self.proj(mixed)


class SwinLayer(Module):
    """Pre-norm attention + pre-norm MLP, each wrapped in a residual.

    ``shifted`` selects the cyclically shifted, masked attention variant. The
    layer pads (T, H, W) up to window multiples, masks padded tokens out of
    attention, and crops back afterwards, so any extents are accepted. Windows
    larger than the map are clamped per axis (a clamped axis drops its shift).
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        spec: WindowSpec,
        shifted: bool,
        mlp_ratio: float = 1.0,
        mlp_gelu: bool = True,
        qkv_bias: bool = True,
        ln_eps: float = 1e-5,
        rng: np.random.Generator | None = None,
        init: str = "trunc_normal",
        dtype=np.float32,
    ):
        self.spec = spec
        self.shifted = shifted
        self.norm1 = LayerNorm(dim, eps=ln_eps, dtype=dtype)
        self.attn = WindowAttention(
            AttentionConfig(dim, heads, qkv_bias), spec.window, rng=rng, init=init, dtype=dtype
        )
        self.norm2 = LayerNorm(dim, eps=ln_eps, dtype=dtype)
        self.mlp = Mlp(dim, hidden_ratio=mlp_ratio, use_gelu=mlp_gelu, rng=rng, init=init, dtype=dtype)

    def _attention_path(self, z: Tensor) -> Tensor:
        b, t, h, w, c = z.shape
        dims = (t, h, w)
        spec = self.spec.clamp(dims)
        shift = spec.shift if self.shifted else (0, 0, 0)
        spec = WindowSpec(spec.window, shift)

        x = self.norm1(z)
        padded = padded_extents(dims, spec.window)
        if padded != dims:
            x = pad(x, ((0, 0),) + tuple((0, p - d) for p, d in zip(padded, dims)) + ((0, 0),))
        if any(shift):
            x = cyclic_roll(x, tuple(-s for s in shift), axes=(1, 2, 3))
        mask = compute_shift_mask(dims, spec, padded) if needs_mask(dims, spec) else None

        windows = window_partition(x, spec.window)
        windows = self.attn(windows, mask=mask, window=spec.window)
        x = window_reverse(windows, spec.window, padded, batch=b)

        if any(shift):
            x = cyclic_roll(x, shift, axes=(1, 2, 3))
        if padded != dims:
            x = crop(x, (0, 0, 0, 0, 0), (b, t, h, w, c))
        return x

    def __call__(self, z: Tensor) -> Tensor:
        z = z + self._attention_path(z)
        return z + self.mlp(self.norm2(z))


class SwinBlocks(Module):
    """A stack of SwinLayers alternating unshifted and shifted attention.

    With ``shifted_first=False`` even layers use plain windowed attention and
    odd layers the shifted variant; ``shifted_first=True`` swaps that order.
    Depth two gives the canonical attention pairing.
    """

    def __init__(
        self,
        dim: int,
        depth: int,
        heads: int,
        spec: WindowSpec,
        shifted_first: bool = False,
        mlp_ratio: float = 1.0,
        mlp_gelu: bool = True,
        qkv_bias: bool = True,
        ln_eps: float = 1e-5,
        rng: np.random.Generator | None = None,
        init: str = "trunc_normal",
        dtype=np.float32,
    ):
        if depth < 1:
            raise ConfigError(f"SwinBlocks: depth {depth} must be >= 1")
        self.layers = [
            SwinLayer(
                dim,
                heads,
                spec,
                shifted=(i % 2 == 0) if shifted_first else (i % 2 == 1),
                mlp_ratio=mlp_ratio,
                mlp_gelu=mlp_gelu,
                qkv_bias=qkv_bias,
                ln_eps=ln_eps,
                rng=rng,
                init=init,
                dtype=dtype,
            )
            for i in range(depth)
        ]

    def __call__(self, z: Tensor) -> Tensor:
        for layer in self.layers:
            z = layer(z)
        return z
