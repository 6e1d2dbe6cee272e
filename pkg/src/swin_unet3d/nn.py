"""Parameter containers and the small layer zoo shared by the model."""

from __future__ import annotations

import numpy as np

from .tensor import ConfigError, Parameter, Tensor, gelu, layer_norm, matmul

__all__ = ["Module", "Linear", "LayerNorm", "Mlp", "trunc_normal"]


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) samples re-drawn until they fall within two deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


class Module:
    """Base class with recursive, insertion-ordered parameter discovery."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}" if prefix == "" else f"{prefix}.{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> dict[str, Parameter]:
        params: dict[str, Parameter] = {}
        for name, p in self.named_parameters():
            if name in params:
                raise ConfigError(f"duplicate parameter name {name}")
            params[name] = p
        return params

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def count_parameters(self) -> dict[str, int]:
        return {name: p.size for name, p in self.named_parameters()}


class Linear(Module):
    """Affine map on the last axis; weight is stored (in_features, out_features)."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        bias: bool = True,
        rng: np.random.Generator | None = None,
        init: str = "trunc_normal",
        dtype=np.float32,
    ):
        if in_features < 1 or out_features < 1:
            raise ConfigError(f"Linear: bad extents ({in_features}, {out_features})")
        if init == "trunc_normal":
            if rng is None:
                raise ConfigError("Linear: trunc_normal init needs an rng")
            w = trunc_normal(rng, (in_features, out_features), dtype=dtype)
        elif init == "zeros":
            w = np.zeros((in_features, out_features), dtype=dtype)
        elif init == "identity":
            if in_features != out_features:
                raise ConfigError("Linear: identity init needs a square weight")
            w = np.eye(in_features, dtype=dtype)
        else:
            raise ConfigError(f"Linear: unknown init {init!r}")
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Mlp(Module):
    """Two affine layers on the channel axis, optionally with a gelu between.

    ``hidden_ratio`` scales the hidden width relative to the input; the
    nonlinearity can be switched off to get a purely linear token mixer.
    """

    def __init__(
        self,
        dim: int,
        hidden_ratio: float = 1.0,
        use_gelu: bool = True,
        rng: np.random.Generator | None = None,
        init: str = "trunc_normal",
        dtype=np.float32,
    ):
        hidden = int(round(hidden_ratio * dim))
        if hidden < 1:
            raise ConfigError(f"Mlp: hidden width {hidden} must be >= 1")
        self.fc1 = Linear(dim, hidden, rng=rng, init=init, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng=rng, init=init, dtype=dtype)
        self.use_gelu = use_gelu

    def __call__(self, x: Tensor) -> Tensor:
        h = self.fc1(x)
        if self.use_gelu:
            h = gelu(h)
        return self.fc2(h)
