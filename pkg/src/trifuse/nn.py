"""Neural building blocks on top of the autodiff core.

Everything follows the column-token convention: a sequence of N tokens with
D features is a ``[D, N]`` tensor, linear maps multiply from the left.
Modules hold :class:`~trifuse.tensor.Param` leaves and know how to walk
themselves for checkpointing and optimizer hookup.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import (
    Param, Tensor, add, dwconv1d, gelu, matmul, mul, norm_affine,
    register_differentiable, reshape, softmax, sub, swapaxes,
)

register_differentiable("linear")
register_differentiable("layer_norm")
register_differentiable("batch_norm")
register_differentiable("mhsa")
register_differentiable("ffn")


class Module:
    """Base class providing parameter/buffer traversal and train/eval mode.

    Subclasses assign Params, Modules, or containers of them to attributes;
    traversal order follows attribute insertion order, so names are stable
    for a fixed construction path.
    """

    #: attribute names of plain numpy arrays that belong in checkpoints
    _buffer_attrs: tuple[str, ...] = ()

    #: class-level default so subclasses need not chain __init__;
    #: train()/eval() shadow it with an instance attribute
    training = True

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for attr, value in vars(self).items():
            if attr == "training":
                continue
            yield from _walk_params(value, f"{prefix}{attr}")

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def trainable_params(self) -> list[Param]:
        return [p for p in self.params() if not p.frozen]

    def num_trainable(self) -> int:
        return sum(p.size for p in self.trainable_params())

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for attr in self._buffer_attrs:
            yield f"{prefix}{attr}", getattr(self, attr)
        for attr, value in vars(self).items():
            if attr == "training" or attr in self._buffer_attrs:
                continue
            yield from _walk_buffers(value, f"{prefix}{attr}")

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            yield from _walk_modules(value)

    def train(self, flag: bool = True) -> "Module":
        for m in self.modules():
            m.training = flag
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def freeze(self) -> "Module":
        for p in self.params():
            p.freeze()
        return self

    def state_dict(self) -> dict[str, tuple[np.ndarray, bool]]:
        """Name -> (array, frozen). Buffers are recorded as frozen entries."""
        state: dict[str, tuple[np.ndarray, bool]] = {}
        for name, p in self.named_params():
            state[name] = (p.data, p.frozen)
        for name, buf in self.named_buffers():
            state[name] = (buf, True)
        return state

    def load_state_dict(self, state: dict[str, tuple[np.ndarray, bool]],
                        strict: bool = True) -> None:
        own_params = dict(self.named_params())
        own_buffers = dict(self.named_buffers())
        seen = set()
        for name, (arr, _frozen) in state.items():
            if name in own_params:
                p = own_params[name]
                if p.data.shape != arr.shape:
                    raise ValueError(f"shape mismatch for '{name}': "
                                     f"{p.data.shape} vs {arr.shape}")
                p.data = np.ascontiguousarray(arr, dtype=p.data.dtype)
                seen.add(name)
            elif name in own_buffers:
                buf = own_buffers[name]
                if buf.shape != arr.shape:
                    raise ValueError(f"shape mismatch for buffer '{name}'")
                buf[...] = arr
                seen.add(name)
            elif strict:
                raise KeyError(f"unexpected entry '{name}' in state")
        if strict:
            missing = (set(own_params) | set(own_buffers)) - seen
            if missing:
                raise KeyError(f"state missing entries: {sorted(missing)}")


def _walk_params(value, name: str) -> Iterator[tuple[str, Param]]:
    if isinstance(value, Param):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_params(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_params(item, f"{name}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk_params(item, f"{name}.{key}")


def _walk_buffers(value, name: str) -> Iterator[tuple[str, np.ndarray]]:
    if isinstance(value, Module):
        yield from value.named_buffers(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_buffers(item, f"{name}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk_buffers(item, f"{name}.{key}")


def _walk_modules(value) -> Iterator[Module]:
    if isinstance(value, Module):
        yield from value.modules()
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from _walk_modules(item)
    elif isinstance(value, dict):
        for item in value.values():
            yield from _walk_modules(item)


class Linear(Module):
    """Affine map [in, N] -> [out, N], weight [out, in]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, init_std: float | None = None):
        std = init_std if init_std is not None else d_in ** -0.5
        self.weight = Param(rng.normal(0.0, std, size=(d_out, d_in)))
        self.bias = Param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[0] != self.weight.shape[1]:
            raise ValueError(f"linear expected {self.weight.shape[1]} input "
                             f"features, got {x.shape[0]}")
        y = matmul(self.weight, x)
        if self.bias is not None:
            y = add(y, reshape(self.bias, (self.bias.size, 1)))
        return y


class LayerNorm(Module):
    """Per-token normalization over the feature axis, learned affine."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Param(np.ones(dim))
        self.shift = Param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return norm_affine(x, self.gain, self.shift, self.eps, axis=0)


class BatchNorm(Module):
    """Per-channel normalization over the token axis with running stats.

    Training mode normalizes with the current sequence's statistics (needs
    at least two tokens) and updates the running estimates; eval mode
    normalizes with the stored running statistics.
    """

    _buffer_attrs = ("running_mean", "running_var")

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gain = Param(np.ones(dim))
        self.shift = Param(np.zeros(dim))
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            if x.shape[1] < 2:
                raise ValueError("batch norm needs N >= 2 tokens in training mode")
            mu = x.data.mean(axis=1)
            # the running variance keeps the unbiased estimate, the
            # normalization itself uses the population variance
            n = x.shape[1]
            var_pop = x.data.var(axis=1)
            var_unbiased = var_pop * n / (n - 1)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu
            self.running_var = (1 - m) * self.running_var + m * var_unbiased
            return norm_affine(x, self.gain, self.shift, self.eps, axis=1)
        scale = 1.0 / np.sqrt(self.running_var + self.eps)
        # eval path: y = gain * (x - mean) * scale + shift, built from
        # broadcast primitives so gradients still reach gain/shift
        xc = sub(x, Tensor(self.running_mean[:, None]))
        xn = mul(xc, Tensor(scale[:, None]))
        y = add(mul(xn, reshape(self.gain, (self.gain.size, 1))),
                reshape(self.shift, (self.shift.size, 1)))
        return y


class DepthwiseConv1d(Module):
    """One odd-sized kernel per channel sliding along the token axis."""

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator,
                 causal: bool = False, bias: bool = True):
        if kernel % 2 == 0:
            raise ValueError("depthwise conv kernel size must be odd")
        self.kernels = Param(rng.normal(0.0, kernel ** -0.5, size=(dim, kernel)))
        self.bias = Param(np.zeros(dim)) if bias else None
        self.causal = causal

    def __call__(self, x: Tensor) -> Tensor:
        y = dwconv1d(x, self.kernels, causal=self.causal)
        if self.bias is not None:
            y = add(y, reshape(self.bias, (self.bias.size, 1)))
        return y


class MultiHeadSelfAttention(Module):
    """Full softmax attention over all tokens, heads split along features."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ValueError("feature dim must be divisible by head count")
        self.heads = heads
        self.dim = dim
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def __call__(self, x: Tensor, return_weights: bool = False):
        D, N = x.shape
        H = self.heads
        dh = D // H
        q = reshape(self.wq(x), (H, dh, N))
        k = reshape(self.wk(x), (H, dh, N))
        v = reshape(self.wv(x), (H, dh, N))
        scores = mul(matmul(swapaxes(q, 1, 2), k), dh ** -0.5)  # [H, N, N]
        attn = softmax(scores, axis=-1)  # rows (queries) are stochastic
        ctx = matmul(v, swapaxes(attn, 1, 2))  # [H, dh, N]
        out = self.wo(reshape(ctx, (D, N)))
        if return_weights:
            return out, attn
        return out


class FeedForward(Module):
    """Token-wise MLP: expand by ``ratio``, GELU, project back."""

    def __init__(self, dim: int, rng: np.random.Generator, ratio: int = 4,
                 gelu_exact: bool = False):
        self.lin1 = Linear(dim, ratio * dim, rng)
        self.lin2 = Linear(ratio * dim, dim, rng)
        self.gelu_exact = gelu_exact

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(gelu(self.lin1(x), exact=self.gelu_exact))
