"""Frozen transformer encoder shared by all modality streams.

One set of weights serves every modality; streams differ only in their
inputs and whatever prompt or adapter state the caller threads through the
layer loop. The layer keeps the usual pre-norm arrangement

    f   = attn(ln1(x)) + x
    out = ffn(ln2(f)) + f [+ adapter(f)]

with the optional adapter branch reading f itself, the post-attention
residual, not its normed copy.

The backbone does not orchestrate prompts; it exposes ``tokens`` for the
patch embedding front end and a list of layers for the caller to iterate,
so sequence surgery between layers stays out of this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapter import ParallelAdapter, combine_branches
from .nn import (FeedForward, LayerNorm, Linear, Module,
                 MultiHeadSelfAttention)
from .tensor import Param, Tensor, add, concat

TOKEN_STD = 0.02


@dataclass
class BackboneConfig:
    embed_dim: int = 64
    layers: int = 4
    heads: int = 4
    patch: int = 8
    image_h: int = 32
    image_w: int = 16
    channels: int = 3
    n_prompts: int = 4
    ffn_ratio: int = 4
    gelu_exact: bool = False

    def __post_init__(self):
        if self.image_h % self.patch or self.image_w % self.patch:
            raise ValueError("image sides must be divisible by the patch size")

    @property
    def n_patches(self) -> int:
        return (self.image_h // self.patch) * (self.image_w // self.patch)


class PatchEmbed(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.patch = cfg.patch
        self.channels = cfg.channels
        self.proj = Linear(cfg.channels * cfg.patch ** 2, cfg.embed_dim, rng)

    def __call__(self, image: np.ndarray) -> Tensor:
        c, h, w = image.shape
        p = self.patch
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        hp, wp = h // p, w // p
        cols = (image.reshape(c, hp, p, wp, p)
                     .transpose(1, 3, 0, 2, 4)
                     .reshape(hp * wp, c * p * p)
                     .T)
        return self.proj(Tensor(np.ascontiguousarray(cols)))


class EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 ffn_ratio: int = 4, gelu_exact: bool = False):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, rng, ratio=ffn_ratio, gelu_exact=gelu_exact)

    def __call__(self, x: Tensor,
                 adapter: ParallelAdapter | None = None) -> Tensor:
        f = add(self.attn(self.norm1(x)), x)
        ffn_out = self.ffn(self.norm2(f))
        if adapter is None:
            return add(ffn_out, f)
        return combine_branches(ffn_out, f, adapter(f))


class VisionBackbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = PatchEmbed(cfg, rng)
        self.cls = Param(TOKEN_STD * rng.standard_normal((cfg.embed_dim, 1)))
        self.pos = Param(TOKEN_STD * rng.standard_normal(
            (cfg.embed_dim, 1 + cfg.n_patches)))
        self.blocks = [
            EncoderLayer(cfg.embed_dim, cfg.heads, rng,
                         ffn_ratio=cfg.ffn_ratio, gelu_exact=cfg.gelu_exact)
            for _ in range(cfg.layers)
        ]
        self.norm = LayerNorm(cfg.embed_dim)

    def tokens(self, image: np.ndarray) -> Tensor:
        """Class token plus patch embeddings, with positions added."""
        patches = self.embed(image)
        return add(concat([self.cls, patches], axis=1), self.pos)
