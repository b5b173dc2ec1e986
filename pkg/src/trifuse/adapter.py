"""Parallel feed-forward adapter.

A bottleneck-up MLP that runs beside each frozen encoder layer's feed
forward block and adds its output into the residual stream. The branch
reads the post-attention residual (not its layer-normed copy), so the
layer output is

    out = ffn(ln(f)) + f + adapter(f)

``combine_branches`` is that three-way sum, registered as a differentiable
op so the gradient suite exercises it explicitly.
"""

from __future__ import annotations

import numpy as np

from .nn import Linear, Module
from .tensor import Tensor, add, gelu, register_differentiable

register_differentiable("pfa_apply")
register_differentiable("pfa_combine")


class ParallelAdapter(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.up = Linear(dim, hidden, rng)
        self.down = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


def combine_branches(ffn_out: Tensor, residual: Tensor, adapter_out: Tensor) -> Tensor:
    return add(add(ffn_out, residual), adapter_out)
