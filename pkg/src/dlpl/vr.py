"""Visual reconstruction: map a perspective representation back to a feature map."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .resample import resize_matrix
from .tensor import ConfigurationError, DimensionError, Tensor


@dataclass(frozen=True)
class VRShape:
    c: int            # output channels
    h: int
    w: int
    m: int            # levels per axis; M*M nodes
    c_in: int         # perspective width C'
    grid: int = 4     # side of the coarse grid each node is unsqueezed to
    agg_dim: int = 64
    heads: int = 4
    dec_heads: int = 1

    @property
    def slab(self) -> int:
        return self.c * self.grid * self.grid


def init_vr(rng: np.random.Generator, shape: VRShape) -> dict:
    params = {}
    params.update(T.init_mlp(rng, [shape.c_in, shape.c_in, shape.slab], prefix="unsq."))
    params["down_w"], params["down_b"] = T.init_linear(rng, shape.slab, shape.agg_dim)
    params.update(T.init_attention(rng, shape.agg_dim, prefix="lvl."))
    params["up_w"], params["up_b"] = T.init_linear(rng, shape.agg_dim, shape.slab, gain=0.5)
    params["mix"] = Tensor(np.zeros(shape.m * shape.m), requires_grad=True)
    params["pos"] = Tensor(np.zeros((shape.h * shape.w, shape.c)), requires_grad=True)
    params.update(T.init_attention(rng, shape.c, prefix="dec."))
    params.update(T.init_mlp(rng, [shape.c, 2 * shape.c, shape.c], prefix="ffn."))
    return params


def reconstruct(p: Tensor, shape: VRShape, params: dict) -> Tensor:
    """(..., M*M, C') perspective -> (..., H*W, C) feature tokens."""
    nodes = shape.m * shape.m
    if p.shape[-2:] != (nodes, shape.c_in):
        raise ConfigurationError(
            f"reconstruct: expected perspective (..., {nodes}, {shape.c_in}), got {p.shape}")
    lead = p.shape[:-2]
    slabs = T.mlp(p, params, prefix="unsq.")                           # (..., M*M, slab)
    z = T.affine(slabs, params["down_w"], params["down_b"])
    z = T.multi_head_attention(z, z, z, shape.heads, params, prefix="lvl.")
    slabs = T.add(slabs, T.affine(z, params["up_w"], params["up_b"]))
    mix = T.softmax_rows(T.reshape(params["mix"], (1, nodes)))           # (1, M*M)
    squeezed = T.matmul(mix, slabs)                                     # (..., 1, slab)
    coarse = T.reshape(squeezed, lead + (shape.grid * shape.grid, shape.c))
    up = resize_matrix(shape.grid, shape.grid, shape.h, shape.w)
    x = T.matmul(Tensor(up), coarse) if up.shape[0] != up.shape[1] else coarse
    x = T.add(x, params["pos"])
    x = T.add(x, T.multi_head_attention(x, x, x, shape.dec_heads, params, prefix="dec."))
    return T.add(x, T.mlp(x, params, prefix="ffn."))


def gram(x: Tensor) -> Tensor:
    """Token affinity x xᵀ of (..., N, C) features, i.e. IᵀI for a C x N map."""
    return T.matmul(x, T.swap_last(x))


def reconstruction_loss(feat: Tensor, rec: Tensor) -> Tensor:
    """||IᵀI - I_recᵀI_rec||_F / (H W), averaged over any leading batch axes."""
    if feat.shape != rec.shape:
        raise DimensionError(f"reconstruction_loss: {feat.shape} vs {rec.shape}")
    n = feat.shape[-2]
    per = T.norm(T.sub(gram(feat), gram(rec)), axes=(-2, -1))
    return T.mul(T.mean(per), 1.0 / n)
