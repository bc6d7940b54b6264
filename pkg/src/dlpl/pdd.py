"""Perspective discrete decomposition.

Feature maps are stored token-major: a C x H x W map is a (..., H*W, C) array
with row-major spatial order.  The pipeline is

    I, S --point-ness attention--> F --normalise, levels, spires--> D
      --level co-occurrence--> D_hat --counts + position sums, MLP--> G
      --self-attention over level pairs--> P   (..., M*M, C')
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ConfigurationError, DimensionError, Tensor


@dataclass
class Levels:
    values: np.ndarray      # (..., M, C)
    spacing: np.ndarray     # (..., C)
    degenerate: np.ndarray  # (..., C) bool, max == min

    @property
    def m(self) -> int:
        return self.values.shape[-2]


def init_pdd(rng: np.random.Generator, c: int, c_out: int, heads: int) -> dict:
    params = {}
    params["s_w"], params["s_b"] = T.init_linear(rng, 1 + c, c)
    params.update(T.init_mlp(rng, [c, c_out, c_out], prefix="phi."))
    params.update(T.init_attention(rng, c_out, prefix="agg."))
    return params


def pointness_tokens(scores: Tensor, pe: np.ndarray, params: dict) -> Tensor:
    """Embed point-ness scores (..., N) with their position code into (..., N, C) tokens."""
    lead = scores.shape[:-1]
    n = scores.shape[-1]
    s = T.reshape(scores, lead + (n, 1))
    feats = T.concat([s, Tensor(np.broadcast_to(pe, lead + pe.shape))], axis=-1)
    return T.affine(feats, params["s_w"], params["s_b"])


def pointness_attention(feat: Tensor, scores: Tensor, pe: np.ndarray, params: dict) -> Tensor:
    """softmax(I S_tokᵀ / sqrt(C)) S_tok for features (..., N, C) and scores (..., N)."""
    if feat.shape[:-1] != scores.shape:
        raise DimensionError(f"pointness_attention: features {feat.shape} vs point-ness {scores.shape}")
    c = feat.shape[-1]
    s_tok = pointness_tokens(scores, pe, params)
    return T.attention_core(feat, s_tok, s_tok, 1.0 / math.sqrt(c))


def compute_levels(feat: np.ndarray, m: int) -> Levels:
    """Per-channel levels L_m = (m max + (M - m) min) / M over the spatial axis (-2)."""
    if m < 2:
        raise ConfigurationError(f"need at least 2 levels, got {m}")
    feat = np.asarray(feat, dtype=np.float64)
    lo = feat.min(axis=-2)
    hi = feat.max(axis=-2)
    idx = np.arange(1, m + 1, dtype=np.float64)[:, None]
    values = (idx * hi[..., None, :] + (m - idx) * lo[..., None, :]) / m
    return Levels(values, (hi - lo) / m, hi == lo)


def normalize_channels(feat: Tensor) -> Tensor:
    """Per-channel min-max scaling to [0, 1]; constant channels map to 0."""
    lo = T.amin(feat, axis=-2, keepdims=True)
    hi = T.amax(feat, axis=-2, keepdims=True)
    return T.safe_div(T.sub(feat, lo), T.sub(hi, lo))


def discretize(feat: Tensor, levels: Levels, support_factor: float = 1.0) -> Tensor:
    """Spire-shaped soft assignment D[..., m, n, c] of features (..., N, C) to levels.

    D = 1 - |L_m - F| where |L_m - F| < support_factor * spacing / 2, else 0.
    A value exactly half a spacing above a level is assigned to that level.
    """
    if support_factor < 1.0:
        raise ConfigurationError(f"support_factor must be >= 1, got {support_factor}")
    lead = feat.shape[:-2]
    n, c = feat.shape[-2:]
    f = T.reshape(feat, lead + (1, n, c))
    lv = levels.values[..., :, None, :]
    diff = T.sub(f, lv)
    dist = T.tabs(diff)
    half = (support_factor * levels.spacing / 2.0)[..., None, None, :]
    mask = (dist.data < half) | ((dist.data == half) & (diff.data > 0))
    mask &= ~levels.degenerate[..., None, None, :]
    return T.mul(T.sub(1.0, dist), mask.astype(np.float64))


def cooccurrence(d: Tensor) -> Tensor:
    """Per-channel outer product over levels: (..., M, N, C) -> (..., M, M, N, C)."""
    lead = d.shape[:-3]
    m, n, c = d.shape[-3:]
    return T.mul(T.reshape(d, lead + (m, 1, n, c)), T.reshape(d, lead + (1, m, n, c)))


def cooccurrence_moment(d: Tensor, weights: np.ndarray) -> Tensor:
    """sum_n D[m1, n, c] D[m2, n, c] w[n, c] without materialising the co-occurrence tensor.

    Equals ``(cooccurrence(d) * weights).sum(axis=-2)`` for (N, C) ``weights``.
    """
    nd = d.ndim
    a = np.moveaxis(d.data, -1, -3)                  # (..., C, M, N)
    wt = np.swapaxes(np.asarray(weights), -1, -2)    # (C, N)
    aw = a * wt[..., None, :]
    out = np.moveaxis(np.matmul(aw, np.swapaxes(a, -1, -2)), -3, -1)

    def backward(g):
        gt = np.moveaxis(g, -1, -3)
        ga = np.matmul(gt + np.swapaxes(gt, -1, -2), aw)
        return (np.moveaxis(ga, -3, nd - 1),)

    return T._make("cooccurrence_moment", out, (d,), backward)


@dataclass
class GraphParts:
    counts: Tensor      # (..., M, M, C) normalised level-pair counts
    positional: Tensor  # (..., M, M, C) position-weighted sums (same normaliser)
    graph: Tensor       # (..., M, M, C') after the MLP


def _graph_from_moments(num: Tensor, pos: Tensor, params: dict) -> GraphParts:
    total = T.tsum(T.tsum(num, axis=-2, keepdims=True), axis=-3, keepdims=True)
    counts = T.safe_div(num, total)
    positional = T.safe_div(pos, total)
    graph = T.mlp(T.add(counts, positional), params, prefix="phi.")
    return GraphParts(counts, positional, graph)


def perspective_graph(d_hat: Tensor, pe: np.ndarray, params: dict) -> GraphParts:
    """Graph nodes from an explicit co-occurrence tensor (..., M, M, N, C)."""
    num = T.tsum(d_hat, axis=-2)
    pos = T.tsum(T.mul(d_hat, pe), axis=-2)
    return _graph_from_moments(num, pos, params)


def perspective_graph_from_levels(d: Tensor, pe: np.ndarray, params: dict) -> GraphParts:
    """Same as ``perspective_graph(cooccurrence(d), ...)`` at O(M^2 N C) memory-free cost."""
    num = cooccurrence_moment(d, np.ones_like(pe))
    pos = cooccurrence_moment(d, pe)
    return _graph_from_moments(num, pos, params)


def perspective_aggregate(graph: Tensor, params: dict, heads: int) -> Tensor:
    """Self-attention with residual over the M*M level-pair nodes: (..., M, M, C') -> (..., M*M, C')."""
    lead = graph.shape[:-3]
    m1, m2, c = graph.shape[-3:]
    tokens = T.reshape(graph, lead + (m1 * m2, c))
    return T.add(tokens, T.multi_head_attention(tokens, tokens, tokens, heads, params, prefix="agg."))


@dataclass
class PddOutput:
    perspective: Tensor     # (..., M*M, C')
    prototype: Tensor       # F, (..., N, C)
    levels: Levels
    embedding: Tensor       # D, (..., M, N, C)
    parts: GraphParts


def pdd_forward(feat: Tensor, scores: Tensor, params: dict, m: int, heads: int,
                support_factor: float = 1.0, pe: np.ndarray | None = None,
                hw: tuple | None = None) -> PddOutput:
    """Perspective representation P of features (..., N, C) given point-ness (..., N)."""
    n, c = feat.shape[-2:]
    if pe is None:
        if hw is None:
            raise ConfigurationError("pdd_forward needs either a position code or the grid size")
        pe = T.pos_enc_2d(hw[0], hw[1], c).reshape(n, c)
    proto = pointness_attention(feat, scores, pe, params)
    normed = normalize_channels(proto)
    levels = compute_levels(normed.data, m)
    d = discretize(normed, levels, support_factor)
    parts = perspective_graph_from_levels(d, pe, params)
    p = perspective_aggregate(parts.graph, params, heads)
    return PddOutput(p, proto, levels, d, parts)
