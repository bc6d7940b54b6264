"""Perspective-invariant attention and the block that wires the pipeline together."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .pdd import init_pdd, pdd_forward
from .pht import transform_perspective
from .space import PerspectiveSpace
from .tensor import DimensionError, Tensor
from .vr import VRShape, init_vr, reconstruct, reconstruction_loss

SELF = "self"
TRANSFORMED = "transformed"


@dataclass(frozen=True)
class PiaSchedule:
    warmup_fraction: float = 0.3
    total_epochs: int = 1

    @property
    def switch_epoch(self) -> int:
        """First epoch on the transformed path: ceil(warmup_fraction * total_epochs)."""
        frac = Fraction(str(self.warmup_fraction)) * self.total_epochs
        return math.ceil(frac)

    def mode(self, epoch: int) -> str:
        return SELF if epoch < self.switch_epoch else TRANSFORMED


def pia_weights(feat: Tensor, other: Tensor) -> Tensor:
    c = feat.shape[-1]
    return T.softmax_rows(T.matmul(feat, T.swap_last(other)), 1.0 / math.sqrt(c))


def pia(feat: Tensor, other: Tensor) -> Tensor:
    """I + softmax(I I'ᵀ / sqrt(C)) I' on (..., N, C) token maps."""
    if feat.shape != other.shape:
        raise DimensionError(f"pia: {feat.shape} vs {other.shape}")
    c = feat.shape[-1]
    return T.add(feat, T.attention_core(feat, other, other, 1.0 / math.sqrt(c)))


def self_attention(feat: Tensor) -> Tensor:
    """Warm-up degeneration of PIA: the transformed view is the input itself."""
    return pia(feat, feat)


@dataclass(frozen=True)
class BlockShape:
    c: int
    h: int
    w: int
    m: int = 4
    c_prime: int = 32
    heads: int = 4
    rec_grid: int = 4
    support_factor: float = 1.0
    pia_layers: int = 1
    resample: bool = False

    @property
    def vr(self) -> VRShape:
        return VRShape(self.c, self.h, self.w, self.m, self.c_prime,
                       grid=min(self.rec_grid, self.h, self.w), heads=self.heads)


@dataclass
class BlockDiagnostics:
    mode: str = SELF
    rec_loss: float = 0.0
    transform: list = field(default_factory=list)       # per-sample TransformStats
    features_in: np.ndarray | None = None
    features_mid: np.ndarray | None = None
    features_out: np.ndarray | None = None
    perspective: np.ndarray | None = None
    perspective_warped: np.ndarray | None = None


def init_block(rng: np.random.Generator, shape: BlockShape) -> dict:
    params = {}
    params.update({"pdd." + k: v for k, v in init_pdd(rng, shape.c, shape.c_prime, shape.heads).items()})
    params.update({"vr." + k: v for k, v in init_vr(rng, shape.vr).items()})
    for layer in range(1, shape.pia_layers):
        params.update(T.init_attention(rng, shape.c, prefix=f"pia{layer}."))
    params.update(T.init_mlp(rng, [shape.c, 2 * shape.c, shape.c], prefix="ffn."))
    return params


def init_plain_block(rng: np.random.Generator, shape: BlockShape) -> dict:
    return T.init_mlp(rng, [shape.c, 2 * shape.c, shape.c], prefix="ffn.")


def _sub(params: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def feed_forward(x: Tensor, params: dict) -> Tensor:
    return T.add(x, T.mlp(T.layer_norm(x), params, prefix="ffn."))


def plain_block_forward(x: Tensor, params: dict) -> Tensor:
    return feed_forward(self_attention(T.layer_norm(x)), params)


def block_forward(x: Tensor, scores: Tensor, params: dict, shape: BlockShape,
                  space: PerspectiveSpace | None, mode: str, keep_maps: bool = False,
                  transform=None) -> tuple:
    """One DLPL block on (..., N, C) tokens.

    ``transform`` maps P to (P', stats) and defaults to the space-driven PHT.
    Returns (output, reconstruction loss, detached P for the EMA queue, diagnostics).
    """
    pdd_p, vr_p = _sub(params, "pdd."), _sub(params, "vr.")
    vshape = shape.vr
    # blocks see unit-scale tokens so the Gram loss does not grow with depth
    x = T.layer_norm(x)
    out = pdd_forward(x, scores, pdd_p, shape.m, shape.heads, shape.support_factor, hw=(shape.h, shape.w))
    p = out.perspective
    rec = reconstruct(p, vshape, vr_p)
    # the target Gram is a constant: only the reconstruction path (and PDD through P) learns from it
    loss = reconstruction_loss(Tensor(x.data), rec)
    diag = BlockDiagnostics(mode=mode, rec_loss=float(loss.data))
    if transform is None and space is not None:
        def transform(q):
            return transform_perspective(q, space)
    if mode == TRANSFORMED and space is not None and space.initialized:
        p_warp, stats = transform(p)
        diag.transform = stats
        other = reconstruct(p_warp, vshape, vr_p)
        mid = pia(x, other)
        for layer in range(1, shape.pia_layers):
            if shape.resample:
                fresh = pdd_forward(mid, scores, pdd_p, shape.m, shape.heads, shape.support_factor,
                                    hw=(shape.h, shape.w)).perspective
                other = reconstruct(transform(fresh)[0], vshape, vr_p)
            mid = T.add(mid, T.multi_head_attention(mid, other, other, shape.heads, params,
                                                    prefix=f"pia{layer}."))
    else:
        diag.mode = SELF
        p_warp = p
        mid = self_attention(x)
        for layer in range(1, shape.pia_layers):
            mid = T.add(mid, T.multi_head_attention(mid, mid, mid, shape.heads, params,
                                                    prefix=f"pia{layer}."))
    y = feed_forward(mid, params)
    if keep_maps:
        diag.features_in = x.data.copy()
        diag.features_mid = mid.data.copy()
        diag.features_out = y.data.copy()
        diag.perspective = p.data.copy()
        diag.perspective_warped = p_warp.data.copy()
    return y, loss, p.data.copy(), diag
