"""Segmentation model: patch-embedding stem, DLPL (or plain) blocks, linear head."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import tensor as T
from ..config import ModelConfig
from ..pia import SELF, BlockShape, block_forward, init_block, init_plain_block, plain_block_forward
from ..pointness import structure_tensor_pointness
from ..resample import resize, resize_matrix
from ..space import PerspectiveSpace, ema_update
from ..tensor import Tensor


@dataclass
class ForwardResult:
    logits: Tensor                        # (B, S*S, classes)
    rec_losses: list = field(default_factory=list)
    perspectives: list = field(default_factory=list)   # per block, detached (B, M*M, C')
    diagnostics: list = field(default_factory=list)

    @property
    def rec_loss(self) -> Tensor:
        if not self.rec_losses:
            return Tensor(np.array(0.0))
        total = self.rec_losses[0]
        for r in self.rec_losses[1:]:
            total = T.add(total, r)
        return T.mul(total, 1.0 / len(self.rec_losses))


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, 3, S, S) -> (B, (S/p)^2, 3 p p) row-major patches."""
    b, c, s, _ = images.shape
    g = s // patch
    x = images.reshape(b, c, g, patch, g, patch).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, g * g, c * patch * patch)


def pointness_scores(images: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Point-ness maps resized to the token grid, flattened to (n, grid*grid)."""
    g = cfg.grid
    out = np.zeros((len(images), g * g))
    for i, img in enumerate(images):
        pmap = structure_tensor_pointness(img, cfg.pointness_window, cfg.pointness_kappa)
        out[i] = resize(pmap.values, g, g).ravel()
    return out


class SegModel:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg.validate()
        g, c = cfg.grid, cfg.embed_dim
        self.shape = BlockShape(c, g, g, cfg.levels, cfg.c_prime, cfg.heads, cfg.rec_grid,
                                cfg.support_factor, cfg.pia_layers, cfg.resample)
        self.pe = T.pos_enc_2d(g, g, c).reshape(g * g, c)
        # stored transposed: logits are formed as (classes x tokens) @ U^T, one wide GEMM
        self.upsample_t = np.ascontiguousarray(resize_matrix(g, g, cfg.img_size, cfg.img_size).T)
        # stem/head share one stream so baseline and DLPL variants start identically
        rng = np.random.default_rng([cfg.seed, 0])
        self.params = {}
        self.params["stem.w"], self.params["stem.b"] = T.init_linear(rng, 3 * cfg.patch ** 2, c)
        self.params["head.w"], self.params["head.b"] = T.init_linear(rng, c, cfg.num_classes)
        for i in range(cfg.num_blocks):
            brng = np.random.default_rng([cfg.seed, 1 + i])
            init = init_plain_block if cfg.baseline else init_block
            self.params.update({f"block{i}.{k}": v for k, v in init(brng, self.shape).items()})
        dim = cfg.levels ** 2 * cfg.c_prime
        self.spaces = [] if cfg.baseline else [
            PerspectiveSpace.empty(cfg.space_size, dim, cfg.ema_alpha, seed=cfg.seed * 1000 + i)
            for i in range(cfg.num_blocks)]

    @property
    def is_baseline(self) -> bool:
        return self.cfg.baseline

    def block_params(self, i: int) -> dict:
        prefix = f"block{i}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def parameter_counts(self) -> dict:
        counts = {"stem": 0, "head": 0, "blocks": 0, "pdd": 0, "vr": 0, "pia": 0, "ffn": 0}
        for name, p in self.params.items():
            n = p.data.size
            head = name.split(".")[0]
            if head in ("stem", "head"):
                counts[head] += n
                continue
            counts["blocks"] += n
            part = name.split(".")[1]
            counts["pia" if part.startswith("pia") else part] += n
        counts["total"] = sum(counts[k] for k in ("stem", "head", "blocks"))
        return counts

    def forward(self, images: np.ndarray, scores: np.ndarray, mode: str = SELF,
                keep_maps: bool = False) -> ForwardResult:
        cfg = self.cfg
        x = T.affine(Tensor(patchify(images, cfg.patch)), self.params["stem.w"], self.params["stem.b"])
        x = T.add(x, self.pe)
        s = Tensor(scores)
        res = ForwardResult(logits=None)
        for i in range(cfg.num_blocks):
            bp = self.block_params(i)
            if self.is_baseline:
                x = plain_block_forward(x, bp)
                continue
            x, loss, p, diag = block_forward(x, s, bp, self.shape, self.spaces[i], mode, keep_maps)
            res.rec_losses.append(loss)
            res.perspectives.append(p)
            res.diagnostics.append(diag)
        tok = T.affine(T.layer_norm(x), self.params["head.w"], self.params["head.b"])
        res.logits = T.swap_last(T.matmul(T.swap_last(tok), Tensor(self.upsample_t)))
        return res

    def update_spaces(self, perspectives: list) -> None:
        for space, p in zip(self.spaces, perspectives):
            ema_update(space, p.reshape(len(p), -1))

    def state_records(self) -> dict:
        rec = {k: v.data for k, v in self.params.items()}
        for i, sp in enumerate(self.spaces):
            rec.update(sp.to_records(prefix=f"space{i}."))
        return rec

    def load_records(self, records: dict) -> None:
        for k, v in self.params.items():
            if k not in records:
                raise IOError(f"checkpoint lacks parameter {k!r}")
            if records[k].shape != v.data.shape:
                raise IOError(f"checkpoint parameter {k!r} has shape {records[k].shape}, "
                              f"model expects {v.data.shape}")
            v.data = records[k].copy()
        for i in range(len(self.spaces)):
            self.spaces[i] = PerspectiveSpace.from_records(records, prefix=f"space{i}.")


def build_model(cfg: ModelConfig) -> SegModel:
    return SegModel(cfg)


def added_parameters(cfg: ModelConfig) -> int:
    """Parameters a DLPL model carries beyond the matched plain-attention baseline."""
    dl = SegModel(replace(cfg, baseline=False)).parameter_counts()["total"]
    base = SegModel(replace(cfg, baseline=True)).parameter_counts()["total"]
    return dl - base
