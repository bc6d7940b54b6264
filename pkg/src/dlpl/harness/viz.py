"""Per-block feature-map dumps as binary portable graymaps (PGM, P5)."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..pia import SELF, feed_forward, self_attention
from .model import SegModel, patchify, pointness_scores

HEATMAP_SCALE = 16     # perspective grids are tiny; enlarge cells for viewing


def to_gray8(grid: np.ndarray) -> np.ndarray:
    """Min-max normalise to 0..255; a constant map becomes all zeros."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = g.min(), g.max()
    if hi <= lo:
        return np.zeros(g.shape, dtype=np.uint8)
    return np.round((g - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, grid: np.ndarray) -> Path:
    img = to_gray8(grid)
    h, w = img.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise IOError(f"{path}: not a binary graymap")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


@dataclass
class FeatureDump:
    files: list = field(default_factory=list)
    maps: dict = field(default_factory=dict)        # name -> float grid before quantisation
    diagnostics: list = field(default_factory=list)


def dump_feature_maps(model: SegModel, image: np.ndarray, out_dir, mode: str = SELF,
                      scores: np.ndarray | None = None, tag: str = "sample") -> FeatureDump:
    """Write block{i}_in / block{i}_out / block{i}_pwarp graymaps for one image.

    ``in`` and ``out`` are channel means of the block's input and output token
    maps on the token grid; ``pwarp`` is the channel mean of the (possibly
    warped) perspective grid.  Baseline models have no perspective, so their
    third map is the channel mean of the attention output.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    image = np.asarray(image, dtype=np.float64)[None]
    if scores is None:
        scores = pointness_scores(image, model.cfg)
    cfg = model.cfg
    g, m = cfg.grid, cfg.levels
    dump = FeatureDump()
    with T.no_grad():
        res = model.forward(image, np.asarray(scores).reshape(1, -1), mode, keep_maps=True)
    if model.is_baseline:
        maps = _baseline_maps(model, image, scores)
    else:
        maps = []
        for d in res.diagnostics:
            maps.append((d.features_in[0], d.features_out[0], d.perspective_warped[0], d.perspective[0]))
    dump.diagnostics = res.diagnostics
    try:
        for i, (fin, fout, pw, p) in enumerate(maps):
            side = m if pw.shape[0] == m * m else g
            grids = {"in": fin.mean(axis=-1).reshape(g, g), "out": fout.mean(axis=-1).reshape(g, g),
                     "pwarp": pw.mean(axis=-1).reshape(side, side)}
            dump.maps[f"block{i}_p"] = p.mean(axis=-1).reshape(side, side)
            for name, grid in grids.items():
                key = f"block{i}_{name}"
                dump.maps[key] = grid
                if name == "pwarp":
                    grid = np.kron(grid, np.ones((HEATMAP_SCALE, HEATMAP_SCALE)))
                dump.files.append(write_pgm(out / f"{tag}_{key}.pgm", grid))
    except OSError as exc:
        raise OSError(f"cannot write feature maps to {out}: {exc}") from exc
    return dump


def _baseline_maps(model: SegModel, image: np.ndarray, scores) -> list:
    cfg = model.cfg
    maps = []
    with T.no_grad():
        x = T.affine(T.Tensor(patchify(image, cfg.patch)), model.params["stem.w"], model.params["stem.b"])
        x = T.add(x, model.pe)
        for i in range(cfg.num_blocks):
            feat = T.layer_norm(x)
            mid = self_attention(feat)
            y = feed_forward(mid, model.block_params(i))
            maps.append((feat.data[0], y.data[0], mid.data[0], mid.data[0]))
            x = y
    return maps
