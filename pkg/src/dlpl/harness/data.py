"""Procedural perspective-shift segmentation scenes.

A canonical fronto-parallel scene (textured ground plane plus 3-8 convex shapes)
is rendered through a random homography obtained by jittering the image
corners.  Labels and pixels come from the same inverse mapping, so supervision
is pixel-aligned by construction.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..tensor import ConfigurationError

MAGIC = b"DLPD"
VERSION = 1
TRAIN, TEST = 0, 1

# per-class base colours; class 0 is the ground plane
_PALETTE = np.array([
    [0.55, 0.50, 0.40], [0.80, 0.25, 0.20], [0.25, 0.65, 0.30], [0.25, 0.35, 0.80],
    [0.85, 0.75, 0.20], [0.65, 0.30, 0.70], [0.20, 0.70, 0.75], [0.90, 0.55, 0.25],
])


def class_color(c: int) -> np.ndarray:
    if c < len(_PALETTE):
        return _PALETTE[c]
    return np.random.default_rng(1000 + c).uniform(0.15, 0.9, 3)


@dataclass
class SegSample:
    image: np.ndarray     # (3, S, S) in [0, 1]
    labels: np.ndarray    # (S, S) ints
    view_h: np.ndarray    # (3, 3) canonical -> view pixel coordinates
    split: int


@dataclass
class Dataset:
    images: np.ndarray    # (n, 3, S, S) float64, multiples of 1/255
    labels: np.ndarray    # (n, S, S) uint8
    view_h: np.ndarray    # (n, 3, 3)
    split: np.ndarray     # (n,) 0 train / 1 test
    num_classes: int

    def __len__(self) -> int:
        return len(self.images)

    @property
    def img_size(self) -> int:
        return self.images.shape[-1]

    def subset(self, which: int) -> "Dataset":
        idx = np.flatnonzero(self.split == which)
        return Dataset(self.images[idx], self.labels[idx], self.view_h[idx], self.split[idx],
                       self.num_classes)

    def __getitem__(self, i: int) -> SegSample:
        return SegSample(self.images[i], self.labels[i].astype(np.int64), self.view_h[i],
                         int(self.split[i]))


def homography_from_corners(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact 4-point homography mapping ``src`` corners onto ``dst``."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    h = np.append(np.linalg.solve(a, b), 1.0)
    return h.reshape(3, 3)


def sample_view(rng: np.random.Generator, size: int, strength: float) -> np.ndarray:
    if strength == 0:
        return np.eye(3)
    corners = np.array([[0, 0], [size, 0], [size, size], [0, size]], dtype=np.float64)
    jitter = rng.uniform(-0.5, 0.5, size=(4, 2)) * strength * size
    return homography_from_corners(corners, corners + jitter)


def _shape_mask(kind, geom, x, y):
    if kind == "ellipse":
        cx, cy, ra, rb, th = geom
        dx, dy = x - cx, y - cy
        c, s = math.cos(th), math.sin(th)
        u, v = c * dx + s * dy, -s * dx + c * dy
        return (u / ra) ** 2 + (v / rb) ** 2 <= 1.0
    inside = np.ones_like(x, dtype=bool)
    pts = geom
    for (x0, y0), (x1, y1) in zip(pts, np.roll(pts, -1, axis=0)):
        inside &= (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= 0
    return inside


def _random_shape(rng, size):
    cx, cy = rng.uniform(0.2, 0.8, 2) * size
    ra, rb = rng.uniform(0.09, 0.2, 2) * size
    th = rng.uniform(0, math.pi)
    if rng.random() < 0.5:
        return "ellipse", (cx, cy, ra, rb, th)
    k = int(rng.integers(3, 7))
    ang = np.sort(rng.uniform(0, 2 * math.pi, k))
    ang[0] = 0.0 if k == 3 else ang[0]
    ang = np.sort(ang + np.linspace(0, 2 * math.pi, k, endpoint=False) * 0.5) % (2 * math.pi)
    ang = np.sort(ang)
    c, s = math.cos(th), math.sin(th)
    px, py = ra * np.cos(ang), rb * np.sin(ang)
    pts = np.stack([cx + c * px - s * py, cy + s * px + c * py], axis=1)
    return "polygon", pts


def render_sample(rng: np.random.Generator, size: int, num_classes: int, strength: float) -> tuple:
    """One (image, labels, view_h) triple."""
    if num_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {num_classes}")
    n_shapes = int(rng.integers(3, 9))
    fg = list(range(1, num_classes))
    forced = list(rng.permutation(fg))[: min(len(fg), n_shapes)]
    extra = list(rng.integers(1, num_classes, size=n_shapes - len(forced)))
    classes = extra + forced            # guaranteed classes drawn last, on top
    shapes = [_random_shape(rng, size) for _ in classes]
    colors = [np.clip(class_color(c) + rng.normal(0, 0.08, 3), 0, 1) for c in classes]
    freqs = [rng.uniform(0.25, 0.6) for _ in classes]
    ground = np.clip(class_color(0) + rng.normal(0, 0.1, 3), 0, 1)
    gfreq = rng.uniform(0.1, 0.3, 2)
    gphase = rng.uniform(0, 2 * math.pi, 2)
    view_h = sample_view(rng, size, strength)

    v, u = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    src = np.linalg.inv(view_h) @ np.stack([u.ravel(), v.ravel(), np.ones(u.size)])
    x = (src[0] / src[2]).reshape(size, size)
    y = (src[1] / src[2]).reshape(size, size)

    tex = 0.5 + 0.5 * np.sin(gfreq[0] * x + gphase[0]) * np.sin(gfreq[1] * y + gphase[1])
    image = ground[:, None, None] * (0.75 + 0.25 * tex)[None]
    labels = np.zeros((size, size), dtype=np.uint8)
    for cls, (kind, geom), col, fq in zip(classes, shapes, colors, freqs):
        mask = _shape_mask(kind, geom, x, y)
        # class-specific stripe orientation on the canonical plane
        ang = math.pi * cls / num_classes
        stripes = 0.5 + 0.5 * np.sin(fq * (math.cos(ang) * x + math.sin(ang) * y))
        shade = col[:, None, None] * (0.7 + 0.3 * stripes)[None]
        image = np.where(mask[None], shade, image)
        labels[mask] = cls
    image = np.clip(image + rng.normal(0, 0.02, image.shape), 0, 1)
    image = np.round(image * 255.0) / 255.0
    return image, labels, view_h


def generate_dataset(n_train: int = 2000, n_test: int = 500, num_classes: int = 4, img_size: int = 64,
                     warp_strength_train: float = 0.1, warp_strength_test: float = 0.4,
                     seed: int = 0) -> Dataset:
    for name, s in (("warp_strength_train", warp_strength_train), ("warp_strength_test", warp_strength_test)):
        if not 0.0 <= s <= 1.0:
            raise ConfigurationError(f"{name} must lie in [0, 1], got {s}")
    if n_train < 0 or n_test < 0:
        raise ConfigurationError("sample counts must be non-negative")
    n = n_train + n_test
    images = np.zeros((n, 3, img_size, img_size))
    labels = np.zeros((n, img_size, img_size), dtype=np.uint8)
    views = np.zeros((n, 3, 3))
    split = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        which = TRAIN if i < n_train else TEST
        strength = warp_strength_train if which == TRAIN else warp_strength_test
        rng = np.random.default_rng([seed, which, i])
        images[i], labels[i], views[i] = render_sample(rng, img_size, num_classes, strength)
        split[i] = which
    return Dataset(images, labels, views, split, num_classes)


def save_dataset(path, ds: Dataset) -> None:
    n = len(ds)
    n_train = int((ds.split == TRAIN).sum())
    header = MAGIC + struct.pack("<6I", VERSION, n_train, n - n_train, ds.num_classes, ds.img_size, 3)
    body = [
        np.round(ds.images * 255.0).astype(np.uint8).tobytes(),
        ds.labels.astype(np.uint8).tobytes(),
        ds.view_h.astype("<f8").tobytes(),
        ds.split.astype(np.uint8).tobytes(),
    ]
    Path(path).write_bytes(header + b"".join(body))


def load_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise IOError(f"{path}: not a dataset file (bad magic)")
    version, n_train, n_test, num_classes, size, chans = struct.unpack_from("<6I", buf, 4)
    if version != VERSION:
        raise IOError(f"{path}: unsupported dataset version {version}")
    n = n_train + n_test
    pos = 4 + 24
    img_bytes = n * chans * size * size
    lab_bytes = n * size * size
    need = pos + img_bytes + lab_bytes + n * 72 + n
    if len(buf) != need:
        raise IOError(f"{path}: expected {need} bytes, found {len(buf)}")
    images = np.frombuffer(buf, np.uint8, img_bytes, pos).reshape(n, chans, size, size) / 255.0
    pos += img_bytes
    labels = np.frombuffer(buf, np.uint8, lab_bytes, pos).reshape(n, size, size).copy()
    pos += lab_bytes
    views = np.frombuffer(buf, "<f8", n * 9, pos).reshape(n, 3, 3).copy()
    pos += n * 72
    split = np.frombuffer(buf, np.uint8, n, pos).copy()
    return Dataset(images, labels, views, split, num_classes)
