"""Homography transformation of perspective grids.

Each perspective P is an M x M grid of C'-dim cells, stored as (M*M, C') rows in
row-major cell order.  Cell centres sit on [-1, 1]^2 with the outer cells on the
boundary; x runs along columns and y along rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .space import PerspectiveSpace, log_density_and_responsibilities, responsibility_entropy
from .tensor import DimensionError, Tensor

R_MIN = 0.01


@dataclass
class Homography:
    matrix: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.matrix = canonical(self.matrix)


@dataclass
class Correspondences:
    src: np.ndarray       # (n, 2)
    dst: np.ndarray       # (n, 2)
    weight: np.ndarray    # (n,)

    @property
    def usable(self) -> int:
        return int((self.weight > 0).sum())

    @property
    def degenerate(self) -> bool:
        return self.usable < 4


def canonical(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    h = h / np.linalg.norm(h)
    return -h if h[2, 2] < 0 else h


def identity() -> Homography:
    return Homography(np.eye(3), degenerate=False)


def cell_centers(m: int) -> np.ndarray:
    """(M*M, 2) normalised (x, y) centres in row-major cell order."""
    ax = np.zeros(1) if m == 1 else np.linspace(-1.0, 1.0, m)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def _unit_rows(x: np.ndarray) -> tuple:
    nrm = np.linalg.norm(x, axis=-1)
    return x / np.where(nrm > 0, nrm, 1.0)[..., None], nrm


def match_cells(p: np.ndarray, q: np.ndarray) -> Correspondences:
    """Map every cell of ``p`` to its most cosine-similar cell of ``q``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64).reshape(p.shape)
    m = int(round(math.sqrt(p.shape[0])))
    if m * m != p.shape[0]:
        raise DimensionError(f"match_cells: {p.shape[0]} cells do not form a square grid")
    pu, pn = _unit_rows(p)
    qu, _ = _unit_rows(q)
    sim = pu @ qu.T
    best = np.argmax(sim, axis=1)
    weight = np.clip(sim[np.arange(len(best)), best], 0.0, 1.0)
    weight[pn == 0] = 0.0
    centers = cell_centers(m)
    return Correspondences(centers, centers[best], weight)


def _normalizers(pts: np.ndarray, use: np.ndarray) -> np.ndarray:
    """Hartley similarity per set: zero centroid, mean distance sqrt(2) over used points."""
    cnt = np.maximum(use.sum(axis=1), 1)[:, None]
    c = (pts * use[..., None]).sum(axis=1) / cnt
    dist = (np.linalg.norm(pts - c[:, None, :], axis=2) * use).sum(axis=1) / cnt[:, 0]
    s = np.where(dist > 0, math.sqrt(2.0) / np.where(dist > 0, dist, 1.0), 1.0)
    t = np.zeros((len(pts), 3, 3))
    t[:, 0, 0] = t[:, 1, 1] = s
    t[:, 0, 2] = -s * c[:, 0]
    t[:, 1, 2] = -s * c[:, 1]
    t[:, 2, 2] = 1.0
    return t


def _apply_batch(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ph = np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1) @ np.swapaxes(h, -1, -2)
    return ph[..., :2] / ph[..., 2:3]


def dlt_batch(src: np.ndarray, dst: np.ndarray, weight: np.ndarray, rank_tol: float = 1e-9) -> tuple:
    """Weighted normalised DLT for S problems at once.

    ``src``, ``dst`` are (S, n, 2), ``weight`` is (S, n).  Returns canonical
    (S, 3, 3) homographies and an (S,) degenerate mask (identity where set).
    """
    src, dst, weight = (np.asarray(a, dtype=np.float64) for a in (src, dst, weight))
    use = weight > 0
    n_use = use.sum(axis=1)
    ts, td = _normalizers(src, use), _normalizers(dst, use)
    s = _apply_batch(ts, src)
    d = _apply_batch(td, dst)
    x, y, u, v = s[..., 0], s[..., 1], d[..., 0], d[..., 1]
    z, o = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -o, z, z, z, u * x, u * y, u], axis=-1)
    r2 = np.stack([z, z, z, -x, -y, -o, v * x, v * y, v], axis=-1)
    a = np.stack([r1, r2], axis=2).reshape(len(src), -1, 9)
    a = a * np.repeat(weight * use, 2, axis=1)[..., None]
    _, sv, vt = np.linalg.svd(a)
    h = np.linalg.inv(td) @ vt[:, -1].reshape(-1, 3, 3) @ ts
    h = h / np.linalg.norm(h, axis=(1, 2), keepdims=True)
    centred = (src - (src * use[..., None]).sum(axis=1, keepdims=True)
               / np.maximum(n_use, 1)[:, None, None]) * use[..., None]
    spread = np.linalg.svd(centred, compute_uv=False)
    collinear = spread[:, 1] <= 1e-9 * np.maximum(spread[:, 0], 1e-300)
    bad = (n_use < 4) | collinear | (sv[:, -2] <= rank_tol * sv[:, 0]) | (np.abs(np.linalg.det(h)) < 1e-12)
    h[bad] = np.eye(3)
    h = h / np.linalg.norm(h, axis=(1, 2), keepdims=True)
    h[h[:, 2, 2] < 0] *= -1.0
    return h, bad


def estimate_homography(corr: Correspondences, rank_tol: float = 1e-9) -> Homography:
    """Weighted, Hartley-normalised DLT; degenerate input yields the identity."""
    h, bad = dlt_batch(corr.src[None], corr.dst[None], corr.weight[None], rank_tol)
    return Homography(h[0], degenerate=bool(bad[0]))


def warp_matrices(m: int, hs: np.ndarray, snap: float = 1e-9) -> np.ndarray:
    """(S, M*M, M*M) bilinear sampling matrices for (S, 3, 3) homographies.

    Target centre x samples P at h^-1 x; neighbours outside the grid contribute 0.
    """
    hs = np.asarray(hs, dtype=np.float64)
    count, n = len(hs), m * m
    out = np.zeros((count, n, n))
    if m == 1:
        out[:, 0, 0] = 1.0
        return out
    centers = np.column_stack([cell_centers(m), np.ones(n)])
    src = centers @ np.swapaxes(np.linalg.inv(hs), -1, -2)          # (S, n, 3)
    ok = np.abs(src[..., 2]) > 1e-12
    z = np.where(ok, src[..., 2], 1.0)
    g = (src[..., :2] / z[..., None] + 1.0) * (m - 1) / 2.0
    r = np.round(g)
    g = np.where(np.abs(g - r) < snap, r, g)
    gx, gy = g[..., 0], g[..., 1]
    x0 = np.floor(gx).astype(int)
    y0 = np.floor(gy).astype(int)
    fx, fy = gx - x0, gy - y0
    sidx, rows = np.meshgrid(np.arange(count), np.arange(n), indexing="ij")
    for dy, dx, wt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                       (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yi, xi = y0 + dy, x0 + dx
        inside = ok & (yi >= 0) & (yi < m) & (xi >= 0) & (xi < m) & (wt != 0)
        np.add.at(out, (sidx[inside], rows[inside], (yi * m + xi)[inside]), wt[inside])
    return out


def warp_matrix(m: int, h, snap: float = 1e-9) -> np.ndarray:
    """(M*M, M*M) sampling matrix S with warp(P) = S @ P."""
    h = h.matrix if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)
    return warp_matrices(m, h[None], snap)[0]


def warp_grid(p: Tensor, h) -> Tensor:
    """Warp (..., M*M, C') perspective cells by homography ``h``."""
    m = int(round(math.sqrt(p.shape[-2])))
    return T.matmul(Tensor(warp_matrix(m, h)), p)


@dataclass
class TransformStats:
    components: list = field(default_factory=list)    # (k, responsibility, degenerate)
    entropy: float = 0.0
    fallback: bool = False

    def lines(self) -> list:
        return [f"component={k} responsibility={r:.6f} degenerate={int(d)}"
                for k, r, d in self.components]


def transform_matrices(ps: np.ndarray, space: PerspectiveSpace, r_min: float = R_MIN) -> tuple:
    """Responsibility-weighted warp matrices for a batch of (M*M, C') perspectives."""
    ps = np.asarray(ps, dtype=np.float64)
    b, n, c = ps.shape
    m = int(round(math.sqrt(n)))
    resp = np.stack([log_density_and_responsibilities(space, p.ravel())[1] for p in ps])
    pairs = np.argwhere(resp > r_min)                   # (S, 2) rows of (sample, component)
    stats = [TransformStats(entropy=responsibility_entropy(r)) for r in resp]
    mats = np.zeros((b, n, n))
    total = np.zeros(b)
    if len(pairs):
        pu, pn = _unit_rows(ps[pairs[:, 0]])
        qu, qn = _unit_rows(space.entries[pairs[:, 1]].reshape(-1, n, c))
        sim = pu @ np.swapaxes(qu, -1, -2)
        best = np.argmax(sim, axis=2)
        weight = np.clip(np.take_along_axis(sim, best[..., None], axis=2)[..., 0], 0.0, 1.0)
        weight[pn == 0] = 0.0
        centers = cell_centers(m)
        hs, bad = dlt_batch(np.broadcast_to(centers, (len(pairs), n, 2)), centers[best], weight)
        bad |= (weight > 0).sum(axis=1) < 4
        warps = warp_matrices(m, hs[~bad])
        good_pairs = pairs[~bad]
        r = resp[good_pairs[:, 0], good_pairs[:, 1]]
        np.add.at(mats, good_pairs[:, 0], r[:, None, None] * warps)
        np.add.at(total, good_pairs[:, 0], r)
        for (i, k), flag in zip(pairs, bad):
            stats[i].components.append((int(k), float(resp[i, k]), bool(flag)))
    for i in range(b):
        if total[i] == 0.0:
            stats[i].fallback = True
            mats[i] = np.eye(n)
        else:
            mats[i] /= total[i]
    return mats, stats


def transform_matrix(p: np.ndarray, space: PerspectiveSpace, r_min: float = R_MIN) -> tuple:
    mats, stats = transform_matrices(np.asarray(p)[None], space, r_min)
    return mats[0], stats[0]


def transform_perspective(p: Tensor, space: PerspectiveSpace, r_min: float = R_MIN) -> tuple:
    """P' = sum_k r_k warp(P, H_k) over components with r_k > r_min, renormalised.

    Homographies and responsibilities are constants of the backward pass; the
    gradient reaches P only through the bilinear sampling.  Works on a single
    (M*M, C') perspective or a batch (B, M*M, C').
    """
    if p.ndim == 2:
        mat, stats = transform_matrix(p.data, space, r_min)
        return T.matmul(Tensor(mat), p), [stats]
    mats, stats = transform_matrices(p.data, space, r_min)
    return T.matmul(Tensor(mats), p), stats


class FrozenTransform:
    """Warp matrices computed once at a reference batch and reused as constants.

    Finite-difference checks need the transform that the backward pass assumes:
    homographies and responsibilities held fixed while P moves.
    """

    def __init__(self, p_ref: np.ndarray, space: PerspectiveSpace, r_min: float = R_MIN):
        p_ref = np.asarray(p_ref, dtype=np.float64)
        single = p_ref.ndim == 2
        self.mats, self.stats = transform_matrices(p_ref[None] if single else p_ref, space, r_min)
        if single:
            self.mats = self.mats[0]

    def __call__(self, p: Tensor) -> tuple:
        return T.matmul(Tensor(self.mats), p), self.stats
