"""Bilinear resampling expressed as constant matrices (half-pixel centres)."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix resampling a 1-D signal with edge clamping."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def resize_matrix(h_in: int, w_in: int, h_out: int, w_out: int) -> np.ndarray:
    """(h_out*w_out, h_in*w_in) matrix acting on row-major flattened grids."""
    m = np.kron(bilinear_matrix(h_in, h_out), bilinear_matrix(w_in, w_out))
    m.setflags(write=False)
    return m


def resize(grid: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    """Bilinearly resize the last two axes of ``grid``."""
    h, w = grid.shape[-2:]
    if (h, w) == (h_out, w_out):
        return grid.copy()
    return (bilinear_matrix(h, h_out) @ grid @ bilinear_matrix(w, w_out).T)
