"""Dataset-level perspective codebook updated by EMA, with a diagonal GMM density.

Entries never receive gradients; they only move through :func:`ema_update`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .bundle import load_bundle, save_bundle

VAR_FLOOR = 1e-4


@dataclass
class PerspectiveSpace:
    entries: np.ndarray                 # (K, d) flattened M*M*C' codes
    counts: np.ndarray                  # (K,) assignments seen so far
    sigma: np.ndarray                   # (K, d) diagonal variances
    alpha: float = 0.9
    initialized: bool = False
    var_floor: float = VAR_FLOOR
    seed: int = 0

    @classmethod
    def empty(cls, k: int, dim: int, alpha: float = 0.9, seed: int = 0) -> "PerspectiveSpace":
        return cls(np.zeros((k, dim)), np.zeros(k), np.ones((k, dim)), alpha, False, VAR_FLOOR, seed)

    @classmethod
    def from_entries(cls, entries, alpha: float = 0.9, sigma=None, counts=None) -> "PerspectiveSpace":
        entries = np.array(entries, dtype=np.float64).reshape(len(entries), -1)
        k, d = entries.shape
        sigma = np.ones((k, d)) if sigma is None else np.maximum(np.array(sigma, dtype=np.float64), VAR_FLOOR)
        counts = np.zeros(k) if counts is None else np.array(counts, dtype=np.float64)
        return cls(entries, counts, sigma, alpha, True)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @property
    def pi(self) -> np.ndarray:
        total = self.counts.sum()
        if total <= 0:
            return np.full(self.k, 1.0 / self.k)
        return self.counts / total

    def copy(self) -> "PerspectiveSpace":
        return PerspectiveSpace(self.entries.copy(), self.counts.copy(), self.sigma.copy(),
                                self.alpha, self.initialized, self.var_floor, self.seed)

    def to_records(self, prefix: str = "") -> dict:
        return {prefix + "entries": self.entries, prefix + "counts": self.counts,
                prefix + "sigma": self.sigma,
                prefix + "meta": np.array([self.alpha, float(self.initialized), self.var_floor])}

    @classmethod
    def from_records(cls, records: dict, prefix: str = "") -> "PerspectiveSpace":
        meta = records.get(prefix + "meta", np.array([0.9, 1.0, VAR_FLOOR]))
        return cls(records[prefix + "entries"].copy(), records[prefix + "counts"].copy(),
                   records[prefix + "sigma"].copy(), float(meta[0]), bool(meta[1]), float(meta[2]))

    def save(self, path) -> None:
        save_bundle(path, self.to_records())

    @classmethod
    def load(cls, path) -> "PerspectiveSpace":
        return cls.from_records(load_bundle(path))


def _seed_entries(space: PerspectiveSpace, batch: np.ndarray) -> None:
    distinct = []
    for p in batch:
        if not any(np.array_equal(p, q) for q in distinct):
            distinct.append(p)
        if len(distinct) == space.k:
            break
    rng = np.random.default_rng(space.seed)
    scale = float(np.abs(batch).mean()) * 0.01 if batch.size else 0.01
    for i in range(space.k):
        space.entries[i] = distinct[i] if i < len(distinct) else rng.normal(0.0, scale, space.dim)
    space.initialized = True


def nearest_entry(space: PerspectiveSpace, p: np.ndarray) -> int:
    d2 = ((space.entries - p) ** 2).sum(axis=1)
    return int(np.argmin(d2))   # first minimiser on ties


def ema_update(space: PerspectiveSpace, batch) -> list:
    """Move the nearest entry toward each P of the batch, in order. Returns the chosen indices."""
    batch = np.asarray(batch, dtype=np.float64).reshape(len(batch), -1)
    if not space.initialized:
        _seed_entries(space, batch)
    a = space.alpha
    chosen = []
    for p in batch:
        k = nearest_entry(space, p)
        dev = (p - space.entries[k]) ** 2
        space.entries[k] = a * space.entries[k] + (1.0 - a) * p
        space.sigma[k] = np.maximum(a * space.sigma[k] + (1.0 - a) * dev, space.var_floor)
        space.counts[k] += 1
        chosen.append(k)
    return chosen


def log_gaussians(space: PerspectiveSpace, p) -> np.ndarray:
    """log N(p | entry_k, diag sigma_k) for every component."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    var = space.sigma
    return -0.5 * (space.dim * math.log(2.0 * math.pi) + np.log(var).sum(axis=1)
                   + ((p - space.entries) ** 2 / var).sum(axis=1))


def component_log_terms(space: PerspectiveSpace, p) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(space.pi) + log_gaussians(space, p)


def log_density_and_responsibilities(space: PerspectiveSpace, p) -> tuple:
    terms = component_log_terms(space, p)
    log_p = float(logsumexp(terms))
    r = np.exp(terms - log_p)
    return log_p, r / r.sum()


def responsibility_entropy(r: np.ndarray) -> float:
    r = r[r > 0]
    return float(-(r * np.log(r)).sum())
