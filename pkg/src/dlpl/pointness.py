"""Point-ness maps: a Harris-style structure-tensor detector and a file loader.

The detector stands in for a frozen keypoint network; :func:`load_pointness`
accepts externally computed maps in the parameter-bundle format.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .bundle import load_bundle, save_bundle
from .tensor import ConfigurationError, DimensionError

STRUCTURE_TENSOR = "structure-tensor"
LOADED_WEIGHTS = "loaded-weights"


@dataclass
class PointnessMap:
    values: np.ndarray
    source: str = STRUCTURE_TENSOR

    @property
    def shape(self) -> tuple:
        return self.values.shape


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luminance of a (3, H, W) or (H, W, 3) image; 2-D input passes through."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[0] == 3:
        r, g, b = image
    elif image.ndim == 3 and image.shape[-1] == 3:
        r, g, b = np.moveaxis(image, -1, 0)
    else:
        raise DimensionError(f"expected a grayscale or RGB image, got shape {image.shape}")
    return 0.299 * r + 0.587 * g + 0.114 * b


def harris_response(gray: np.ndarray, window: int = 5, kappa: float = 0.05) -> np.ndarray:
    """Raw det(M) - kappa * trace(M)^2 with M box-averaged over ``window``."""
    ix = ndimage.sobel(gray, axis=1, mode="reflect")
    iy = ndimage.sobel(gray, axis=0, mode="reflect")
    sxx = ndimage.uniform_filter(ix * ix, size=window, mode="reflect")
    syy = ndimage.uniform_filter(iy * iy, size=window, mode="reflect")
    sxy = ndimage.uniform_filter(ix * iy, size=window, mode="reflect")
    return sxx * syy - sxy * sxy - kappa * (sxx + syy) ** 2


def structure_tensor_pointness(image: np.ndarray, window: int = 5, kappa: float = 0.05) -> PointnessMap:
    if window < 3 or window % 2 == 0:
        raise ConfigurationError(f"window must be odd and >= 3, got {window}")
    if not 0.0 < kappa < 0.25:
        raise ConfigurationError(f"kappa must lie in (0, 0.25), got {kappa}")
    gray = to_gray(image)
    if gray.shape[0] < window or gray.shape[1] < window:
        raise DimensionError(f"image {gray.shape} is smaller than the {window}x{window} window")
    resp = np.maximum(harris_response(gray, window, kappa), 0.0)
    peak = resp.max()
    if peak <= 0.0:
        return PointnessMap(np.zeros_like(resp))
    return PointnessMap(resp / peak)


def save_pointness(path, pmap: PointnessMap | np.ndarray) -> None:
    values = pmap.values if isinstance(pmap, PointnessMap) else np.asarray(pmap)
    save_bundle(path, {"pointness": values})


def load_pointness(path, expected_shape: tuple | None = None) -> PointnessMap:
    path = Path(path)
    records = load_bundle(path)
    if "pointness" not in records:
        raise IOError(f"{path}: no 'pointness' record")
    values = records["pointness"]
    if values.ndim != 2:
        raise DimensionError(f"{path}: point-ness map must be 2-D, got shape {values.shape}")
    if expected_shape is not None and tuple(values.shape) != tuple(expected_shape):
        raise DimensionError(
            f"point-ness map shape {tuple(values.shape)} does not match image shape {tuple(expected_shape)}")
    return PointnessMap(np.clip(values, 0.0, 1.0), LOADED_WEIGHTS)
