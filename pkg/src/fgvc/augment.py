"""Attention-guided augmentation: zoom into (crop) or erase (drop) the region
an attention map points at."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import InvalidInputError
from .model import BoundingBox, attention_bbox, zoom

SELECTION_MODES = ("uniform", "weighted")


@dataclass(frozen=True)
class AugmentConfig:
    theta_crop: float = 0.5
    theta_drop: float = 0.5
    selection: str = "uniform"

    def __post_init__(self):
        for name in ("theta_crop", "theta_drop"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InvalidInputError(f"{name} must lie strictly inside (0, 1), got {v}")
        if self.selection not in SELECTION_MODES:
            raise InvalidInputError(f"selection must be one of {SELECTION_MODES}, got {self.selection!r}")


def normalize_map(a) -> np.ndarray:
    """Scale a non-negative map by its maximum; an all-zero map stays zero."""
    a = np.asarray(a, dtype=np.float64)
    peak = a.max()
    return a / peak if peak > 0 else np.zeros_like(a)


def select_attention_map(A, rng, mode: str = "uniform") -> int:
    """Pick one of the ``M`` maps in ``A`` (``H x W x M``).

    ``uniform`` draws each index with equal probability; ``weighted`` draws in
    proportion to each map's mean activation, falling back to uniform when all
    maps are zero.
    """
    A = np.asarray(A, dtype=np.float64)
    m = A.shape[-1]
    if m == 1:
        return 0
    if mode == "weighted":
        mass = A.reshape(-1, m).mean(axis=0)
        if mass.sum() > 0:
            return rng.choice(mass)
    elif mode != "uniform":
        raise InvalidInputError(f"unknown selection mode {mode!r}")
    return rng.integers(m)


def crop_box(A_k, theta: float) -> BoundingBox:
    """Grid-space box used by :func:`attention_crop`."""
    return attention_bbox(normalize_map(A_k), theta)


def attention_crop(image, A_k, cfg: AugmentConfig) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    h, w = np.shape(A_k)
    return zoom(img, crop_box(A_k, cfg.theta_crop), h, w)


def drop_mask(A_k, shape, theta: float) -> np.ndarray:
    """Boolean ``(S, S)`` mask of pixels erased by :func:`attention_drop`."""
    up = ops.nearest_resize(normalize_map(A_k), shape[0], shape[1])
    return up > theta


def attention_drop(image, A_k, cfg: AugmentConfig) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    mask = drop_mask(A_k, img.shape[:2], cfg.theta_drop)
    return np.where(mask[..., None], 0.0, img)
