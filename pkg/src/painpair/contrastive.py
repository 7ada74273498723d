"""Out-of-distribution frames and the cosine contrastive regression loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from .preprocess import bilinear_sample

ELASTIC_ALPHA = 20.0
ELASTIC_SIGMA = 3.0
NORM_FLOOR = 1e-12


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def displacement_field(shape, alpha: float, sigma: float, seed=None):
    """Uniform [-1, 1] per-pixel displacements, Gaussian-smoothed, scaled by alpha."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    rng = _rng(seed)
    dy = gaussian_filter(rng.uniform(-1.0, 1.0, shape), sigma) * alpha
    dx = gaussian_filter(rng.uniform(-1.0, 1.0, shape), sigma) * alpha
    return dy, dx


def warp(image, dy, dx) -> np.ndarray:
    h, w = image.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return bilinear_sample(np.asarray(image, dtype=np.float64), xx + dx, yy + dy)


def elastic_transform(image, alpha: float = ELASTIC_ALPHA, sigma: float = ELASTIC_SIGMA,
                      seed=None) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if alpha == 0:
        return image.copy()
    dy, dx = displacement_field(image.shape, alpha, sigma, seed)
    return warp(image, dy, dx)


def make_ood(ref, tgt, seed=None, alpha: float = ELASTIC_ALPHA, sigma: float = ELASTIC_SIGMA):
    """Upside-down, elastically distorted copies of both frames of a pair.

    Both frames share one displacement field so the pair stays aligned.
    """
    ref = np.asarray(ref, dtype=np.float64)[::-1]
    tgt = np.asarray(tgt, dtype=np.float64)[::-1]
    dy, dx = displacement_field(ref.shape, alpha, sigma, seed)
    return warp(ref, dy, dx), warp(tgt, dy, dx)


@dataclass
class ContrastiveStats:
    anomalies: int = 0


def _unit(x, dim, stats):
    norm = x.norm(dim=dim, keepdim=True)
    small = norm < NORM_FLOOR
    if stats is not None and bool(small.any()):
        stats.anomalies += int(small.sum())
    return x / norm.clamp_min(NORM_FLOOR)


def abs_cosines(features, w_fc, stats: ContrastiveStats | None = None):
    """|cos| between every feature row and every column of w_fc, shape (B, col)."""
    if features.shape[-1] != w_fc.shape[0]:
        raise ValueError(f"feature width {features.shape[-1]} != W_fc rows {w_fc.shape[0]}")
    return (_unit(features, -1, stats) @ _unit(w_fc, 0, stats)).abs()


def contrastive_loss(id_features, ood_features, w_fc, stats: ContrastiveStats | None = None):
    """Batch mean of (1/col) sum_i |cos(f(x_ood), W[:, i])| - |cos(f(x_id), W[:, i])|."""
    id_features = torch.as_tensor(id_features)
    ood_features = torch.as_tensor(ood_features, dtype=id_features.dtype)
    w_fc = torch.as_tensor(w_fc, dtype=id_features.dtype)
    if id_features.shape != ood_features.shape:
        raise ValueError("ID and OOD feature batches must have the same shape")
    gap = abs_cosines(ood_features, w_fc, stats) - abs_cosines(id_features, w_fc, stats)
    return gap.mean()


def total_loss(regression, contrastive, c: float):
    if c < 0:
        raise ValueError("c must be >= 0")
    return regression + c * contrastive
