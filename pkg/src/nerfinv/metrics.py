"""Image error metrics."""
from __future__ import annotations

import math

import numpy as np
import torch


def _as_array(img) -> np.ndarray:
    if torch.is_tensor(img):
        return img.detach().cpu().numpy().astype(np.float64)
    return np.asarray(img, dtype=np.float64)


def mse(a, b) -> float:
    """Mean squared difference over every channel value."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; ``inf`` for identical inputs."""
    err = mse(a, b)
    return math.inf if err == 0.0 else -10.0 * math.log10(err)
