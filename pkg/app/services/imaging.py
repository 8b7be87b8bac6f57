"""Synthetic grayscale data, bicubic resampling and image quality metrics"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Union

import numpy as np
from scipy.ndimage import gaussian_filter
from skimage.metrics import structural_similarity

from app.core.errors import ConfigurationError, DimensionError
from app.models.tensor import Precision, Tensor

logger = logging.getLogger(__name__)

CUBIC_A = -0.5
PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

ImageLike = Union[Tensor, np.ndarray]


@dataclass(frozen=True)
class SamplePair:
    lr: Tensor  # (1, h, w)
    hr: Tensor  # (1, s*h, s*w)


def _as_image(x: ImageLike) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    return arr.astype(np.float64)


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------

def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    inner = (a + 2) * ax3 - (a + 3) * ax2 + 1
    outer = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, inner, np.where(ax < 2, outer, 0.0))


def resize_matrix(in_len: int, out_len: int) -> np.ndarray:
    """(out_len, in_len) bicubic interpolation matrix, antialiased when shrinking, symmetric borders"""
    scale = out_len / in_len
    kernel_width = 4.0 / scale if scale < 1 else 4.0
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - kernel_width / 2)
    taps = int(math.ceil(kernel_width)) + 2
    indices = left[:, None] + np.arange(taps)[None, :]
    distance = u[:, None] - indices
    if scale < 1:
        weights = scale * cubic(distance * scale)
    else:
        weights = cubic(distance)
    weights /= weights.sum(axis=1, keepdims=True)

    mirror = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
    columns = mirror[np.mod(indices.astype(np.int64) - 1, 2 * in_len)]
    matrix = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(matrix, (rows, columns.ravel()), weights.ravel())
    return matrix


def bicubic_resize(image: ImageLike, out_height: int, out_width: int) -> np.ndarray:
    """Resize the last two axes of an image with the a = -0.5 cubic kernel"""
    arr = _as_image(image)
    rows = resize_matrix(arr.shape[-2], out_height)
    cols = resize_matrix(arr.shape[-1], out_width)
    return rows @ arr @ cols.T


def bicubic_downsample(hr: ImageLike, scale: int) -> np.ndarray:
    arr = _as_image(hr)
    height, width = arr.shape[-2:]
    if height % scale or width % scale:
        raise ConfigurationError(f"HR size {height}x{width} not divisible by scale {scale}")
    return bicubic_resize(arr, height // scale, width // scale)


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------

def synth_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Oriented sinusoids, a checkerboard and a smoothed random field, normalized to [0, 1]"""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    image = np.zeros((size, size))

    for _ in range(int(rng.integers(2, 5))):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.02, 0.3)  # cycles per HR pixel
        phase = rng.uniform(0, 2 * np.pi)
        image += rng.uniform(0.3, 1.0) * np.sin(
            2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
        )

    cell = int(rng.integers(3, 13))
    checker = ((yy // cell + xx // cell) % 2) * 2 - 1
    image += rng.uniform(0.0, 0.8) * checker

    field = gaussian_filter(rng.standard_normal((size, size)), sigma=rng.uniform(1.0, 4.0), mode="wrap")
    image += rng.uniform(0.5, 1.5) * field / max(field.std(), 1e-12)

    low, high = image.min(), image.max()
    if high - low < 1e-12:
        return np.full((size, size), 0.5)
    return (image - low) / (high - low)


def synth_dataset(seed: int, n: int, hr_size: int, scale: int = 2, start: int = 0) -> List[SamplePair]:
    """Deterministic (LR, HR) pairs; sample i depends only on (seed, start + i)"""
    if hr_size % scale:
        raise ConfigurationError(f"hr_size={hr_size} is not divisible by scale {scale}")
    pairs = []
    for i in range(start, start + n):
        rng = np.random.default_rng([seed, i])
        hr = synth_image(rng, hr_size)
        lr = np.clip(bicubic_downsample(hr, scale), 0.0, 1.0)
        pairs.append(SamplePair(lr=Tensor(lr[None], Precision.DOUBLE), hr=Tensor(hr[None], Precision.DOUBLE)))
    logger.debug(f"Generated {n} synthetic pairs (seed={seed}, hr={hr_size}, x{scale})")
    return pairs


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _pair(a: ImageLike, b: ImageLike):
    x, y = _as_image(a), _as_image(b)
    if x.shape != y.shape:
        raise DimensionError(f"image shapes differ: {x.shape} vs {y.shape}", x.shape, y.shape)
    return x, y


def psnr(a: ImageLike, b: ImageLike) -> float:
    """10 log10(1 / MSE) in dB for [0, 1] images, capped at 100 dB"""
    x, y = _pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: ImageLike, b: ImageLike, data_range: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5)"""
    x, y = _pair(a, b)
    x, y = np.squeeze(x), np.squeeze(y)
    if x.ndim != 2:
        raise DimensionError(f"ssim expects a single-channel image, got {x.shape}", x.shape)
    if min(x.shape) < SSIM_WINDOW:
        raise DimensionError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", x.shape)

    # sigma 1.5 truncated at 3.5 sigma is the 11x11 window; the border crop keeps valid windows only
    value = structural_similarity(
        x,
        y,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
        data_range=data_range,
    )
    return float(value)
