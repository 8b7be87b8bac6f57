"""
Discrete Fourier transforms and the spatial identities they satisfy

Convention: forward transforms are unnormalized, inverse transforms carry
1/N (1/(HW) in 2-D). Transforms run on numpy's pocketfft backend
(mixed radix, any length). `circular_conv2d` never touches an FFT so it can
serve as the oracle for the convolution theorem.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from app.core.errors import DimensionError
from app.models.tensor import ComplexTensor, Precision, Tensor


@dataclass(frozen=True)
class Spectrum2D:
    """Half-width spectrum of a real signal over its last two axes"""
    data: ComplexTensor  # (..., H, W//2 + 1)
    full_width: int

    def __post_init__(self):
        if self.data.ndim < 2:
            raise DimensionError(f"spectrum needs rank >= 2, got {self.data.shape}", self.data.shape)
        if self.data.shape[-1] != half_width(self.full_width):
            raise DimensionError(
                f"last extent {self.data.shape[-1]} inconsistent with full width {self.full_width}",
                self.data.shape,
            )

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def height(self) -> int:
        return self.data.shape[-2]


def half_width(width: int) -> int:
    return width // 2 + 1


def hermitian_weights(width: int) -> np.ndarray:
    """Multiplicity of each half-spectrum column in the full spectrum"""
    w = np.full(half_width(width), 2.0)
    w[0] = 1.0
    if width % 2 == 0:
        w[-1] = 1.0
    return w


# ---------------------------------------------------------------------------
# array kernels (shared with fourier_ops and autodiff)
# ---------------------------------------------------------------------------

def rfft2_array(a: np.ndarray) -> np.ndarray:
    complex_dtype = Precision.of(a.dtype).complex_dtype
    return np.fft.rfft2(a, axes=(-2, -1)).astype(complex_dtype, copy=False)


def irfft2_array(s: np.ndarray, height: int, width: int) -> np.ndarray:
    real_dtype = Precision.of(s.dtype).dtype
    return np.fft.irfft2(s, s=(height, width), axes=(-2, -1)).astype(real_dtype, copy=False)


def flip_array(a: np.ndarray) -> np.ndarray:
    """x[..., m, n] -> x[..., (-m) mod H, (-n) mod W]"""
    return np.roll(np.flip(a, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1))


def circular_conv2d_array(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Direct O(H^2 W^2) circular convolution over the last two axes"""
    height, width = x.shape[-2:]
    out_shape = np.broadcast_shapes(x.shape, k.shape)
    y = np.zeros(out_shape, dtype=np.result_type(x.dtype, k.dtype))
    for p in range(height):
        for q in range(width):
            # rolled[m, n] = k[(m - p) mod H, (n - q) mod W]
            y += x[..., p : p + 1, q : q + 1] * np.roll(k, shift=(p, q), axis=(-2, -1))
    return y


# ---------------------------------------------------------------------------
# tensor operations
# ---------------------------------------------------------------------------

def _as_complex(x: Union[Tensor, ComplexTensor]) -> Tuple[np.ndarray, Precision]:
    if isinstance(x, ComplexTensor):
        return x.to_complex(), x.precision
    return x.data.astype(x.precision.complex_dtype), x.precision


def fft1d(x: Union[Tensor, ComplexTensor]) -> ComplexTensor:
    """X[k] = sum_n x[n] exp(-2 pi i k n / N)"""
    arr, precision = _as_complex(x)
    if arr.ndim != 1:
        raise DimensionError(f"fft1d expects a rank-1 tensor, got {arr.shape}", arr.shape)
    return ComplexTensor.from_complex(np.fft.fft(arr), precision)


def ifft1d(x: Union[Tensor, ComplexTensor]) -> ComplexTensor:
    """Inverse of fft1d including the 1/N factor"""
    arr, precision = _as_complex(x)
    if arr.ndim != 1:
        raise DimensionError(f"ifft1d expects a rank-1 tensor, got {arr.shape}", arr.shape)
    return ComplexTensor.from_complex(np.fft.ifft(arr), precision)


def rfft2(x: Tensor) -> Spectrum2D:
    """2-D DFT of a real tensor over its last two axes, half-width storage"""
    if x.ndim < 2:
        raise DimensionError(f"rfft2 needs rank >= 2, got {x.shape}", x.shape)
    data = ComplexTensor.from_complex(rfft2_array(x.data), x.precision)
    return Spectrum2D(data=data, full_width=x.shape[-1])


def irfft2(s: Spectrum2D, height: int, width: int) -> Tensor:
    """Real tensor whose Hermitian-extended spectrum is `s`"""
    if s.height != height or s.shape[-1] != half_width(width) or s.full_width != width:
        raise DimensionError(
            f"half spectrum {s.shape} (full width {s.full_width}) cannot produce {height}x{width}",
            s.shape,
            (height, width),
        )
    return Tensor(irfft2_array(s.data.to_complex(), height, width), s.data.precision)


def circular_flip(x: Tensor) -> Tensor:
    """Modular reversal of the last two axes; index 0 is a fixed point"""
    if x.ndim < 2:
        raise DimensionError(f"circular_flip needs rank >= 2, got {x.shape}", x.shape)
    return Tensor(flip_array(x.data))


def circular_conv2d(x: Tensor, k: Tensor) -> Tensor:
    """y[m, n] = sum_{p, q} x[p, q] k[(m - p) mod H, (n - q) mod W], computed directly"""
    if x.ndim < 2 or k.ndim < 2 or x.shape[-2:] != k.shape[-2:]:
        raise DimensionError(f"spatial extents differ: {x.shape} vs {k.shape}", x.shape, k.shape)
    try:
        np.broadcast_shapes(x.shape, k.shape)
    except ValueError:
        raise DimensionError(f"leading axes do not broadcast: {x.shape} vs {k.shape}", x.shape, k.shape)
    return Tensor(circular_conv2d_array(x.data, k.data))


def even_odd_parts(x: Tensor) -> Tuple[Tensor, Tensor]:
    """Split x into its flip-symmetric and flip-antisymmetric parts"""
    flipped = circular_flip(x).data
    even = (x.data + flipped) / 2
    odd = (x.data - flipped) / 2
    return Tensor(even, x.precision), Tensor(odd, x.precision)
