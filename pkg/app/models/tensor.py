"""
Dense real and complex tensor containers

Tensors wrap a C-contiguous numpy array that is marked read-only at
construction, so values can be shared freely between threads and graph
nodes. Complex tensors keep split real/imaginary planes.
"""
from __future__ import annotations

import enum
import math
from typing import Sequence, Union

import numpy as np

from app.core.errors import ConfigurationError, DimensionError


class Precision(str, enum.Enum):
    """Floating point precision of a computation graph"""
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.SINGLE else np.float64)

    @property
    def complex_dtype(self) -> np.dtype:
        return np.dtype(np.complex64 if self is Precision.SINGLE else np.complex128)

    @property
    def tag(self) -> int:
        """dtype tag used by the FSRT container"""
        return 0 if self is Precision.SINGLE else 1

    @classmethod
    def from_tag(cls, tag: int) -> "Precision":
        return cls.SINGLE if tag == 0 else cls.DOUBLE

    @classmethod
    def of(cls, dtype) -> "Precision":
        dtype = np.dtype(dtype)
        if dtype in (np.float32, np.complex64):
            return cls.SINGLE
        return cls.DOUBLE

    @classmethod
    def parse(cls, value: Union[str, "Precision"]) -> "Precision":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown precision '{value}', expected single or double")


def _check_extents(shape: Sequence[int]) -> None:
    if any(int(n) < 1 for n in shape):
        raise DimensionError(f"all extents must be >= 1, got {tuple(shape)}", shape)


class Tensor:
    """Immutable row-major real tensor"""

    __slots__ = ("_data",)

    def __init__(self, data, precision: Precision | str | None = None):
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            raise DimensionError("Tensor holds real data; use ComplexTensor for complex values")
        prec = Precision.parse(precision) if precision is not None else Precision.of(arr.dtype)
        arr = np.array(arr, dtype=prec.dtype, order="C", copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        _check_extents(arr.shape)
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def zeros(cls, shape: Sequence[int], precision: Precision | str = Precision.DOUBLE) -> "Tensor":
        return cls(np.zeros(tuple(shape)), precision)

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying array"""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def precision(self) -> Precision:
        return Precision.of(self._data.dtype)

    def numpy(self) -> np.ndarray:
        """Writable copy of the data"""
        return self._data.copy()

    def __array__(self, dtype=None, copy=None):
        return self._data if dtype is None else self._data.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, precision={self.precision.value})"


class ComplexTensor:
    """Split-plane complex tensor"""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        if re.shape != im.shape:
            raise DimensionError(f"re/im shape mismatch: {re.shape} vs {im.shape}", re.shape, im.shape)
        if re.precision is not im.precision:
            raise DimensionError("re/im planes must share one precision")
        self.re = re
        self.im = im

    @classmethod
    def from_complex(cls, arr, precision: Precision | str | None = None) -> "ComplexTensor":
        arr = np.asarray(arr)
        prec = Precision.parse(precision) if precision is not None else Precision.of(arr.dtype)
        return cls(Tensor(arr.real, prec), Tensor(arr.imag, prec))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    @property
    def ndim(self) -> int:
        return self.re.ndim

    @property
    def size(self) -> int:
        return self.re.size

    @property
    def precision(self) -> Precision:
        return self.re.precision

    def to_complex(self) -> np.ndarray:
        out = np.empty(self.shape, dtype=self.precision.complex_dtype)
        out.real = self.re.data
        out.imag = self.im.data
        return out

    def conj(self) -> "ComplexTensor":
        return ComplexTensor(self.re, Tensor(-self.im.data))

    def __repr__(self) -> str:
        return f"ComplexTensor(shape={self.shape}, precision={self.precision.value})"


AnyTensor = Union[Tensor, ComplexTensor]


def _broadcastable(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> bool:
    if len(a_shape) != len(b_shape):
        return False
    lead = len(b_shape) - 2
    for axis, (m, n) in enumerate(zip(a_shape, b_shape)):
        if m == n:
            continue
        # only the trailing spatial axes may be expanded
        if m != 1 or axis < lead:
            return False
    return True


def broadcast_mul(a: AnyTensor, b: ComplexTensor) -> ComplexTensor:
    """Element-wise product with `a` virtually expanded along the spatial axes"""
    if not _broadcastable(a.shape, b.shape):
        raise DimensionError(
            f"cannot broadcast filter of shape {a.shape} against {b.shape}", a.shape, b.shape
        )
    br, bi = b.re.data, b.im.data
    if isinstance(a, ComplexTensor):
        ar, ai = a.re.data, a.im.data
        re = ar * br - ai * bi
        im = ar * bi + ai * br
    else:
        re = a.data * br
        im = a.data * bi
    return ComplexTensor(Tensor(re, b.precision), Tensor(im, b.precision))


def reshape(t: AnyTensor, new_shape: Sequence[int]) -> AnyTensor:
    """Row-major reinterpretation of the same elements"""
    new_shape = tuple(int(n) for n in new_shape)
    _check_extents(new_shape)
    if math.prod(new_shape) != t.size:
        raise DimensionError(
            f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}", t.shape, new_shape
        )
    if isinstance(t, ComplexTensor):
        return ComplexTensor(Tensor(t.re.data.reshape(new_shape)), Tensor(t.im.data.reshape(new_shape)))
    return Tensor(t.data.reshape(new_shape))
