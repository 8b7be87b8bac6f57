"""
File formats: FSRT tensor containers, archive directories, PGM images,
CSV reports and flat key=value config files

FSRT layout (little-endian):
    magic "FSRT" | version u32 = 1 | dtype u8 (0 single, 1 double) |
    complex u8 | ndim u8 | ndim x u64 extents | payload (re plane, then im plane)
"""
import csv
import logging
import os
import struct
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from dotenv import dotenv_values

from app.core.errors import ConfigurationError, FormatError
from app.models.tensor import ComplexTensor, Precision, Tensor

logger = logging.getLogger(__name__)

MAGIC = b"FSRT"
VERSION = 1
TENSOR_SUFFIX = ".fsrt"
META_FILE = "meta.cfg"

_HEAD = struct.Struct("<4sIBBB")


def encode_header(shape: Sequence[int], precision: Precision, is_complex: bool) -> bytes:
    """Header bytes for a tensor of the given shape"""
    head = _HEAD.pack(MAGIC, VERSION, precision.tag, int(is_complex), len(shape))
    return head + struct.pack(f"<{len(shape)}Q", *shape)


def save_tensor(t: Union[Tensor, ComplexTensor], path: str) -> None:
    """Write a tensor in the FSRT container format"""
    is_complex = isinstance(t, ComplexTensor)
    planes = [t.re.data, t.im.data] if is_complex else [t.data]
    le = t.precision.dtype.newbyteorder("<")
    with open(path, "wb") as f:
        f.write(encode_header(t.shape, t.precision, is_complex))
        for plane in planes:
            f.write(np.ascontiguousarray(plane, dtype=le).tobytes())


def load_tensor(
    path: str,
    expected_precision: Optional[Precision] = None,
    expected_ndim: Optional[int] = None,
) -> Union[Tensor, ComplexTensor]:
    """Read an FSRT container, validating every header field"""
    with open(path, "rb") as f:
        raw = f.read()

    if len(raw) < _HEAD.size:
        raise FormatError("truncated header", len(raw))
    magic, version, dtype_tag, complex_flag, ndim = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if dtype_tag not in (0, 1):
        raise FormatError(f"unknown dtype tag {dtype_tag}", 8)
    if complex_flag not in (0, 1):
        raise FormatError(f"bad complex flag {complex_flag}", 9)
    precision = Precision.from_tag(dtype_tag)
    if expected_precision is not None and precision is not expected_precision:
        raise FormatError(f"dtype {precision.value} does not match expected {expected_precision.value}", 8)
    if ndim < 1:
        raise FormatError("ndim must be >= 1", 10)
    if expected_ndim is not None and ndim != expected_ndim:
        raise FormatError(f"ndim {ndim} does not match expected {expected_ndim}", 10)

    offset = _HEAD.size
    if len(raw) < offset + 8 * ndim:
        raise FormatError("truncated extents", len(raw))
    shape = struct.unpack_from(f"<{ndim}Q", raw, offset)
    for axis, extent in enumerate(shape):
        if extent < 1:
            raise FormatError(f"extent {axis} is zero", offset + 8 * axis)
    offset += 8 * ndim

    count = int(np.prod(shape))
    le = precision.dtype.newbyteorder("<")
    plane_bytes = count * le.itemsize
    n_planes = 2 if complex_flag else 1
    if len(raw) - offset != n_planes * plane_bytes:
        raise FormatError(
            f"payload holds {len(raw) - offset} bytes, expected {n_planes * plane_bytes}", offset
        )

    planes = []
    for i in range(n_planes):
        start = offset + i * plane_bytes
        plane = np.frombuffer(raw, dtype=le, count=count, offset=start).reshape(shape)
        planes.append(Tensor(plane.astype(precision.dtype), precision))
    if complex_flag:
        return ComplexTensor(planes[0], planes[1])
    return planes[0]


def read_key_values(path: str) -> Dict[str, str]:
    """Parse a flat key=value file"""
    if not os.path.isfile(path):
        raise ConfigurationError(f"config file {path} not found")
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def write_key_values(path: str, values: Mapping[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in values.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            elif hasattr(value, "value"):
                value = value.value
            f.write(f"{key}={value}\n")


def save_archive(directory: str, entries: Mapping[str, Union[Tensor, ComplexTensor]], meta: Mapping[str, Any]) -> None:
    """Write named tensors plus a meta file into one directory"""
    os.makedirs(directory, exist_ok=True)
    for name, tensor in entries.items():
        save_tensor(tensor, os.path.join(directory, name + TENSOR_SUFFIX))
    write_key_values(os.path.join(directory, META_FILE), meta)
    logger.info(f"Wrote archive {directory} ({len(entries)} entries)")


def load_archive(directory: str, names: Optional[Iterable[str]] = None) -> Tuple[Dict[str, Tensor], Dict[str, str]]:
    """Read an archive written by save_archive"""
    meta = read_key_values(os.path.join(directory, META_FILE))
    if names is None:
        names = sorted(
            f[: -len(TENSOR_SUFFIX)] for f in os.listdir(directory) if f.endswith(TENSOR_SUFFIX)
        )
    entries = {}
    for name in names:
        path = os.path.join(directory, name + TENSOR_SUFFIX)
        if not os.path.isfile(path):
            raise ConfigurationError(f"archive {directory} has no entry '{name}'")
        entries[name] = load_tensor(path)
    return entries, meta


def write_pgm(path: str, image: np.ndarray) -> None:
    """Write a [0, 1] grayscale image as 8-bit binary PGM (P5)"""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise FormatError(f"PGM needs a 2-D image, got shape {image.shape}", 0)
    height, width = image.shape
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read an 8-bit binary PGM into a float image in [0, 1]"""
    with open(path, "rb") as f:
        raw = f.read()

    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", pos)
        fields.append((raw[start:pos], start))
    pos += 1  # single whitespace after maxval

    if fields[0][0] != b"P5":
        raise FormatError(f"not a binary PGM: {fields[0][0]!r}", 0)
    try:
        width, height, maxval = (int(v) for v, _ in fields[1:])
    except ValueError:
        raise FormatError("non-numeric PGM header field", fields[1][1])
    if maxval != 255:
        raise FormatError(f"only 8-bit PGM supported, maxval={maxval}", fields[3][1])
    if len(raw) - pos != width * height:
        raise FormatError(f"expected {width * height} pixel bytes, found {len(raw) - pos}", pos)
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=pos).reshape(height, width)
    return pixels.astype(np.float64) / 255.0


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


def read_csv(path: str) -> Tuple[list, list]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        return header, [row for row in reader]
