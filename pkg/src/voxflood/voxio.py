"""Raw volume (.voxv) and PGM file formats.

.voxv layout, all little-endian:
  magic 'VOXV' | u32 version (1) | u8 value kind (0=u8, 1=f32, 2=u32 labels)
  | 3 x u64 dims (nx, ny, nz) | payload, x-fastest order.

Intensity slices export as 8-bit binary PGM (P5). Label slices export as
16-bit PGM with pixel values densely renumbered plus a sidecar text palette
mapping pixel value back to the original label id.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .volume import LabelVolume, VoxelVolume

MAGIC = b"VOXV"
VERSION = 1
_KIND_U8, _KIND_F32, _KIND_U32 = 0, 1, 2
_HEADER = struct.Struct("<4sIB3Q")


class VoxvFormatError(ValueError):
    pass


def write_voxv(path: Union[str, Path], vol: Union[VoxelVolume, LabelVolume]) -> None:
    if isinstance(vol, LabelVolume):
        kind, arr = _KIND_U32, vol.labels.astype("<u4", copy=False)
    elif vol.value_kind == "u8":
        kind, arr = _KIND_U8, vol.data
    else:
        kind, arr = _KIND_F32, vol.data.astype("<f4", copy=False)
    nx, ny, nz = vol.dims
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, kind, nx, ny, nz))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_voxv(path: Union[str, Path]) -> Union[VoxelVolume, LabelVolume]:
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise VoxvFormatError(f"{path}: truncated header")
        magic, version, kind, nx, ny, nz = _HEADER.unpack(header)
        if magic != MAGIC:
            raise VoxvFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise VoxvFormatError(f"{path}: unsupported version {version}")
        count = nx * ny * nz
        dtype = {_KIND_U8: "u1", _KIND_F32: "<f4", _KIND_U32: "<u4"}.get(kind)
        if dtype is None:
            raise VoxvFormatError(f"{path}: unknown value kind {kind}")
        payload = f.read(count * np.dtype(dtype).itemsize)
    data = np.frombuffer(payload, dtype=dtype)
    if data.size != count:
        raise VoxvFormatError(f"{path}: payload shorter than dims imply")
    grid = data.reshape(nz, ny, nx)
    if kind == _KIND_U32:
        return LabelVolume(grid)
    return VoxelVolume(grid, value_kind="u8" if kind == _KIND_U8 else "f32")


def write_pgm(path: Union[str, Path], img: np.ndarray) -> None:
    """8-bit binary PGM."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2D image")
    img = img.astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_pgm16(path: Union[str, Path], img: np.ndarray) -> None:
    """16-bit binary PGM; samples are big-endian per the format."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2D image")
    if img.min() < 0 or img.max() > 65535:
        raise ValueError("16-bit PGM values must lie in [0, 65535]")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(img.astype(">u2").tobytes())


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Reads the P5 files written above (8- or 16-bit)."""
    with open(path, "rb") as f:
        raw = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a P5 PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    img = np.frombuffer(raw[pos : pos + w * h * dtype.itemsize], dtype=dtype)
    if img.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return img.reshape(h, w).astype(np.uint16 if maxval > 255 else np.uint8)


def export_label_slice(path: Union[str, Path], labels2d: np.ndarray) -> Path:
    """Writes a densely renumbered 16-bit PGM plus ``<path>.pal.txt`` with
    one ``pixel_value label_id`` line per instance. Returns the palette path."""
    labels2d = np.asarray(labels2d)
    ids = np.unique(labels2d)
    ids = ids[ids != 0]
    if len(ids) > 65535:
        raise ValueError("too many labels for 16-bit export")
    remap = np.zeros(int(labels2d.max()) + 1, dtype=np.uint16) if labels2d.size else None
    for i, lab in enumerate(ids, start=1):
        remap[lab] = i
    write_pgm16(path, remap[labels2d] if remap is not None else labels2d)
    pal_path = Path(str(path) + ".pal.txt")
    with open(pal_path, "w", encoding="ascii") as f:
        for i, lab in enumerate(ids, start=1):
            f.write(f"{i} {int(lab)}\n")
    return pal_path
