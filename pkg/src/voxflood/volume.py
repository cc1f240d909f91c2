"""Dense voxel containers, slice/tile extraction geometry, and slice preprocessing.

Grids are stored as C-contiguous numpy arrays of shape ``(nz, ny, nx)`` so the
flat memory layout is x-fastest, matching the on-disk raw-volume convention.
Public positions are ``(x, y, z)`` tuples; array indexing is ``[z, y, x]``.
Containers freeze their arrays after construction and are safe to share
between workers; every operation returns a fresh object.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

VALUE_KINDS = {"u8": np.uint8, "f32": np.float32}


class Axis(enum.Enum):
    X = "x"
    Y = "y"
    Z = "z"


class SliceStatus(enum.Enum):
    NORMAL = "normal"
    EMPTY = "empty"
    OUTLIER = "outlier"


def _freeze(arr: np.ndarray, dtype) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D grid, got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise ValueError("all dims must be >= 1")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    """Scalar intensity grid. ``value_kind`` is 'u8' (8-bit) or 'f32'."""

    data: np.ndarray
    value_kind: str = "u8"

    def __post_init__(self):
        if self.value_kind not in VALUE_KINDS:
            raise ValueError(f"unknown value_kind {self.value_kind!r}")
        object.__setattr__(self, "data", _freeze(self.data, VALUE_KINDS[self.value_kind]))

    @property
    def dims(self) -> Tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    def value_at(self, pos: Sequence[int]):
        x, y, z = pos
        return self.data[z, y, x]


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Instance-label grid; 0 is background, ids need not be contiguous."""

    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", _freeze(self.labels, np.uint32))

    @property
    def dims(self) -> Tuple[int, int, int]:
        nz, ny, nx = self.labels.shape
        return (nx, ny, nz)

    def label_at(self, pos: Sequence[int]) -> int:
        x, y, z = pos
        return int(self.labels[z, y, x])

    def ids(self) -> np.ndarray:
        """Instance ids present, ascending, background excluded."""
        ids = np.unique(self.labels)
        return ids[ids != 0]


@dataclass(frozen=True, eq=False)
class Slice2D:
    """One extracted plane; ``data`` has shape (h, w), ``center`` is (cx, cy)."""

    data: np.ndarray
    axis: Axis
    index: int
    center: Tuple[int, int]

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 2:
            raise ValueError("slice data must be 2D")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> Tuple[int, int]:
        h, w = self.data.shape
        return (w, h)


@dataclass(frozen=True)
class Region3D:
    """Axis-aligned voxel box: ``origin`` (x, y, z) and ``size`` (sx, sy, sz)."""

    origin: Tuple[int, int, int]
    size: Tuple[int, int, int]

    def __post_init__(self):
        if min(self.size) < 1:
            raise ValueError("region sizes must be >= 1")

    @property
    def end(self) -> Tuple[int, int, int]:
        return tuple(o + s for o, s in zip(self.origin, self.size))


AnyVolume = Union[VoxelVolume, LabelVolume]


def grid_of(vol: AnyVolume) -> np.ndarray:
    return vol.labels if isinstance(vol, LabelVolume) else vol.data


def _rewrap(vol: AnyVolume, arr: np.ndarray) -> AnyVolume:
    if isinstance(vol, LabelVolume):
        return LabelVolume(arr)
    return VoxelVolume(arr, value_kind=vol.value_kind)


def crop_nd(arr: np.ndarray, start: Sequence[int], size: Sequence[int], fill=0) -> np.ndarray:
    """Window ``[start, start+size)`` of ``arr`` in array index order,
    out-of-bounds samples take ``fill``. Negative starts pad."""
    size = tuple(int(s) for s in size)
    # np.zeros stays lazily allocated, which matters for giant padded frames
    out = np.zeros(size, dtype=arr.dtype) if fill == 0 else np.full(size, fill, dtype=arr.dtype)
    src_lo, src_hi, dst_lo, dst_hi = [], [], [], []
    for st, sz, n in zip(start, size, arr.shape):
        lo = max(int(st), 0)
        hi = min(int(st) + sz, n)
        if lo >= hi:
            return out
        src_lo.append(lo)
        src_hi.append(hi)
        dst_lo.append(lo - int(st))
        dst_hi.append(hi - int(st))
    out[tuple(slice(a, b) for a, b in zip(dst_lo, dst_hi))] = arr[
        tuple(slice(a, b) for a, b in zip(src_lo, src_hi))
    ]
    return out


def enframe(vol: AnyVolume, border: int, fill=0) -> AnyVolume:
    """Grow every dim by ``2*border``, original content centered, new voxels = fill."""
    if border < 0:
        raise ValueError("border must be >= 0")
    if border == 0:
        return vol
    arr = grid_of(vol)
    shape = tuple(n + 2 * border for n in arr.shape)
    out = np.zeros(shape, dtype=arr.dtype) if fill == 0 else np.full(shape, fill, dtype=arr.dtype)
    out[border:-border, border:-border, border:-border] = arr
    return _rewrap(vol, out)


def _check_inside(vol: AnyVolume, center: Sequence[int]) -> None:
    nx, ny, nz = vol.dims
    x, y, z = center
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise ValueError(f"center {tuple(center)} outside volume dims {(nx, ny, nz)}")


def extract_centered_slice(
    vol: AnyVolume,
    center: Sequence[int],
    axis: Axis,
    out_size: Tuple[int, int],
    fill=0,
) -> Slice2D:
    """Axis-orthogonal plane through ``center``, cropped/padded so the center
    voxel lands at pixel ``(w//2, h//2)``.

    Plane pixel axes: Z -> (x, y); Y -> (x, z); X -> (y, z).
    """
    if not isinstance(axis, Axis):
        raise ValueError(f"invalid axis {axis!r}")
    _check_inside(vol, center)
    arr = grid_of(vol)
    x, y, z = (int(c) for c in center)
    w, h = (int(s) for s in out_size)
    if axis is Axis.Z:
        plane, ccol, crow, index = arr[z], x, y, z
    elif axis is Axis.Y:
        plane, ccol, crow, index = arr[:, y, :], x, z, y
    else:
        plane, ccol, crow, index = arr[:, :, x], y, z, x
    out = crop_nd(plane, (crow - h // 2, ccol - w // 2), (h, w), fill)
    return Slice2D(out, axis=axis, index=index, center=(w // 2, h // 2))


def extract_tile(vol: AnyVolume, center: Sequence[int], size: Sequence[int], fill=0) -> AnyVolume:
    """Box of ``size`` centered at ``center``; out-of-bounds voxels take fill."""
    if min(size) < 1:
        raise ValueError("tile size must be >= 1 on every axis")
    arr = grid_of(vol)
    x, y, z = (int(c) for c in center)
    sx, sy, sz = (int(s) for s in size)
    out = crop_nd(arr, (z - sz // 2, y - sy // 2, x - sx // 2), (sz, sy, sx), fill)
    return _rewrap(vol, out)


def tile_region(center: Sequence[int], size: Sequence[int]) -> Region3D:
    """The Region3D covered by extract_tile for the same center/size."""
    x, y, z = (int(c) for c in center)
    sx, sy, sz = (int(s) for s in size)
    return Region3D(origin=(x - sx // 2, y - sy // 2, z - sz // 2), size=(sx, sy, sz))


def normalize_slice(s: Slice2D) -> Slice2D:
    """Affine-map the slice's [min, max] onto [0, 255] (8-bit, round-half-up).

    Constant slices map to all zeros.
    """
    data = s.data.astype(np.float64)
    lo = float(data.min())
    hi = float(data.max())
    if hi == lo:
        out = np.zeros(s.data.shape, dtype=np.uint8)
    else:
        scaled = (data - lo) * (255.0 / (hi - lo))
        out = np.floor(scaled + 0.5).astype(np.uint8)
    return Slice2D(out, axis=s.axis, index=s.index, center=s.center)


def to_three_channel(s: Slice2D) -> np.ndarray:
    """Replicate the slice into an (h, w, 3) uint8 image; all channels equal."""
    data = np.asarray(s.data)
    if data.min() < 0 or data.max() > 255:
        raise ValueError("slice values must lie in [0, 255] before channel expansion")
    gray = data.astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


def detect_empty_or_outlier(s: Slice2D, min_nonzero: int) -> SliceStatus:
    """Empty iff all values equal; outlier iff fewer than ``min_nonzero``
    pixels sit above the slice minimum."""
    data = s.data
    lo = data.min()
    if data.max() == lo:
        return SliceStatus.EMPTY
    if int(np.count_nonzero(data > lo)) < min_nonzero:
        return SliceStatus.OUTLIER
    return SliceStatus.NORMAL
