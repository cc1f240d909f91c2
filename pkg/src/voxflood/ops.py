"""Classical image/volume operators: thresholding, morphology, connected
components, median filtering, exact distance transform, marker generation,
and a deterministic priority-flood watershed.

Binary masks are plain boolean numpy arrays (shape ``(nz, ny, nx)`` in 3D,
``(h, w)`` in 2D). All functions are pure; outputs never alias inputs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .volume import LabelVolume, VoxelVolume, grid_of

BinaryMask = np.ndarray


@dataclass(frozen=True)
class StructuringElement:
    """Morphology footprint: 6/26-connectivity in 3D, 4/8 in 2D; a radius-r
    ball is approximated by r iterations of the unit-radius element."""

    connectivity: int = 6
    radius: int = 1

    def __post_init__(self):
        if self.connectivity not in (4, 6, 8, 26):
            raise ValueError(f"unsupported connectivity {self.connectivity}")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")


def _structure(connectivity: int, ndim: int) -> np.ndarray:
    table = {(3, 6): 1, (3, 26): 3, (2, 4): 1, (2, 8): 2}
    rank = table.get((ndim, connectivity))
    if rank is None:
        raise ValueError(f"connectivity {connectivity} invalid for {ndim}D")
    return ndimage.generate_binary_structure(ndim, rank)


def otsu_threshold(histogram: Sequence[int]) -> int:
    """Threshold in [0, 255] maximizing between-class variance for the split
    (values <= t) vs (values > t); ties resolve to the smaller t."""
    hist = np.asarray(histogram, dtype=np.float64)
    if hist.ndim != 1 or len(hist) != 256:
        raise ValueError("expected a 256-bin histogram")
    total = hist.sum()
    if total <= 0:
        raise ValueError("histogram is empty")
    nonzero = np.flatnonzero(hist)
    if len(nonzero) == 1:
        return int(nonzero[0])
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    sum0 = np.cumsum(hist * levels)
    w1 = total - w0
    mu0 = np.divide(sum0, w0, out=np.zeros(256), where=w0 > 0)
    mu1 = np.divide(sum0[-1] - sum0, w1, out=np.zeros(256), where=w1 > 0)
    sigma_b = w0 * w1 * (mu0 - mu1) ** 2
    return int(np.argmax(sigma_b))  # argmax returns the first (smallest) maximizer


def histogram_u8(values: np.ndarray) -> np.ndarray:
    return np.bincount(np.asarray(values, dtype=np.uint8).ravel(), minlength=256)


def binarize(vol: Union[VoxelVolume, np.ndarray], threshold: float) -> BinaryMask:
    grid = grid_of(vol) if isinstance(vol, (VoxelVolume, LabelVolume)) else np.asarray(vol)
    return grid > threshold


def morph(mask: BinaryMask, op: str, se: StructuringElement) -> BinaryMask:
    """erode/dilate/open/close with Minkowski semantics; dilation treats
    out-of-bounds as false and erosion as true, so dilate(~m) == ~erode(m)."""
    mask = np.asarray(mask, dtype=bool)
    if se.radius == 0:
        return mask.copy()
    structure = _structure(se.connectivity, mask.ndim)

    def dil(m):
        return ndimage.binary_dilation(m, structure=structure, iterations=se.radius, border_value=0)

    def ero(m):
        return ndimage.binary_erosion(m, structure=structure, iterations=se.radius, border_value=1)

    if op == "erode":
        return ero(mask)
    if op == "dilate":
        return dil(mask)
    if op == "open":
        return dil(ero(mask))
    if op == "close":
        return ero(dil(mask))
    raise ValueError(f"unknown morphological op {op!r}")


def _relabel_scan_order(lab: np.ndarray) -> np.ndarray:
    """Renumber labels 1..k by first occurrence in flat (x-fastest) scan order."""
    flat = lab.ravel()
    nz = np.flatnonzero(flat)
    out = np.zeros(lab.shape, dtype=np.uint32)
    if nz.size == 0:
        return out
    ids, first_idx = np.unique(flat[nz], return_index=True)
    order = np.argsort(first_idx, kind="stable")
    mapping = np.zeros(int(ids.max()) + 1, dtype=np.uint32)
    mapping[ids[order]] = np.arange(1, len(ids) + 1, dtype=np.uint32)
    return mapping[lab]


def connected_components(mask: BinaryMask, connectivity: int) -> Union[LabelVolume, np.ndarray]:
    """Maximal connected true-regions labeled 1..k, numbered by the scan-order
    position of each component's first voxel. 3D masks return a LabelVolume,
    2D masks a plain uint32 grid."""
    mask = np.asarray(mask, dtype=bool)
    lab, _ = ndimage.label(mask, structure=_structure(connectivity, mask.ndim))
    lab = _relabel_scan_order(lab)
    if mask.ndim == 3:
        return LabelVolume(lab)
    return lab


def keep_component_at(mask: BinaryMask, point: Sequence[int], connectivity: int) -> BinaryMask:
    """Only the connected component containing ``point`` survives; a point on
    background yields an empty mask. ``point`` is (x, y) or (x, y, z)."""
    mask = np.asarray(mask, dtype=bool)
    idx = tuple(int(c) for c in reversed(point))  # -> (y, x) or (z, y, x)
    if len(idx) != mask.ndim:
        raise ValueError("point dimensionality does not match mask")
    for c, n in zip(idx, mask.shape):
        if not 0 <= c < n:
            raise ValueError(f"point {tuple(point)} outside mask of shape {mask.shape}")
    if not mask[idx]:
        return np.zeros_like(mask)
    # label only the bounding box of the support; the point's component lives there
    nz = [np.flatnonzero(mask.any(axis=tuple(a for a in range(mask.ndim) if a != d))) for d in range(mask.ndim)]
    window = tuple(slice(int(n[0]), int(n[-1]) + 1) for n in nz)
    lab, _ = ndimage.label(mask[window], structure=_structure(connectivity, mask.ndim))
    sub_idx = tuple(c - w.start for c, w in zip(idx, window))
    out = np.zeros_like(mask)
    out[window] = lab == lab[sub_idx]
    return out


def median_filter(data: Union[np.ndarray, VoxelVolume], radius: int):
    """Box median of side 2r+1 (2D or 3D per input rank), borders clamped."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    wrap = isinstance(data, VoxelVolume)
    arr = data.data if wrap else np.asarray(data)
    if radius == 0:
        out = arr.copy()
    elif arr.dtype == bool:
        out = ndimage.median_filter(arr.astype(np.uint8), size=2 * radius + 1, mode="nearest") > 0
    else:
        out = ndimage.median_filter(arr, size=2 * radius + 1, mode="nearest")
    return VoxelVolume(out, value_kind=data.value_kind) if wrap else out


def distance_transform(mask: BinaryMask) -> VoxelVolume:
    """Exact Euclidean distance from each true voxel to the nearest false
    voxel; the outside of the volume counts as false. False voxels map to 0."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    dist = ndimage.distance_transform_edt(padded)
    core = dist[tuple(slice(1, -1) for _ in range(mask.ndim))]
    return VoxelVolume(core.astype(np.float32), value_kind="f32")


def local_maxima_markers(dist: VoxelVolume, min_separation: int) -> LabelVolume:
    """Strict 26-connected local maxima of ``dist``, greedily suppressed so no
    two survivors lie within ``min_separation`` (larger value wins, then scan
    order); survivors are labeled 1..k in scan order."""
    if min_separation < 1:
        raise ValueError("min_separation must be >= 1")
    arr = dist.data.astype(np.float64)
    footprint = np.ones((3, 3, 3), dtype=bool)
    footprint[1, 1, 1] = False
    neighbor_max = ndimage.maximum_filter(arr, footprint=footprint, mode="constant", cval=-np.inf)
    strict = (arr > neighbor_max) & (arr > 0)
    coords = np.argwhere(strict)  # (z, y, x), scan order
    if len(coords) == 0:
        return LabelVolume(np.zeros(arr.shape, dtype=np.uint32))
    values = arr[tuple(coords.T)]
    order = np.lexsort((np.arange(len(coords)), -values))  # by value desc, then scan order
    kept: list[np.ndarray] = []
    for i in order:
        c = coords[i]
        if all(np.sum((c - k) ** 2) >= min_separation**2 for k in kept):
            kept.append(c)
    kept.sort(key=lambda c: (c[0], c[1], c[2]))
    out = np.zeros(arr.shape, dtype=np.uint32)
    for lab, c in enumerate(kept, start=1):
        out[tuple(c)] = lab
    return LabelVolume(out)


def watershed(
    relief: Union[VoxelVolume, np.ndarray],
    markers: LabelVolume,
    support: Optional[BinaryMask] = None,
) -> LabelVolume:
    """Priority-flood watershed: every reachable voxel joins the basin that
    reaches it first along ascending relief; ties go to the smaller label,
    then insertion order. ``support`` (optional) restricts flooding; voxels
    outside it keep label 0. 6-connected flooding.
    """
    arr = relief.data if isinstance(relief, VoxelVolume) else np.asarray(relief)
    marks = markers.labels
    if arr.shape != marks.shape:
        raise ValueError("relief and marker dims differ")
    if support is not None and support.shape != arr.shape:
        raise ValueError("support dims differ")
    seeds = np.argwhere(marks != 0)
    if len(seeds) == 0:
        raise ValueError("markers are empty")
    out = marks.astype(np.uint32).copy()
    if support is not None:
        out[~support] = 0
    shape = arr.shape
    done = np.zeros(shape, dtype=bool)
    heap: list = []
    seq = 0
    for z, y, x in seeds:
        if support is not None and not support[z, y, x]:
            continue
        heapq.heappush(heap, (float(arr[z, y, x]), int(marks[z, y, x]), seq, (int(z), int(y), int(x))))
        seq += 1
    offsets = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
    while heap:
        level, label, _, (z, y, x) = heapq.heappop(heap)
        if done[z, y, x]:
            continue
        done[z, y, x] = True
        if out[z, y, x] == 0:
            out[z, y, x] = label
        basin = int(out[z, y, x])  # markers always keep their own label
        for dz, dy, dx in offsets:
            nz_, ny_, nx_ = z + dz, y + dy, x + dx
            if not (0 <= nz_ < shape[0] and 0 <= ny_ < shape[1] and 0 <= nx_ < shape[2]):
                continue
            if done[nz_, ny_, nx_]:
                continue
            if support is not None and not support[nz_, ny_, nx_]:
                continue
            heapq.heappush(heap, (max(level, float(arr[nz_, ny_, nx_])), basin, seq, (nz_, ny_, nx_)))
            seq += 1
    return LabelVolume(out)


def estimate_foreground(
    vol: VoxelVolume,
    strategy: str = "otsu",
    threshold_fraction: Optional[float] = None,
    closing_radius: int = 1,
) -> BinaryMask:
    """Global binarization (Otsu or a fixed fraction of the 8-bit range)
    followed by a morphological closing."""
    if strategy == "otsu":
        threshold = float(otsu_threshold(histogram_u8(vol.data)))
    elif strategy == "fixed":
        if threshold_fraction is None:
            raise ValueError("fixed strategy needs threshold_fraction")
        threshold = float(threshold_fraction) * 255.0
    else:
        raise ValueError(f"unknown foreground strategy {strategy!r}")
    mask = binarize(vol, threshold)
    if closing_radius > 0:
        mask = morph(mask, "close", StructuringElement(connectivity=6, radius=closing_radius))
    return mask
