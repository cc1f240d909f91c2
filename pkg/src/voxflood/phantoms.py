"""Synthetic phantom volumes (marbles, corn, sheets) with ground-truth labels,
plus the classical watershed reference pipeline used to label bulk material.

Entity centers land on integer voxels and bulk entities keep a >= 3 voxel
surface gap, so the reference pipeline's distance-transform maxima are stable.
Background intensity is fixed at 20 (air plus scatter); entities default to a
bright mean so global thresholding separates them cleanly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import ops
from .volume import LabelVolume, VoxelVolume

BACKGROUND_INTENSITY = 20.0
_SURFACE_GAP = 3.0


class PlacementError(RuntimeError):
    """Rejection sampling ran out of budget; ``achieved`` entities were placed."""

    def __init__(self, achieved: int, requested: int):
        super().__init__(
            f"placed only {achieved} of {requested} entities before exhausting the rejection budget"
        )
        self.achieved = achieved


@dataclass(frozen=True)
class Cylinder:
    """Z-aligned placement container: center (x, y, z), radius, height."""

    center: Tuple[float, float, float]
    radius: float
    height: float


@dataclass(frozen=True)
class PhantomSpec:
    kind: str  # marbles | corn | sheets
    count: int
    size_range: Tuple[float, float]
    intensity_mean: float = 200.0
    intensity_jitter: float = 10.0
    noise_sigma: float = 0.0
    artefact_level: float = 0.0
    rng_seed: int = 0
    container: Optional[Cylinder] = None

    def __post_init__(self):
        if self.kind not in ("marbles", "corn", "sheets"):
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        lo, hi = self.size_range
        if lo <= 0 or hi < lo:
            raise ValueError("size_range must be positive and ordered")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def _rotation_matrix(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _inside_container(container: Optional[Cylinder], center: np.ndarray, margin: float) -> bool:
    if container is None:
        return True
    cx, cy, cz = container.center
    if (center[0] - cx) ** 2 + (center[1] - cy) ** 2 > max(container.radius - margin, 0.0) ** 2:
        return False
    half = container.height / 2.0 - margin
    return abs(center[2] - cz) <= half


def _place_bulk(
    spec: PhantomSpec, dims: Tuple[int, int, int], radii: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Integer centers for entities with bounding radius ``radii[i]``,
    pairwise separated by the surface gap and clear of the volume border."""
    centers = np.zeros((spec.count, 3))
    budget = 10 * spec.count
    placed = 0
    while placed < spec.count:
        r = radii[placed]
        margin = int(math.ceil(r)) + 2
        lo = [margin] * 3
        hi = [d - margin for d in dims]
        if spec.container is not None:
            # draw inside the container's bounding box; the exact check prunes corners
            cx, cy, cz = spec.container.center
            reach = spec.container.radius - (r + 1.0)
            half = spec.container.height / 2.0 - (r + 1.0)
            lo[0] = max(lo[0], int(math.ceil(cx - reach)))
            hi[0] = min(hi[0], int(math.floor(cx + reach)) + 1)
            lo[1] = max(lo[1], int(math.ceil(cy - reach)))
            hi[1] = min(hi[1], int(math.floor(cy + reach)) + 1)
            lo[2] = max(lo[2], int(math.ceil(cz - half)))
            hi[2] = min(hi[2], int(math.floor(cz + half)) + 1)
        if any(h <= l for l, h in zip(lo, hi)):
            raise PlacementError(placed, spec.count)
        cand = np.array([float(rng.integers(l, h)) for l, h in zip(lo, hi)])
        ok = _inside_container(spec.container, cand, r + 1.0)
        if ok:
            for j in range(placed):
                if np.linalg.norm(cand - centers[j]) < r + radii[j] + _SURFACE_GAP:
                    ok = False
                    break
        if ok:
            centers[placed] = cand
            placed += 1
        else:
            budget -= 1
            if budget <= 0:
                raise PlacementError(placed, spec.count)
    return centers


def _paint_ellipsoid(labels, center, rotation, semi_axes, label):
    nz, ny, nx = labels.shape
    reach = int(math.ceil(max(semi_axes)))
    x0, y0, z0 = (int(c) for c in center)
    xs = slice(max(0, x0 - reach), min(nx, x0 + reach + 1))
    ys = slice(max(0, y0 - reach), min(ny, y0 + reach + 1))
    zs = slice(max(0, z0 - reach), min(nz, z0 + reach + 1))
    zz, yy, xx = np.meshgrid(
        np.arange(zs.start, zs.stop), np.arange(ys.start, ys.stop), np.arange(xs.start, xs.stop),
        indexing="ij",
    )
    d = np.stack([xx - center[0], yy - center[1], zz - center[2]], axis=-1)
    local = d @ rotation.T
    inside = np.sum((local / np.asarray(semi_axes)) ** 2, axis=-1) <= 1.0
    region = labels[zs, ys, xs]
    region[inside] = label
    labels[zs, ys, xs] = region


def _paint_sheet(labels, dims, rng: np.random.Generator, label):
    nx, ny, nz = dims
    axis = int(rng.integers(0, 3))  # 0=x, 1=y, 2=z sheet normal
    n_axis = dims[axis]
    thickness = float(rng.integers(1, 4))
    base = float(rng.uniform(4, max(n_axis - 5, 5)))
    amp = float(rng.uniform(0.0, 3.0))
    ku, kv = float(rng.integers(1, 3)), float(rng.integers(1, 3))
    phase = float(rng.uniform(0, 2 * math.pi))
    u_dim, v_dim = [d for i, d in enumerate(dims) if i != axis]
    u = np.arange(u_dim)[:, None]
    v = np.arange(v_dim)[None, :]
    surface = base + amp * np.sin(2 * math.pi * (ku * u / u_dim + kv * v / v_dim) + phase)
    w = np.arange(n_axis)
    # inside iff |w - surface(u, v)| <= thickness / 2
    if axis == 0:  # normal x: (u, v) = (y, z)
        band = np.abs(w.reshape(1, 1, nx) - surface.reshape(ny, nz, 1).transpose(1, 0, 2)) <= thickness / 2
    elif axis == 1:  # normal y: (u, v) = (x, z)
        band = np.abs(w.reshape(1, ny, 1) - surface.reshape(nx, nz, 1).transpose(1, 2, 0)) <= thickness / 2
    else:  # normal z: (u, v) = (x, y)
        band = np.abs(w.reshape(nz, 1, 1) - surface.reshape(nx, ny, 1).transpose(2, 1, 0)) <= thickness / 2
    free = band & (labels == 0)
    labels[free] = label


def _add_streaks(img: np.ndarray, level: float, rng: np.random.Generator) -> None:
    """A few random-angle additive line integrals, mimicking streak artefacts."""
    nz, ny, nx = img.shape
    n_streaks = int(round(level * 10))
    amp = level * 80.0
    diag = math.sqrt(nx * nx + ny * ny + nz * nz)
    for _ in range(n_streaks):
        p0 = rng.uniform(0, [nx, ny, nz])
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        ts = np.arange(-diag, diag, 0.5)
        pts = p0[None, :] + ts[:, None] * d[None, :]
        idx = np.round(pts).astype(int)
        keep = (
            (idx[:, 0] >= 0) & (idx[:, 0] < nx)
            & (idx[:, 1] >= 0) & (idx[:, 1] < ny)
            & (idx[:, 2] >= 0) & (idx[:, 2] < nz)
        )
        idx = np.unique(idx[keep], axis=0)
        img[idx[:, 2], idx[:, 1], idx[:, 0]] += amp


def generate(spec: PhantomSpec, dims: Tuple[int, int, int]) -> Tuple[VoxelVolume, LabelVolume]:
    """Deterministic phantom: intensities (8-bit, clipped) plus ground-truth labels.

    Marbles are spheres, corn kernels are 3:2:1 ellipsoids in random
    orientation; both are pairwise disjoint. Sheets are thin curved slabs and
    may touch each other.
    """
    nx, ny, nz = (int(d) for d in dims)
    if spec.kind in ("marbles", "corn") and min(nx, ny, nz) < 32:
        raise ValueError("marbles/corn phantoms need dims >= 32 per axis")
    rng = np.random.default_rng(spec.rng_seed)
    labels = np.zeros((nz, ny, nx), dtype=np.uint32)

    if spec.kind == "marbles":
        radii = rng.uniform(spec.size_range[0], spec.size_range[1], size=spec.count)
        centers = _place_bulk(spec, (nx, ny, nz), radii, rng)
        for i in range(spec.count):
            _paint_ellipsoid(labels, centers[i], np.eye(3), [radii[i]] * 3, i + 1)
    elif spec.kind == "corn":
        major = rng.uniform(spec.size_range[0], spec.size_range[1], size=spec.count)
        rotations = [_rotation_matrix(rng) for _ in range(spec.count)]
        centers = _place_bulk(spec, (nx, ny, nz), major, rng)
        for i in range(spec.count):
            semi = [major[i], major[i] * 2.0 / 3.0, major[i] / 3.0]
            _paint_ellipsoid(labels, centers[i], rotations[i], semi, i + 1)
    else:
        for i in range(spec.count):
            _paint_sheet(labels, (nx, ny, nz), rng, i + 1)

    img = np.full((nz, ny, nx), BACKGROUND_INTENSITY, dtype=np.float64)
    for i in range(spec.count):
        value = spec.intensity_mean + rng.uniform(-spec.intensity_jitter, spec.intensity_jitter)
        img[labels == i + 1] = value
    if spec.artefact_level > 0:
        _add_streaks(img, spec.artefact_level, rng)
    if spec.noise_sigma > 0:
        img += rng.normal(0.0, spec.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 255.0)
    vol = VoxelVolume(np.floor(img + 0.5).astype(np.uint8), value_kind="u8")
    return vol, LabelVolume(labels)


def classical_reference(
    vol: VoxelVolume,
    marker_min_separation: int = 5,
    label_closing_radius: int = 1,
) -> LabelVolume:
    """Reference labeling for bulk material: Otsu binarization, closing,
    distance transform, local-maxima markers, support-restricted watershed on
    the negated distance, then a per-label closing kept inside the support."""
    mask = ops.binarize(vol, ops.otsu_threshold(ops.histogram_u8(vol.data)))
    if not mask.any():
        raise ValueError("no foreground after binarization")
    mask = ops.morph(mask, "close", ops.StructuringElement(connectivity=6, radius=1))
    dist = ops.distance_transform(mask)
    markers = ops.local_maxima_markers(dist, marker_min_separation)
    if len(markers.ids()) == 0:
        raise ValueError("no watershed markers found")
    relief = VoxelVolume(-dist.data, value_kind="f32")
    shed = ops.watershed(relief, markers, support=mask)
    result = shed.labels.copy()
    if label_closing_radius > 0:
        se = ops.StructuringElement(connectivity=6, radius=label_closing_radius)
        for lab in shed.ids():
            closed = ops.morph(result == lab, "close", se)
            result[closed & (result == 0) & mask] = lab
    return LabelVolume(result)
