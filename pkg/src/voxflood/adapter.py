"""2D-to-3D adaptation of a slice segmenter over one cubic tile.

Each tile is segmented three times, once per orthogonal axis: slices are
processed starting at the tile center and alternating outward (+1, -1, +2,
-2, ...) with per-direction stopping controlled by the merge rule. The three
stack masks fuse by per-voxel majority count into the tile proposal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import ops
from .segmenter import (
    REQUEST_SIZE,
    ChannelStrategy,
    DensePrompt,
    PointPrompt,
    SegmenterBackend,
    SegmenterRequest,
    TransportError,
    mask_from_logits,
    select_channel,
)
from .volume import Axis, Slice2D, SliceStatus, VoxelVolume, crop_nd, detect_empty_or_outlier, normalize_slice
from .voxio import write_pgm

AXES = (Axis.X, Axis.Y, Axis.Z)


@dataclass(frozen=True)
class MergeRule:
    """Stack continuation rule: always, break-on-empty-slice, or a minimum
    IoU against the last accepted slice / the estimated-foreground slice."""

    kind: str
    threshold: float = 0.0

    KINDS = ("always", "break-on-empty-slice", "min-iou-to-last-slice", "min-iou-to-foreground")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown merge rule {self.kind!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("merge rule threshold must lie in [0, 1]")


@dataclass(frozen=True)
class AdapterConfig:
    tile_size: int = 48
    prompt_type: str = "center-point"  # center-point | center-point-plus-dense
    channel_strategy: ChannelStrategy = field(default_factory=lambda: ChannelStrategy("max-predicted-iou"))
    mask_source: str = "binary-full-res"  # binary-full-res | logits
    logits_threshold: float = 0.0
    logits_upscaling: str = "nearest"
    merge_rule: MergeRule = field(default_factory=lambda: MergeRule("break-on-empty-slice"))
    slice_median: bool = False
    slice_cca: bool = True
    stack_merge_min_count: int = 2
    volume_median: bool = False
    seed_fg_slice_count: int = 1
    fg_strategy: str = "otsu"  # otsu | fixed
    fg_threshold_fraction: float = 0.3
    fg_closing_radius: int = 1
    outlier_min_nonzero: int = 8
    debug_slice_dir: Optional[str] = None

    def __post_init__(self):
        if not 1 <= self.tile_size <= REQUEST_SIZE:
            raise ValueError(f"tile_size must lie in [1, {REQUEST_SIZE}]")
        if self.prompt_type not in ("center-point", "center-point-plus-dense"):
            raise ValueError(f"unknown prompt type {self.prompt_type!r}")
        if self.mask_source not in ("binary-full-res", "logits"):
            raise ValueError(f"unknown mask source {self.mask_source!r}")
        if self.stack_merge_min_count not in (1, 2, 3):
            raise ValueError("stack_merge_min_count must be 1, 2, or 3")
        if not 0.0 <= self.fg_threshold_fraction <= 1.0:
            raise ValueError("fg_threshold_fraction must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class TileProposal:
    mask: np.ndarray  # bool, tile-shaped
    stacks: Tuple[np.ndarray, ...] = ()  # per-axis stack masks, for diagnostics
    aborted: bool = False
    reason: Optional[str] = None


def seed_filter(tile: VoxelVolume, fg_tile: np.ndarray, seed_fg_slice_count: int) -> bool:
    """Continue iff the tile-center voxel reads foreground in at least
    ``seed_fg_slice_count`` of the three orthogonal center slices of the
    foreground tile (count 0 always continues)."""
    if seed_fg_slice_count <= 0:
        return True
    nz, ny, nx = fg_tile.shape
    cz, cy, cx = nz // 2, ny // 2, nx // 2
    hits = 0
    for axis in AXES:
        if axis is Axis.Z:
            plane = fg_tile[cz]
            hit = plane[cy, cx]
        elif axis is Axis.Y:
            plane = fg_tile[:, cy, :]
            hit = plane[cz, cx]
        else:
            plane = fg_tile[:, :, cx]
            hit = plane[cz, cy]
        hits += bool(hit)
    return hits >= seed_fg_slice_count


def _tile_plane(arr: np.ndarray, axis: Axis, index: int) -> np.ndarray:
    if axis is Axis.Z:
        return arr[index]
    if axis is Axis.Y:
        return arr[:, index, :]
    return arr[:, :, index]


def _write_plane(stack: np.ndarray, axis: Axis, index: int, mask: np.ndarray) -> None:
    if axis is Axis.Z:
        stack[index] = mask
    elif axis is Axis.Y:
        stack[:, index, :] = mask
    else:
        stack[:, :, index] = mask


def _embed(content: np.ndarray, fill=0) -> np.ndarray:
    """Center a (n, n) plane in the fixed request frame; the content center
    pixel lands on the request center pixel."""
    n = content.shape[0]
    start = n // 2 - REQUEST_SIZE // 2
    return crop_nd(content, (start, start), (REQUEST_SIZE, REQUEST_SIZE), fill)


def _window(full: np.ndarray, n: int) -> np.ndarray:
    start = REQUEST_SIZE // 2 - n // 2
    return full[start : start + n, start : start + n]


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


class _SliceDebugSink:
    def __init__(self, directory: Optional[str]):
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)

    def dump(self, tag: str, image: np.ndarray, mask: np.ndarray) -> None:
        if not self.directory:
            return
        write_pgm(self.directory / f"{tag}_input.pgm", image)
        write_pgm(self.directory / f"{tag}_mask.pgm", mask.astype(np.uint8) * 255)


def _predict_slice(
    tile_arr: np.ndarray,
    axis: Axis,
    index: int,
    segmenter: SegmenterBackend,
    config: AdapterConfig,
    dense_arr: Optional[np.ndarray],
    debug: _SliceDebugSink,
    fg_arr: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Full per-slice pipeline; returns the (n, n) predicted mask."""
    n = tile_arr.shape[0]
    raw = _tile_plane(tile_arr, axis, index)
    s = Slice2D(raw, axis=axis, index=index, center=(n // 2, n // 2))
    if detect_empty_or_outlier(s, config.outlier_min_nonzero) is not SliceStatus.NORMAL:
        return np.zeros((n, n), dtype=bool)
    norm = normalize_slice(s)
    image = np.zeros((REQUEST_SIZE, REQUEST_SIZE, 3), dtype=np.uint8)
    embedded = _embed(norm.data)
    image[:, :, 0] = embedded
    image[:, :, 1] = embedded
    image[:, :, 2] = embedded
    center = (REQUEST_SIZE // 2, REQUEST_SIZE // 2)
    dense = None
    if config.prompt_type == "center-point-plus-dense" and dense_arr is not None:
        dense = DensePrompt(_embed(_tile_plane(dense_arr, axis, index)))
    request = SegmenterRequest(image=image, points=(PointPrompt(center),), dense=dense)
    response = segmenter.segment(request)
    fg_slice = None
    if config.channel_strategy.kind == "max-iou-with-foreground":
        if fg_arr is None:
            raise ValueError("channel strategy needs the estimated foreground tile")
        fg_slice = _embed(_tile_plane(fg_arr, axis, index))
    channel = select_channel(response, config.channel_strategy, fg_slice=fg_slice)
    if config.mask_source == "logits":
        mask = mask_from_logits(channel.logits, config.logits_threshold, config.logits_upscaling)
    else:
        mask = channel.mask
    if config.slice_median:
        mask = ops.median_filter(mask, 1)
    if config.slice_cca:
        mask = ops.keep_component_at(mask, center, connectivity=8)
    debug.dump(f"{axis.value}{index:04d}", embedded, mask)
    return _window(mask, n).copy()


def _rule_accepts(
    rule: MergeRule,
    mask: np.ndarray,
    prev: Optional[np.ndarray],
    fg_plane: Optional[np.ndarray],
) -> bool:
    if rule.kind == "always":
        return True
    if rule.kind == "break-on-empty-slice":
        return bool(mask.any())
    if rule.kind == "min-iou-to-last-slice":
        if prev is None:
            return True
        return _mask_iou(mask, prev) > rule.threshold
    if fg_plane is None:
        raise ValueError("min-iou-to-foreground needs the estimated foreground tile")
    return _mask_iou(mask, fg_plane) > rule.threshold


def segment_stack(
    tile: VoxelVolume,
    axis: Axis,
    segmenter: SegmenterBackend,
    config: AdapterConfig,
    dense_tile: Optional[np.ndarray] = None,
    fg_tile: Optional[np.ndarray] = None,
    debug: Optional[_SliceDebugSink] = None,
) -> np.ndarray:
    """One axis-aligned slice stack over the tile, center-out alternating,
    each direction stopping independently when its merge rule fires."""
    arr = tile.data
    n = arr.shape[0]
    if arr.shape != (n, n, n) or n != config.tile_size:
        raise ValueError(f"tile must be cubic with side {config.tile_size}")
    debug = debug or _SliceDebugSink(None)
    rule = config.merge_rule
    stack = np.zeros_like(arr, dtype=bool)
    center = n // 2

    def fg_plane(index):
        if fg_tile is None or rule.kind != "min-iou-to-foreground":
            return None
        return _tile_plane(fg_tile, axis, index)

    center_mask = _predict_slice(arr, axis, center, segmenter, config, dense_tile, debug, fg_tile)
    if not _rule_accepts(rule, center_mask, None, fg_plane(center)):
        return stack
    _write_plane(stack, axis, center, center_mask)
    prev = {+1: center_mask, -1: center_mask}
    active = {+1: True, -1: True}
    for delta in range(1, n):
        if not (active[+1] or active[-1]):
            break
        for sign in (+1, -1):
            if not active[sign]:
                continue
            index = center + sign * delta
            if not 0 <= index < n:
                active[sign] = False  # tile face reached
                continue
            mask = _predict_slice(arr, axis, index, segmenter, config, dense_tile, debug, fg_tile)
            if not _rule_accepts(rule, mask, prev[sign], fg_plane(index)):
                active[sign] = False
                continue
            _write_plane(stack, axis, index, mask)
            prev[sign] = mask
    return stack


def merge_stacks(stacks: Tuple[np.ndarray, ...], min_count: int) -> np.ndarray:
    """Per-voxel majority vote: true iff true in at least ``min_count`` stacks."""
    if not stacks:
        raise ValueError("no stacks to merge")
    shape = stacks[0].shape
    if any(s.shape != shape for s in stacks):
        raise ValueError("stack dims differ")
    counts = np.zeros(shape, dtype=np.int8)
    for s in stacks:
        counts += s.astype(np.int8)
    return counts >= min_count


def segment_tile(
    tile: VoxelVolume,
    segmenter: SegmenterBackend,
    config: AdapterConfig,
    fg_tile: Optional[np.ndarray] = None,
    dense_tile: Optional[np.ndarray] = None,
    debug_tag: str = "",
) -> TileProposal:
    """Seed filter, three orthogonal stacks, majority fusion, optional 3D
    median. The tile center acts as the seed."""
    n = config.tile_size
    empty = np.zeros((n, n, n), dtype=bool)
    if fg_tile is not None and not seed_filter(tile, fg_tile, config.seed_fg_slice_count):
        return TileProposal(empty, aborted=True, reason="seed-filter")
    debug = _SliceDebugSink(
        str(Path(config.debug_slice_dir) / debug_tag) if config.debug_slice_dir else None
    )
    stacks = []
    try:
        for axis in AXES:
            stacks.append(
                segment_stack(tile, axis, segmenter, config, dense_tile=dense_tile, fg_tile=fg_tile, debug=debug)
            )
    except TransportError as exc:
        return TileProposal(empty, aborted=True, reason=f"transport-error: {exc}")
    merged = merge_stacks(tuple(stacks), config.stack_merge_min_count)
    if config.volume_median:
        merged = ops.median_filter(merged, 1)
    return TileProposal(merged, stacks=tuple(stacks))
