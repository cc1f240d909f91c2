"""Volume-level correlation-matrix evaluation and slice-level loss curves.

The correlation matrix holds the IoU of every (reference, detected) instance
pair: rows are reference instances sorted by voxel count (largest first),
columns start with the greedily assigned detections (each detected instance
links to at most one reference) followed by the leftovers in id order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import ops
from .segmenter import (
    REQUEST_SIZE,
    ChannelStrategy,
    PointPrompt,
    SegmenterBackend,
    SegmenterRequest,
    select_channel,
)
from .volume import Axis, LabelVolume, VoxelVolume, extract_centered_slice, normalize_slice, to_three_channel
from .voxio import write_pgm

AXES = (Axis.X, Axis.Y, Axis.Z)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a & b| / |a | b|; two empty masks agree vacuously (1.0)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def dice_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """1 - 2|p & t| / (|p| + |t|); two empty masks give 0."""
    pred = np.asarray(pred, dtype=bool)
    target = np.asarray(target, dtype=bool)
    if pred.shape != target.shape:
        raise ValueError(f"mask dims differ: {pred.shape} vs {target.shape}")
    total = int(np.count_nonzero(pred)) + int(np.count_nonzero(target))
    if total == 0:
        return 0.0
    return 1.0 - 2.0 * int(np.count_nonzero(pred & target)) / total


@dataclass(frozen=True)
class CorrelationMatrix:
    ref_ids: Tuple[int, ...]  # row order: voxel count descending, ties by id
    det_ids: Tuple[int, ...]  # assigned detections first (row order), then the rest by id
    values: np.ndarray  # (len(ref_ids), len(det_ids)) IoU values
    assignment: Dict[int, int]  # ref id -> det id, injective on det ids


def correlation_matrix(reference: LabelVolume, predicted: LabelVolume) -> CorrelationMatrix:
    if reference.dims != predicted.dims:
        raise ValueError("reference and predicted dims differ")
    ref = reference.labels.ravel().astype(np.int64)
    det = predicted.labels.ravel().astype(np.int64)
    ref_ids, ref_counts = np.unique(ref[ref != 0], return_counts=True)
    det_ids, det_counts = np.unique(det[det != 0], return_counts=True)
    ref_size = dict(zip(ref_ids.tolist(), ref_counts.tolist()))
    det_size = dict(zip(det_ids.tolist(), det_counts.tolist()))

    both = (ref != 0) & (det != 0)
    pair_key = ref[both] * (det.max() + 1 if det.size else 1) + det[both]
    keys, counts = np.unique(pair_key, return_counts=True)
    overlap: Dict[Tuple[int, int], int] = {}
    base = int(det.max() + 1 if det.size else 1)
    for k, c in zip(keys.tolist(), counts.tolist()):
        overlap[(k // base, k % base)] = c

    row_order = sorted(ref_size, key=lambda r: (-ref_size[r], r))
    row_index = {r: i for i, r in enumerate(row_order)}
    det_index = {d: j for j, d in enumerate(sorted(det_size))}
    raw = np.zeros((len(row_order), len(det_index)), dtype=np.float64)
    for (r, d), c in overlap.items():
        raw[row_index[r], det_index[d]] = c / (ref_size[r] + det_size[d] - c)

    assignment: Dict[int, int] = {}
    taken = np.zeros(len(det_index), dtype=bool)
    det_list = sorted(det_size)
    for i, r in enumerate(row_order):
        scores = np.where(taken, -1.0, raw[i])
        if scores.size == 0:
            continue
        j = int(np.argmax(scores))  # ties resolve to the smaller det id
        if scores[j] > 0.0:
            taken[j] = True
            assignment[r] = det_list[j]

    ordered_dets = [assignment[r] for r in row_order if r in assignment]
    ordered_dets += [d for d in det_list if d not in set(ordered_dets)]
    col_perm = [det_index[d] for d in ordered_dets]
    values = raw[:, col_perm] if raw.size else raw.reshape(len(row_order), 0)
    return CorrelationMatrix(
        ref_ids=tuple(int(r) for r in row_order),
        det_ids=tuple(int(d) for d in ordered_dets),
        values=values,
        assignment={int(k): int(v) for k, v in assignment.items()},
    )


def best_diagonal_mean_iou(matrix: CorrelationMatrix) -> float:
    """Mean assigned-pair IoU over reference rows; unassigned rows score 0."""
    if not matrix.ref_ids:
        return 0.0
    det_pos = {d: j for j, d in enumerate(matrix.det_ids)}
    total = 0.0
    for i, r in enumerate(matrix.ref_ids):
        d = matrix.assignment.get(r)
        if d is not None:
            total += float(matrix.values[i, det_pos[d]])
    return total / len(matrix.ref_ids)


@dataclass(frozen=True)
class SliceEvalResult:
    losses: np.ndarray  # sample order
    sorted_losses: np.ndarray  # ascending
    mean: float
    std: float
    positions: Tuple[Tuple[int, int, int], ...]
    axes: Tuple[Axis, ...]


def slice_eval(
    volume: VoxelVolume,
    labels: LabelVolume,
    segmenter: SegmenterBackend,
    sample_fraction: float,
    rng_seed: int,
    channel_strategy: Optional[ChannelStrategy] = None,
) -> SliceEvalResult:
    """Single-slice prediction quality over seeded random foreground voxels.

    Each sample extracts one centered slice (random axis), prompts the
    segmenter at the slice center, and scores Dice loss against the
    center-connected reference target. Losses also come back sorted ascending,
    matching the usual loss-curve presentation.
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise ValueError("sample_fraction must lie in (0, 1]")
    strategy = channel_strategy or ChannelStrategy("max-predicted-iou")
    fg = np.argwhere(labels.labels != 0)  # (z, y, x) rows in scan order
    if len(fg) == 0:
        raise ValueError("no foreground voxels to sample")
    rng = np.random.default_rng(rng_seed)
    n = max(1, int(round(sample_fraction * len(fg))))
    picks = rng.choice(len(fg), size=min(n, len(fg)), replace=False)
    losses: List[float] = []
    positions: List[Tuple[int, int, int]] = []
    axes: List[Axis] = []
    out_size = (REQUEST_SIZE, REQUEST_SIZE)
    for k in picks:
        zc, yc, xc = (int(c) for c in fg[k])
        pos = (xc, yc, zc)
        axis = AXES[int(rng.integers(0, 3))]
        raw = extract_centered_slice(volume, pos, axis, out_size, fill=0)
        image = to_three_channel(normalize_slice(raw))
        request = SegmenterRequest(image=image, points=(PointPrompt(raw.center),))
        channel = select_channel(segmenter.segment(request), strategy)
        lab = extract_centered_slice(labels, pos, axis, out_size, fill=0)
        target = ops.keep_component_at(lab.data == labels.label_at(pos), raw.center, connectivity=8)
        losses.append(dice_loss(channel.mask, target))
        positions.append(pos)
        axes.append(axis)
    arr = np.asarray(losses, dtype=np.float64)
    return SliceEvalResult(
        losses=arr,
        sorted_losses=np.sort(arr),
        mean=float(arr.mean()),
        std=float(arr.std()),
        positions=tuple(positions),
        axes=tuple(axes),
    )


def export_correlation_csv(matrix: CorrelationMatrix, path) -> None:
    lines = ["ref\\det," + ",".join(str(d) for d in matrix.det_ids)]
    for i, r in enumerate(matrix.ref_ids):
        lines.append(str(r) + "," + ",".join(f"{v:.6f}" for v in matrix.values[i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def export_assignment_csv(matrix: CorrelationMatrix, path) -> None:
    det_pos = {d: j for j, d in enumerate(matrix.det_ids)}
    lines = ["ref,det,iou"]
    for i, r in enumerate(matrix.ref_ids):
        d = matrix.assignment.get(r)
        if d is None:
            lines.append(f"{r},,0.000000")
        else:
            lines.append(f"{r},{d},{matrix.values[i, det_pos[d]]:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def export_heatmap_pgm(matrix: CorrelationMatrix, path) -> None:
    """IoU mapped linearly onto 8-bit gray."""
    if matrix.values.size == 0:
        img = np.zeros((max(1, len(matrix.ref_ids)), 1), dtype=np.uint8)
    else:
        img = np.floor(matrix.values * 255.0 + 0.5).astype(np.uint8)
    write_pgm(path, img)
