"""Flood-filling tile traversal: accumulator, pending-tile queue, boundary
intersection detection, dense-prompt extraction, and multi-seed orchestration
into a final instance-label volume.

Candidate tile centers are quantized to the movement-step lattice for
visited-set dedup, so a per-segment run pops at most
ceil(nx/ms) * ceil(ny/ms) * ceil(nz/ms) tiles.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from . import ops
from .adapter import AdapterConfig, TileProposal, segment_tile
from .segmenter import SegmenterBackend, TransportError
from .volume import LabelVolume, Region3D, VoxelVolume, crop_nd, extract_tile, tile_region

Coord = Tuple[int, int, int]


@dataclass(frozen=True)
class SchedulerConfig:
    movement_step: int = 1
    check_step_width: int = 13
    accumulator_update: str = "foreground-only"  # foreground-only | always
    restrict_movement: str = "fg"  # fg | eroded-fg
    max_steps: Optional[int] = None  # pops per segment; None = unlimited
    max_tiles_per_segment: int = 100000
    seed_mode: str = "auto"  # auto | manual
    max_segments: int = 10000

    def __post_init__(self):
        if self.movement_step < 1:
            raise ValueError("movement_step must be >= 1")
        if self.check_step_width < 1:
            raise ValueError("check_step_width must be >= 1")
        if self.accumulator_update not in ("foreground-only", "always"):
            raise ValueError(f"unknown accumulator update {self.accumulator_update!r}")
        if self.restrict_movement not in ("fg", "eroded-fg"):
            raise ValueError(f"unknown movement restriction {self.restrict_movement!r}")
        if self.seed_mode not in ("auto", "manual"):
            raise ValueError(f"unknown seed mode {self.seed_mode!r}")


@dataclass
class Accumulator:
    """Working state while one segment grows: the segment-under-construction
    mask, finalized labels, visited tile-center cells, and the pending queue."""

    working: np.ndarray
    claimed: np.ndarray
    visited: Set[Coord] = field(default_factory=set)
    queue: "deque[Coord]" = field(default_factory=deque)


def dense_prompt_for(working: np.ndarray, region: Region3D) -> np.ndarray:
    """Tile-aligned crop of the working mask; out-of-bounds voxels are false."""
    ox, oy, oz = region.origin
    sx, sy, sz = region.size
    return crop_nd(working, (oz, oy, ox), (sz, sy, sx), False)


def _quantize(center: Coord, step: int) -> Coord:
    return (center[0] // step, center[1] // step, center[2] // step)


_FACES = (
    ("x", 0, -1), ("x", -1, +1),
    ("y", 0, -1), ("y", -1, +1),
    ("z", 0, -1), ("z", -1, +1),
)


def find_intersections(
    proposal: TileProposal,
    region: Region3D,
    fg_mask: np.ndarray,
    movement_mask: np.ndarray,
    cfg: SchedulerConfig,
) -> List[Coord]:
    """Scan the six tile faces on a check-step lattice; where the proposal
    crosses a face, emit a candidate center pushed outward along the face
    normal by the movement step. Candidates outside the volume or off the
    movement mask are dropped; visited-set dedup happens at enqueue time."""
    mask = proposal.mask
    sz, sy, sx = mask.shape
    ox, oy, oz = region.origin
    nzv, nyv, nxv = fg_mask.shape
    step = cfg.check_step_width
    ms = cfg.movement_step
    out: List[Coord] = []
    for axis_name, face_idx, direction in _FACES:
        if axis_name == "x":
            face = mask[:, :, face_idx]  # (z, y)
            as_, bs = np.arange(0, sz, step), np.arange(0, sy, step)
        elif axis_name == "y":
            face = mask[:, face_idx, :]  # (z, x)
            as_, bs = np.arange(0, sz, step), np.arange(0, sx, step)
        else:
            face = mask[face_idx, :, :]  # (y, x)
            as_, bs = np.arange(0, sy, step), np.arange(0, sx, step)
        for a in as_:
            for b in bs:
                if not face[a, b]:
                    continue
                if axis_name == "x":
                    lx, ly, lz = (0 if face_idx == 0 else sx - 1), b, a
                elif axis_name == "y":
                    lx, ly, lz = b, (0 if face_idx == 0 else sy - 1), a
                else:
                    lx, ly, lz = b, a, (0 if face_idx == 0 else sz - 1)
                gx, gy, gz = ox + lx, oy + ly, oz + lz
                if axis_name == "x":
                    gx += direction * ms
                elif axis_name == "y":
                    gy += direction * ms
                else:
                    gz += direction * ms
                if not (0 <= gx < nxv and 0 <= gy < nyv and 0 <= gz < nzv):
                    continue
                if not movement_mask[gz, gy, gx]:
                    continue
                out.append((gx, gy, gz))
    return out


@dataclass
class SegmentRun:
    mask: np.ndarray
    journal: List[str]
    pops: int
    reason: Optional[str] = None  # set when the seed was filtered out


def run_segment(
    volume: VoxelVolume,
    seed: Coord,
    segmenter: SegmenterBackend,
    adapter_cfg: AdapterConfig,
    sched_cfg: SchedulerConfig,
    fg_mask: np.ndarray,
    movement_mask: Optional[np.ndarray] = None,
    claimed: Optional[np.ndarray] = None,
) -> SegmentRun:
    """Queue-driven growth of one segment from ``seed``; returns the working
    mask once the queue drains or a budget (max tiles / max steps) is hit.
    ``claimed`` (read-only here) carries earlier segments for bookkeeping."""
    nx, ny, nz = volume.dims
    x, y, z = (int(c) for c in seed)
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise ValueError(f"seed {seed} outside the volume")
    if movement_mask is None:
        movement_mask = _movement_mask(fg_mask, sched_cfg)
    # A cube of side 2*max(dims) centered anywhere inside the volume covers it
    # completely and pushes every outward-displaced candidate out of bounds,
    # exactly like the configured giant tile would; clamping avoids
    # materializing tile_size^3 buffers for small volumes.
    clamp = 2 * max(nx, ny, nz)
    if adapter_cfg.tile_size >= clamp:
        adapter_cfg = replace(adapter_cfg, tile_size=clamp)
    size = (adapter_cfg.tile_size,) * 3
    acc = Accumulator(
        working=np.zeros(volume.data.shape, dtype=bool),
        claimed=claimed if claimed is not None else np.zeros(volume.data.shape, dtype=np.uint32),
        visited={_quantize((x, y, z), sched_cfg.movement_step)},
        queue=deque([(x, y, z)]),
    )
    journal: List[str] = []
    pops = 0
    reason: Optional[str] = None
    while acc.queue:
        if pops >= sched_cfg.max_tiles_per_segment:
            journal.append("stop budget=max-tiles-per-segment")
            break
        if sched_cfg.max_steps is not None and pops >= sched_cfg.max_steps:
            journal.append("stop budget=max-steps")
            break
        center = acc.queue.popleft()
        pops += 1
        region = tile_region(center, size)
        tile = extract_tile(volume, center, size, fill=0)
        ox, oy, oz = region.origin
        sx, sy, sz = region.size
        fg_tile = crop_nd(fg_mask, (oz, oy, ox), (sz, sy, sx), False)
        dense_tile = None
        if adapter_cfg.prompt_type == "center-point-plus-dense":
            dense_tile = dense_prompt_for(acc.working, region)
        proposal = segment_tile(
            tile,
            segmenter,
            adapter_cfg,
            fg_tile=fg_tile,
            dense_tile=dense_tile,
            debug_tag=f"{center[0]}_{center[1]}_{center[2]}",
        )
        if proposal.aborted and proposal.reason and proposal.reason.startswith("transport-error"):
            raise TransportError(proposal.reason)
        if proposal.aborted and pops == 1:
            reason = proposal.reason
        _write_proposal(acc.working, proposal.mask, region, sched_cfg.accumulator_update)
        pushed = 0
        if not proposal.aborted:
            for cand in find_intersections(proposal, region, fg_mask, movement_mask, sched_cfg):
                q = _quantize(cand, sched_cfg.movement_step)
                if q in acc.visited:
                    continue
                acc.visited.add(q)
                acc.queue.append(cand)
                pushed += 1
        journal.append(
            f"pop center=({center[0]},{center[1]},{center[2]}) queue={len(acc.queue)} "
            f"proposal_voxels={int(np.count_nonzero(proposal.mask))} candidates={pushed}"
        )
    return SegmentRun(mask=acc.working, journal=journal, pops=pops, reason=reason)


def _write_proposal(working: np.ndarray, mask: np.ndarray, region: Region3D, update: str) -> None:
    ox, oy, oz = region.origin
    sx, sy, sz = region.size
    nzv, nyv, nxv = working.shape
    z0, z1 = max(oz, 0), min(oz + sz, nzv)
    y0, y1 = max(oy, 0), min(oy + sy, nyv)
    x0, x1 = max(ox, 0), min(ox + sx, nxv)
    if z0 >= z1 or y0 >= y1 or x0 >= x1:
        return
    window = mask[z0 - oz : z1 - oz, y0 - oy : y1 - oy, x0 - ox : x1 - ox]
    if update == "always":
        working[z0:z1, y0:y1, x0:x1] = window
    else:  # foreground-only: only add voxels
        working[z0:z1, y0:y1, x0:x1] |= window


def _movement_mask(fg_mask: np.ndarray, cfg: SchedulerConfig) -> np.ndarray:
    if cfg.restrict_movement == "eroded-fg":
        return ops.morph(fg_mask, "erode", ops.StructuringElement(connectivity=6, radius=1))
    return fg_mask


def run_all(
    volume: VoxelVolume,
    segmenter: SegmenterBackend,
    adapter_cfg: AdapterConfig,
    sched_cfg: SchedulerConfig,
    fg_mask: Optional[np.ndarray] = None,
    seeds: Optional[Sequence[Coord]] = None,
) -> Tuple[LabelVolume, List[str]]:
    """Segment after segment until seeds (manual) or unclaimed foreground
    (auto) runs out. Finalization writes each working mask into the claimed
    volume under a fresh label; voxels already claimed keep the earlier label.
    """
    if fg_mask is None:
        fg_mask = ops.estimate_foreground(
            volume,
            strategy=adapter_cfg.fg_strategy,
            threshold_fraction=adapter_cfg.fg_threshold_fraction,
            closing_radius=adapter_cfg.fg_closing_radius,
        )
    movement_mask = _movement_mask(fg_mask, sched_cfg)
    claimed = np.zeros(volume.data.shape, dtype=np.uint32)
    exhausted = np.zeros(volume.data.shape, dtype=bool)
    journal: List[str] = []
    next_label = 0
    segments = 0

    def commit(seed: Coord, run: SegmentRun) -> None:
        nonlocal next_label
        new_voxels = run.mask & (claimed == 0)
        if new_voxels.any():
            next_label += 1
            claimed[new_voxels] = next_label
            journal.append(
                f"segment label={next_label} seed=({seed[0]},{seed[1]},{seed[2]}) "
                f"voxels={int(np.count_nonzero(new_voxels))} pops={run.pops}"
            )
        else:
            tail = f" reason={run.reason}" if run.reason else ""
            journal.append(f"segment label=0 seed=({seed[0]},{seed[1]},{seed[2]}) voxels=0 pops={run.pops}{tail}")

    if sched_cfg.seed_mode == "manual":
        for seed in seeds or []:
            if segments >= sched_cfg.max_segments:
                break
            run = run_segment(
                volume, seed, segmenter, adapter_cfg, sched_cfg, fg_mask, movement_mask, claimed=claimed
            )
            journal.extend(run.journal)
            commit(tuple(int(c) for c in seed), run)
            segments += 1
    else:
        while segments < sched_cfg.max_segments:
            candidates = fg_mask & (claimed == 0) & ~exhausted
            flat = int(np.argmax(candidates))
            if not candidates.ravel()[flat]:
                break
            nzv, nyv, nxv = candidates.shape
            zc, rem = divmod(flat, nyv * nxv)
            yc, xc = divmod(rem, nxv)
            seed = (int(xc), int(yc), int(zc))
            run = run_segment(
                volume, seed, segmenter, adapter_cfg, sched_cfg, fg_mask, movement_mask, claimed=claimed
            )
            journal.extend(run.journal)
            commit(seed, run)
            exhausted[zc, yc, xc] = True
            segments += 1
    return LabelVolume(claimed), journal
