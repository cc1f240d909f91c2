"""Prompt-driven 2D slice segmenter interface, the deterministic flood-fill
oracle backend, output-channel selection, and logits-to-mask decoding.

Every backend consumes a 1024x1024 3-channel request with point prompts and
an optional dense (mask) prompt, and returns one or more mask channels, each
carrying a predicted-IoU score and quarter-resolution logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import numpy as np
from scipy import ndimage

from . import ops

REQUEST_SIZE = 1024
LOGITS_FACTOR = 4


class SegmenterError(RuntimeError):
    """Backend failure; deliberately distinct from an empty segmentation."""


class TransportError(SegmenterError):
    """Connection/protocol level failure of an external backend."""


@dataclass(frozen=True)
class PointPrompt:
    position: Tuple[int, int]  # (x, y) pixel
    polarity: str = "positive"


@dataclass(frozen=True, eq=False)
class DensePrompt:
    mask: np.ndarray  # full-resolution bool grid, (h, w)

    def __post_init__(self):
        object.__setattr__(self, "mask", np.ascontiguousarray(self.mask, dtype=bool))


@dataclass(frozen=True, eq=False)
class SegmenterRequest:
    image: np.ndarray  # (1024, 1024, 3) uint8
    points: Tuple[PointPrompt, ...] = ()
    dense: Optional[DensePrompt] = None

    def __post_init__(self):
        img = np.ascontiguousarray(self.image, dtype=np.uint8)
        if img.shape != (REQUEST_SIZE, REQUEST_SIZE, 3):
            raise ValueError(f"request image must be {REQUEST_SIZE}x{REQUEST_SIZE}x3, got {img.shape}")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "points", tuple(self.points))
        for p in self.points:
            x, y = p.position
            if not (0 <= x < REQUEST_SIZE and 0 <= y < REQUEST_SIZE):
                raise ValueError(f"point prompt {p.position} outside image bounds")
        if self.dense is not None and self.dense.mask.shape != img.shape[:2]:
            raise ValueError("dense prompt dims must equal the request image dims")


@dataclass(frozen=True, eq=False)
class MaskChannel:
    mask: np.ndarray  # (h, w) bool
    predicted_iou: float
    logits: np.ndarray  # (h/4, w/4) float32

    def __post_init__(self):
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        logits = np.ascontiguousarray(self.logits, dtype=np.float32)
        h, w = mask.shape
        if logits.shape != (h // LOGITS_FACTOR, w // LOGITS_FACTOR):
            raise ValueError("logits must be quarter resolution per side")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "logits", logits)


@dataclass(frozen=True)
class SegmenterResponse:
    channels: Tuple[MaskChannel, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if len(self.channels) < 1:
            raise ValueError("a response carries at least one channel")


class SegmenterBackend(Protocol):
    def segment(self, request: SegmenterRequest) -> SegmenterResponse: ...


def pool_logits(mask: np.ndarray, inside: float = 10.0, outside: float = -10.0) -> np.ndarray:
    """4x4 average pooling of a full-resolution +-inside/outside field."""
    h, w = mask.shape
    if not mask.any():
        return np.full((h // 4, w // 4), outside, dtype=np.float32)
    field_ = np.where(mask, np.float32(inside), np.float32(outside))
    return field_.reshape(h // 4, 4, w // 4, 4).mean(axis=(1, 3)).astype(np.float32)


class OracleFloodSegmenter:
    """Deterministic stand-in backend: binarize the slice, flood-fill
    (8-connected) from each positive point prompt, return the union as one
    channel. A dense prompt is honored additively. predicted_iou is 1.0 and
    logits are +10 inside / -10 outside, average-pooled to quarter resolution.
    """

    def __init__(self, threshold_strategy: str = "otsu", fixed_threshold: Optional[float] = None):
        if threshold_strategy not in ("otsu", "fixed"):
            raise ValueError(f"unknown threshold strategy {threshold_strategy!r}")
        if threshold_strategy == "fixed" and fixed_threshold is None:
            raise ValueError("fixed strategy needs fixed_threshold")
        self.threshold_strategy = threshold_strategy
        self.fixed_threshold = fixed_threshold

    def segment(self, request: SegmenterRequest) -> SegmenterResponse:
        gray = request.image[:, :, 0]
        if self.threshold_strategy == "otsu":
            threshold = float(ops.otsu_threshold(ops.histogram_u8(gray)))
        else:
            threshold = float(self.fixed_threshold)
        binary = gray > threshold
        flood = np.zeros_like(binary)
        if binary.any() and request.points:
            # labeling restricted to the bounding box of the binary support
            rows = np.flatnonzero(binary.any(axis=1))
            cols = np.flatnonzero(binary.any(axis=0))
            r0, r1 = int(rows[0]), int(rows[-1]) + 1
            c0, c1 = int(cols[0]), int(cols[-1]) + 1
            sub = binary[r0:r1, c0:c1]
            lab, _ = ndimage.label(sub, structure=np.ones((3, 3), dtype=bool))
            hit = set()
            for p in request.points:
                x, y = p.position
                if binary[y, x]:
                    hit.add(int(lab[y - r0, x - c0]))
            if hit:
                flood[r0:r1, c0:c1] = np.isin(lab, sorted(hit))
        if request.dense is not None:
            flood = flood | request.dense.mask
        return SegmenterResponse((MaskChannel(flood, 1.0, pool_logits(flood)),))


@dataclass(frozen=True)
class ChannelStrategy:
    """How to pick one channel out of a multimask response."""

    kind: str  # max-predicted-iou | fixed-index | max-iou-with-foreground | min-voxel-count
    index: Optional[int] = None

    KINDS = ("max-predicted-iou", "fixed-index", "max-iou-with-foreground", "min-voxel-count")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown channel strategy {self.kind!r}")
        if self.kind == "fixed-index" and self.index is None:
            raise ValueError("fixed-index strategy needs an index")


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def select_channel(
    response: SegmenterResponse,
    strategy: ChannelStrategy,
    fg_slice: Optional[np.ndarray] = None,
) -> MaskChannel:
    """Deterministic channel choice; score ties resolve to the lowest index."""
    channels = response.channels
    if strategy.kind == "fixed-index":
        if not 0 <= strategy.index < len(channels):
            raise ValueError(f"fixed channel index {strategy.index} out of range (n={len(channels)})")
        return channels[strategy.index]
    if strategy.kind == "max-predicted-iou":
        scores = [c.predicted_iou for c in channels]
        return channels[int(np.argmax(scores))]
    if strategy.kind == "max-iou-with-foreground":
        if fg_slice is None:
            raise ValueError("max-iou-with-foreground needs the estimated foreground slice")
        scores = [_mask_iou(c.mask, fg_slice) for c in channels]
        return channels[int(np.argmax(scores))]
    counts = [int(np.count_nonzero(c.mask)) for c in channels]
    return channels[int(np.argmin(counts))]


def mask_from_logits(logits: np.ndarray, threshold: float, upscaling: str) -> np.ndarray:
    """Upscale quarter-resolution logits by 4x (nearest or bilinear), then
    compare against ``threshold`` (strictly greater)."""
    logits = np.asarray(logits, dtype=np.float32)
    if upscaling == "nearest":
        up = np.repeat(np.repeat(logits, LOGITS_FACTOR, axis=0), LOGITS_FACTOR, axis=1)
    elif upscaling == "bilinear":
        h, w = logits.shape
        rows = (np.arange(h * LOGITS_FACTOR, dtype=np.float64) + 0.5) / LOGITS_FACTOR - 0.5
        cols = (np.arange(w * LOGITS_FACTOR, dtype=np.float64) + 0.5) / LOGITS_FACTOR - 0.5
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        up = ndimage.map_coordinates(logits.astype(np.float64), [rr, cc], order=1, mode="nearest")
    else:
        raise ValueError(f"unknown upscaling {upscaling!r}")
    return up > threshold
