"""Training-example extraction and balanced batch manifests for externally
fine-tuning a 2D slice segmenter.

A foreground position yields one example per orthogonal axis: the normalized
centered slice plus a binary target holding only the instance part connected
to the slice center. Background positions yield 0..3 examples depending on
the chosen background variant.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .volume import Axis, LabelVolume, Slice2D, VoxelVolume, extract_centered_slice, normalize_slice
from .voxio import write_pgm

AXES = (Axis.X, Axis.Y, Axis.Z)


class BackgroundVariant(enum.Enum):
    FOREGROUND_ONLY = "foreground-only"
    CONSTANT_VALUE_BACKGROUND = "constant-value-background"
    CONNECTED_COMPONENT_BACKGROUND = "connected-component-background"


@dataclass(frozen=True)
class TrainingRecipe:
    """Fine-tuning hyperparameters, recorded for the external trainer; this
    package never runs gradient descent itself."""

    batch_size: int = 64
    fg_per_group: int = 16
    bg_per_group: int = 16
    learning_rate: float = 8e-4
    warmup_iterations: int = 250  # linear ramp
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weight_decay: float = 0.1
    loss: str = "dice(sigmoid=true, squared_pred=true, reduction=mean) + bce(reduction=mean)"


@dataclass(frozen=True)
class ExampleMeta:
    volume_id: str
    position: Tuple[int, int, int]
    axis: Axis
    klass: str  # foreground | background
    variant: Optional[BackgroundVariant] = None


@dataclass(frozen=True, eq=False)
class TrainingExample:
    input_slice: Slice2D  # normalized to [0, 255]
    target: np.ndarray  # bool, same dims as the input slice
    meta: ExampleMeta

    def __post_init__(self):
        target = np.ascontiguousarray(self.target, dtype=bool)
        if target.shape != self.input_slice.data.shape:
            raise ValueError("input and target dims differ")
        object.__setattr__(self, "target", target)


class InsufficientBackgroundError(ValueError):
    pass


def make_foreground_example(
    vol: VoxelVolume,
    labels: LabelVolume,
    pos: Sequence[int],
    axis: Axis,
    out_size: Tuple[int, int] = (1024, 1024),
    volume_id: str = "",
) -> TrainingExample:
    """Normalized centered slice plus the center-connected part (8-connected)
    of the instance under ``pos`` as the target."""
    instance = labels.label_at(pos)
    if instance == 0:
        raise ValueError(f"position {tuple(pos)} is background")
    raw = extract_centered_slice(vol, pos, axis, out_size, fill=0)
    lab = extract_centered_slice(labels, pos, axis, out_size, fill=0)
    one_hot = lab.data == instance
    target = ops.keep_component_at(one_hot, raw.center, connectivity=8)
    meta = ExampleMeta(volume_id, tuple(int(c) for c in pos), axis, "foreground")
    return TrainingExample(normalize_slice(raw), target, meta)


def make_background_examples(
    vol: VoxelVolume,
    labels: LabelVolume,
    pos: Sequence[int],
    variant: BackgroundVariant,
    out_size: Tuple[int, int] = (1024, 1024),
    volume_id: str = "",
) -> List[TrainingExample]:
    """0..3 background examples (one per axis) according to the variant.

    ConnectedComponentBackground targets the background component connected
    to the slice center; out-of-volume slice regions count as background
    (the reference is implicitly zero-enframed by the fill value)."""
    if labels.label_at(pos) != 0:
        raise ValueError(f"position {tuple(pos)} is foreground")
    if variant is BackgroundVariant.FOREGROUND_ONLY:
        return []
    out = []
    for axis in AXES:
        raw = extract_centered_slice(vol, pos, axis, out_size, fill=0)
        if variant is BackgroundVariant.CONSTANT_VALUE_BACKGROUND:
            target = np.zeros(raw.data.shape, dtype=bool)
        else:
            lab = extract_centered_slice(labels, pos, axis, out_size, fill=0)
            target = ops.keep_component_at(lab.data == 0, raw.center, connectivity=8)
        meta = ExampleMeta(volume_id, tuple(int(c) for c in pos), axis, "background", variant)
        out.append(TrainingExample(normalize_slice(raw), target, meta))
    return out


@dataclass(frozen=True)
class ManifestRow:
    example_id: str
    klass: str
    variant: str
    volume_id: str
    position: Tuple[int, int, int]
    axis: Axis
    group: int
    example: TrainingExample


def build_manifest(
    examples: Sequence[TrainingExample],
    fg_per_group: int = 16,
    bg_per_group: int = 16,
    rng_seed: int = 0,
) -> List[ManifestRow]:
    """Shuffle, balance, and group examples.

    All foreground examples are used; background examples are drawn without
    replacement to match, ``bg_per_group`` per ``fg_per_group`` foreground. A
    trailing partial group keeps the same ratio. ``bg_per_group=0`` builds a
    foreground-only manifest.
    """
    if fg_per_group < 1 or bg_per_group < 0:
        raise ValueError("group sizes must be fg>=1, bg>=0")
    fg = [e for e in examples if e.meta.klass == "foreground"]
    bg = [e for e in examples if e.meta.klass == "background"]
    if not fg:
        raise ValueError("no foreground examples; nothing to balance")
    rng = np.random.default_rng(rng_seed)
    fg_order = rng.permutation(len(fg))
    bg_order = rng.permutation(len(bg))
    groups = [fg_order[i : i + fg_per_group] for i in range(0, len(fg_order), fg_per_group)]
    bg_needed = sum(round(len(g) * bg_per_group / fg_per_group) for g in groups)
    if bg_needed > len(bg):
        raise InsufficientBackgroundError(
            f"need {bg_needed} background examples, pool has {len(bg)}"
        )
    rows: List[ManifestRow] = []
    bg_cursor = 0
    for group_idx, g in enumerate(groups):
        take = round(len(g) * bg_per_group / fg_per_group)
        members = [fg[i] for i in g] + [bg[i] for i in bg_order[bg_cursor : bg_cursor + take]]
        bg_cursor += take
        for m_idx in rng.permutation(len(members)):
            e = members[m_idx]
            rows.append(
                ManifestRow(
                    example_id=f"{len(rows):06d}",
                    klass=e.meta.klass,
                    variant=e.meta.variant.value if e.meta.variant else "-",
                    volume_id=e.meta.volume_id,
                    position=e.meta.position,
                    axis=e.meta.axis,
                    group=group_idx,
                    example=e,
                )
            )
    return rows


def sample_positions(
    labels: LabelVolume, n: int, stride: int, rng_seed: int
) -> List[Tuple[int, int, int]]:
    """Up to ``n`` positions on stride lattices; each pass uses a fresh seeded
    random offset and visits every lattice point exactly once (shuffled)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    nx, ny, nz = labels.dims
    rng = np.random.default_rng(rng_seed)
    out: List[Tuple[int, int, int]] = []
    while len(out) < n:
        ox, oy, oz = (int(rng.integers(0, stride)) for _ in range(3))
        xs = np.arange(ox, nx, stride)
        ys = np.arange(oy, ny, stride)
        zs = np.arange(oz, nz, stride)
        zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
        lattice = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
        for i in rng.permutation(len(lattice)):
            out.append(tuple(int(c) for c in lattice[i]))
            if len(out) == n:
                break
    return out


def write_dataset(root: Path, rows: Sequence[ManifestRow]) -> None:
    """Dataset layout: ``examples/<id>_input.pgm`` + ``examples/<id>_target.pgm``
    (targets as 0/255) plus ``manifest.tsv``."""
    root = Path(root)
    ex_dir = root / "examples"
    ex_dir.mkdir(parents=True, exist_ok=True)
    lines = ["id\tclass\tvariant\tvolume\tx\ty\tz\taxis\tgroup"]
    for row in rows:
        write_pgm(ex_dir / f"{row.example_id}_input.pgm", row.example.input_slice.data)
        write_pgm(ex_dir / f"{row.example_id}_target.pgm", row.example.target.astype(np.uint8) * 255)
        x, y, z = row.position
        lines.append(
            f"{row.example_id}\t{row.klass}\t{row.variant}\t{row.volume_id}"
            f"\t{x}\t{y}\t{z}\t{row.axis.value}\t{row.group}"
        )
    (root / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="ascii")
