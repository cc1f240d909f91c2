"""Declarative run configuration: one TOML file drives every subcommand.

Keys are kebab-case. Unknown keys are rejected. The four named presets pin
the tuned parameter sets for the 48/1024 tile runs; a config may select a
preset and add unrelated settings, but contradicting a pinned value is an
error (presets are immutable).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .adapter import AdapterConfig, MergeRule
from .phantoms import Cylinder, PhantomSpec
from .scheduler import SchedulerConfig
from .segmenter import ChannelStrategy
from .training import BackgroundVariant


class ConfigError(ValueError):
    pass


PRESETS: Dict[str, Dict[str, Dict[str, object]]] = {
    "vitb48": {
        "adapter": {
            "tile-size": 48,
            "seed-fg-slice-count": 2,
            "stack-merge-min-count": 3,
            "fg-strategy": "fixed",
            "fg-threshold": 0.3,
            "prompt-type": "center-point-plus-dense",
            "channel-strategy": "fixed-index",
            "channel-index": 1,
            "merge-rule": "min-iou-to-last-slice",
            "merge-threshold": 0.5,
            "slice-median": True,
            "cca": True,
            "volume-median": False,
        },
        "scheduler": {
            "movement-step": 1,
            "check-step-width": 13,
            "accumulator-update": "foreground-only",
            "restrict-movement": "fg",
            "max-steps": 128,
        },
    },
    "vitb1024": {
        "adapter": {
            "tile-size": 1024,
            "seed-fg-slice-count": 2,
            "stack-merge-min-count": 1,
            "fg-strategy": "fixed",
            "fg-threshold": 0.2,
            "prompt-type": "center-point",
            "channel-strategy": "max-predicted-iou",
            "merge-rule": "min-iou-to-last-slice",
            "merge-threshold": 0.25,
            "slice-median": False,
            "cca": True,
            "volume-median": True,
        },
        "scheduler": {
            "movement-step": 1,
            "accumulator-update": "foreground-only",
            "restrict-movement": "eroded-fg",
        },
    },
    "tuned48": {
        "adapter": {
            "tile-size": 48,
            "seed-fg-slice-count": 1,
            "stack-merge-min-count": 1,
            "fg-strategy": "fixed",
            "fg-threshold": 0.2,
            "prompt-type": "center-point-plus-dense",
            "channel-strategy": "max-iou-with-foreground",
            "merge-rule": "min-iou-to-last-slice",
            "merge-threshold": 0.5,
            "slice-median": False,
            "cca": False,
            "volume-median": False,
        },
        "scheduler": {
            "movement-step": 1,
            "check-step-width": 19,
            "accumulator-update": "always",
            "restrict-movement": "eroded-fg",
            "max-steps": 128,
        },
    },
    "tuned1024": {
        "adapter": {
            "tile-size": 1024,
            "seed-fg-slice-count": 1,
            "stack-merge-min-count": 1,
            "fg-strategy": "fixed",
            "fg-threshold": 0.5,
            "prompt-type": "center-point-plus-dense",
            "channel-strategy": "max-iou-with-foreground",
            "merge-rule": "always",
            "slice-median": False,
            "cca": False,
            "volume-median": True,
        },
        "scheduler": {
            "movement-step": 1,
            "accumulator-update": "always",
            "restrict-movement": "fg",
        },
    },
}

_ADAPTER_KEYS = {
    "tile-size", "prompt-type", "channel-strategy", "channel-index", "mask-source",
    "logits-threshold", "logits-upscaling", "merge-rule", "merge-threshold",
    "slice-median", "cca", "stack-merge-min-count", "volume-median",
    "seed-fg-slice-count", "fg-strategy", "fg-threshold", "fg-closing-radius",
    "outlier-min-nonzero", "debug-slice-dir",
}
_SCHEDULER_KEYS = {
    "movement-step", "check-step-width", "accumulator-update", "restrict-movement",
    "max-steps", "max-tiles-per-segment", "seed-mode", "seeds", "max-segments",
}
_PHANTOM_KEYS = {
    "kind", "count", "size-range", "intensity-mean", "intensity-jitter",
    "noise-sigma", "artefact-level", "rng-seed", "dims",
    "container-center", "container-radius", "container-height",
}
_PATH_KEYS = {
    "output-dir", "input-volume", "reference-labels", "predicted-labels",
    "journal", "dataset-dir", "correlation-csv", "assignment-csv", "heatmap-pgm",
}
_TRAINING_KEYS = {
    "variant", "stride", "positions", "fg-per-group", "bg-per-group",
    "rng-seed", "slice-size", "volume-id",
}
_EVAL_KEYS = {"sample-fraction", "rng-seed"}
_EXPORT_KEYS = {"source", "axis", "indices", "prefix"}
_BACKEND_KEYS = {"endpoint"}
_TOP_KEYS = {"preset", "paths", "phantom", "backend", "adapter", "scheduler", "training", "evaluation", "export"}


@dataclass(frozen=True)
class TrainingOptions:
    variant: BackgroundVariant = BackgroundVariant.CONSTANT_VALUE_BACKGROUND
    stride: int = 16
    positions: int = 48
    fg_per_group: int = 16
    bg_per_group: int = 16
    rng_seed: int = 0
    slice_size: Tuple[int, int] = (1024, 1024)
    volume_id: str = "volume"


@dataclass(frozen=True)
class EvalOptions:
    sample_fraction: float = 0.005
    rng_seed: int = 0


@dataclass(frozen=True)
class ExportOptions:
    source: Optional[str] = None
    axis: str = "z"
    indices: Tuple[int, ...] = ()
    prefix: str = "slice"


@dataclass(frozen=True)
class Paths:
    output_dir: Path = Path("out")
    input_volume: Optional[Path] = None
    reference_labels: Optional[Path] = None
    predicted_labels: Optional[Path] = None
    journal: Optional[Path] = None
    dataset_dir: Optional[Path] = None
    correlation_csv: Optional[Path] = None
    assignment_csv: Optional[Path] = None
    heatmap_pgm: Optional[Path] = None

    def resolved(self, name: str, default: str) -> Path:
        value = getattr(self, name)
        return Path(value) if value is not None else self.output_dir / default


@dataclass(frozen=True)
class RunConfig:
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    backend: str = "oracle"
    paths: Paths = field(default_factory=Paths)
    phantom: Optional[PhantomSpec] = None
    phantom_dims: Tuple[int, int, int] = (128, 128, 128)
    seeds: Tuple[Tuple[int, int, int], ...] = ()
    training: TrainingOptions = field(default_factory=TrainingOptions)
    evaluation: EvalOptions = field(default_factory=EvalOptions)
    export: ExportOptions = field(default_factory=ExportOptions)
    preset: Optional[str] = None


def _check_keys(section: str, data: dict, allowed: set) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _merge_preset(doc: dict, preset_name: str) -> dict:
    preset = PRESETS.get(preset_name)
    if preset is None:
        raise ConfigError(f"unknown preset {preset_name!r}; available: {', '.join(sorted(PRESETS))}")
    for section, pinned in preset.items():
        user = doc.setdefault(section, {})
        for key, value in pinned.items():
            if key in user and user[key] != value:
                raise ConfigError(
                    f"[{section}] {key} = {user[key]!r} contradicts preset {preset_name!r} "
                    f"(pins {value!r}); presets are immutable"
                )
            user[key] = value
    return doc


def _build_adapter(data: dict) -> AdapterConfig:
    _check_keys("adapter", data, _ADAPTER_KEYS)
    strategy = ChannelStrategy(
        kind=data.get("channel-strategy", "max-predicted-iou"),
        index=data.get("channel-index"),
    )
    rule = MergeRule(
        kind=data.get("merge-rule", "break-on-empty-slice"),
        threshold=float(data.get("merge-threshold", 0.0)),
    )
    try:
        return AdapterConfig(
            tile_size=int(data.get("tile-size", 48)),
            prompt_type=data.get("prompt-type", "center-point"),
            channel_strategy=strategy,
            mask_source=data.get("mask-source", "binary-full-res"),
            logits_threshold=float(data.get("logits-threshold", 0.0)),
            logits_upscaling=data.get("logits-upscaling", "nearest"),
            merge_rule=rule,
            slice_median=bool(data.get("slice-median", False)),
            slice_cca=bool(data.get("cca", True)),
            stack_merge_min_count=int(data.get("stack-merge-min-count", 2)),
            volume_median=bool(data.get("volume-median", False)),
            seed_fg_slice_count=int(data.get("seed-fg-slice-count", 1)),
            fg_strategy=data.get("fg-strategy", "otsu"),
            fg_threshold_fraction=float(data.get("fg-threshold", 0.3)),
            fg_closing_radius=int(data.get("fg-closing-radius", 1)),
            outlier_min_nonzero=int(data.get("outlier-min-nonzero", 8)),
            debug_slice_dir=data.get("debug-slice-dir"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [adapter] value: {exc}") from exc


def _build_scheduler(data: dict) -> Tuple[SchedulerConfig, Tuple[Tuple[int, int, int], ...]]:
    _check_keys("scheduler", data, _SCHEDULER_KEYS)
    seeds = tuple(tuple(int(c) for c in s) for s in data.get("seeds", []))
    max_steps = data.get("max-steps")
    try:
        cfg = SchedulerConfig(
            movement_step=int(data.get("movement-step", 1)),
            check_step_width=int(data.get("check-step-width", 13)),
            accumulator_update=data.get("accumulator-update", "foreground-only"),
            restrict_movement=data.get("restrict-movement", "fg"),
            max_steps=int(max_steps) if max_steps is not None else None,
            max_tiles_per_segment=int(data.get("max-tiles-per-segment", 100000)),
            seed_mode=data.get("seed-mode", "auto"),
            max_segments=int(data.get("max-segments", 10000)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [scheduler] value: {exc}") from exc
    if cfg.seed_mode == "manual" and not seeds:
        raise ConfigError("seed-mode = manual needs a [scheduler] seeds list")
    return cfg, seeds


def _build_phantom(data: dict) -> Tuple[Optional[PhantomSpec], Tuple[int, int, int]]:
    if not data:
        return None, (128, 128, 128)
    _check_keys("phantom", data, _PHANTOM_KEYS)
    dims = tuple(int(d) for d in data.get("dims", (128, 128, 128)))
    if len(dims) != 3:
        raise ConfigError("[phantom] dims must be [nx, ny, nz]")
    container = None
    if "container-center" in data or "container-radius" in data:
        try:
            container = Cylinder(
                center=tuple(float(c) for c in data["container-center"]),
                radius=float(data["container-radius"]),
                height=float(data["container-height"]),
            )
        except KeyError as exc:
            raise ConfigError(f"incomplete container spec: missing {exc}") from exc
    size_range = data.get("size-range", (8, 12))
    try:
        spec = PhantomSpec(
            kind=data.get("kind", "marbles"),
            count=int(data.get("count", 5)),
            size_range=(float(size_range[0]), float(size_range[1])),
            intensity_mean=float(data.get("intensity-mean", 200.0)),
            intensity_jitter=float(data.get("intensity-jitter", 10.0)),
            noise_sigma=float(data.get("noise-sigma", 0.0)),
            artefact_level=float(data.get("artefact-level", 0.0)),
            rng_seed=int(data.get("rng-seed", 0)),
            container=container,
        )
    except ValueError as exc:
        raise ConfigError(f"bad [phantom] value: {exc}") from exc
    return spec, dims


def _build_training(data: dict) -> TrainingOptions:
    _check_keys("training", data, _TRAINING_KEYS)
    variant_name = data.get("variant", "constant-value-background")
    try:
        variant = BackgroundVariant(variant_name)
    except ValueError as exc:
        raise ConfigError(f"unknown training variant {variant_name!r}") from exc
    size = data.get("slice-size", (1024, 1024))
    return TrainingOptions(
        variant=variant,
        stride=int(data.get("stride", 16)),
        positions=int(data.get("positions", 48)),
        fg_per_group=int(data.get("fg-per-group", 16)),
        bg_per_group=int(data.get("bg-per-group", 16)),
        rng_seed=int(data.get("rng-seed", 0)),
        slice_size=(int(size[0]), int(size[1])),
        volume_id=data.get("volume-id", "volume"),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _check_keys("<top-level>", doc, _TOP_KEYS)
    preset = doc.pop("preset", None)
    if preset is not None:
        doc = _merge_preset(doc, preset)

    paths_data = doc.get("paths", {})
    _check_keys("paths", paths_data, _PATH_KEYS)
    paths = Paths(
        output_dir=Path(paths_data.get("output-dir", "out")),
        **{
            key.replace("-", "_"): Path(paths_data[key]) if key in paths_data else None
            for key in _PATH_KEYS
            if key != "output-dir"
        },
    )

    backend_data = doc.get("backend", {})
    _check_keys("backend", backend_data, _BACKEND_KEYS)

    eval_data = doc.get("evaluation", {})
    _check_keys("evaluation", eval_data, _EVAL_KEYS)
    export_data = doc.get("export", {})
    _check_keys("export", export_data, _EXPORT_KEYS)

    adapter = _build_adapter(doc.get("adapter", {}))
    scheduler, seeds = _build_scheduler(doc.get("scheduler", {}))
    phantom, dims = _build_phantom(doc.get("phantom", {}))

    return RunConfig(
        adapter=adapter,
        scheduler=scheduler,
        backend=backend_data.get("endpoint", "oracle"),
        paths=paths,
        phantom=phantom,
        phantom_dims=dims,
        seeds=seeds,
        training=_build_training(doc.get("training", {})),
        evaluation=EvalOptions(
            sample_fraction=float(eval_data.get("sample-fraction", 0.005)),
            rng_seed=int(eval_data.get("rng-seed", 0)),
        ),
        export=ExportOptions(
            source=export_data.get("source"),
            axis=export_data.get("axis", "z"),
            indices=tuple(int(i) for i in export_data.get("indices", ())),
            prefix=export_data.get("prefix", "slice"),
        ),
        preset=preset,
    )
