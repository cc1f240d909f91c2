"""Batch CLI: one config file, five subcommands.

Exit codes: 0 success, 2 config/input error, 3 backend error, 4 data
insufficiency. The VOXFLOOD_BACKEND environment variable (oracle,
stdio:<cmd>, tcp:<host>:<port>) overrides the configured backend endpoint.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

from . import evaluation, scheduler, training, voxio
from .config import ConfigError, RunConfig, load_config
from .phantoms import PlacementError, generate
from .protocol import ExternalSegmenter
from .segmenter import OracleFloodSegmenter, TransportError
from .training import BackgroundVariant, InsufficientBackgroundError
from .volume import Axis, LabelVolume, Slice2D, normalize_slice
from .voxio import export_label_slice, write_pgm

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_DATA = 4


def _make_backend(cfg: RunConfig):
    endpoint = os.environ.get("VOXFLOOD_BACKEND") or cfg.backend
    if endpoint == "oracle" or endpoint == "oracle:otsu":
        return OracleFloodSegmenter()
    if endpoint.startswith("oracle:fixed:"):
        return OracleFloodSegmenter("fixed", fixed_threshold=float(endpoint.rsplit(":", 1)[1]))
    if endpoint.startswith(("stdio:", "tcp:")):
        return ExternalSegmenter.from_endpoint(endpoint)
    raise ConfigError(f"unknown backend endpoint {endpoint!r}")


def _require_file(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise ConfigError(f"{what} {path} does not exist")
    return Path(path)


def _default_volume_name(cfg: RunConfig, suffix: str) -> str:
    stem = cfg.phantom.kind if cfg.phantom is not None else "volume"
    return f"{stem}_{suffix}.voxv"


def cmd_generate(cfg: RunConfig) -> int:
    if cfg.phantom is None:
        raise ConfigError("generate needs a [phantom] section")
    vol, labels = generate(cfg.phantom, cfg.phantom_dims)
    out = cfg.paths.output_dir
    out.mkdir(parents=True, exist_ok=True)
    vol_path = cfg.paths.resolved("input_volume", f"{cfg.phantom.kind}_input.voxv")
    lab_path = cfg.paths.resolved("reference_labels", f"{cfg.phantom.kind}_labels.voxv")
    voxio.write_voxv(vol_path, vol)
    voxio.write_voxv(lab_path, labels)
    print(f"wrote {vol_path}")
    print(f"wrote {lab_path}")
    return EXIT_OK


def cmd_segment(cfg: RunConfig) -> int:
    vol_path = _require_file(
        cfg.paths.resolved("input_volume", _default_volume_name(cfg, "input")), "input volume"
    )
    vol = voxio.read_voxv(vol_path)
    if isinstance(vol, LabelVolume):
        raise ConfigError(f"{vol_path} holds labels, not intensities")
    backend = _make_backend(cfg)
    seeds = cfg.seeds if cfg.scheduler.seed_mode == "manual" else None
    labels, journal = scheduler.run_all(
        vol, backend, cfg.adapter, cfg.scheduler, seeds=seeds
    )
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    out_path = cfg.paths.resolved("predicted_labels", "predicted.voxv")
    voxio.write_voxv(out_path, labels)
    journal_path = cfg.paths.resolved("journal", "journal.txt")
    Path(journal_path).write_text("\n".join(journal) + "\n", encoding="ascii")
    pops = sum(1 for line in journal if line.startswith("pop "))
    print(f"wrote {out_path}")
    print(f"wrote {journal_path}")
    print(f"segments={len(labels.ids())} pops={pops}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    ref_path = _require_file(
        cfg.paths.resolved("reference_labels", _default_volume_name(cfg, "labels")), "reference labels"
    )
    pred_path = _require_file(cfg.paths.resolved("predicted_labels", "predicted.voxv"), "predicted labels")
    ref = voxio.read_voxv(ref_path)
    pred = voxio.read_voxv(pred_path)
    if not isinstance(ref, LabelVolume) or not isinstance(pred, LabelVolume):
        raise ConfigError("evaluate needs two label volumes")
    if ref.dims != pred.dims:
        raise ConfigError(f"dims differ: reference {ref.dims} vs predicted {pred.dims}")
    matrix = evaluation.correlation_matrix(ref, pred)
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    evaluation.export_correlation_csv(matrix, cfg.paths.resolved("correlation_csv", "correlation.csv"))
    evaluation.export_assignment_csv(matrix, cfg.paths.resolved("assignment_csv", "assignment.csv"))
    evaluation.export_heatmap_pgm(matrix, cfg.paths.resolved("heatmap_pgm", "heatmap.pgm"))
    best = evaluation.best_diagonal_mean_iou(matrix)
    print(f"best_iou={best:.3f} refs={len(matrix.ref_ids)} dets={len(matrix.det_ids)}")
    return EXIT_OK


def cmd_prepare_training(cfg: RunConfig) -> int:
    vol_path = _require_file(
        cfg.paths.resolved("input_volume", _default_volume_name(cfg, "input")), "input volume"
    )
    lab_path = _require_file(
        cfg.paths.resolved("reference_labels", _default_volume_name(cfg, "labels")), "reference labels"
    )
    vol = voxio.read_voxv(vol_path)
    labels = voxio.read_voxv(lab_path)
    if not isinstance(labels, LabelVolume):
        raise ConfigError(f"{lab_path} does not hold labels")
    opts = cfg.training
    positions = training.sample_positions(labels, opts.positions, opts.stride, opts.rng_seed)
    examples = []
    for pos in positions:
        if labels.label_at(pos) != 0:
            for axis in training.AXES:
                examples.append(
                    training.make_foreground_example(
                        vol, labels, pos, axis, out_size=opts.slice_size, volume_id=opts.volume_id
                    )
                )
        else:
            examples.extend(
                training.make_background_examples(
                    vol, labels, pos, opts.variant, out_size=opts.slice_size, volume_id=opts.volume_id
                )
            )
    bg_per_group = 0 if opts.variant is BackgroundVariant.FOREGROUND_ONLY else opts.bg_per_group
    rows = training.build_manifest(
        examples, fg_per_group=opts.fg_per_group, bg_per_group=bg_per_group, rng_seed=opts.rng_seed
    )
    dataset_dir = cfg.paths.resolved("dataset_dir", "dataset")
    training.write_dataset(dataset_dir, rows)
    fg = sum(1 for r in rows if r.klass == "foreground")
    bg = len(rows) - fg
    groups = max((r.group for r in rows), default=-1) + 1
    print(f"wrote {dataset_dir}")
    print(f"examples={len(rows)} fg={fg} bg={bg} groups={groups}")
    return EXIT_OK


def cmd_export_slices(cfg: RunConfig) -> int:
    if cfg.export.source is None:
        raise ConfigError("export-slices needs [export] source")
    src = _require_file(Path(cfg.export.source), "export source")
    vol = voxio.read_voxv(src)
    try:
        axis = Axis(cfg.export.axis)
    except ValueError as exc:
        raise ConfigError(f"unknown export axis {cfg.export.axis!r}") from exc
    nx, ny, nz = vol.dims
    limit = {Axis.X: nx, Axis.Y: ny, Axis.Z: nz}[axis]
    indices = cfg.export.indices or tuple(range(0, limit, max(1, limit // 4)))
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    grid = vol.labels if isinstance(vol, LabelVolume) else vol.data
    for index in indices:
        if not 0 <= index < limit:
            raise ConfigError(f"slice index {index} out of range for axis {axis.value} (n={limit})")
        if axis is Axis.Z:
            plane = grid[index]
        elif axis is Axis.Y:
            plane = grid[:, index, :]
        else:
            plane = grid[:, :, index]
        out = cfg.paths.output_dir / f"{cfg.export.prefix}_{axis.value}{index:04d}.pgm"
        if isinstance(vol, LabelVolume):
            export_label_slice(out, plane)
        else:
            if vol.value_kind != "u8":
                s = Slice2D(plane, axis=axis, index=index, center=(0, 0))
                plane = normalize_slice(s).data
            write_pgm(out, plane)
        print(f"wrote {out}")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "segment": cmd_segment,
    "evaluate": cmd_evaluate,
    "prepare-training": cmd_prepare_training,
    "export-slices": cmd_export_slices,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="voxflood",
        description="Volumetric instance segmentation via flood-filled tiling of a 2D slice segmenter.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run configuration")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (InsufficientBackgroundError, PlacementError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
