import numpy as np
import pytest

from voxflood.adapter import (
    AdapterConfig,
    MergeRule,
    merge_stacks,
    seed_filter,
    segment_stack,
    segment_tile,
)
from voxflood.segmenter import (
    MaskChannel,
    OracleFloodSegmenter,
    SegmenterResponse,
    TransportError,
    pool_logits,
)
from voxflood.volume import Axis, VoxelVolume

import oracles

TILE = 32


def sphere_tile(radius=10, bg=20, fg=200):
    mask = oracles.sphere_mask((TILE, TILE, TILE), (16, 16, 16), radius)
    return VoxelVolume(np.where(mask, fg, bg).astype(np.uint8)), mask


def config(**kw):
    base = dict(
        tile_size=TILE,
        merge_rule=MergeRule("break-on-empty-slice"),
        slice_cca=True,
        stack_merge_min_count=2,
        seed_fg_slice_count=0,
        outlier_min_nonzero=1,  # keep 1-pixel sphere caps; exactness tests need them
    )
    base.update(kw)
    return AdapterConfig(**base)


class FullMaskBackend:
    def segment(self, request):
        mask = np.ones(request.image.shape[:2], dtype=bool)
        return SegmenterResponse((MaskChannel(mask, 1.0, pool_logits(mask)),))


class FailingBackend:
    def segment(self, request):
        raise TransportError("backend gone")


# ---------------------------------------------------------------- seed filter

def test_seed_filter_counts():
    fg = np.ones((TILE, TILE, TILE), dtype=bool)
    tile = VoxelVolume(np.full((TILE, TILE, TILE), 200, np.uint8))
    assert seed_filter(tile, fg, 2)
    assert seed_filter(tile, fg, 3)
    air = np.zeros_like(fg)
    assert not seed_filter(tile, air, 1)
    assert seed_filter(tile, air, 0)  # vacuous threshold always continues


# ---------------------------------------------------------------- stacks

def test_stack_break_on_empty_stops_at_sphere_extent():
    tile, mask = sphere_tile(radius=10)
    stack = segment_stack(tile, Axis.Z, OracleFloodSegmenter(), config())
    assert np.array_equal(stack, mask)  # exact disks, stops on the first empty slice


def test_stack_covers_sphere_on_all_axes():
    tile, mask = sphere_tile(radius=8)
    for axis in (Axis.X, Axis.Y, Axis.Z):
        stack = segment_stack(tile, axis, OracleFloodSegmenter(), config())
        assert np.array_equal(stack, mask)


def test_stack_min_iou_on_cylinder_runs_to_faces():
    arr = np.full((TILE, TILE, TILE), 20, dtype=np.uint8)
    yy, xx = np.mgrid[0:TILE, 0:TILE]
    disk = (xx - 16) ** 2 + (yy - 16) ** 2 <= 64
    arr[:, disk] = 200  # cylinder along z
    tile = VoxelVolume(arr)
    cfg = config(merge_rule=MergeRule("min-iou-to-last-slice", threshold=0.5))
    stack = segment_stack(tile, Axis.Z, OracleFloodSegmenter(), cfg)
    assert stack[0].any() and stack[-1].any()  # never stopped before the faces
    for z in range(TILE):
        assert np.array_equal(stack[z], disk)


def test_stack_min_iou_stops_at_abrupt_shape_change():
    arr = np.full((TILE, TILE, TILE), 20, dtype=np.uint8)
    yy, xx = np.mgrid[0:TILE, 0:TILE]
    small = (xx - 16) ** 2 + (yy - 16) ** 2 <= 9
    large = (xx - 16) ** 2 + (yy - 16) ** 2 <= 169
    arr[10:22, small] = 200
    arr[22:30, large] = 200  # abrupt widening; IoU(small, large) = 9/169 < 0.5
    tile = VoxelVolume(arr)
    cfg = config(merge_rule=MergeRule("min-iou-to-last-slice", threshold=0.5), slice_cca=False)
    stack = segment_stack(tile, Axis.Z, OracleFloodSegmenter(), cfg)
    assert stack[16].any() and stack[21].any()
    assert not stack[22:].any()  # direction stopped at the transition


def test_stack_empty_tile_stops_immediately():
    tile = VoxelVolume(np.full((TILE, TILE, TILE), 20, np.uint8))
    stack = segment_stack(tile, Axis.Z, OracleFloodSegmenter(), config())
    assert not stack.any()


def test_stack_alternating_visits_each_slice_once():
    calls = []

    class CountingBackend:
        def segment(self, request):
            calls.append(1)
            mask = np.ones(request.image.shape[:2], dtype=bool)
            return SegmenterResponse((MaskChannel(mask, 1.0, pool_logits(mask)),))

    tile = VoxelVolume(np.random.default_rng(0).integers(10, 250, (TILE, TILE, TILE)).astype(np.uint8))
    cfg = config(merge_rule=MergeRule("always"), slice_cca=False)
    segment_stack(tile, Axis.Z, CountingBackend(), cfg)
    assert len(calls) == TILE  # every slice exactly once


def test_stack_min_iou_to_foreground():
    tile, mask = sphere_tile(radius=9)
    cfg = config(merge_rule=MergeRule("min-iou-to-foreground", threshold=0.3))
    stack = segment_stack(tile, Axis.Z, OracleFloodSegmenter(), cfg, fg_tile=mask)
    # oracle slices match the fg tile slices exactly -> IoU 1 inside, stops beyond
    assert np.array_equal(stack, mask)


# ---------------------------------------------------------------- merge

def test_merge_stacks_union_and_intersection():
    rng = np.random.default_rng(2)
    a, b, c = (rng.random((4, 4, 4)) < 0.5 for _ in range(3))
    assert np.array_equal(merge_stacks((a, b, c), 1), a | b | c)
    assert np.array_equal(merge_stacks((a, b, c), 3), a & b & c)


def test_merge_stacks_matches_vote_counting_oracle():
    rng = np.random.default_rng(4)
    for _ in range(25):
        stacks = tuple(rng.random((4, 4, 4)) < 0.5 for _ in range(3))
        for k in (1, 2, 3):
            assert np.array_equal(merge_stacks(stacks, k), oracles.count_votes(stacks, k))


def test_merge_stacks_monotone_chain():
    rng = np.random.default_rng(6)
    stacks = tuple(rng.random((5, 5, 5)) < 0.5 for _ in range(3))
    m1, m2, m3 = (merge_stacks(stacks, k) for k in (1, 2, 3))
    assert (m2 <= m1).all() and (m3 <= m2).all()


# ---------------------------------------------------------------- tiles

def test_segment_tile_sphere_high_iou():
    tile, mask = sphere_tile(radius=10)
    fg = tile.data > 100
    cfg = config(seed_fg_slice_count=2)
    prop = segment_tile(tile, OracleFloodSegmenter(), cfg, fg_tile=fg)
    assert not prop.aborted
    inter = (prop.mask & mask).sum()
    union = (prop.mask | mask).sum()
    assert inter / union >= 0.95
    assert len(prop.stacks) == 3


def test_segment_tile_background_aborts_on_seed_filter():
    tile = VoxelVolume(np.full((TILE, TILE, TILE), 20, np.uint8))
    fg = np.zeros((TILE, TILE, TILE), dtype=bool)
    cfg = config(seed_fg_slice_count=1)
    prop = segment_tile(tile, OracleFloodSegmenter(), cfg, fg_tile=fg)
    assert prop.aborted and prop.reason == "seed-filter"
    assert not prop.mask.any()


def test_segment_tile_transport_error_aborts_with_reason():
    tile, _ = sphere_tile()
    prop = segment_tile(tile, FailingBackend(), config())
    assert prop.aborted
    assert prop.reason.startswith("transport-error")


def test_segment_tile_idempotent_on_clean_phantom():
    tile, _ = sphere_tile(radius=9)
    cfg = config()
    a = segment_tile(tile, OracleFloodSegmenter(), cfg)
    b = segment_tile(tile, OracleFloodSegmenter(), cfg)
    assert np.array_equal(a.mask, b.mask)


def test_segment_tile_cca_keeps_center_component_only():
    arr = np.full((TILE, TILE, TILE), 20, dtype=np.uint8)
    center_ball = oracles.sphere_mask((TILE, TILE, TILE), (16, 16, 16), 6)
    corner_ball = oracles.sphere_mask((TILE, TILE, TILE), (27, 27, 27), 3)
    arr[center_ball] = 200
    arr[corner_ball] = 200
    tile = VoxelVolume(arr)
    prop = segment_tile(tile, OracleFloodSegmenter(), config(slice_cca=True))
    assert (prop.mask & center_ball).sum() > 0
    assert not (prop.mask & corner_ball).any()


def test_segment_tile_logits_mask_source():
    tile, mask = sphere_tile(radius=10)
    cfg_bin = config()
    cfg_log = config(mask_source="logits", logits_threshold=0.0, logits_upscaling="nearest")
    a = segment_tile(tile, OracleFloodSegmenter(), cfg_bin).mask
    b = segment_tile(tile, OracleFloodSegmenter(), cfg_log).mask
    inter = (a & b).sum()
    union = (a | b).sum()
    assert union and inter / union >= 0.7  # quarter-res quantization, same shape


def test_segment_tile_volume_median_smooths():
    tile, mask = sphere_tile(radius=10)
    prop = segment_tile(tile, OracleFloodSegmenter(), config(volume_median=True))
    inter = (prop.mask & mask).sum()
    union = (prop.mask | mask).sum()
    assert inter / union >= 0.9


def test_adapter_config_validation():
    with pytest.raises(ValueError):
        AdapterConfig(tile_size=0)
    with pytest.raises(ValueError):
        AdapterConfig(tile_size=2048)
    with pytest.raises(ValueError):
        AdapterConfig(stack_merge_min_count=4)
    with pytest.raises(ValueError):
        MergeRule("sometimes")
    with pytest.raises(ValueError):
        MergeRule("min-iou-to-last-slice", threshold=1.5)
    with pytest.raises(ValueError):
        AdapterConfig(prompt_type="box")


def test_segment_stack_requires_matching_tile_side():
    tile = VoxelVolume(np.zeros((8, 8, 8), np.uint8))
    with pytest.raises(ValueError):
        segment_stack(tile, Axis.Z, OracleFloodSegmenter(), config())  # config says 32


def test_debug_slice_dir_dumps_pgms(tmp_path):
    tile, _ = sphere_tile(radius=8)
    cfg = config(debug_slice_dir=str(tmp_path / "dumps"))
    prop = segment_tile(tile, OracleFloodSegmenter(), cfg, debug_tag="t0")
    assert not prop.aborted
    dumped = sorted((tmp_path / "dumps" / "t0").glob("*.pgm"))
    assert dumped  # one input + one mask PGM per processed slice
    names = {p.name for p in dumped}
    assert any(n.endswith("_input.pgm") for n in names)
    assert any(n.endswith("_mask.pgm") for n in names)
