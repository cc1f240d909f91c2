import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from voxflood.volume import (
    Axis,
    LabelVolume,
    Region3D,
    Slice2D,
    SliceStatus,
    VoxelVolume,
    crop_nd,
    detect_empty_or_outlier,
    enframe,
    extract_centered_slice,
    extract_tile,
    normalize_slice,
    tile_region,
    to_three_channel,
)


def cube(n, dtype=np.uint8):
    return np.arange(n**3, dtype=dtype).reshape(n, n, n) % 251


def test_volume_invariants():
    v = VoxelVolume(cube(3))
    assert v.dims == (3, 3, 3)
    assert v.data.size == 27
    with pytest.raises(ValueError):
        VoxelVolume(np.zeros((0, 2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        VoxelVolume(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        VoxelVolume(cube(2), value_kind="u16")


def test_volume_data_is_frozen():
    v = VoxelVolume(cube(3))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1


def test_label_volume_ids_exclude_background():
    lab = LabelVolume(np.array([[[0, 2], [2, 0]], [[0, 0], [7, 0]]]))
    assert lab.ids().tolist() == [2, 7]
    assert lab.label_at((0, 1, 1)) == 7  # (x, y, z) indexes labels[z, y, x]


def test_enframe_identity_at_zero_border():
    v = VoxelVolume(cube(4))
    assert enframe(v, 0) is v


def test_enframe_2cube_of_ones():
    v = VoxelVolume(np.ones((2, 2, 2), dtype=np.uint8))
    out = enframe(v, 1, fill=0)
    assert out.dims == (4, 4, 4)
    assert int(out.data.sum()) == 8
    assert int((out.data == 0).sum()) == 56
    assert np.array_equal(out.data[1:3, 1:3, 1:3], v.data)


def test_enframe_labels():
    lab = LabelVolume(np.full((2, 2, 2), 3, dtype=np.uint32))
    out = enframe(lab, 2)
    assert isinstance(out, LabelVolume)
    assert out.dims == (6, 6, 6)
    assert out.labels[0, 0, 0] == 0


@settings(max_examples=40, deadline=None)
@given(
    arr=arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))),
    border=st.sampled_from([0, 1, 5]),
)
def test_enframe_extract_roundtrip(arr, border):
    v = VoxelVolume(arr)
    framed = enframe(v, border, fill=0)
    nz, ny, nx = arr.shape
    inner = framed.data[border : border + nz, border : border + ny, border : border + nx]
    assert np.array_equal(inner, arr)


def test_extract_centered_slice_verbatim_plane():
    v = VoxelVolume(np.arange(27, dtype=np.uint8).reshape(3, 3, 3))
    s = extract_centered_slice(v, (1, 1, 1), Axis.Z, (3, 3))
    assert np.array_equal(s.data, v.data[1])
    assert s.center == (1, 1)
    assert s.index == 1
    sy = extract_centered_slice(v, (1, 1, 1), Axis.Y, (3, 3))
    assert np.array_equal(sy.data, v.data[:, 1, :])
    sx = extract_centered_slice(v, (1, 1, 1), Axis.X, (3, 3))
    assert np.array_equal(sx.data, v.data[:, :, 1])


def test_extract_centered_slice_corner_fill():
    v = VoxelVolume(np.full((3, 3, 3), 9, dtype=np.uint8))
    s = extract_centered_slice(v, (0, 0, 0), Axis.Z, (4, 4), fill=0)
    # center pixel (2, 2); in-bounds window is rows/cols [-2, 2) -> 2x2 content
    assert int((s.data == 9).sum()) == 4
    assert int((s.data == 0).sum()) == 12
    assert s.data[2, 2] == 9


def test_extract_centered_slice_errors():
    v = VoxelVolume(cube(3))
    with pytest.raises(ValueError):
        extract_centered_slice(v, (5, 0, 0), Axis.Z, (3, 3))
    with pytest.raises(ValueError):
        extract_centered_slice(v, (1, 1, 1), "q", (3, 3))


@settings(max_examples=40, deadline=None)
@given(
    arr=arrays(np.uint8, st.tuples(st.integers(2, 6), st.integers(2, 6), st.integers(2, 6))),
    data=st.data(),
)
def test_extract_tile_size1_is_voxel_read(arr, data):
    v = VoxelVolume(arr)
    nx, ny, nz = v.dims
    x = data.draw(st.integers(0, nx - 1))
    y = data.draw(st.integers(0, ny - 1))
    z = data.draw(st.integers(0, nz - 1))
    tile = extract_tile(v, (x, y, z), (1, 1, 1))
    assert tile.data.shape == (1, 1, 1)
    assert tile.data[0, 0, 0] == v.value_at((x, y, z))


def test_extract_tile_interior_copy():
    v = VoxelVolume(cube(8))
    tile = extract_tile(v, (4, 4, 4), (4, 4, 4))
    assert np.array_equal(tile.data, v.data[2:6, 2:6, 2:6])


def test_extract_tile_covering_fill():
    v = VoxelVolume(np.full((4, 4, 4), 7, dtype=np.uint8))
    tile = extract_tile(v, (2, 2, 2), (16, 16, 16), fill=0)
    assert tile.dims == (16, 16, 16)
    assert int((tile.data == 7).sum()) == 64
    region = tile_region((2, 2, 2), (16, 16, 16))
    assert region.origin == (-6, -6, -6)


def test_region3d_validation():
    with pytest.raises(ValueError):
        Region3D((0, 0, 0), (0, 1, 1))
    assert Region3D((1, 2, 3), (4, 5, 6)).end == (5, 7, 9)


def test_normalize_slice_affine_map():
    s = Slice2D(np.array([[10, 20, 30]], dtype=np.float32), Axis.Z, 0, (1, 0))
    out = normalize_slice(s)
    assert out.data.tolist() == [[0, 128, 255]]  # round-half-up on 127.5
    assert out.data.dtype == np.uint8


def test_normalize_slice_constant_all_zero():
    s = Slice2D(np.full((3, 3), 42, dtype=np.uint8), Axis.Z, 0, (1, 1))
    assert not normalize_slice(s).data.any()


def test_normalize_slice_idempotent_endpoints():
    s = Slice2D(np.array([[0, 100, 255]], dtype=np.uint8), Axis.Z, 0, (1, 0))
    out = normalize_slice(s)
    assert out.data[0, 0] == 0 and out.data[0, 2] == 255


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_normalize_slice_idempotent_on_own_output(arr):
    s = Slice2D(arr, Axis.Z, 0, (0, 0))
    once = normalize_slice(s)
    twice = normalize_slice(once)
    assert np.array_equal(once.data, twice.data)


def test_to_three_channel():
    s = Slice2D(np.array([[0, 255], [255, 0]], dtype=np.uint8), Axis.Z, 0, (1, 1))
    img = to_three_channel(s)
    assert img.shape == (2, 2, 3)
    for c in range(3):
        assert np.array_equal(img[:, :, c], s.data)
    bad = Slice2D(np.array([[300.0]], dtype=np.float32), Axis.Z, 0, (0, 0))
    with pytest.raises(ValueError):
        to_three_channel(bad)


def test_detect_empty_or_outlier():
    const = Slice2D(np.full((4, 4), 5, dtype=np.uint8), Axis.Z, 0, (2, 2))
    assert detect_empty_or_outlier(const, 1) is SliceStatus.EMPTY
    sparse = np.zeros((4, 4), dtype=np.uint8)
    sparse[0, 0] = sparse[1, 1] = sparse[2, 2] = 9
    s = Slice2D(sparse, Axis.Z, 0, (2, 2))
    assert detect_empty_or_outlier(s, 5) is SliceStatus.OUTLIER
    assert detect_empty_or_outlier(s, 3) is SliceStatus.NORMAL
    dense = Slice2D((np.arange(16, dtype=np.uint8)).reshape(4, 4), Axis.Z, 0, (2, 2))
    assert detect_empty_or_outlier(dense, 5) is SliceStatus.NORMAL


def test_crop_nd_negative_start_pads():
    arr = np.arange(4, dtype=np.int32).reshape(2, 2)
    out = crop_nd(arr, (-1, -1), (4, 4), fill=-1)
    assert out[0, 0] == -1
    assert out[1, 1] == 0 and out[2, 2] == 3
    empty = crop_nd(arr, (10, 10), (2, 2), fill=-1)
    assert (empty == -1).all()
