import numpy as np
import pytest

from voxflood import ops
from voxflood.phantoms import Cylinder, PhantomSpec, PlacementError, classical_reference, generate
from voxflood.volume import VoxelVolume

import oracles


def marbles_spec(**kw):
    base = dict(kind="marbles", count=5, size_range=(8, 12), rng_seed=42, noise_sigma=5.0)
    base.update(kw)
    return PhantomSpec(**base)


def test_marbles_five_disjoint_labels():
    vol, labels = generate(marbles_spec(), (128, 128, 128))
    assert sorted(labels.ids().tolist()) == [1, 2, 3, 4, 5]
    assert vol.data.shape == labels.labels.shape
    # disjoint by construction: every labeled voxel carries exactly one id
    assert (labels.labels <= 5).all()


def test_generate_noise_free_entities_hit_mean():
    spec = marbles_spec(noise_sigma=0.0, intensity_jitter=0.0, artefact_level=0.0)
    vol, labels = generate(spec, (96, 96, 96))
    fg = labels.labels > 0
    assert (vol.data[fg] == 200).all()
    assert (vol.data[~fg] == 20).all()


def test_generate_deterministic():
    a_vol, a_lab = generate(marbles_spec(), (96, 96, 96))
    b_vol, b_lab = generate(marbles_spec(), (96, 96, 96))
    assert np.array_equal(a_vol.data, b_vol.data)
    assert np.array_equal(a_lab.labels, b_lab.labels)


def test_generate_corn_disjoint_and_seeded():
    spec = PhantomSpec(kind="corn", count=4, size_range=(9, 12), rng_seed=3)
    vol, labels = generate(spec, (96, 96, 96))
    assert len(labels.ids()) == 4
    # ellipsoids are anisotropic: bounding boxes differ per axis for at least one entity
    sizes = []
    for lab in labels.ids():
        zz, yy, xx = np.nonzero(labels.labels == lab)
        sizes.append((np.ptp(xx) + 1, np.ptp(yy) + 1, np.ptp(zz) + 1))
    assert any(len(set(s)) > 1 for s in sizes)


def test_generate_sheets_thin_and_touch_allowed():
    spec = PhantomSpec(kind="sheets", count=3, size_range=(1, 3), rng_seed=9)
    vol, labels = generate(spec, (48, 48, 48))
    assert 1 <= len(labels.ids()) <= 3
    fg = labels.labels > 0
    assert 0 < fg.sum() < fg.size // 4  # thin structures, not bulk


def test_generate_respects_container():
    cyl = Cylinder(center=(32.0, 32.0, 32.0), radius=20.0, height=50.0)
    spec = marbles_spec(count=3, size_range=(5, 7), container=cyl, noise_sigma=0.0)
    _, labels = generate(spec, (64, 64, 64))
    zz, yy, xx = np.nonzero(labels.labels > 0)
    r = np.sqrt((xx - 32.0) ** 2 + (yy - 32.0) ** 2)
    assert (r <= 20.0 + 1e-6).all()


def test_generate_placement_error_reports_achieved():
    spec = marbles_spec(count=100, size_range=(10, 12))
    with pytest.raises(PlacementError) as err:
        generate(spec, (48, 48, 48))
    assert err.value.achieved < 100


def test_generate_rejects_small_dims_and_bad_spec():
    with pytest.raises(ValueError):
        generate(marbles_spec(), (16, 128, 128))
    with pytest.raises(ValueError):
        PhantomSpec(kind="cubes", count=1, size_range=(1, 2))
    with pytest.raises(ValueError):
        PhantomSpec(kind="marbles", count=0, size_range=(1, 2))


def _match_iou(labels_true, labels_got, id_true, id_got):
    a = labels_true == id_true
    b = labels_got == id_got
    return (a & b).sum() / (a | b).sum()


def test_classical_reference_recovers_marbles():
    vol, truth = generate(marbles_spec(), (128, 128, 128))
    got = classical_reference(vol)
    assert len(got.ids()) == 5
    # every ground-truth marble matches exactly one recovered label with high IoU
    for lab in truth.ids():
        zz, yy, xx = np.nonzero(truth.labels == lab)
        cz, cy, cx = int(zz.mean()), int(yy.mean()), int(xx.mean())
        match = got.labels[cz, cy, cx]
        assert match != 0
        assert _match_iou(truth.labels, got.labels, lab, match) >= 0.9


def test_classical_reference_sigma0_exact_count():
    vol, truth = generate(marbles_spec(noise_sigma=0.0), (128, 128, 128))
    got = classical_reference(vol)
    assert len(got.ids()) == len(truth.ids())


def test_classical_reference_label_support_inside_otsu_foreground():
    vol, _ = generate(marbles_spec(), (96, 96, 96))
    fg = ops.binarize(vol, ops.otsu_threshold(ops.histogram_u8(vol.data)))
    fg = ops.morph(fg, "close", ops.StructuringElement(connectivity=6, radius=1))
    got = classical_reference(vol)
    assert not (got.labels > 0)[~fg].any()


def test_classical_reference_splits_touching_spheres():
    # two spheres of radius 8 overlapping by 4 voxels (centers 12 apart)
    shape = (40, 40, 56)
    mask = oracles.sphere_mask(shape, (16, 20, 20), 8) | oracles.sphere_mask(shape, (28, 20, 20), 8)
    vol = VoxelVolume(np.where(mask, 200, 20).astype(np.uint8))
    got = classical_reference(vol)
    assert len(got.ids()) == 2
    la = got.labels[20, 20, 16]
    lb = got.labels[20, 20, 28]
    assert la != 0 and lb != 0 and la != lb


def test_classical_reference_empty_volume_errors():
    flat = VoxelVolume(np.full((32, 32, 32), 20, dtype=np.uint8))
    with pytest.raises(ValueError):
        classical_reference(flat)
