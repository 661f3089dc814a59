import numpy as np
import pytest

from resnoise.data import AREA_RANGE, DatasetSpec, dihedral, intensity_ramp, iou, make_dataset, mse, split
from resnoise.denoiser import ConfigError


def test_noise_free_images_equal_masks():
    ds = make_dataset(DatasetSpec(count=20, sigma=0.0, gradient=0.0))
    assert np.array_equal(ds.images, ds.masks)


def test_same_seed_same_dataset():
    a, b = make_dataset(DatasetSpec(count=30)), make_dataset(DatasetSpec(count=30))
    assert np.array_equal(a.images, b.images) and a.ids == b.ids
    c = make_dataset(DatasetSpec(count=30, seed=1))
    assert not np.array_equal(a.masks, c.masks)


@pytest.mark.parametrize("shapes", ["disc", "rectangle", "mixed"])
def test_area_fraction_histogram(shapes):
    ds = make_dataset(DatasetSpec(count=1000, shapes=shapes))
    area = (ds.masks > 0).mean(axis=(1, 2))
    assert area.min() >= AREA_RANGE[0] and area.max() <= AREA_RANGE[1]
    counts, _ = np.histogram(area, bins=5, range=AREA_RANGE)
    assert np.all(counts > 0)
    assert set(np.unique(ds.masks)) == {-1.0, 1.0}


def test_inputs_finite_and_in_range():
    spec = DatasetSpec(count=200)
    ds = make_dataset(spec)
    lim = 1 + spec.gradient / 2 + 6 * spec.sigma
    assert np.all(np.isfinite(ds.images)) and np.abs(ds.images).max() < lim
    assert np.array_equal(ds.background, intensity_ramp(16, 16, spec.gradient))


@pytest.mark.parametrize("kw", [{"height": 3}, {"width": 2}, {"shapes": "star"}, {"count": 0}])
def test_bad_spec(kw):
    with pytest.raises(ConfigError):
        make_dataset(DatasetSpec(**kw))


def test_split_disjoint_and_stable():
    ds = make_dataset(DatasetSpec(count=100))
    tr, te = split(ds, 80, 0)
    assert len(tr) == 80 and len(te) == 20 and not set(tr.ids) & set(te.ids)
    tr2, te2 = split(ds, 80, 0)
    assert tr.ids == tr2.ids and te.ids == te2.ids
    with pytest.raises(ConfigError):
        split(ds, 100, 0)


def test_canonical_order_is_by_id():
    ds = make_dataset(DatasetSpec(count=10))
    shuffled = ds.subset([3, 1, 9, 0, 2, 8, 4, 7, 6, 5])
    c = shuffled.canonical()
    assert c.ids == ds.ids and np.array_equal(c.images, ds.images)


def test_iou_examples():
    truth = -np.ones((4, 4))
    truth[:2] = 1.0
    assert iou(truth, truth) == 1.0
    assert iou(-truth, truth) == 0.0
    assert iou(-np.ones((4, 4)), -np.ones((4, 4))) == 1.0
    pred = truth.copy()
    pred[2, 0] = 1.0
    assert iou(pred, truth) == 8 / 9


def test_mse():
    assert mse(np.zeros(4), np.full(4, 2.0)) == 4.0


def test_dihedral_group():
    x = np.arange(12.0).reshape(3, 4)
    seen = {dihedral(x, k, f).tobytes() for k in range(4) for f in (False, True)}
    assert len(seen) == 8
    assert np.array_equal(dihedral(dihedral(x, 1, False), 3, False), x)
