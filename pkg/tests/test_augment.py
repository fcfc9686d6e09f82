import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinyasc.augment import AugmentConfig, Batch, augment_batch, mixup, random_crop, spec_erase


def _spec(shape=(128, 135, 3), seed=0):
    return np.random.default_rng(seed).uniform(1, 2, shape).astype(np.float32)


def test_random_crop_start_range():
    spec = np.broadcast_to(np.arange(135.0)[None, :, None], (128, 135, 3))
    starts = set()
    for seed in range(300):
        out = random_crop(spec, 128, np.random.default_rng(seed))
        assert out.shape == (128, 128, 3)
        starts.add(int(out[0, 0, 0]))
    assert starts == set(range(8))


def test_random_crop_identity_and_error():
    spec = _spec((4, 10, 3))
    np.testing.assert_array_equal(random_crop(spec, 10, np.random.default_rng(0)), spec)
    with pytest.raises(ValueError, match="crop larger than input"):
        random_crop(spec, 11, np.random.default_rng(0))


def test_random_crop_seeded():
    spec = _spec()
    a = random_crop(spec, 128, np.random.default_rng(7))
    b = random_crop(spec, 128, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_erase_time_axis_volume():
    out = spec_erase(_spec((128, 128, 3)), 10, np.random.default_rng(0), time_prob=1.0)
    assert (out == 0).sum() == 3840
    cols = np.flatnonzero((out == 0).all(axis=(0, 2)))
    assert len(cols) == 10 and np.all(np.diff(cols) == 1)


def test_erase_frequency_rows_contiguous():
    out = spec_erase(_spec((128, 128, 3)), 10, np.random.default_rng(3), time_prob=0.0)
    rows = np.flatnonzero(out.sum(axis=(1, 2)) == 0)
    assert len(rows) == 10 and rows[-1] - rows[0] == 9


def test_erase_zero_bins_identity_and_error():
    spec = _spec((8, 8, 3))
    np.testing.assert_array_equal(spec_erase(spec, 0, np.random.default_rng(0)), spec)
    with pytest.raises(ValueError, match="erase block too large"):
        spec_erase(spec, 9, np.random.default_rng(0))


def _batch(n=6, c=10, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.eye(c)[rng.integers(0, c, n)]
    return Batch(rng.uniform(-1, 1, (n, 4, 9, 3)), labels)


def test_mixup_ratio_one_is_identity():
    b = _batch()
    out = mixup(b, AugmentConfig(), np.random.default_rng(0), ratio=1.0)
    np.testing.assert_array_equal(out.inputs, b.inputs)
    np.testing.assert_array_equal(out.labels, b.labels)


def test_mixup_half_labels():
    b = Batch(np.zeros((2, 2, 2, 3)), np.eye(10)[[0, 1]])
    # with N=2 the permutation either keeps or swaps the pair; find a swapping seed
    for seed in range(20):
        out = mixup(b, AugmentConfig(), np.random.default_rng(seed), ratio=0.5)
        if not np.array_equal(out.labels, b.labels):
            np.testing.assert_allclose(out.labels[0], [0.5, 0.5] + [0.0] * 8)
            return
    pytest.fail("no swapping permutation drawn in 20 seeds")


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000), st.sampled_from(["beta", "uniform"]))
def test_mixup_labels_stay_on_simplex(n, seed, dist):
    rng = np.random.default_rng(seed)
    labels = rng.dirichlet(np.ones(10), size=n)
    b = Batch(rng.normal(size=(n, 2, 3, 3)), labels)
    out = mixup(b, AugmentConfig(mixup_dist=dist), rng)
    np.testing.assert_allclose(out.labels.sum(axis=1), 1.0, atol=1e-6)
    assert (out.labels >= 0).all()
    assert np.isfinite(out.inputs).all()
    assert out.labels.shape == labels.shape


def test_augment_batch_of_100():
    rng = np.random.default_rng(0)
    b = Batch(rng.uniform(1, 2, (100, 128, 135, 3)).astype(np.float32), np.eye(10)[rng.integers(0, 10, 100)])
    out = augment_batch(b, AugmentConfig(), np.random.default_rng(1))
    assert out.inputs.shape == (100, 128, 128, 3)
    again = augment_batch(b, AugmentConfig(), np.random.default_rng(1))
    assert out.inputs.tobytes() == again.inputs.tobytes()
    np.testing.assert_array_equal(out.labels, again.labels)


def test_augment_batch_identity_config():
    b = _batch()
    cfg = AugmentConfig(crop_target=9, erase_bins=0)
    out = augment_batch(b, cfg, np.random.default_rng(0), ratio=1.0)
    np.testing.assert_array_equal(out.inputs, b.inputs)
    np.testing.assert_array_equal(out.labels, b.labels)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 8))
def test_erase_changes_at_most_one_slab(seed, n_bins):
    spec = _spec((8, 12, 3), seed)
    out = spec_erase(spec, n_bins, np.random.default_rng(seed))
    changed = (out != spec).sum()
    assert changed in (0, n_bins * 12 * 3, n_bins * 8 * 3)
