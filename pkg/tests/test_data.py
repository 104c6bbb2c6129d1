import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schane.data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    load_idx,
    sample_episode,
    save_csv,
    split,
    split_classes,
    write_idx,
)
from schane.errors import (
    ConfigError,
    CountMismatch,
    EmptyDataset,
    FormatError,
    InsufficientClasses,
    InsufficientSamples,
    ShapeError,
)


@pytest.fixture(scope="module")
def synthetic():
    return generate_synthetic(SyntheticSpec())


def test_default_synthetic_counts(synthetic):
    assert len(synthetic) == 2000
    assert synthetic.class_count == 20 and synthetic.feature_dim == 64
    assert np.bincount(synthetic.labels).tolist() == [100] * 20


def test_synthetic_means_on_sphere():
    ds = generate_synthetic(SyntheticSpec(class_count=5, feature_dim=8, samples_per_class=3, noise_sigma=0.0))
    for idx in ds.class_indices:
        block = ds.features[idx]
        np.testing.assert_array_equal(block, np.broadcast_to(block[0], block.shape))
        assert np.linalg.norm(block[0]) == pytest.approx(4.0, abs=1e-12)


def test_synthetic_noise_level():
    ds = generate_synthetic(SyntheticSpec(class_count=2, feature_dim=50, samples_per_class=400, noise_sigma=0.5))
    resid = np.concatenate([ds.features[i] - ds.features[i].mean(axis=0) for i in ds.class_indices])
    assert resid.std() == pytest.approx(0.5, rel=0.03)


def test_synthetic_deterministic():
    a = generate_synthetic(SyntheticSpec(seed=3))
    b = generate_synthetic(SyntheticSpec(seed=3))
    assert a.features.tobytes() == b.features.tobytes()
    assert a.fingerprint() == b.fingerprint()
    assert generate_synthetic(SyntheticSpec(seed=4)).fingerprint() != a.fingerprint()


@pytest.mark.parametrize(
    "kwargs, name",
    [({"class_count": 0}, "class_count"), ({"mean_radius": 0.0}, "mean_radius"), ({"noise_sigma": -1.0}, "noise_sigma")],
)
def test_spec_validation_names_field(kwargs, name):
    with pytest.raises(ConfigError) as err:
        SyntheticSpec(**kwargs)
    assert err.value.field == name


def test_dataset_is_immutable(synthetic):
    with pytest.raises(ValueError):
        synthetic.features[0, 0] = 1.0


def test_dataset_invariants():
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 2)), [0, 0], 2)


def test_load_csv_minimal(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,1.0,2.0\n1,3.0,4.0\n")
    ds = load_csv(p)
    assert len(ds) == 2 and ds.feature_dim == 2 and ds.class_count == 2
    np.testing.assert_array_equal(ds.features, [[1, 2], [3, 4]])


def test_load_csv_header_detected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,f1\n0,1.5\n1,2.5\n")
    assert load_csv(p).features.ravel().tolist() == [1.5, 2.5]


def test_load_csv_ragged_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,1.0,2.0\n1,3.0,4.0\n0,1.0,2.0,3.0\n")
    with pytest.raises(FormatError) as err:
        load_csv(p)
    assert err.value.line == 3


def test_load_csv_non_numeric(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,1.0\n1,abc\n")
    with pytest.raises(FormatError) as err:
        load_csv(p)
    assert err.value.line == 2


def test_load_csv_empty(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("")
    with pytest.raises(EmptyDataset):
        load_csv(p)


def test_load_csv_sparse_labels_remapped(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("3,1.0\n7,2.0\n3,0.5\n")
    ds = load_csv(p)
    assert ds.labels.tolist() == [0, 1, 0]
    assert ds.class_ids.tolist() == [3, 7]


def test_csv_round_trip(tmp_path, rng):
    ds = Dataset(rng.standard_normal((30, 5)) * 1e3, np.arange(30) % 3, 3)
    save_csv(ds, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv")
    assert back.features.tobytes() == ds.features.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)


def _idx_pair(tmp_path, images, labels):
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(images, labels, ip, lp)
    return ip, lp


def test_load_idx_single_image(tmp_path):
    ip, lp = _idx_pair(tmp_path, [[[0, 255], [0, 255]]], [7])
    ds = load_idx(ip, lp)
    np.testing.assert_array_equal(ds.features, [[0, 1, 0, 1]])
    assert ds.class_ids[ds.labels[0]] == 7


def test_load_idx_bad_magic(tmp_path):
    ip, lp = _idx_pair(tmp_path, [[[0, 255], [0, 255]]], [7])
    raw = bytearray(ip.read_bytes())
    raw[:4] = struct.pack(">I", 0x0801)
    ip.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_idx(ip, lp)


def test_load_idx_count_mismatch(tmp_path):
    ip, lp = _idx_pair(tmp_path, np.zeros((10, 2, 2)), np.zeros(9))
    with pytest.raises(CountMismatch):
        load_idx(ip, lp)


def test_split_sizes_and_disjoint(synthetic):
    parts = split(synthetic, (0.8, 0.1, 0.1), seed=1)
    for part, n in zip(parts, (80, 10, 10)):
        assert np.bincount(part.labels).tolist() == [n] * 20
    rows = np.concatenate([p.features for p in parts])
    assert np.unique(rows, axis=0).shape[0] == len(synthetic)


def test_split_deterministic(synthetic):
    a = split(synthetic, (0.8, 0.1, 0.1), seed=5)
    b = split(synthetic, (0.8, 0.1, 0.1), seed=5)
    for x, y in zip(a, b):
        assert x.fingerprint() == y.fingerprint()


def test_split_insufficient():
    ds = Dataset(np.arange(8.0).reshape(4, 2), [0, 0, 1, 1], 2)
    with pytest.raises(InsufficientSamples):
        split(ds, (0.8, 0.1, 0.1))


def test_split_fraction_validation(synthetic):
    with pytest.raises(ConfigError):
        split(synthetic, (0.5, 0.6, -0.1))


def test_split_classes(synthetic):
    base, novel = split_classes(synthetic, 0.5, seed=2)
    assert base.class_count == novel.class_count == 10
    assert not set(base.class_ids) & set(novel.class_ids)
    assert sorted(novel.labels.tolist()) == sorted(np.repeat(np.arange(10), 100).tolist())
    again = split_classes(synthetic, 0.5, seed=2)
    assert again[1].fingerprint() == novel.fingerprint()


def test_split_classes_edges():
    two = Dataset(np.eye(2), [0, 1], 2)
    b, n = split_classes(two, 0.5)
    assert b.class_count == n.class_count == 1
    with pytest.raises(InsufficientClasses):
        split_classes(Dataset(np.eye(2), [0, 0], 1), 0.5)


def test_episode_preset_shape(synthetic):
    ep = sample_episode(synthetic, 5, 1, 15, seed=0)
    assert ep.support_x.shape == (5, 64) and ep.query_x.shape == (75, 64)
    assert np.bincount(ep.support_y).tolist() == [1] * 5
    assert np.bincount(ep.query_y).tolist() == [15] * 5
    assert not set(ep.support_idx) & set(ep.query_idx)


def test_episode_all_classes(synthetic):
    ep = sample_episode(synthetic, 20, 2, 3, seed=0)
    assert sorted(ep.classes.tolist()) == list(range(20))


def test_episode_insufficient(synthetic):
    with pytest.raises(InsufficientSamples):
        sample_episode(synthetic, 5, 90, 15)
    with pytest.raises(InsufficientClasses):
        sample_episode(synthetic, 21, 1, 1)


@settings(max_examples=50, deadline=None)
@given(way=st.integers(1, 20), shot=st.integers(1, 5), query=st.integers(0, 20), seed=st.integers(0, 10**6))
def test_episode_invariants(synthetic, way, shot, query, seed):
    ep = sample_episode(synthetic, way, shot, query, seed=seed)
    assert not set(ep.support_idx) & set(ep.query_idx)
    assert np.bincount(ep.support_y, minlength=way).tolist() == [shot] * way
    assert np.bincount(ep.query_y, minlength=way).tolist() == [query] * way
    # episode label c really is dataset class classes[c]
    np.testing.assert_array_equal(synthetic.labels[ep.support_idx], ep.classes[ep.support_y])
    again = sample_episode(synthetic, way, shot, query, seed=seed)
    np.testing.assert_array_equal(again.query_idx, ep.query_idx)
