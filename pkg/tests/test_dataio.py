import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bayesadv.dataio import (
    Dataset,
    NormStats,
    SynthConfig,
    apply_normalize,
    batches,
    denormalize_array,
    fit_normalize,
    load_dataset,
    normalize_array,
    save_dataset,
    split,
    synth_gen,
)
from bayesadv.errors import DimensionError, FormatError

f32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@st.composite
def datasets(draw):
    n = draw(st.integers(0, 20))
    m = draw(st.integers(1, 6))
    x = draw(arrays(np.float32, (n, m), elements=f32)).astype(np.float64)
    y = draw(arrays(np.int64, n, elements=st.integers(0, 1)))
    return Dataset(x, y)


@given(datasets(), st.sampled_from(["bin", "csv"]))
def test_roundtrip_bit_exact(tmp_path_factory, d, fmt):
    path = tmp_path_factory.mktemp("rt") / f"d.{fmt}"
    save_dataset(d, path)
    back = load_dataset(path)
    assert back.features.tobytes() == d.features.tobytes()
    assert np.array_equal(back.labels, d.labels)


def test_csv_keeps_float64(tmp_path):
    d = Dataset(np.array([[0.1, 1 / 3]]), np.array([1]))
    save_dataset(d, tmp_path / "d.csv")
    assert load_dataset(tmp_path / "d.csv").features.tobytes() == d.features.tobytes()


def test_bin_layout(tmp_path):
    d = Dataset(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0, 1]))
    save_dataset(d, tmp_path / "d.bin")
    raw = (tmp_path / "d.bin").read_bytes()
    assert raw[:4] == b"MB01"
    assert raw[4:8] == (1).to_bytes(4, "little")
    assert raw[8:16] == (2).to_bytes(8, "little")
    assert raw[16:20] == (2).to_bytes(4, "little")
    assert raw[20:22] == b"\x00\x01"
    assert np.array_equal(np.frombuffer(raw[22:], "<f4"), [1, 2, 3, 4])


def test_bad_files(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(FormatError):
        load_dataset(p)
    p.write_bytes(b"MB0")
    with pytest.raises(FormatError):
        load_dataset(p)
    d = Dataset(np.ones((3, 2)), np.array([0, 1, 1]))
    save_dataset(d, p)
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(DimensionError):
        load_dataset(p)
    save_dataset(d, p)
    raw = bytearray(p.read_bytes())
    raw[20] = 7
    p.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        load_dataset(p)
    c = tmp_path / "x.csv"
    c.write_text("f0,f1,label\n1,2,0\n1,2\n")
    with pytest.raises(DimensionError):
        load_dataset(c)
    c.write_text("f0,f1,label\n1,abc,0\n")
    with pytest.raises(FormatError):
        load_dataset(c)
    c.write_text("f0,f1,label\n1,2,3\n")
    with pytest.raises(ValueError):
        load_dataset(c)
    c.write_text("f0,f1\n1,2\n")
    with pytest.raises(FormatError):
        load_dataset(c)


def test_dataset_validation():
    with pytest.raises(DimensionError):
        Dataset(np.ones(3), np.ones(3))
    with pytest.raises(DimensionError):
        Dataset(np.ones((3, 2)), np.ones(2))
    with pytest.raises(ValueError):
        Dataset(np.ones((2, 2)), np.array([0, 2]))
    d = Dataset(np.ones((2, 2)), np.array([0, 1]))
    with pytest.raises(ValueError):
        d.features[0, 0] = 5.0


def test_synth_gen_shape_and_determinism():
    cfg = SynthConfig(n_samples=1001, n_features=20, seed=7)
    a, b = synth_gen(cfg), synth_gen(cfg)
    assert a.features.shape == (1001, 20)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    assert abs(int(a.labels.sum()) - 500) <= 1
    assert np.all(a.features >= 0)
    assert np.array_equal(a.features.astype(np.float32).astype(np.float64), a.features)
    c = synth_gen(SynthConfig(n_samples=1001, n_features=20, seed=8))
    assert not np.array_equal(a.features, c.features)


def test_synth_sparsity_and_separation():
    dense = synth_gen(SynthConfig(n_samples=4000, n_features=16, sparsity=0.0, seed=1))
    sparse = synth_gen(SynthConfig(n_samples=4000, n_features=16, sparsity=0.9, seed=1))
    assert np.mean(sparse.features == 0) > 0.85
    assert np.mean(dense.features == 0) < 0.1
    flat = synth_gen(SynthConfig(n_samples=4000, n_features=16, class_separation=0.0, seed=1))
    xs, ys = fit_normalize(flat)[0].features, flat.labels
    assert np.max(np.abs(xs[ys == 1].mean(0) - xs[ys == 0].mean(0))) < 0.05


@pytest.mark.parametrize("bad", [dict(n_samples=0), dict(n_features=-1), dict(sparsity=1.5), dict(class_separation=-1)])
def test_synth_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_normalize_examples():
    d = Dataset(np.array([[0.0, 5.0, 2.0], [10.0, 5.0, 4.0], [5.0, 5.0, 3.0]]), np.array([0, 1, 0]))
    nd, s = fit_normalize(d)
    assert np.array_equal(nd.features, [[0, 0, 0], [1, 0, 1], [0.5, 0, 0.5]])
    assert np.array_equal(s.min, [0, 5, 2]) and np.array_equal(s.max, [10, 5, 4])
    # values outside the fitted range clip to [0, 1]
    assert np.array_equal(normalize_array(np.array([[20.0, 7.0, 1.0]]), s), [[1.0, 0.0, 0.0]])
    with pytest.raises(DimensionError):
        normalize_array(np.ones((1, 2)), s)
    with pytest.raises(ValueError):
        NormStats(np.array([1.0]), np.array([0.0]))


@given(arrays(np.float64, (8, 3), elements=st.floats(-1e3, 1e3)))
def test_normalize_range_and_inverse(x):
    d = Dataset(x, np.zeros(8, dtype=np.int64))
    nd, s = fit_normalize(d)
    assert np.all((nd.features >= 0) & (nd.features <= 1))
    back = denormalize_array(nd.features, s)
    varying = s.max > s.min
    scale = np.maximum(np.abs(x).max(0), 1.0)
    assert np.all(np.abs(back - x)[:, varying] <= 1e-12 * scale[varying] * 4)
    assert np.array_equal(apply_normalize(d, s).features, nd.features)


def test_normstats_dict_roundtrip():
    s = NormStats(np.array([0.1, -2.0]), np.array([0.3, 5.0]))
    t = NormStats.from_dict(s.to_dict())
    assert np.array_equal(s.min, t.min) and np.array_equal(s.max, t.max)


@given(st.integers(10, 300), st.integers(0, 50))
def test_split_stratified_partition(n, seed):
    d = synth_gen(SynthConfig(n_samples=n, n_features=2, seed=seed))
    parts = split(d, (0.8, 0.1, 0.1), seed)
    assert [p.name.rsplit("-", 1)[-1] for p in parts] == ["train", "val", "test"]
    assert sum(len(p) for p in parts) == n
    rows = np.concatenate([p.features for p in parts])
    assert np.array_equal(np.sort(rows[:, 0]), np.sort(d.features[:, 0]))
    for cls in (0, 1):
        n_cls = int(np.sum(d.labels == cls))
        assert abs(int(np.sum(parts[0].labels == cls)) - 0.8 * n_cls) <= 1


def test_split_keeps_order_and_is_seeded():
    d = Dataset(np.arange(40, dtype=float)[:, None], np.arange(40) % 2)
    a = split(d, (0.5, 0.5), seed=1)
    b = split(d, (0.5, 0.5), seed=1)
    for p, q in zip(a, b):
        assert np.all(np.diff(p.features[:, 0]) > 0)
        assert np.array_equal(p.features, q.features)
    with pytest.raises(ValueError):
        split(d, (0.5, 0.6))


def test_batches_cover_everything():
    idx = np.concatenate(list(batches(103, 10, np.random.default_rng(0))))
    assert np.array_equal(np.sort(idx), np.arange(103))
    assert [len(b) for b in batches(25, 10)] == [10, 10, 5]
