import numpy as np
import pytest

from mixad.data import (AnomalySpec, DatasetBundle, DatasetError, SynthConfig, generate_synthetic, load_dataset,
                        save_dataset, synthetic_parts)


def _write(d, **files):
    for name, text in files.items():
        (d / f"{name}.csv").write_text(text)


@pytest.fixture
def tiny(tmp_path):
    _write(tmp_path,
           train="a,b\n1,2\n3,4\n5,6\n7,8\n",
           test="a,b\n1,2\n3,4\n5,6\n7,8\n",
           labels="0\n1\n1\n0\n",
           interpretation="1,2,1\n")
    return tmp_path


def test_load_fixture(tiny):
    b = load_dataset(tiny)
    assert b.n_features == 2 and b.test.shape == (2, 4)
    assert b.names == ["a", "b"]
    np.testing.assert_array_equal(b.train[1], [2, 4, 6, 8])
    assert b.labels.tolist() == [False, True, True, False]
    assert b.interpretation == [(1, 2, frozenset({1}))]


def test_semicolon_causes(tmp_path):
    rows = "".join(f"{i},{i},{i}\n" for i in range(6))
    _write(tmp_path, train="x,y,z\n" + rows, test="x,y,z\n" + rows, labels="0\n" * 6,
           interpretation="3,5,0;2\n")
    assert load_dataset(tmp_path).interpretation == [(3, 5, frozenset({0, 2}))]


@pytest.mark.parametrize("name, text, message", [
    ("interpretation", "1,2,1\n5,3,0\n", "interpretation.csv:2: start 5 > end 3"),
    ("interpretation", "1,9,0\n", "out of bounds"),
    ("interpretation", "1,2,7\n", "interpretation.csv:1: causal"),
    ("interpretation", "1,2\n", "interpretation.csv:1"),
    ("test", "a,b\n1,2\n3\n5,6\n7,8\n", "test.csv:3: expected 2 columns"),
    ("train", "a,b\n1,2\n3,x\n", "train.csv:3: non-numeric"),
    ("labels", "0\n2\n0\n0\n", "labels.csv:2"),
    ("labels", "0\n1\n", "labels length"),
])
def test_malformed_files(tiny, name, text, message):
    _write(tiny, **{name: text})
    with pytest.raises(DatasetError, match=message.replace("(", r"\(")):
        load_dataset(tiny)


def test_missing_file_names_path(tiny):
    (tiny / "train.csv").unlink()
    with pytest.raises(DatasetError, match="train.csv"):
        load_dataset(tiny)


def test_header_mismatch(tiny):
    _write(tiny, test="a,c\n1,2\n3,4\n5,6\n7,8\n")
    with pytest.raises(DatasetError, match="header"):
        load_dataset(tiny)


def test_round_trip_is_exact(tmp_path):
    cfg = SynthConfig(n_nodes=3, t_train=300, t_test=400, margin=20,
                      anomalies=(AnomalySpec("spike", 20, 1), AnomalySpec("correlation_break", 30, 2)))
    bundle = generate_synthetic(cfg)
    save_dataset(bundle, tmp_path)
    back = load_dataset(tmp_path)
    assert back.train.tobytes() == bundle.train.tobytes()
    assert back.test.tobytes() == bundle.test.tobytes()
    np.testing.assert_array_equal(back.labels, bundle.labels)
    assert back.interpretation == bundle.interpretation
    assert back.names == bundle.names
    assert back.meta == bundle.meta


def test_bundle_validation():
    with pytest.raises(DatasetError, match="features"):
        DatasetBundle(np.zeros((2, 5)), np.zeros((3, 5)), np.zeros(5))
    with pytest.raises(DatasetError, match="outside"):
        DatasetBundle(np.zeros((2, 5)), np.zeros((2, 5)), np.zeros(5), [(3, 5, frozenset({0}))])


def test_generator_is_pure():
    cfg = SynthConfig(t_train=500, t_test=800, margin=30)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert a.test.tobytes() == b.test.tobytes() and a.interpretation == b.interpretation
    c = generate_synthetic(SynthConfig(t_train=500, t_test=800, margin=30, seed=1))
    assert c.test.tobytes() != a.test.tobytes()


def test_no_anomalies():
    b = generate_synthetic(SynthConfig(anomalies=(), t_train=200, t_test=200))
    assert not b.labels.any() and b.interpretation == []


def test_default_bundle_shape_and_labels():
    b = generate_synthetic()
    assert b.train.shape == (8, 4000) and b.test.shape == (8, 2000)
    assert len(b.interpretation) == 6
    assert set(b.meta["kinds"]) == {"spike", "level_shift", "correlation_break"}
    covered = np.zeros(2000, dtype=bool)
    for start, end, causes in b.interpretation:
        assert b.labels[start : end + 1].all()
        covered[start : end + 1] = True
    np.testing.assert_array_equal(covered, b.labels)
    starts = [s for s, _, _ in b.interpretation]
    assert starts == sorted(starts)


def test_spans_that_do_not_fit_are_rejected():
    with pytest.raises(ValueError, match="fit"):
        generate_synthetic(SynthConfig(t_test=300, anomalies=(AnomalySpec("spike", 200, 1),)))
    with pytest.raises(ValueError):
        SynthConfig(n_nodes=2, anomalies=(AnomalySpec("spike", 10, 3),))
    with pytest.raises(ValueError):
        AnomalySpec("drift", 10, 1)


def test_spikes_exceed_training_range():
    b = generate_synthetic()
    for (start, end, causes), kind in zip(b.interpretation, b.meta["kinds"]):
        if kind != "spike":
            continue
        for i in causes:
            assert b.test[i, start : end + 1].max() > b.train[i].max()


def _span_corr(parts, i, a, n):
    # node minus its own periodic part, against its coupling term
    drive = parts.series[i] - parts.base[i]
    return np.corrcoef(drive[a : a + n], parts.coupling[i, a : a + n])[0, 1]


def _breaks(parts):
    for (start, end, causes), kind in zip(parts.interpretation, parts.meta["kinds"]):
        if kind == "correlation_break":
            yield start, end, sorted(causes)


def test_correlation_break_statistics():
    cfg = SynthConfig()
    parts = synthetic_parts(cfg)
    x = parts.series
    te = cfg.t_train
    checked = 0
    for start, end, causes in _breaks(parts):
        n = end - start + 1
        for i in causes:
            normal_starts = range(100, te - 100, 100)
            corrs = [_span_corr(parts, i, a, n) for a in normal_starts]
            assert min(corrs) > 0.8
            assert abs(_span_corr(parts, i, te + start, n)) < 0.2
            # marginals stay plausible: the span mean is within two of the node's
            # standard deviations and the span variance within two standard
            # deviations of the variances of same-length normal windows
            seg = x[i, te + start : te + end + 1]
            assert abs(seg.mean() - x[i, :te].mean()) <= 2 * x[i, :te].std()
            vars_ = np.array([x[i, a : a + n].var() for a in normal_starts])
            assert abs(seg.var() - vars_.mean()) <= 2 * vars_.std()
            checked += 1
    assert checked == 4


def test_correlation_break_across_seeds():
    # over many breaks the span correlation behaves like independent noise (sd ~ 1/sqrt(60))
    vals = []
    for seed in range(6):
        parts = synthetic_parts(SynthConfig(seed=seed))
        for start, end, causes in _breaks(parts):
            vals += [abs(_span_corr(parts, i, 4000 + start, end - start + 1)) for i in causes]
    assert np.mean(vals) < 0.2


def test_level_shift_raises_mean():
    parts = synthetic_parts()
    for (start, end, causes), kind in zip(parts.interpretation, parts.meta["kinds"]):
        if kind == "level_shift":
            for i in causes:
                assert np.allclose(parts.inject[i, 4000 + start : 4000 + end + 1],
                                   parts.inject[i, 4000 + start])
                assert parts.inject[i, 4000 + start] > 3 * parts.series[i, :4000].std()


def test_anomalies_only_in_test_split():
    parts = synthetic_parts()
    assert not parts.inject[:, :4000].any()
