import math
import warnings

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uabnn.exceptions import EmptyOutputError, ParseError
from uabnn.experiments import ExperimentPlan, generate_dataset
from uabnn.features import (
    Dataset,
    Standardizer,
    VibrationFeatureExtractor,
    apply_standardizer,
    dataset_from_csv,
    dataset_to_csv,
    extract_features,
    feature_names,
    fit_standardizer,
    window,
)
from uabnn.signal import FaultClass, Waveform
from oracles import naive_dft_power


def test_window_counts_and_offsets():
    x = np.arange(10.0)
    assert window(x, 10, 1).shape == (1, 10)
    segs = window(x, 4, 2)
    assert [s[0] for s in segs] == [0, 2, 4, 6]
    n_oracle = len(range(0, 5000 - 512 + 1, 256))
    assert n_oracle == 18
    assert window(Waveform(np.zeros(5000), 5000.0), 512, 256).shape == (n_oracle, 512)


def test_window_too_long_is_an_error():
    with pytest.raises(EmptyOutputError):
        window(np.zeros(8), 9, 1)


@given(n=st.integers(1, 300), wl=st.integers(1, 64), hop=st.integers(1, 64))
def test_window_coverage_bound(n, wl, hop):
    if wl > n:
        return
    segs = window(np.arange(float(n)), wl, hop)
    counts = np.bincount(segs.ravel().astype(int), minlength=n)
    assert counts.max() <= math.ceil(wl / hop)
    assert all(len(s) == wl for s in segs)
    assert len(segs) == (n - wl) // hop + 1


def test_constant_segment_rule():
    f = extract_features(np.full(64, -2.5), 5000.0, 300.0)
    assert f[:5].tolist() == [2.5, 0.0, 0.0, 0.0, 1.0]


def test_sine_at_mesh_frequency_lands_in_first_band():
    n = 500  # 0.1 s at 5 kHz: exactly 30 periods of 300 Hz
    x = np.sin(2 * np.pi * 300.0 * np.arange(n) / 5000.0)
    f = extract_features(x, 5000.0, 300.0)
    # Parseval on the naive DFT: total energy / N equals sum(x^2) / N
    power = naive_dft_power(x)
    total = (power[0] + 2 * power[1:-1].sum() + power[-1]) / n
    assert total == pytest.approx(np.sum(x**2), rel=1e-9)
    assert f[5] > 0.99 * total


def test_gaussian_excess_kurtosis_near_zero(gen):
    f = extract_features(gen.standard_normal(100_000), 5000.0, 300.0)
    assert abs(f[3]) < 0.1
    assert abs(f[2]) < 0.05


@settings(max_examples=40)
@given(arrays(np.float64, st.integers(16, 256), elements=st.floats(-1e3, 1e3)))
@example(np.r_[4.22839808e-97, np.zeros(15)])  # squares underflow to zero
def test_feature_vector_invariants(x):
    f = extract_features(x, 5000.0, 300.0, 8)
    assert f.shape == (13,)
    assert np.all(np.isfinite(f))
    assert f[0] >= 0 and f[1] >= 0 and np.all(f[5:] >= 0)
    assert f[4] >= 1 - 1e-12


def _toy_dataset(gen, n=40, f=3):
    return Dataset(gen.normal(5, 3, (n, f)), gen.integers(0, 3, n), {0: "a", 1: "b", 2: "c"},
                   feature_names=[f"x{i}" for i in range(f)])


def test_standardizer_zero_mean_unit_std(gen):
    d = _toy_dataset(gen)
    out = apply_standardizer(d, fit_standardizer(d)).features
    assert np.all(np.abs(out.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(out.std(axis=0) - 1) < 1e-9)


def test_degenerate_column_maps_to_zero_with_warning(gen):
    d = _toy_dataset(gen)
    d.features[:, 1] = 7.0
    with pytest.warns(RuntimeWarning, match="zero-variance"):
        s = fit_standardizer(d)
    assert s.std[1] == 1.0
    assert np.all(apply_standardizer(d, s).features[:, 1] == 0.0)


def test_two_point_column():
    d = Dataset(np.array([[1.0], [3.0]]), [0, 1], {0: "a", 1: "b"})
    assert apply_standardizer(d, fit_standardizer(d)).features.ravel().tolist() == [-1.0, 1.0]


def test_held_out_split_uses_training_statistics(gen):
    train = _toy_dataset(gen)
    test = Dataset(gen.normal(8, 3, (40, 3)), gen.integers(0, 3, 40), train.class_names)
    out = apply_standardizer(test, fit_standardizer(train)).features
    assert np.all(np.abs(out.mean(axis=0)) > 0.1)


def test_csv_round_trip(tmp_path, gen):
    d = _toy_dataset(gen)
    d = apply_standardizer(d, fit_standardizer(d))
    csv_path, manifest = dataset_to_csv(d, tmp_path / "d.csv")
    assert csv_path.read_text().splitlines()[0] == "x0,x1,x2,label"
    assert manifest.name == "d.manifest.json"
    back = dataset_from_csv(csv_path)
    assert np.max(np.abs(back.features - d.features)) <= 1e-12
    assert np.array_equal(back.labels, d.labels)
    assert back.class_names == d.class_names
    assert np.array_equal(back.scaler.mean, d.scaler.mean)


@settings(max_examples=25)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 5)),
              elements=st.floats(-1e12, 1e12, allow_subnormal=False)))
def test_csv_round_trip_property(tmp_path_factory, X):
    d = Dataset(X, np.zeros(X.shape[0], dtype=int), {0: "only"})
    path = tmp_path_factory.mktemp("rt") / "p.csv"
    dataset_to_csv(d, path)
    back = dataset_from_csv(path)
    assert np.array_equal(back.features, X)


def _write(tmp_path, text, classes='{"0": "a"}'):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    (tmp_path / "bad.manifest.json").write_text('{"classes": %s, "scaler": null}' % classes)
    return p


def test_empty_file_is_parse_error(tmp_path):
    with pytest.raises(ParseError, match="line 1"):
        dataset_from_csv(_write(tmp_path, ""))


def test_unknown_label_names_the_id(tmp_path):
    with pytest.raises(ParseError, match="label id 7") as exc:
        dataset_from_csv(_write(tmp_path, "x,label\n1.0,0\n2.0,7\n"))
    assert exc.value.line == 3


def test_column_count_mismatch_reports_line(tmp_path):
    with pytest.raises(ParseError, match="line 2"):
        dataset_from_csv(_write(tmp_path, "x,y,label\n1.0,0\n"))


def test_malformed_value_reports_line(tmp_path):
    with pytest.raises(ParseError, match="line 3"):
        dataset_from_csv(_write(tmp_path, "x,label\n1.0,0\nabc,0\n"))


def test_features_finite_over_every_class_and_grid_level():
    plan = ExperimentPlan(samples_per_class=20)
    for snr in [None, *plan.snr_grid_db]:
        ds = generate_dataset(plan, list(FaultClass), 18, snr)
        assert np.all(np.isfinite(ds.features)), snr
        assert ds.features.shape == (18 * 6, 13)
    assert ds.feature_names == feature_names(8)


def test_sklearn_transformers(gen):
    segs = gen.standard_normal((5, 128))
    fx = VibrationFeatureExtractor()
    F = fx.fit_transform(segs)
    assert F.shape == (5, 13)
    assert list(fx.get_feature_names_out()) == feature_names(8)
    st_ = Standardizer().fit(F)
    assert np.allclose(st_.transform(F).mean(axis=0), 0, atol=1e-9)
    assert st_.get_params() == {}
