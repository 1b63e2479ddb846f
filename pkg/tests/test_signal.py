import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

from uabnn.exceptions import ConfigurationError, DegenerateInputError
from uabnn.experiments import ExperimentPlan, generate_dataset
from uabnn.signal import (
    DEFAULT_SIGNATURES,
    FaultClass,
    SignalConfig,
    Waveform,
    generate_vibration,
    inject_noise,
)
from oracles import naive_dft_power


def test_fault_ids_contiguous_and_display_names():
    assert [int(c) for c in FaultClass] == list(range(6))
    assert [c.display_name for c in FaultClass] == [
        "No Fault", "Missing Tooth", "Chipped Tooth", "Root Crack", "Surface Wear", "Eccentricity"]
    assert FaultClass.parse("Missing Tooth") is FaultClass.MissingTooth
    assert FaultClass.parse(5) is FaultClass.Eccentricity
    with pytest.raises(ConfigurationError, match="NoFault"):
        FaultClass.parse("Broken")


def test_every_class_has_one_signature_and_nofault_is_clean():
    assert set(DEFAULT_SIGNATURES) == set(FaultClass)
    s = DEFAULT_SIGNATURES[FaultClass.NoFault]
    assert (s.impulse_amplitude, s.sideband_depth, s.broadband_gain) == (0, 0, 0)


def test_healthy_noise_free_equals_harmonic_sum():
    cfg = SignalConfig(base_noise_std=0.0, duration_s=0.5)
    w = generate_vibration(cfg, FaultClass.NoFault)
    t = np.arange(cfg.n_samples) / cfg.sample_rate_hz
    expected = np.zeros_like(t)
    for k, a in enumerate(cfg.harmonic_amplitudes, start=1):
        expected += a * np.sin(2.0 * np.pi * k * cfg.gear_mesh_freq_hz * t)
    assert np.max(np.abs(w.samples - expected)) == 0.0


@pytest.mark.parametrize("fault", list(FaultClass))
def test_determinism_and_length(fault):
    cfg = SignalConfig(seed=42, duration_s=1.3)
    a, b = generate_vibration(cfg, fault), generate_vibration(cfg, fault)
    assert np.array_equal(a.samples, b.samples)
    assert len(a) == round(1.3 * 5000)
    assert np.all(np.isfinite(a.samples))


def _shaft_comb_peaks(x, fs, shaft):
    power = naive_dft_power(x)
    n = x.size
    floor = np.median(power)
    bins = [round(m * shaft * n / fs) for m in range(1, int(fs / 2 / shaft))]
    return sum(power[b] > 100 * floor for b in bins)


def test_missing_tooth_adds_shaft_spaced_spectral_lines():
    cfg = SignalConfig(duration_s=1.0, seed=3)
    healthy = _shaft_comb_peaks(generate_vibration(cfg, FaultClass.NoFault).samples, 5000, 25)
    faulty = _shaft_comb_peaks(generate_vibration(cfg, FaultClass.MissingTooth).samples, 5000, 25)
    assert healthy == cfg.n_harmonics  # only the mesh harmonics sit on the shaft comb
    assert faulty > healthy


@pytest.mark.parametrize("cfg", [
    dict(gear_mesh_freq_hz=700.0),  # 4 x 700 > 2500 Nyquist
    dict(duration_s=float("nan")),
    dict(harmonic_amplitudes=(1.0, 0.5)),
    dict(base_noise_std=-1.0),
])
def test_invalid_configs_rejected(cfg):
    with pytest.raises(ConfigurationError):
        generate_vibration(SignalConfig(**cfg), FaultClass.NoFault)


def _unit_sine(n):
    t = np.arange(n)
    return Waveform(math.sqrt(2) * np.sin(2 * np.pi * 0.01237 * t), 5000.0)


def test_no_noise_option_is_identity():
    w = _unit_sine(1000)
    out = inject_noise(w, None, seed=1)
    assert np.array_equal(out.samples, w.samples) and out is not w


def test_noise_variance_at_0db():
    w = _unit_sine(100_000)
    noise = inject_noise(w, 0.0, seed=9).samples - w.samples
    assert abs(w.power - 1) < 1e-3
    assert noise.var() == pytest.approx(1.0, abs=0.02)


def test_noise_variance_at_minus_25db():
    w = _unit_sine(100_000)
    noise = inject_noise(w, -25.0, seed=9).samples - w.samples
    assert noise.var() == pytest.approx(10**2.5, rel=0.05)


@settings(max_examples=20)
@given(snr=st.floats(-30, 30), seed=st.integers(0, 2**32))
def test_empirical_snr_within_half_db(snr, seed):
    w = _unit_sine(10_000)
    noise = inject_noise(w, snr, seed).samples - w.samples
    assert abs(10 * math.log10(w.power / np.mean(noise**2)) - snr) < 0.5


@settings(max_examples=10)
@given(hi=st.floats(-20, 20), gap=st.floats(1, 10))
def test_power_grows_as_snr_falls(hi, gap):
    w = _unit_sine(100_000)
    p_hi = inject_noise(w, hi, 1).power
    p_lo = inject_noise(w, hi - gap, 1).power
    expected_hi = 1 + 10 ** (-hi / 10)
    expected_lo = 1 + 10 ** (-(hi - gap) / 10)
    assert p_lo > p_hi
    assert p_hi == pytest.approx(expected_hi, rel=0.01)
    assert p_lo == pytest.approx(expected_lo, rel=0.01)


def test_noise_errors():
    with pytest.raises(DegenerateInputError):
        inject_noise(Waveform(np.zeros(10), 5000.0), 0.0, 1)
    with pytest.raises(ConfigurationError):
        inject_noise(_unit_sine(10), float("inf"), 1)


def test_waveform_csv_round_trip(tmp_path):
    w = generate_vibration(SignalConfig(duration_s=0.05, seed=11), FaultClass.ChippedTooth)
    path = w.to_csv(tmp_path)
    assert path.name == "ChippedTooth_seed11.csv"
    assert path.read_text().splitlines()[0] == "accel"
    back = Waveform.from_csv(path, 5000.0)
    assert np.array_equal(back.samples, w.samples)


def test_linear_separability_at_10db():
    plan = ExperimentPlan(samples_per_class=200)
    ds = generate_dataset(plan, plan.seen_classes, 200, 10.0)
    X = StandardScaler().fit_transform(ds.features)
    acc = LogisticRegression(max_iter=2000).fit(X, ds.labels).score(X, ds.labels)
    assert acc > 0.8
