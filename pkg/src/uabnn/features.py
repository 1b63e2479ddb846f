"""Windowing, feature extraction, datasets and their CSV form.

Features per window, in order: rms, variance, skewness, excess kurtosis,
crest factor, then ``K`` band energies centred on the gear-mesh harmonics.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from uabnn.exceptions import ConfigurationError, EmptyOutputError, ParseError
from uabnn.signal import Waveform

STAT_NAMES = ("rms", "variance", "skewness", "kurtosis", "crest_factor")
BAND_HALF_WIDTH = 0.10


def feature_names(n_bands: int = 8) -> list[str]:
    return list(STAT_NAMES) + [f"band_{k}" for k in range(1, n_bands + 1)]


def window(w: Waveform | np.ndarray, window_len: int, hop: int) -> np.ndarray:
    """Cut ``w`` into full windows at offsets 0, hop, 2*hop, ...; returns (n, window_len).

    The trailing partial window is dropped.  Rows are views into the input.
    """
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if window_len < 1 or hop < 1:
        raise ConfigurationError("window_len and hop must be positive")
    if window_len > x.size:
        raise EmptyOutputError(f"window_len {window_len} exceeds waveform length {x.size}")
    return np.lib.stride_tricks.sliding_window_view(x, window_len)[::hop]


def band_energies(segment: np.ndarray, sample_rate_hz: float, mesh_freq_hz: float, n_bands: int) -> np.ndarray:
    """One-sided power (|X|^2 / N, doubled off DC/Nyquist) within +-10% of each mesh harmonic."""
    n = segment.size
    power = np.abs(np.fft.rfft(segment)) ** 2 / n
    if n % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    out = np.empty(n_bands)
    for k in range(1, n_bands + 1):
        centre = k * mesh_freq_hz
        mask = np.abs(freqs - centre) <= BAND_HALF_WIDTH * centre
        out[k - 1] = power[mask].sum()
    return out


def extract_features(segment, sample_rate_hz: float, mesh_freq_hz: float, n_bands: int = 8) -> np.ndarray:
    x = np.asarray(segment, dtype=np.float64)
    if x.ndim != 1 or x.size < 16:
        raise ConfigurationError("segment must be one-dimensional with at least 16 samples")
    if mesh_freq_hz * n_bands >= sample_rate_hz / 2:
        raise ConfigurationError("highest feature band is not below Nyquist")
    if not np.all(np.isfinite(x)):
        raise ValueError("segment contains non-finite samples")

    # Moments are taken on x / peak so tiny amplitudes do not underflow when squared.
    peak = float(np.max(np.abs(x)))
    u = x / peak if peak > 0 else x
    rms_u = math.sqrt(float(np.mean(u * u)))
    rms = peak * rms_u
    centred = u - u.mean()
    var_u = float(np.mean(centred**2))
    if np.ptp(x) == 0.0 or var_u == 0.0:
        # constant segment: shape statistics are defined as 0
        variance = skewness = kurtosis = 0.0
    else:
        variance = peak * peak * var_u
        skewness = float(np.mean(centred**3)) / var_u**1.5
        kurtosis = float(np.mean(centred**4)) / var_u**2 - 3.0
    crest = 1.0 / rms_u if peak > 0 else 1.0
    bands = band_energies(x, sample_rate_hz, mesh_freq_hz, n_bands)
    return np.concatenate([[rms, variance, skewness, kurtosis, crest], bands])


def extract_feature_matrix(segments: np.ndarray, sample_rate_hz: float, mesh_freq_hz: float, n_bands: int = 8):
    return np.vstack([extract_features(s, sample_rate_hz, mesh_freq_hz, n_bands) for s in segments])


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("scaler mean and std must be 1-D of equal length")
        if np.any(self.std <= 0):
            raise ValueError("scaler std entries must be strictly positive")

    @property
    def n_features(self) -> int:
        return self.mean.size

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(d["mean"], d["std"])


def _fit_scaler(X: np.ndarray) -> Scaler:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError(f"need at least 2 rows to fit a standardizer, got n_samples={X.shape[0]}")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    degenerate = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if degenerate.any():
        warnings.warn(
            f"zero-variance feature columns {np.flatnonzero(degenerate).tolist()}; std set to 1",
            RuntimeWarning,
            stacklevel=3,
        )
        std = np.where(degenerate, 1.0, std)
    return Scaler(mean, std)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: dict[int, str]
    scaler: Scaler | None = None
    feature_names: list[str] | None = None
    # Provenance tags such as "MissingTooth/w12/3"; kept in memory only, never in CSV.
    sample_ids: list[str] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = {int(k): str(v) for k, v in self.class_names.items()}
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        unknown = sorted(set(self.labels.tolist()) - set(self.class_names))
        if unknown:
            raise ValueError(f"label ids {unknown} have no class name")
        if self.feature_names is None:
            self.feature_names = [f"f{i}" for i in range(self.features.shape[1])]
        if len(self.feature_names) != self.features.shape[1]:
            raise ValueError("feature_names length must match feature columns")
        if self.sample_ids is not None and len(self.sample_ids) != len(self):
            raise ValueError("sample_ids length must match rows")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, mask_or_idx) -> "Dataset":
        idx = np.asarray(mask_or_idx)
        ids = None if self.sample_ids is None else [self.sample_ids[i] for i in np.arange(len(self))[idx]]
        return replace(self, features=self.features[idx], labels=self.labels[idx], sample_ids=ids)

    @classmethod
    def concat(cls, parts: list["Dataset"]) -> "Dataset":
        names: dict[int, str] = {}
        for p in parts:
            names.update(p.class_names)
        ids = None
        if all(p.sample_ids is not None for p in parts):
            ids = [s for p in parts for s in p.sample_ids]
        return cls(
            np.vstack([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            names,
            parts[0].scaler,
            parts[0].feature_names,
            ids,
        )


def fit_standardizer(d: Dataset) -> Scaler:
    """Per-feature mean and population std of the (training) split."""
    return _fit_scaler(d.features)


def apply_standardizer(d: Dataset, s: Scaler) -> Dataset:
    if s.n_features != d.features.shape[1]:
        raise ValueError(f"scaler has {s.n_features} features, dataset has {d.features.shape[1]}")
    return replace(d, features=s.transform(d.features), scaler=s)


def manifest_path(csv_path: str | Path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".manifest.json")


def dataset_to_csv(d: Dataset, path: str | Path) -> tuple[Path, Path]:
    """Write features + integer labels to ``path`` and class names/scaler to a sidecar manifest."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(d.feature_names) + ["label"])
        for row, label in zip(d.features, d.labels):
            writer.writerow([repr(float(v)) for v in row] + [str(int(label))])
    manifest = {
        "classes": {str(k): v for k, v in sorted(d.class_names.items())},
        "scaler": d.scaler.to_dict() if d.scaler is not None else None,
    }
    mpath = manifest_path(path)
    mpath.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path, mpath


def dataset_from_csv(path: str | Path, manifest: str | Path | None = None) -> Dataset:
    path = Path(path)
    mpath = Path(manifest) if manifest is not None else manifest_path(path)
    try:
        meta = json.loads(mpath.read_text(encoding="utf-8"))
        class_names = {int(k): str(v) for k, v in meta["classes"].items()}
    except FileNotFoundError:
        raise ParseError(f"manifest {mpath} not found") from None
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"malformed manifest {mpath}: {exc}") from None
    scaler = Scaler.from_dict(meta["scaler"]) if meta.get("scaler") else None

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError("empty file, expected a header row", line=1)
        if header[-1] != "label" or len(header) < 2:
            raise ParseError("header must list feature names followed by 'label'", line=1)
        n_cols = len(header)
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_cols:
                raise ParseError(f"expected {n_cols} columns, found {len(row)}", line=line_no)
            try:
                values = [float(v) for v in row[:-1]]
                label = int(row[-1])
            except ValueError as exc:
                raise ParseError(f"malformed row: {exc}", line=line_no) from None
            if label not in class_names:
                raise ParseError(f"label id {label} is not listed in the manifest classes", line=line_no)
            rows.append(values)
            labels.append(label)
    if not rows:
        raise ParseError("file has a header but no data rows", line=2)
    return Dataset(np.array(rows), np.array(labels), class_names, scaler, header[:-1])


class VibrationFeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer from windowed segments (n_windows, window_len) to feature rows."""

    def __init__(self, sample_rate_hz=5000.0, mesh_freq_hz=300.0, n_bands=8):
        self.sample_rate_hz = sample_rate_hz
        self.mesh_freq_hz = mesh_freq_hz
        self.n_bands = n_bands

    def fit(self, X, y=None):
        X = validate_data(self, X)
        return self

    def transform(self, X):
        X = check_array(X)
        return extract_feature_matrix(X, self.sample_rate_hz, self.mesh_freq_hz, self.n_bands)

    def get_feature_names_out(self, input_features=None):
        return np.array(feature_names(self.n_bands), dtype=object)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


class Standardizer(TransformerMixin, BaseEstimator):
    """Zero-mean/unit-variance scaling that maps degenerate columns to 0 instead of NaN."""

    def fit(self, X, y=None):
        X = validate_data(self, X)
        self.scaler_ = _fit_scaler(X)
        self.mean_ = self.scaler_.mean
        self.scale_ = self.scaler_.std
        return self

    def transform(self, X):
        check_is_fitted(self, "scaler_")
        X = validate_data(self, X, reset=False)
        return self.scaler_.transform(X)
