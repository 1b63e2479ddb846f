"""The three studies: unseen-fault OOD comparison, SNR sweep, incremental class augmentation.

Seeds: every random quantity derives from ``master_seed`` through
:func:`uabnn.rng.derive_key` with a path of labels, e.g. waveform ``i`` of a
fault uses ``(master_seed, "wave", fault_id, i)`` and a stage model uses
``(master_seed, "model", stage_name)``.  Adding a stage or a grid level
therefore never changes the seeds of existing ones.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from uabnn import rng
from uabnn.estimators import BayesianMLPClassifier, MLPBaselineClassifier
from uabnn.features import (
    Dataset,
    Scaler,
    apply_standardizer,
    extract_feature_matrix,
    feature_names,
    fit_standardizer,
    window,
)
from uabnn.signal import DEFAULT_SIGNATURES, FaultClass, FaultSignature, SignalConfig, Waveform, generate_vibration, inject_noise, normalize_power
from uabnn.exceptions import ConfigurationError

log = logging.getLogger(__name__)

SEEN_DEFAULT = (FaultClass.NoFault, FaultClass.MissingTooth, FaultClass.ChippedTooth)
INCREMENTAL_DEFAULT = (FaultClass.RootCrack, FaultClass.SurfaceWear, FaultClass.Eccentricity)


@dataclass
class ExperimentPlan:
    seen_classes: list[FaultClass] = field(default_factory=lambda: list(SEEN_DEFAULT))
    unseen_classes: list[FaultClass] = field(default_factory=lambda: [FaultClass.Eccentricity])
    incremental_order: list[FaultClass] = field(default_factory=lambda: list(INCREMENTAL_DEFAULT))
    snr_grid_db: list[float] = field(default_factory=lambda: [10.0, 0.0, -10.0, -20.0, -30.0])
    train_snr_db: float = 10.0
    # The noise-sweep model trains on waveforms whose SNR is drawn uniformly from this range
    # (null means the span of snr_grid_db).
    noise_train_snr_range_db: list[float] | None = None
    # Scale the noise model's KL by the training-set size rather than the batch count.
    noise_kl_per_sample: bool = True
    samples_per_class: int = 2000
    split_ratio: float = 0.7
    signal: SignalConfig = field(default_factory=SignalConfig)
    speed_jitter: float = 0.03
    # Relative per-waveform spread of harmonic/fault amplitudes (load and assembly variation).
    load_variation: float = 0.3
    window_len: int = 512
    hop: int = 256
    n_bands: int = 8
    hidden_layer_sizes: tuple[int, ...] = (32, 32)
    epochs: int = 150
    batch_size: int = 64
    learning_rate: float = 1e-3
    rho_init: float = -3.0
    prior_std: float = 1.0
    S_eval: int = 200
    master_seed: int = 0
    warm_start: bool = False

    def __post_init__(self):
        self.seen_classes = [FaultClass.parse(c) for c in self.seen_classes]
        self.unseen_classes = [FaultClass.parse(c) for c in self.unseen_classes]
        self.incremental_order = [FaultClass.parse(c) for c in self.incremental_order]
        self.snr_grid_db = [float(s) for s in self.snr_grid_db]
        self.hidden_layer_sizes = tuple(int(h) for h in self.hidden_layer_sizes)
        if isinstance(self.signal, dict):
            self.signal = SignalConfig(**self.signal)
        self.validate()

    def validate(self) -> None:
        if set(self.seen_classes) & set(self.unseen_classes):
            raise ConfigurationError("seen and unseen classes overlap")
        if len(set(self.seen_classes)) != len(self.seen_classes) or len(self.seen_classes) < 2:
            raise ConfigurationError("need at least two distinct seen classes")
        if set(self.seen_classes) & set(self.incremental_order):
            raise ConfigurationError("incremental classes must not already be seen")
        if len(set(self.incremental_order)) != len(self.incremental_order):
            raise ConfigurationError("incremental_order has duplicates")
        grid = self.snr_grid_db
        if not grid or any(b >= a for a, b in zip(grid[:-1], grid[1:])):
            raise ConfigurationError("snr_grid_db must be non-empty and strictly decreasing")
        if not 0 < self.split_ratio < 1:
            raise ConfigurationError("split_ratio must lie in (0, 1)")
        if self.samples_per_class < 4:
            raise ConfigurationError("samples_per_class must be at least 4")
        if self.S_eval < 2:
            raise ConfigurationError("S_eval must be at least 2")
        if not 0 <= self.speed_jitter < 0.1:
            raise ConfigurationError("speed_jitter must lie in [0, 0.1)")
        if self.window_len > self.signal.n_samples:
            raise ConfigurationError("window_len exceeds the waveform length")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("seen_classes", "unseen_classes", "incremental_order"):
            d[key] = [c.name for c in getattr(self, key)]
        d["signal"] = asdict(self.signal)
        d["signal"]["harmonic_amplitudes"] = list(self.signal.harmonic_amplitudes)
        d["hidden_layer_sizes"] = list(self.hidden_layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown plan keys: {sorted(unknown)}")
        return cls(**d)

    def bnn(self, stage: str, kl_per_sample: bool = False) -> BayesianMLPClassifier:
        return BayesianMLPClassifier(
            hidden_layer_sizes=self.hidden_layer_sizes, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, rho_init=self.rho_init, prior_std=self.prior_std,
            kl_per_sample=kl_per_sample, n_samples=self.S_eval,
            random_state=rng.derive_key(self.master_seed, "model", stage),
        )

    def baseline(self, stage: str) -> MLPBaselineClassifier:
        return MLPBaselineClassifier(
            hidden_layer_sizes=self.hidden_layer_sizes, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, random_state=rng.derive_key(self.master_seed, "model", stage),
        )


# --------------------------------------------------------------------------- data


@dataclass
class ClassData:
    """Clean waveforms of one class, split by waveform so overlapping windows never straddle splits."""

    fault: FaultClass
    train_waves: list[Waveform]
    test_waves: list[Waveform]


def operating_point(plan: ExperimentPlan, fault: FaultClass, index: int) -> tuple[SignalConfig, FaultSignature]:
    """Per-waveform signal config and fault signature: speed, phase and amplitude jitter."""
    seed = rng.derive_key(plan.master_seed, "wave", int(fault), index)
    base = plan.signal
    u = rng.uniforms(rng.derive_key(seed, "operating-point"), 6 + base.n_harmonics)
    spread = lambda v: 1.0 + plan.load_variation * (2.0 * v - 1.0)  # noqa: E731
    scale = 1.0 + plan.speed_jitter * (2.0 * u[0] - 1.0)
    config = base.with_(
        seed=seed,
        shaft_freq_hz=base.shaft_freq_hz * scale,
        gear_mesh_freq_hz=base.gear_mesh_freq_hz * scale,
        start_time_s=float(u[1]),
        harmonic_amplitudes=tuple(a * spread(v) for a, v in zip(base.harmonic_amplitudes, u[6:])),
    )
    sig = DEFAULT_SIGNATURES[fault]
    sig = replace(
        sig,
        impulse_amplitude=sig.impulse_amplitude * spread(u[2]),
        resonance_hz=sig.resonance_hz * (1.0 + 0.05 * (2.0 * u[3] - 1.0)),
        sideband_depth=min(1.0, sig.sideband_depth * spread(u[4])),
        broadband_gain=sig.broadband_gain * spread(u[5]),
        shaft_amplitude=sig.shaft_amplitude * spread(u[5]),
    )
    return config, sig


def windows_per_wave(plan: ExperimentPlan) -> int:
    return (plan.signal.n_samples - plan.window_len) // plan.hop + 1


def class_waveforms(plan: ExperimentPlan, fault: FaultClass) -> ClassData:
    per_wave = windows_per_wave(plan)
    n_train = int(round(plan.samples_per_class * plan.split_ratio))
    n_test = plan.samples_per_class - n_train
    n_train_waves = math.ceil(n_train / per_wave)
    n_test_waves = math.ceil(n_test / per_wave)
    waves = []
    for i in range(n_train_waves + n_test_waves):
        config, sig = operating_point(plan, fault, i)
        waves.append(generate_vibration(config, fault, {fault: sig}))
    for i, w in enumerate(waves):
        w.meta["index"] = i
    return ClassData(fault, waves[:n_train_waves], waves[n_train_waves:])


def featurize(plan: ExperimentPlan, waves: list[Waveform], n_windows: int, snr_db) -> Dataset:
    """Noise, gain-normalise, window and extract features; stops after ``n_windows`` rows.

    ``snr_db`` is one level for all waveforms, None for no added noise, or a
    ``(low, high)`` range from which each waveform draws its own level.
    """
    rows, ids, labels = [], [], []
    for w in waves:
        level = snr_db
        if isinstance(snr_db, tuple):
            u = rng.uniforms(rng.derive_key(w.seed, "snr-draw"), 1)[0]
            level = snr_db[0] + (snr_db[1] - snr_db[0]) * u
        noisy = inject_noise(w, level, rng.derive_key(w.seed, "snr", repr(snr_db)))
        segs = window(normalize_power(noisy), plan.window_len, plan.hop)[: n_windows - len(ids)]
        rows.append(extract_feature_matrix(segs, plan.signal.sample_rate_hz, plan.signal.gear_mesh_freq_hz,
                                           plan.n_bands))
        ids.extend(f"{w.fault.name}/w{w.meta['index']}/{j}" for j in range(len(segs)))
        labels.extend([int(w.fault)] * len(segs))
        if len(ids) >= n_windows:
            break
    names = {int(w.fault): w.fault.name for w in waves}
    return Dataset(np.vstack(rows), np.array(labels), names, feature_names=feature_names(plan.n_bands),
                   sample_ids=ids)


def generate_dataset(plan: ExperimentPlan, faults, windows_per_class: int, snr_db=None) -> Dataset:
    """Unscaled feature rows for ``faults``, drawn from the same waveforms a study would train on."""
    if windows_per_class < 1:
        raise ConfigurationError("windows_per_class must be positive")
    per_wave = windows_per_wave(plan)
    parts = []
    for fault in (FaultClass.parse(f) for f in faults):
        waves = []
        for i in range(math.ceil(windows_per_class / per_wave)):
            config, sig = operating_point(plan, fault, i)
            w = generate_vibration(config, fault, {fault: sig})
            w.meta["index"] = i
            waves.append(w)
        parts.append(featurize(plan, waves, windows_per_class, snr_db))
    return Dataset.concat(parts)


class DataBank:
    """Lazily generated, cached per-class waveforms and feature sets for one plan."""

    def __init__(self, plan: ExperimentPlan):
        self.plan = plan
        self._waves: dict[FaultClass, ClassData] = {}
        self._features: dict[tuple, Dataset] = {}

    def waves(self, fault: FaultClass) -> ClassData:
        if fault not in self._waves:
            self._waves[fault] = class_waveforms(self.plan, fault)
        return self._waves[fault]

    def split(self, fault: FaultClass, part: str, snr_db: float | None) -> Dataset:
        key = (fault, part, snr_db)
        if key not in self._features:
            data = self.waves(fault)
            n_train = int(round(self.plan.samples_per_class * self.plan.split_ratio))
            if part == "train":
                ds = featurize(self.plan, data.train_waves, n_train, snr_db)
            else:
                ds = featurize(self.plan, data.test_waves, self.plan.samples_per_class - n_train, snr_db)
            self._features[key] = ds
        return self._features[key]

    def train_set(self, classes, snr_db=None) -> Dataset:
        snr = self.plan.train_snr_db if snr_db is None else snr_db
        return Dataset.concat([self.split(c, "train", snr) for c in classes])

    def test_set(self, classes, snr_db=None) -> Dataset:
        snr = self.plan.train_snr_db if snr_db is None else snr_db
        return Dataset.concat([self.split(c, "test", snr) for c in classes])


# --------------------------------------------------------------------------- statistics


def five_number(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {"n": int(v.size), "min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
            "q3": float(q[3]), "max": float(q[4]), "mean": float(v.mean())}


def mann_whitney_greater(x, y) -> dict:
    """One-sided test that ``x`` tends to exceed ``y``."""
    res = stats.mannwhitneyu(np.asarray(x), np.asarray(y), alternative="greater")
    return {"u": float(res.statistic), "p": float(res.pvalue)}


@dataclass
class TrainedModel:
    name: str
    classes: list[FaultClass]
    scaler: Scaler
    bnn: BayesianMLPClassifier | None = None
    baseline: MLPBaselineClassifier | None = None

    def evaluate(self, ds: Dataset, plan: ExperimentPlan) -> dict[str, np.ndarray]:
        """Per-sample uncertainty arrays with labels mapped back to fault ids."""
        X = self.scaler.transform(ds.features)
        out = self.bnn.predict_uncertainty(X, n_samples=plan.S_eval,
                                           seed=rng.derive_key(plan.master_seed, "eval", self.name))
        out["predicted_label"] = self.bnn.classes_[out["predicted_class"]]
        return out


class Runner:
    """Runs studies for one plan, sharing generated data and trained models between them."""

    def __init__(self, plan: ExperimentPlan):
        self.plan = plan
        self.bank = DataBank(plan)
        self.models: dict[str, TrainedModel] = {}

    def train(self, name: str, classes, snr_db=None, with_baseline=False, warm_from: str | None = None):
        if name in self.models and (self.models[name].baseline is not None or not with_baseline):
            return self.models[name]
        t0 = time.perf_counter()
        train = self.bank.train_set(classes, snr_db)
        scaler = fit_standardizer(train)
        Xtr = apply_standardizer(train, scaler).features
        bnn = self.plan.bnn(name, kl_per_sample=self.plan.noise_kl_per_sample and name == NOISE_MODEL)
        init = None
        if warm_from is not None:
            init = _widen_output(self.models[warm_from].bnn, bnn, Xtr.shape[1], len(classes))
        bnn.fit(Xtr, train.labels, init_model=init)
        model = TrainedModel(name, list(classes), scaler, bnn)
        if with_baseline:
            model.baseline = self.plan.baseline(name).fit(Xtr, train.labels)
        log.info("trained %s on %s in %.1fs (train acc %.3f)", name, [c.name for c in classes],
                 time.perf_counter() - t0, bnn.loss_trace_.train_accuracy)
        self.models[name] = model
        return model

    def noise_range(self):
        if self.plan.noise_train_snr_range_db is None:
            return (min(self.plan.snr_grid_db), max(self.plan.snr_grid_db))
        lo, hi = self.plan.noise_train_snr_range_db
        return (float(lo), float(hi))

    def training_ids(self, name: str) -> set[str]:
        model = self.models[name]
        if name == NOISE_MODEL:
            ds = self.bank.train_set(model.classes, self.noise_range())
        else:
            ds = self.bank.train_set(model.classes)
        return set(ds.sample_ids)


BASE_MODEL = "BNN"
NOISE_MODEL = "BNN-noise"


def _widen_output(prev: BayesianMLPClassifier, fresh: BayesianMLPClassifier, n_features, n_classes):
    """Warm start: copy the previous posterior and append freshly initialised output rows."""
    model = prev.model_.copy()
    new = fresh.init_model(n_features, n_classes)
    last, new_last = model.layers[-1], new.layers[-1]
    k = last.out_dim
    new_last.mu[:k], new_last.rho[:k] = last.mu, last.rho
    new_last.bias_mu[:k], new_last.bias_rho[:k] = last.bias_mu, last.bias_rho
    model.layers[-1] = new_last
    return model


# --------------------------------------------------------------------------- results


@dataclass
class StudyResult:
    study: str
    summary: dict
    # Long-format rows (class, metric, value) for box plots.
    samples: list[tuple[str, str, float]] = field(default_factory=list, repr=False)
    checks: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"study": self.study, "summary": self.summary, "checks": self.checks}


def _sample_rows(rows, label, values):
    rows.extend((label[0], label[1], float(v)) for v in values)


def run_ood_comparison(plan: ExperimentPlan, runner: Runner | None = None) -> StudyResult:
    """Train on the seen classes; compare BNN and deterministic baseline on seen test data and unseen faults."""
    runner = runner or Runner(plan)
    model = runner.train(BASE_MODEL, plan.seen_classes, with_baseline=True)
    per_class: dict[str, dict] = {"bnn": {}, "deterministic": {}}
    rows: list = []
    seen_eu, unseen_eu, seen_hits, det_hits, n_seen = [], [], 0, 0, 0
    unseen_conf_bnn, unseen_conf_det = [], []
    class_names = [c.name for c in plan.seen_classes]
    for fault in [*plan.seen_classes, *plan.unseen_classes]:
        ds = runner.bank.split(fault, "test", plan.train_snr_db)
        unc = model.evaluate(ds, plan)
        det_probs = model.baseline.predict_proba(model.scaler.transform(ds.features))
        det_conf = det_probs.max(axis=1)
        det_pred = model.baseline.classes_[det_probs.argmax(axis=1)]
        is_seen = fault in plan.seen_classes
        bnn_entry = {
            "seen": is_seen,
            "confidence": five_number(unc["confidence"]),
            "pu": five_number(unc["pu"]),
            "au": five_number(unc["au"]),
            "eu": five_number(unc["eu"]),
            "eu_clamped": int(np.sum(unc["eu_clamped"])),
            "predicted_counts": {c.name: int(np.sum(unc["predicted_label"] == int(c))) for c in plan.seen_classes},
        }
        det_entry = {
            "seen": is_seen,
            "confidence": five_number(det_conf),
            "predicted_counts": {c.name: int(np.sum(det_pred == int(c))) for c in plan.seen_classes},
        }
        if is_seen:
            bnn_entry["accuracy"] = float(np.mean(unc["predicted_label"] == int(fault)))
            det_entry["accuracy"] = float(np.mean(det_pred == int(fault)))
            seen_hits += int(np.sum(unc["predicted_label"] == int(fault)))
            det_hits += int(np.sum(det_pred == int(fault)))
            n_seen += len(ds)
            seen_eu.append(unc["eu"])
        else:
            unseen_eu.append(unc["eu"])
            unseen_conf_bnn.append(unc["confidence"])
            unseen_conf_det.append(det_conf)
        per_class["bnn"][fault.name] = bnn_entry
        per_class["deterministic"][fault.name] = det_entry
        for metric in ("confidence", "pu", "au", "eu"):
            _sample_rows(rows, (fault.name, f"bnn_{metric}"), unc[metric])
        _sample_rows(rows, (fault.name, "deterministic_confidence"), det_conf)
        for j, cname in enumerate(class_names):
            _sample_rows(rows, (fault.name, f"bnn_prob[{cname}]"), unc["mean_probs"][:, j])
            _sample_rows(rows, (fault.name, f"deterministic_prob[{cname}]"), det_probs[:, j])

    seen_eu_all = np.concatenate(seen_eu)
    unseen_eu_all = np.concatenate(unseen_eu) if unseen_eu else np.array([])
    summary = {
        "seen_classes": class_names,
        "unseen_classes": [c.name for c in plan.unseen_classes],
        "bnn_seen_accuracy": seen_hits / n_seen,
        "deterministic_seen_accuracy": det_hits / n_seen,
        "per_class": per_class,
        "train_loss": runner.models[BASE_MODEL].bnn.loss_trace_.to_rows()[-1],
    }
    checks = {}
    if unseen_eu:
        mw = mann_whitney_greater(unseen_eu_all, seen_eu_all)
        bnn_conf = float(np.concatenate(unseen_conf_bnn).mean())
        det_conf = float(np.concatenate(unseen_conf_det).mean())
        checks = {
            "median_eu_unseen": float(np.median(unseen_eu_all)),
            "median_eu_seen": float(np.median(seen_eu_all)),
            "mann_whitney_eu_unseen_gt_seen": mw,
            "bnn_mean_confidence_unseen": bnn_conf,
            "deterministic_mean_confidence_unseen": det_conf,
            "seen_accuracy_ge_0.90": summary["bnn_seen_accuracy"] >= 0.90,
            "eu_separation_p_lt_0.01": mw["p"] < 0.01 and np.median(unseen_eu_all) > np.median(seen_eu_all),
            "deterministic_more_confident_on_unseen": det_conf > bnn_conf,
        }
    audit = runner.training_ids(BASE_MODEL)
    checks["unseen_in_training"] = sum(
        1 for c in plan.unseen_classes for sid in runner.bank.split(c, "test", plan.train_snr_db).sample_ids
        if sid in audit
    ) + sum(1 for sid in audit if sid.split("/")[0] in {c.name for c in plan.unseen_classes})
    return StudyResult("ood", summary, rows, checks)


def run_noise_sweep(plan: ExperimentPlan, runner: Runner | None = None) -> StudyResult:
    """Re-noise the seen-class test waveforms at every grid SNR and decompose the uncertainty."""
    runner = runner or Runner(plan)
    model = runner.train(NOISE_MODEL, plan.seen_classes, snr_db=runner.noise_range())
    levels, rows = [], []
    for snr in plan.snr_grid_db:
        ds = runner.bank.test_set(plan.seen_classes, snr)
        unc = model.evaluate(ds, plan)
        gap = float(np.max(np.abs(unc["pu"] - (unc["au"] + unc["eu"]))))
        q = np.quantile(unc["confidence"], [0.05, 0.25, 0.5, 0.75, 0.95])
        levels.append({
            "snr_db": snr,
            "accuracy": float(np.mean(unc["predicted_label"] == ds.labels)),
            "pu": {"mean": float(unc["pu"].mean()), "median": float(np.median(unc["pu"]))},
            "au": {"mean": float(unc["au"].mean()), "median": float(np.median(unc["au"]))},
            "eu": {"mean": float(unc["eu"].mean()), "median": float(np.median(unc["eu"]))},
            "confidence_quantiles": {"q05": q[0], "q25": q[1], "q50": q[2], "q75": q[3], "q95": q[4]},
            "au_gt_eu": bool(np.median(unc["au"]) > np.median(unc["eu"])),
            "max_abs_pu_minus_au_eu": gap,
            "eu_clamped": int(np.sum(unc["eu_clamped"])),
        })
        tag = f"{snr:+g}dB"
        for metric in ("pu", "au", "eu", "confidence"):
            _sample_rows(rows, (tag, f"bnn_{metric}"), unc[metric])
    neg_snr = [-lv["snr_db"] for lv in levels]
    rho_pu = float(stats.spearmanr(neg_snr, [lv["pu"]["median"] for lv in levels]).statistic)
    rho_au = float(stats.spearmanr(neg_snr, [lv["au"]["median"] for lv in levels]).statistic)
    lo, hi = runner.noise_range()
    summary = {
        "levels": levels,
        "training_snr_range_db": [lo, hi],
        "spearman_neg_snr_vs_median_pu": rho_pu,
        "spearman_neg_snr_vs_median_au": rho_au,
    }
    lowest = levels[-1]
    checks = {
        "spearman_pu_ge_0.9": rho_pu >= 0.9,
        "spearman_au_ge_0.9": rho_au >= 0.9,
        "au_gt_eu_at_lowest_snr": lowest["au_gt_eu"],
        "au_rises": lowest["au"]["median"] > levels[0]["au"]["median"],
        "decomposition_identity_max_gap": max(lv["max_abs_pu_minus_au_eu"] for lv in levels),
        "aleatoric_dominant_levels_le_-25db": [lv["snr_db"] for lv in levels if lv["snr_db"] <= -25 and lv["au_gt_eu"]],
    }
    return StudyResult("noise", summary, rows, checks)


def stage_names(plan: ExperimentPlan) -> list[str]:
    return [BASE_MODEL] + [f"{BASE_MODEL}-{k}" for k in range(2, len(plan.incremental_order) + 2)]


def run_incremental(plan: ExperimentPlan, runner: Runner | None = None) -> StudyResult:
    """Grow the seen set one class at a time, retraining a BNN per stage."""
    runner = runner or Runner(plan)
    names = stage_names(plan)
    all_classes = [*plan.seen_classes, *plan.incremental_order]
    stages, rows = [], []
    classes = list(plan.seen_classes)
    prev_pu: dict[str, float] = {}
    for k, name in enumerate(names):
        if k > 0:
            classes = classes + [plan.incremental_order[k - 1]]
        warm = names[k - 1] if (plan.warm_start and k > 0) else None
        model = runner.train(name, classes, with_baseline=(name == BASE_MODEL), warm_from=warm)
        per_class = {}
        for fault in all_classes:
            ds = runner.bank.split(fault, "test", plan.train_snr_db)
            unc = model.evaluate(ds, plan)
            entry = {
                "seen": fault in classes,
                "pu": five_number(unc["pu"]),
                "au": five_number(unc["au"]),
                "eu": five_number(unc["eu"]),
                "confidence": five_number(unc["confidence"]),
            }
            if fault in classes:
                entry["accuracy"] = float(np.mean(unc["predicted_label"] == int(fault)))
            per_class[fault.name] = entry
            for metric in ("pu", "eu", "confidence"):
                _sample_rows(rows, (fault.name, f"{name}_{metric}"), unc[metric])
        stage = {
            "name": name,
            "classes": [c.name for c in classes],
            "per_class": per_class,
            "macro_accuracy": float(np.mean([per_class[c.name]["accuracy"] for c in classes])),
        }
        if k > 0:
            added = plan.incremental_order[k - 1]
            before = prev_pu[added.name]
            after = per_class[added.name]["pu"]["median"]
            stage["added_class"] = added.name
            stage["added_accuracy"] = per_class[added.name]["accuracy"]
            stage["added_median_pu_before"] = before
            stage["added_median_pu_after"] = after
        prev_pu = {c: v["pu"]["median"] for c, v in per_class.items()}
        stages.append(stage)
    checks = {
        "class_sets_grow_by_one": all(
            len(b["classes"]) == len(a["classes"]) + 1 for a, b in zip(stages[:-1], stages[1:])
        ),
        "added_accuracy_ge_0.85": all(s["added_accuracy"] >= 0.85 for s in stages[1:]),
        "added_median_pu_decreases": all(
            s["added_median_pu_after"] < s["added_median_pu_before"] for s in stages[1:]
        ),
        "final_macro_accuracy": stages[-1]["macro_accuracy"],
        "final_macro_accuracy_ge_0.85": stages[-1]["macro_accuracy"] >= 0.85,
    }
    return StudyResult("incremental", {"stages": stages}, rows, checks)


STUDIES = {"ood": run_ood_comparison, "noise": run_noise_sweep, "incremental": run_incremental}


# --------------------------------------------------------------------------- output


def _dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, FaultClass):
        return obj.name
    return obj


def write_boxplot_csv(path: Path, results: list[StudyResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["experiment", "class", "metric", "value"])
        for res in results:
            for cls, metric, value in res.samples:
                writer.writerow([res.study, cls, metric, repr(value)])


def run_experiments(plan: ExperimentPlan, which: str, out_dir: str | Path) -> dict[str, StudyResult]:
    """Run ``which`` (ood, noise, incremental or all) and write one directory per study.

    Each directory holds plan.json, results.json, boxplot_data.csv and
    checkpoints/<model>.json; ``all`` also writes a combined boxplot_data.csv.
    """
    from uabnn.bnn.checkpoint import Checkpoint, save_checkpoint

    if which == "all":
        names = list(STUDIES)
    elif which in STUDIES:
        names = [which]
    else:
        raise ConfigurationError(f"unknown experiment {which!r}; choose from {sorted(STUDIES)} or 'all'")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runner = Runner(plan)
    results: dict[str, StudyResult] = {}
    for name in names:
        t0 = time.perf_counter()
        before = set(runner.models)
        res = STUDIES[name](plan, runner)
        log.info("%s study finished in %.1fs", name, time.perf_counter() - t0)
        results[name] = res
        sub = out / name
        (sub / "checkpoints").mkdir(parents=True, exist_ok=True)
        (sub / "plan.json").write_text(_dumps(plan.to_dict()), encoding="utf-8")
        (sub / "results.json").write_text(_dumps(res.to_json()), encoding="utf-8")
        write_boxplot_csv(sub / "boxplot_data.csv", [res])
        used = {"ood": [BASE_MODEL], "noise": [NOISE_MODEL], "incremental": stage_names(plan)}[name]
        for model_name in used:
            m = runner.models[model_name]
            class_names = {int(c): c.name for c in m.classes}
            m.bnn.save(sub / "checkpoints" / f"{model_name}.json", scaler=m.scaler, class_names=class_names)
            if m.baseline is not None:
                m.baseline.save(sub / "checkpoints" / f"{model_name}-deterministic.json", scaler=m.scaler,
                                class_names=class_names)
        del before
    if which == "all":
        (out / "plan.json").write_text(_dumps(plan.to_dict()), encoding="utf-8")
        write_boxplot_csv(out / "boxplot_data.csv", list(results.values()))
    return results
