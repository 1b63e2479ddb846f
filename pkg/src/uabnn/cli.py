"""Command-line entry point: ``uabnn gen-data | train | predict | experiment``.

Configuration precedence, lowest to highest: built-in defaults, the JSON
file given with ``--config``, the ``UABNN_SEED`` environment variable, then
command-line flags.  A master seed, from any of those sources, replaces the
seeds of the signal, train and plan sections.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from uabnn import __version__
from uabnn.bnn.checkpoint import load_checkpoint
from uabnn.bnn.training import TrainConfig
from uabnn.estimators import BayesianMLPClassifier, MLPBaselineClassifier
from uabnn.exceptions import ConfigurationError, ParseError
from uabnn.experiments import STUDIES, ExperimentPlan, generate_dataset, run_experiments
from uabnn.features import apply_standardizer, dataset_from_csv, dataset_to_csv, fit_standardizer
from uabnn.signal import FaultClass, SignalConfig
from uabnn.uncertainty import DEFAULT_SAMPLES, reports_from_array, sample_probs

log = logging.getLogger("uabnn")

SEED_ENV = "UABNN_SEED"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
LN2 = math.log(2.0)
CLEAN = "none"
LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass
class ModelConfig:
    hidden_layer_sizes: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    prior_mean: float = 0.0
    prior_std: float = 1.0
    rho_init: float = -3.0
    n_samples: int = DEFAULT_SAMPLES

    def __post_init__(self):
        self.hidden_layer_sizes = tuple(int(h) for h in self.hidden_layer_sizes)
        if any(h < 1 for h in self.hidden_layer_sizes):
            raise ConfigurationError("hidden_layer_sizes must be positive")
        if self.n_samples < 2:
            raise ConfigurationError("n_samples must be at least 2")


@dataclass
class RunConfig:
    """Everything a command can be configured with, as one JSON document.

    The plan section carries every experiment field except ``signal``; the
    top-level signal section is shared by data generation and the plan.
    """

    signal: SignalConfig = field(default_factory=SignalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    plan: ExperimentPlan = field(default_factory=ExperimentPlan)
    seed: int | None = None
    output_dir: str = "."
    verbosity: str = "INFO"

    def __post_init__(self):
        self.plan = replace(self.plan, signal=self.signal)
        if self.seed is not None:
            self.apply_seed(self.seed)
        if self.verbosity.upper() not in LEVELS:
            raise ConfigurationError(f"unknown verbosity {self.verbosity!r}")

    def apply_seed(self, seed) -> None:
        try:
            seed = int(seed)
        except (TypeError, ValueError):
            raise ConfigurationError(f"seed must be an integer, got {seed!r}") from None
        if not 0 <= seed < 2**64:
            raise ConfigurationError("seed must fit in an unsigned 64-bit integer")
        self.seed = seed
        self.signal = self.signal.with_(seed=seed)
        self.train = replace(self.train, seed=seed)
        self.plan = replace(self.plan, signal=self.signal, master_seed=seed)

    def to_dict(self) -> dict:
        plan = self.plan.to_dict()
        del plan["signal"]
        signal = asdict(self.signal)
        signal["harmonic_amplitudes"] = list(self.signal.harmonic_amplitudes)
        model = asdict(self.model)
        model["hidden_layer_sizes"] = list(self.model.hidden_layer_sizes)
        return {
            "signal": signal,
            "train": self.train.to_dict(),
            "model": model,
            "plan": plan,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "verbosity": self.verbosity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        _reject_unknown("config", d, {f.name for f in fields(cls)})
        sections = {"signal": SignalConfig, "train": TrainConfig, "model": ModelConfig}
        kwargs = {}
        for name, typ in sections.items():
            if name in d:
                _reject_unknown(name, d[name], {f.name for f in fields(typ)})
                kwargs[name] = _build(typ, d[name])
        if "plan" in d:
            _reject_unknown("plan", d["plan"], set(ExperimentPlan.__dataclass_fields__) - {"signal"})
            kwargs["plan"] = _build(ExperimentPlan, d["plan"])
        for key in ("seed", "output_dir", "verbosity"):
            if key in d:
                kwargs[key] = d[key]
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(doc)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _reject_unknown(section: str, d, known: set[str]) -> None:
    if not isinstance(d, dict):
        raise ConfigurationError(f"{section} section must be a JSON object")
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown {section} keys: {sorted(unknown)}")


def _build(typ, d: dict):
    d = dict(d)
    if typ is SignalConfig and "harmonic_amplitudes" in d:
        d["harmonic_amplitudes"] = tuple(d["harmonic_amplitudes"])
    try:
        return typ(**d)
    except TypeError as exc:
        raise ConfigurationError(f"bad {typ.__name__} values: {exc}") from None


# --------------------------------------------------------------------------- commands


def _snr_arg(text: str):
    if text.lower() in ("none", "clean", "inf"):
        return CLEAN
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number or 'none': {text!r}") from None
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError("SNR must be finite (use 'none' for no added noise)")
    return value


def cmd_gen_data(cfg: RunConfig, args) -> int:
    faults = [FaultClass.parse(f) for f in args.faults.split(",") if f.strip()]
    if not faults:
        raise ConfigurationError("no fault classes given")
    snr = {None: cfg.plan.train_snr_db, CLEAN: None}.get(args.snr_db, args.snr_db)
    ds = generate_dataset(cfg.plan, faults, args.windows_per_class, snr)
    csv_path, manifest = dataset_to_csv(ds, _out_path(cfg, args.out))
    counts = {ds.class_names[c]: int(np.sum(ds.labels == c)) for c in sorted(ds.class_names)}
    print(json.dumps({"rows": len(ds), "classes": counts, "csv": str(csv_path), "manifest": str(manifest)}))
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    ds = dataset_from_csv(args.dataset)
    scaler = fit_standardizer(ds)
    X = apply_standardizer(ds, scaler).features
    t, m = cfg.train, cfg.model
    common = dict(hidden_layer_sizes=m.hidden_layer_sizes, activation=m.activation, epochs=t.epochs,
                  batch_size=t.batch_size, learning_rate=t.learning_rate, optimizer=t.optimizer,
                  random_state=t.seed)
    if args.deterministic:
        est = MLPBaselineClassifier(**common)
    else:
        est = BayesianMLPClassifier(
            **common, mc_train_samples=t.mc_train_samples, kl_weight_mode=t.kl_weight_mode, kl_beta=t.kl_beta,
            kl_per_sample=t.kl_per_sample, prior_mean=m.prior_mean, prior_std=m.prior_std, rho_init=m.rho_init,
            n_samples=m.n_samples,
        )
    est.fit(X, ds.labels)
    names = {int(c): ds.class_names[int(c)] for c in est.classes_}
    ckpt = est.save(_out_path(cfg, args.out), scaler=scaler, class_names=names)
    trace = est.loss_trace_
    trace_path = _out_path(cfg, args.loss_trace) if args.loss_trace else ckpt.with_suffix(".loss.csv")
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "elbo", "kl", "nll"], lineterminator="\n")
        writer.writeheader()
        writer.writerows({k: repr(v) for k, v in row.items()} for row in trace.to_rows())
    print(json.dumps({"checkpoint": str(ckpt), "loss_trace": str(trace_path), "rows": len(ds),
                      "train_accuracy": trace.train_accuracy}))
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = dataset_from_csv(args.dataset)
    X = ds.features if ckpt.scaler is None else ckpt.scaler.transform(ds.features)
    if X.shape[1] != ckpt.model.input_dim:
        raise ParseError(f"dataset has {X.shape[1]} features, checkpoint expects {ckpt.model.input_dim}")
    S = cfg.model.n_samples if args.samples is None else args.samples
    if S < 2:
        raise ConfigurationError("--samples must be at least 2")
    seed = cfg.train.seed if args.seed is None else args.seed
    reports = reports_from_array(sample_probs(ckpt.model, X, S, seed))
    scale = 1.0 / LN2 if args.units == "bits" else 1.0
    classes = np.asarray(ckpt.classes)
    out = sys.stdout if args.out in (None, "-") else open(_out_path(cfg, args.out), "w", encoding="utf-8")
    try:
        for i, rep in enumerate(reports):
            row = rep.to_json()
            for key in ("pu", "au", "eu"):
                row[key] *= scale
            row["row"] = i
            row["predicted_label"] = int(classes[rep.predicted_class])
            row["units"] = args.units
            out.write(json.dumps(row, allow_nan=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, args) -> int:
    if args.which != "all" and args.which not in STUDIES:
        raise ConfigurationError(f"unknown experiment {args.which!r}; choose from {sorted(STUDIES)} or all")
    out = _out_path(cfg, args.out_dir) if args.out_dir else Path(cfg.output_dir)
    results = run_experiments(cfg.plan, args.which, out)
    summary = {name: res.to_json()["checks"] for name, res in results.items()}
    print(json.dumps({"out_dir": str(out), "checks": summary}, default=_jsonable, sort_keys=True))
    return EXIT_OK


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _out_path(cfg: RunConfig, path: str) -> Path:
    p = Path(path)
    if not p.is_absolute():
        p = Path(cfg.output_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uabnn",
        description="Synthetic gearbox data, Bayes-by-Backprop training and uncertainty reports.",
        epilog=f"Precedence: defaults < --config file < ${SEED_ENV} < flags. "
               "Exit codes: 0 ok, 1 runtime/I-O error, 2 usage/config error.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, help=f"master seed (overrides the config file and ${SEED_ENV})")
    common.add_argument("--output-dir", metavar="DIR", help="base directory for relative output paths")
    common.add_argument("--save-config", metavar="PATH", help="write the effective configuration and continue")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true", help="only log errors")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a labelled feature CSV and manifest")
    p.add_argument("--faults", default=",".join(c.name for c in ExperimentPlan().seen_classes),
                   help="comma-separated fault classes (names or ids)")
    p.add_argument("--windows-per-class", type=int, default=100, help="feature rows per class")
    p.add_argument("--snr-db", type=_snr_arg,
                   help="added-noise SNR in dB, or 'none' (default: plan.train_snr_db)")
    p.add_argument("--out", default="dataset.csv", help="CSV path; the manifest goes next to it")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a BNN (or baseline MLP) on a dataset CSV")
    p.add_argument("dataset", help="feature CSV written by gen-data")
    p.add_argument("--out", default="model.json", help="checkpoint path")
    p.add_argument("--loss-trace", metavar="PATH", help="loss trace CSV (default: <checkpoint>.loss.csv)")
    p.add_argument("--deterministic", action="store_true", help="train the point-estimate MLP instead")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--hidden", type=lambda s: tuple(int(h) for h in s.split(",")), metavar="H1,H2",
                   help="hidden layer widths")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="emit one uncertainty report per dataset row (JSON lines)")
    p.add_argument("checkpoint", help="checkpoint written by train")
    p.add_argument("dataset", help="feature CSV to score")
    p.add_argument("--samples", "-S", type=int, help=f"Monte-Carlo draws (default {DEFAULT_SAMPLES})")
    p.add_argument("--prediction-seed", dest="seed", type=int, help="seed of the weight draws")
    p.add_argument("--units", choices=("nats", "bits"), default="nats", help="entropy units")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", parents=[common], help="run the OOD, noise and incremental studies")
    p.add_argument("which", help="ood, noise, incremental or all")
    p.add_argument("--plan", metavar="PATH", help="experiment plan JSON (a bare plan or its plan.json)")
    p.add_argument("--out-dir", help="results directory (default: output_dir)")
    p.set_defaults(func=cmd_experiment)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "plan", None):
        doc = _load_plan(args.plan)
        signal = doc.pop("signal", None)
        if signal is not None:
            cfg.signal = _build(SignalConfig, signal)
        cfg.plan = _build(ExperimentPlan, {**doc, "signal": cfg.signal})
        if cfg.seed is not None:
            cfg.apply_seed(cfg.seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        cfg.apply_seed(env)
    if args.seed is not None:
        cfg.apply_seed(args.seed)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.verbose:
        cfg.verbosity = "DEBUG"
    elif args.quiet:
        cfg.verbosity = "ERROR"
    if args.command == "train":
        overrides = {k: getattr(args, k) for k in ("epochs", "batch_size", "learning_rate")
                     if getattr(args, k) is not None}
        if overrides:
            cfg.train = replace(cfg.train, **overrides)
        if args.hidden:
            cfg.model = replace(cfg.model, hidden_layer_sizes=args.hidden)
    return cfg


def _load_plan(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read plan {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError("plan must be a JSON object")
    _reject_unknown("plan", doc, set(ExperimentPlan.__dataclass_fields__))
    return doc



def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
    except ConfigurationError as exc:
        print(f"uabnn: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=cfg.verbosity.upper(), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    try:
        if args.save_config:
            cfg.save(_out_path(cfg, args.save_config))
        return args.func(cfg, args)
    except ConfigurationError as exc:
        print(f"uabnn: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_RUNTIME
    except (OSError, ParseError) as exc:
        print(f"uabnn: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError) as exc:
        print(f"uabnn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
