"""JSON checkpoints.

Arrays are nested row-major lists of JSON numbers.  Python writes floats with
their shortest round-tripping decimal form, so loading restores every double
bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from uabnn.bnn.core import BnnModel, DeterministicMlp, GaussianPrior, VariationalLinear
from uabnn.bnn.training import TrainConfig
from uabnn.exceptions import ParseError
from uabnn.features import Scaler

FORMAT = "uabnn-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    model: BnnModel | DeterministicMlp
    classes: list[int]
    class_names: dict[int, str] = field(default_factory=dict)
    scaler: Scaler | None = None
    train_config: TrainConfig | None = None

    @property
    def kind(self) -> str:
        return "bnn" if isinstance(self.model, BnnModel) else "deterministic"

    def to_dict(self) -> dict:
        m = self.model
        if isinstance(m, BnnModel):
            dims = [m.input_dim] + [layer.out_dim for layer in m.layers]
            layers = [
                {"mu": l.mu.tolist(), "rho": l.rho.tolist(), "bias_mu": l.bias_mu.tolist(),
                 "bias_rho": l.bias_rho.tolist()}
                for l in m.layers
            ]
            prior = {"mean": m.prior.mean, "std": m.prior.std}
        else:
            dims = [m.input_dim] + [w.shape[0] for w in m.weights]
            layers = [{"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(m.weights, m.biases)]
            prior = None
        return {
            "format": FORMAT,
            "version": VERSION,
            "kind": self.kind,
            "architecture": {"dims": dims, "activation": m.activation},
            "layers": layers,
            "prior": prior,
            "classes": [int(c) for c in self.classes],
            "class_names": {str(k): v for k, v in sorted(self.class_names.items())},
            "scaler": self.scaler.to_dict() if self.scaler is not None else None,
            "train_config": self.train_config.to_dict() if self.train_config is not None else None,
            "seed": self.train_config.seed if self.train_config is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != FORMAT:
            raise ParseError(f"not a {FORMAT} document")
        activation = d["architecture"]["activation"]
        if d["kind"] == "bnn":
            layers = [VariationalLinear(l["mu"], l["rho"], l["bias_mu"], l["bias_rho"]) for l in d["layers"]]
            model = BnnModel(layers, activation, GaussianPrior(**d["prior"]))
        elif d["kind"] == "deterministic":
            model = DeterministicMlp([l["weight"] for l in d["layers"]], [l["bias"] for l in d["layers"]],
                                     activation)
        else:
            raise ParseError(f"unknown checkpoint kind {d['kind']!r}")
        dims = d["architecture"]["dims"]
        if dims[0] != model.input_dim or dims[-1] != model.class_count:
            raise ParseError("architecture dims disagree with layer shapes")
        return cls(
            model=model,
            classes=list(d["classes"]),
            class_names={int(k): v for k, v in d.get("class_names", {}).items()},
            scaler=Scaler.from_dict(d["scaler"]) if d.get("scaler") else None,
            train_config=TrainConfig.from_dict(d["train_config"]) if d.get("train_config") else None,
        )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(ckpt.to_dict(), allow_nan=False) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}", line=exc.lineno) from None
    try:
        return Checkpoint.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed checkpoint: {exc}") from None


