"""Monte-Carlo predictive inference and entropy-based uncertainty decomposition.

For S softmax draws ``p_s`` of one input:

* total (PU)      = H(mean_s p_s)
* aleatoric (AU)  = mean_s H(p_s)
* epistemic (EU)  = PU - AU, the mutual information between label and weights

All quantities are in nats; divide by ln 2 for bits.  EU values at or
below ``EU_ROUNDOFF`` (negative ones included) are set to 0 and flagged in
``eu_clamped``; PU is then rebuilt as AU + EU so the identity is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from uabnn import rng
from uabnn.bnn.core import BnnModel, DeterministicMlp, _as_batch, _forward, sample_bias, sample_weights, softmax
from uabnn.exceptions import ContractViolation

DEFAULT_SAMPLES = 200
# |PU - AU| at or below this is entropy round-off, not model disagreement.
EU_ROUNDOFF = 1e-12


@dataclass
class PredictiveDistribution:
    probs: np.ndarray  # S x C

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ContractViolation("probs must be an S x C matrix")
        if self.sample_count < 2:
            raise ContractViolation("need at least 2 Monte-Carlo samples")
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ContractViolation("probabilities must lie in [0, 1]")
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-9):
            raise ContractViolation("every sample row must sum to 1")

    @property
    def sample_count(self) -> int:
        return self.probs.shape[0]

    @property
    def class_count(self) -> int:
        return self.probs.shape[1]


@dataclass
class UncertaintyReport:
    pu: float
    au: float
    eu: float
    mean_probs: np.ndarray
    predicted_class: int
    confidence: float
    eu_clamped: bool = False

    def to_json(self) -> dict:
        return {
            "pu": self.pu,
            "au": self.au,
            "eu": self.eu,
            "mean_probs": [float(p) for p in self.mean_probs],
            "predicted_class": int(self.predicted_class),
            "confidence": self.confidence,
            "eu_clamped": self.eu_clamped,
        }


def _entropy_last_axis(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=-1)


def entropy(p) -> float:
    """Shannon entropy in nats with ``0 ln 0 = 0``, clipped to ``[0, ln C]``."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ContractViolation("entropy expects a non-empty probability vector")
    if np.any(p < 0):
        raise ContractViolation("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ContractViolation(f"probabilities must sum to 1, got {p.sum()}")
    return float(np.clip(_entropy_last_axis(p), 0.0, math.log(p.size)))


def decompose_array(probs: np.ndarray) -> dict[str, np.ndarray]:
    """Vectorised decomposition of an S x N x C stack of softmax draws."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[0] < 2:
        raise ContractViolation("expected an S x N x C array with S >= 2")
    log_c = math.log(probs.shape[2])
    mean_probs = probs.mean(axis=0)
    pu_raw = np.clip(_entropy_last_axis(mean_probs), 0.0, log_c)
    au = np.clip(_entropy_last_axis(probs), 0.0, log_c).mean(axis=0)
    eu = pu_raw - au
    clamped = eu <= EU_ROUNDOFF
    eu = np.where(clamped, 0.0, eu)
    # Rebuild PU from its parts so PU == AU + EU holds exactly in floating point.
    pu = au + eu
    pred = np.argmax(mean_probs, axis=1)  # first index wins ties
    conf = mean_probs[np.arange(pred.size), pred]
    return {
        "pu": pu, "au": au, "eu": eu, "eu_raw": pu_raw - au, "eu_clamped": clamped,
        "mean_probs": mean_probs, "predicted_class": pred, "confidence": conf,
    }


def decompose(pd: PredictiveDistribution) -> UncertaintyReport:
    out = decompose_array(pd.probs[:, None, :])
    return _report(out, 0)


def reports_from_array(probs: np.ndarray) -> list[UncertaintyReport]:
    out = decompose_array(probs)
    return [_report(out, i) for i in range(probs.shape[1])]


def _report(out, i) -> UncertaintyReport:
    return UncertaintyReport(
        pu=float(out["pu"][i]),
        au=float(out["au"][i]),
        eu=float(out["eu"][i]),
        mean_probs=out["mean_probs"][i],
        predicted_class=int(out["predicted_class"][i]),
        confidence=float(out["confidence"][i]),
        eu_clamped=bool(out["eu_clamped"][i]),
    )


def draw_eps_counter(model: BnnModel, seed: int, draw: int):
    """Eps for MC draw ``draw``; keyed by (seed, draw, layer) so draws are order-independent."""
    out = []
    for l, layer in enumerate(model.layers):
        ew = rng.normals(rng.derive_key(seed, "mc", draw, l, "w"), layer.mu.size).reshape(layer.mu.shape)
        eb = rng.normals(rng.derive_key(seed, "mc", draw, l, "b"), layer.bias_mu.size)
        out.append((ew, eb))
    return out


def sample_probs(model: BnnModel | DeterministicMlp, X, S: int = DEFAULT_SAMPLES, seed: int = 0) -> np.ndarray:
    """S x N x C softmax draws for a batch; every input sees the same S weight draws."""
    if S < 2:
        raise ContractViolation("S must be at least 2")
    if isinstance(model, DeterministicMlp):
        p = model.predict_proba(X)
        return np.broadcast_to(p, (S, *p.shape)).copy()
    X = _as_batch(X, model.input_dim)
    if not all(np.all(np.isfinite(p)) for p in model.params()):
        raise ContractViolation("model parameters are not finite")
    out = np.empty((S, X.shape[0], model.class_count))
    for s in range(S):
        eps = draw_eps_counter(model, seed, s)
        Ws = [sample_weights(layer, ew) for layer, (ew, _) in zip(model.layers, eps)]
        bs = [sample_bias(layer, eb) for layer, (_, eb) in zip(model.layers, eps)]
        out[s] = softmax(_forward(Ws, bs, X, model.activation)[0])
    return out


def predict_mc(model: BnnModel, x, S: int = DEFAULT_SAMPLES, seed: int = 0) -> PredictiveDistribution:
    """S weight draws and one forward pass each for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractViolation("predict_mc takes one feature vector; use sample_probs for batches")
    return PredictiveDistribution(sample_probs(model, x, S, seed)[:, 0, :])


def ood_score(report: UncertaintyReport, metric: str = "epistemic") -> float:
    """Higher means more out-of-distribution."""
    if metric == "epistemic":
        return report.eu
    if metric == "total":
        return report.pu
    raise ValueError(f"metric must be 'epistemic' or 'total', got {metric!r}")
