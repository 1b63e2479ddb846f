"""Bayes-by-Backprop and plain backprop training loops."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from uabnn import rng as rng_mod
from uabnn.bnn.core import (
    BnnModel,
    DeterministicMlp,
    draw_eps,
    forward_sample,
    loss_and_grad,
    deterministic_loss_and_grad,
    kl_model,
)
from uabnn.exceptions import ConfigurationError, ContractViolation, TrainingDivergedError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    mc_train_samples: int = 1
    # "uniform": each of the M minibatches gets KL weight 1/M; "beta": each gets kl_beta.
    kl_weight_mode: str = "uniform"
    kl_beta: float = 1.0
    # True divides the KL term by the training-set size (per-datapoint ELBO scale).
    kl_per_sample: bool = False
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("epochs", "batch_size", "mc_train_samples"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value}")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigurationError("learning_rate must be finite and non-negative")
        if self.kl_weight_mode not in ("uniform", "beta"):
            raise ConfigurationError(f"kl_weight_mode must be 'uniform' or 'beta', got {self.kl_weight_mode!r}")
        if self.kl_beta < 0:
            raise ConfigurationError("kl_beta must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class LossTrace:
    elbo: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)
    nll: list[float] = field(default_factory=list)
    kl_weights: list[float] = field(default_factory=list)  # schedule of the last epoch
    train_accuracy: float | None = None

    def to_rows(self) -> list[dict]:
        return [
            {"epoch": i + 1, "elbo": e, "kl": k, "nll": n}
            for i, (e, k, n) in enumerate(zip(self.elbo, self.kl, self.nll))
        ]


def kl_schedule(num_batches: int, config: TrainConfig) -> np.ndarray:
    if config.kl_weight_mode == "uniform":
        return np.full(num_batches, 1.0 / num_batches)
    return np.full(num_batches, float(config.kl_beta))


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Sgd:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


def make_optimizer(params, config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    return Sgd(params, config.learning_rate)


def _batches(n: int, batch_size: int, gen: np.random.Generator):
    order = gen.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _check_labels(X, y, n_classes):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ContractViolation("X must be N x D with one label per row")
    if X.shape[0] == 0:
        raise ContractViolation("training set is empty")
    if y.min() < 0 or y.max() >= n_classes:
        raise ContractViolation(f"labels must be class indices in [0, {n_classes})")
    return X, y


def _unpack(train, n_classes):
    # Accept either a Dataset or an (X, y) pair.
    if hasattr(train, "features"):
        if n_classes != train.n_classes:
            raise ContractViolation(
                f"model has {n_classes} outputs but the dataset names {train.n_classes} classes"
            )
        return _check_labels(train.features, train.labels, n_classes)
    X, y = train
    return _check_labels(X, y, n_classes)


def train_bbb(model: BnnModel, train, config: TrainConfig) -> tuple[BnnModel, LossTrace]:
    """Fit the variational posterior by minimising the minibatch ELBO.

    Per minibatch ``i`` the objective is ``pi_i * KL / n_scale + NLL`` where
    ``pi_i`` comes from :func:`kl_schedule` and ``n_scale`` is the training
    set size (or 1 with ``kl_per_sample=False``).  Shuffling and eps draws use
    separate seeded streams, so the shuffle order matches
    :func:`train_deterministic` for the same seed.
    """
    model = model.copy()
    X, y = _unpack(train, model.class_count)
    n = X.shape[0]
    shuffle_rng = rng_mod.numpy_generator(config.seed, "shuffle")
    eps_rng = rng_mod.numpy_generator(config.seed, "eps")
    params = model.params()
    opt = make_optimizer(params, config)
    n_scale = n if config.kl_per_sample else 1
    trace = LossTrace()

    for epoch in range(1, config.epochs + 1):
        batches = _batches(n, config.batch_size, shuffle_rng)
        weights = kl_schedule(len(batches), config)
        sums = np.zeros(2)
        for b, (idx, pi) in enumerate(zip(batches, weights), start=1):
            draws = [draw_eps(model, eps_rng) for _ in range(config.mc_train_samples)]
            value, parts, grads = loss_and_grad(model, X[idx], y[idx], draws, pi / n_scale)
            if not math.isfinite(value):
                raise TrainingDivergedError("non-finite ELBO", epoch, b)
            sums += (parts["nll"], pi * parts["kl"])
            opt.step([g for lg in grads for g in lg.as_list()])
        kl_end = kl_model(model)
        trace.nll.append(float(sums[0] / len(batches)))
        trace.kl.append(kl_end)
        # Epoch ELBO on the per-sample scale: mean NLL + (sum of applied weights) * KL / n.
        trace.elbo.append(float(sums[0] / len(batches) + sums[1] / n_scale))
        trace.kl_weights = weights.tolist()
        log.debug("epoch %d elbo=%.5f nll=%.5f kl=%.2f", epoch, trace.elbo[-1], trace.nll[-1], kl_end)

    preds = np.argmax(forward_sample(model, X), axis=1)
    trace.train_accuracy = float(np.mean(preds == y))
    return model, trace


def train_deterministic(mlp: DeterministicMlp, train, config: TrainConfig) -> tuple[DeterministicMlp, LossTrace]:
    """Standard backprop on the mean NLL; same shuffle stream as :func:`train_bbb`."""
    mlp = mlp.copy()
    X, y = _unpack(train, mlp.class_count)
    n = X.shape[0]
    shuffle_rng = rng_mod.numpy_generator(config.seed, "shuffle")
    opt = make_optimizer(mlp.params(), config)
    trace = LossTrace()
    for epoch in range(1, config.epochs + 1):
        batches = _batches(n, config.batch_size, shuffle_rng)
        total = 0.0
        for b, idx in enumerate(batches, start=1):
            value, grads = deterministic_loss_and_grad(mlp, X[idx], y[idx])
            if not math.isfinite(value):
                raise TrainingDivergedError("non-finite loss", epoch, b)
            total += value
            opt.step(grads)
        trace.nll.append(total / len(batches))
        trace.elbo.append(total / len(batches))
        trace.kl.append(0.0)
    trace.train_accuracy = float(np.mean(np.argmax(mlp.logits(X), axis=1) == y))
    return mlp, trace
