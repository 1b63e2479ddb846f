"""Variational layers, the forward pass, losses and their gradients.

Weights are stored out x in.  A layer's posterior is a fully factorised
Gaussian with ``sigma = softplus(rho)``; a weight sample is
``w = mu + sigma * eps`` for standard-normal ``eps``.  Gradients are
pathwise: the loss is differentiated through ``w`` back to ``(mu, rho)``
with ``eps`` held fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from uabnn.exceptions import ConfigurationError, ContractViolation

LOG_FLOOR = 1e-12

# (eps_w, eps_b) per layer; a full draw is one of these per layer.
LayerEps = tuple[np.ndarray, np.ndarray]


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


_ACTIVATIONS = {
    "relu": (lambda a: np.maximum(a, 0.0), lambda a: (a > 0).astype(np.float64)),
    "tanh": (np.tanh, lambda a: 1.0 - np.tanh(a) ** 2),
    "identity": (lambda a: a, lambda a: np.ones_like(a)),
}


def _activation(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ConfigurationError(f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}") from None


@dataclass
class VariationalLinear:
    mu: np.ndarray
    rho: np.ndarray
    bias_mu: np.ndarray
    bias_rho: np.ndarray

    def __post_init__(self):
        for name in ("mu", "rho", "bias_mu", "bias_rho"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.mu.ndim != 2 or self.mu.shape != self.rho.shape:
            raise ContractViolation("mu and rho must be equal-shaped out x in matrices")
        if self.bias_mu.shape != (self.mu.shape[0],) or self.bias_rho.shape != self.bias_mu.shape:
            raise ContractViolation("bias_mu and bias_rho must have one entry per output unit")

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, rho_init: float = -3.0):
        bound = 1.0 / math.sqrt(n_in)
        return cls(
            mu=rng.uniform(-bound, bound, size=(n_out, n_in)),
            rho=np.full((n_out, n_in), float(rho_init)),
            bias_mu=np.zeros(n_out),
            bias_rho=np.full(n_out, float(rho_init)),
        )

    @property
    def in_dim(self) -> int:
        return self.mu.shape[1]

    @property
    def out_dim(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.rho)

    @property
    def bias_sigma(self) -> np.ndarray:
        return softplus(self.bias_rho)

    def params(self) -> list[np.ndarray]:
        return [self.mu, self.rho, self.bias_mu, self.bias_rho]

    def copy(self) -> "VariationalLinear":
        return VariationalLinear(*(p.copy() for p in self.params()))


@dataclass(frozen=True)
class GaussianPrior:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.std) and self.std > 0):
            raise ConfigurationError("prior std must be positive and finite")


@dataclass
class BnnModel:
    layers: list[VariationalLinear]
    activation: str = "relu"
    prior: GaussianPrior = field(default_factory=GaussianPrior)

    def __post_init__(self):
        _activation(self.activation)
        _check_chain([layer.mu.shape for layer in self.layers])

    @classmethod
    def init(cls, input_dim: int, hidden: Sequence[int], n_classes: int, seed_rng: np.random.Generator,
             rho_init: float = -3.0, activation: str = "relu", prior: GaussianPrior | None = None):
        dims = [input_dim, *hidden, n_classes]
        layers = [VariationalLinear.init(a, b, seed_rng, rho_init) for a, b in zip(dims[:-1], dims[1:])]
        return cls(layers, activation, prior or GaussianPrior())

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def class_count(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def copy(self) -> "BnnModel":
        return BnnModel([layer.copy() for layer in self.layers], self.activation, self.prior)

    def mean_network(self) -> "DeterministicMlp":
        return DeterministicMlp(
            [layer.mu.copy() for layer in self.layers],
            [layer.bias_mu.copy() for layer in self.layers],
            self.activation,
        )


@dataclass
class DeterministicMlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        _activation(self.activation)
        _check_chain([w.shape for w in self.weights])
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[0],):
                raise ContractViolation("bias length must equal layer output dimension")

    @classmethod
    def init(cls, input_dim: int, hidden: Sequence[int], n_classes: int, seed_rng: np.random.Generator,
             activation: str = "relu"):
        # Same draw order as BnnModel.init so both start from identical means.
        dims = [input_dim, *hidden, n_classes]
        weights, biases = [], []
        for a, b in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(a)
            weights.append(seed_rng.uniform(-bound, bound, size=(b, a)))
            biases.append(np.zeros(b))
        return cls(weights, biases, activation)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def class_count(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "DeterministicMlp":
        return DeterministicMlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def logits(self, X) -> np.ndarray:
        return _forward(self.weights, self.biases, _as_batch(X, self.input_dim), self.activation)[0]

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))


def _check_chain(shapes) -> None:
    if not shapes:
        raise ContractViolation("a network needs at least one layer")
    for (out_a, _), (_, in_b) in zip(shapes[:-1], shapes[1:]):
        if out_a != in_b:
            raise ContractViolation(f"layer dims do not chain: {shapes}")
    if shapes[-1][0] < 2:
        raise ContractViolation("class count must be at least 2")
    if shapes[0][1] < 1:
        raise ContractViolation("input dim must be at least 1")


def _as_batch(X, input_dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != input_dim:
        raise ContractViolation(f"expected inputs with {input_dim} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ContractViolation("inputs must be finite")
    return X


def sample_weights(layer: VariationalLinear, eps: np.ndarray) -> np.ndarray:
    """``mu + softplus(rho) * eps`` for the weight matrix."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != layer.mu.shape:
        raise ContractViolation(f"eps shape {eps.shape} does not match weight shape {layer.mu.shape}")
    return layer.mu + layer.sigma * eps


def sample_bias(layer: VariationalLinear, eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != layer.bias_mu.shape:
        raise ContractViolation(f"eps shape {eps.shape} does not match bias shape {layer.bias_mu.shape}")
    return layer.bias_mu + layer.bias_sigma * eps


def zero_eps(model: BnnModel) -> list[LayerEps]:
    return [(np.zeros_like(layer.mu), np.zeros_like(layer.bias_mu)) for layer in model.layers]


def draw_eps(model: BnnModel, rng: np.random.Generator) -> list[LayerEps]:
    return [(rng.standard_normal(layer.mu.shape), rng.standard_normal(layer.bias_mu.shape)) for layer in model.layers]


def _sampled_params(model: BnnModel, eps_all: Sequence[LayerEps] | None):
    if eps_all is None:
        return [layer.mu for layer in model.layers], [layer.bias_mu for layer in model.layers]
    if len(eps_all) != len(model.layers):
        raise ContractViolation("need one (eps_w, eps_b) pair per layer")
    Ws = [sample_weights(layer, ew) for layer, (ew, _) in zip(model.layers, eps_all)]
    bs = [sample_bias(layer, eb) for layer, (_, eb) in zip(model.layers, eps_all)]
    return Ws, bs


def _forward(Ws, bs, X, activation):
    """Return logits plus the per-layer (input, pre-activation) cache for backprop."""
    act, _ = _activation(activation)
    cache = []
    h = X
    last = len(Ws) - 1
    for i, (W, b) in enumerate(zip(Ws, bs)):
        a = h @ W.T + b
        cache.append((h, a))
        h = a if i == last else act(a)
    return h, cache


def _backprop(Ws, cache, d_logits, activation):
    """Gradients of a scalar loss w.r.t. each W and b given dL/dlogits."""
    _, dact = _activation(activation)
    dWs, dbs = [None] * len(Ws), [None] * len(Ws)
    delta = d_logits
    for i in range(len(Ws) - 1, -1, -1):
        h_in, _ = cache[i]
        dWs[i] = delta.T @ h_in
        dbs[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ Ws[i]) * dact(cache[i - 1][1])
    return dWs, dbs


def forward_sample(model: BnnModel, x, eps_all: Sequence[LayerEps] | None = None) -> np.ndarray:
    """Logits for one weight draw; ``eps_all=None`` uses the posterior means.

    ``x`` may be a single feature vector (returns C logits) or an N x D batch.
    """
    single = np.ndim(x) == 1
    X = _as_batch(x, model.input_dim)
    Ws, bs = _sampled_params(model, eps_all)
    logits, _ = _forward(Ws, bs, X, model.activation)
    return logits[0] if single else logits


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ContractViolation("logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def nll_loss(probs, labels) -> float:
    """Mean negative log of the true-class probability, log floored at 1e-12."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels)
    if labels.shape != (probs.shape[0],):
        raise ContractViolation("need one label per probability row")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ContractViolation(f"labels must lie in [0, {probs.shape[1]})")
    p_true = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(p_true, LOG_FLOOR))))


def _kl_terms(mu, sigma, prior: GaussianPrior) -> float:
    var_ratio = (sigma**2 + (mu - prior.mean) ** 2) / (2.0 * prior.std**2)
    return float(np.sum(np.log(prior.std / sigma) + var_ratio - 0.5))


def kl_layer(layer: VariationalLinear, prior: GaussianPrior) -> float:
    """Closed-form KL(q || prior) summed over all weights and biases of ``layer``."""
    return _kl_terms(layer.mu, layer.sigma, prior) + _kl_terms(layer.bias_mu, layer.bias_sigma, prior)


def kl_model(model: BnnModel) -> float:
    return sum(kl_layer(layer, model.prior) for layer in model.layers)


def _normalise_draws(model: BnnModel, eps_draws) -> list[list[LayerEps]]:
    if eps_draws is None:
        return [zero_eps(model)]
    eps_draws = list(eps_draws)
    # A single draw (list of per-layer pairs) is accepted as well as a list of draws.
    if eps_draws and isinstance(eps_draws[0], tuple) and isinstance(eps_draws[0][0], np.ndarray):
        return [eps_draws]
    if not eps_draws:
        raise ContractViolation("need at least one eps draw")
    return eps_draws


def elbo_loss(model: BnnModel, X, y, eps_draws=None, kl_weight: float = 0.0) -> tuple[float, dict]:
    """``kl_weight * KL + NLL`` with NLL averaged over the given eps draws.

    Returns the scalar and a breakdown ``{"elbo", "kl", "nll"}``.
    """
    if kl_weight < 0:
        raise ContractViolation("kl_weight must be non-negative")
    X = _as_batch(X, model.input_dim)
    draws = _normalise_draws(model, eps_draws)
    nll = 0.0
    for eps_all in draws:
        Ws, bs = _sampled_params(model, eps_all)
        logits, _ = _forward(Ws, bs, X, model.activation)
        nll += nll_loss(softmax(logits), y)
    nll /= len(draws)
    kl = kl_model(model)
    elbo = kl_weight * kl + nll
    return elbo, {"elbo": elbo, "kl": kl, "nll": nll}


@dataclass
class LayerGrads:
    mu: np.ndarray
    rho: np.ndarray
    bias_mu: np.ndarray
    bias_rho: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        return [self.mu, self.rho, self.bias_mu, self.bias_rho]


def _nll_logit_grad(logits, y, n_draws):
    probs = softmax(logits)
    n = y.size
    rows = np.arange(n)
    d = probs.copy()
    d[rows, y] -= 1.0
    # The log floor is flat below 1e-12, so clamped rows contribute no gradient.
    d[probs[rows, y] < LOG_FLOOR] = 0.0
    return probs, d / (n * n_draws)


def loss_and_grad(model: BnnModel, X, y, eps_draws=None, kl_weight: float = 0.0):
    """ELBO value, breakdown, and pathwise gradients for every layer parameter."""
    if kl_weight < 0:
        raise ContractViolation("kl_weight must be non-negative")
    X = _as_batch(X, model.input_dim)
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= model.class_count):
        raise ContractViolation(f"labels must lie in [0, {model.class_count})")
    draws = _normalise_draws(model, eps_draws)
    grads = [LayerGrads(*(np.zeros_like(p) for p in layer.params())) for layer in model.layers]
    sig_w = [expit(layer.rho) for layer in model.layers]
    sig_b = [expit(layer.bias_rho) for layer in model.layers]

    nll = 0.0
    for eps_all in draws:
        Ws, bs = _sampled_params(model, eps_all)
        logits, cache = _forward(Ws, bs, X, model.activation)
        probs, d_logits = _nll_logit_grad(logits, y, len(draws))
        nll += nll_loss(probs, y)
        dWs, dbs = _backprop(Ws, cache, d_logits, model.activation)
        for g, (ew, eb), dW, db, sw, sb in zip(grads, eps_all, dWs, dbs, sig_w, sig_b):
            g.mu += dW
            g.rho += dW * ew * sw
            g.bias_mu += db
            g.bias_rho += db * eb * sb
    nll /= len(draws)

    kl = kl_model(model)
    if kl_weight > 0:
        prior = model.prior
        inv_var = 1.0 / prior.std**2
        for g, layer, sw, sb in zip(grads, model.layers, sig_w, sig_b):
            s, bsg = layer.sigma, layer.bias_sigma
            g.mu += kl_weight * (layer.mu - prior.mean) * inv_var
            g.bias_mu += kl_weight * (layer.bias_mu - prior.mean) * inv_var
            g.rho += kl_weight * (s * inv_var - 1.0 / s) * sw
            g.bias_rho += kl_weight * (bsg * inv_var - 1.0 / bsg) * sb
    elbo = kl_weight * kl + nll
    return elbo, {"elbo": elbo, "kl": kl, "nll": nll}, grads


def backward(model: BnnModel, X, y, eps_draws=None, kl_weight: float = 0.0) -> list[LayerGrads]:
    return loss_and_grad(model, X, y, eps_draws, kl_weight)[2]


def deterministic_loss_and_grad(mlp: DeterministicMlp, X, y):
    X = _as_batch(X, mlp.input_dim)
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= mlp.class_count):
        raise ContractViolation(f"labels must lie in [0, {mlp.class_count})")
    logits, cache = _forward(mlp.weights, mlp.biases, X, mlp.activation)
    probs, d_logits = _nll_logit_grad(logits, y, 1)
    dWs, dbs = _backprop(mlp.weights, cache, d_logits, mlp.activation)
    return nll_loss(probs, y), [g for pair in zip(dWs, dbs) for g in pair]
