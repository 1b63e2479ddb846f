"""scikit-learn style classifiers wrapping the BNN and its deterministic baseline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from uabnn import rng
from uabnn.bnn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from uabnn.bnn.core import BnnModel, DeterministicMlp, GaussianPrior
from uabnn.bnn.training import TrainConfig, train_bbb, train_deterministic
from uabnn.uncertainty import DEFAULT_SAMPLES, decompose_array, reports_from_array, sample_probs


class _MLPBase(ClassifierMixin, BaseEstimator):
    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            seed=self.random_state,
            **self._extra_train_kwargs(),
        )

    def _extra_train_kwargs(self) -> dict:
        return {}

    def _prepare(self, X, y):
        X, y = validate_data(self, X, y)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes to fit a classifier, got 1 class")
        return X, y_idx

    def _init_rng(self):
        return rng.numpy_generator(self.random_state, "init")

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def save(self, path, scaler=None, class_names=None):
        check_is_fitted(self, "model_")
        ckpt = Checkpoint(self.model_, self.classes_.tolist(), class_names or {}, scaler, self._train_config())
        return save_checkpoint(ckpt, path)


class BayesianMLPClassifier(_MLPBase):
    """Bayes-by-Backprop MLP classifier.

    ``predict_proba`` averages ``n_samples`` Monte-Carlo softmax draws;
    ``predict_uncertainty`` additionally returns the total / aleatoric /
    epistemic split per input.
    """

    def __init__(
        self,
        hidden_layer_sizes=(32, 32),
        activation="relu",
        epochs=60,
        batch_size=64,
        learning_rate=1e-3,
        optimizer="adam",
        mc_train_samples=1,
        kl_weight_mode="uniform",
        kl_beta=1.0,
        kl_per_sample=False,
        prior_mean=0.0,
        prior_std=1.0,
        rho_init=-3.0,
        n_samples=DEFAULT_SAMPLES,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.mc_train_samples = mc_train_samples
        self.kl_weight_mode = kl_weight_mode
        self.kl_beta = kl_beta
        self.kl_per_sample = kl_per_sample
        self.prior_mean = prior_mean
        self.prior_std = prior_std
        self.rho_init = rho_init
        self.n_samples = n_samples
        self.random_state = random_state

    def _extra_train_kwargs(self):
        return {
            "mc_train_samples": self.mc_train_samples,
            "kl_weight_mode": self.kl_weight_mode,
            "kl_beta": self.kl_beta,
            "kl_per_sample": self.kl_per_sample,
        }

    def init_model(self, n_features: int, n_classes: int) -> BnnModel:
        return BnnModel.init(
            n_features, tuple(self.hidden_layer_sizes), n_classes, self._init_rng(),
            rho_init=self.rho_init, activation=self.activation,
            prior=GaussianPrior(self.prior_mean, self.prior_std),
        )

    def fit(self, X, y, init_model: BnnModel | None = None):
        """Train from a fresh initialisation, or warm-start from ``init_model``."""
        X, y_idx = self._prepare(X, y)
        model = init_model if init_model is not None else self.init_model(X.shape[1], self.classes_.size)
        self.model_, self.loss_trace_ = train_bbb(model, (X, y_idx), self._train_config())
        return self

    def sample_proba(self, X, n_samples=None, seed=None):
        """S x N x C Monte-Carlo softmax draws."""
        check_is_fitted(self, "model_")
        X = validate_data(self, X, reset=False)
        S = self.n_samples if n_samples is None else n_samples
        return sample_probs(self.model_, X, S, self.random_state if seed is None else seed)

    def predict_proba(self, X):
        return self.sample_proba(X).mean(axis=0)

    def predict(self, X):
        # argmax of the MC mean, same draws as predict_uncertainty
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def predict_uncertainty(self, X, n_samples=None, seed=None, as_reports=False):
        """Per-input uncertainty; a dict of arrays, or UncertaintyReport objects."""
        probs = self.sample_proba(X, n_samples, seed)
        if as_reports:
            return reports_from_array(probs)
        return decompose_array(probs)

    @classmethod
    def from_checkpoint(cls, path):
        ckpt = path if isinstance(path, Checkpoint) else load_checkpoint(path)
        if ckpt.kind != "bnn":
            raise ValueError("checkpoint does not hold a Bayesian model")
        cfg = ckpt.train_config or TrainConfig()
        model = ckpt.model
        est = cls(
            hidden_layer_sizes=tuple(layer.out_dim for layer in model.layers[:-1]),
            activation=model.activation, epochs=cfg.epochs, batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate, optimizer=cfg.optimizer, mc_train_samples=cfg.mc_train_samples,
            kl_weight_mode=cfg.kl_weight_mode, kl_beta=cfg.kl_beta, kl_per_sample=cfg.kl_per_sample, prior_mean=model.prior.mean,
            prior_std=model.prior.std, random_state=cfg.seed,
        )
        est.model_ = model
        est.classes_ = np.asarray(ckpt.classes)
        est.n_features_in_ = model.input_dim
        return est


class MLPBaselineClassifier(_MLPBase):
    """Point-estimate MLP trained by plain backprop; shares initialisation and shuffling with the BNN."""

    def __init__(
        self,
        hidden_layer_sizes=(32, 32),
        activation="relu",
        epochs=60,
        batch_size=64,
        learning_rate=1e-3,
        optimizer="adam",
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.random_state = random_state

    def init_model(self, n_features: int, n_classes: int) -> DeterministicMlp:
        return DeterministicMlp.init(
            n_features, tuple(self.hidden_layer_sizes), n_classes, self._init_rng(), activation=self.activation
        )

    def fit(self, X, y, init_model: DeterministicMlp | None = None):
        X, y_idx = self._prepare(X, y)
        model = init_model if init_model is not None else self.init_model(X.shape[1], self.classes_.size)
        self.model_, self.loss_trace_ = train_deterministic(model, (X, y_idx), self._train_config())
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, reset=False)
        return self.model_.predict_proba(X)

    @classmethod
    def from_checkpoint(cls, path):
        ckpt = path if isinstance(path, Checkpoint) else load_checkpoint(path)
        if ckpt.kind != "deterministic":
            raise ValueError("checkpoint does not hold a deterministic model")
        cfg = ckpt.train_config or TrainConfig()
        model = ckpt.model
        est = cls(
            hidden_layer_sizes=tuple(w.shape[0] for w in model.weights[:-1]), activation=model.activation,
            epochs=cfg.epochs, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
            optimizer=cfg.optimizer, random_state=cfg.seed,
        )
        est.model_ = model
        est.classes_ = np.asarray(ckpt.classes)
        est.n_features_in_ = model.input_dim
        return est
