"""Uncertainty-aware Bayesian neural networks for gear fault diagnosis."""

from uabnn.signal import FaultClass, SignalConfig, Waveform, generate_vibration, inject_noise
from uabnn.features import Dataset, Scaler, VibrationFeatureExtractor, Standardizer
from uabnn.estimators import BayesianMLPClassifier, MLPBaselineClassifier
from uabnn.uncertainty import UncertaintyReport, decompose, entropy, predict_mc

__all__ = [
    "FaultClass",
    "SignalConfig",
    "Waveform",
    "generate_vibration",
    "inject_noise",
    "Dataset",
    "Scaler",
    "VibrationFeatureExtractor",
    "Standardizer",
    "BayesianMLPClassifier",
    "MLPBaselineClassifier",
    "UncertaintyReport",
    "decompose",
    "entropy",
    "predict_mc",
]

__version__ = "0.1.0"
