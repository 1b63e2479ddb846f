"""Synthetic gearbox vibration signals.

A healthy gearbox is modelled as a sum of gear-mesh harmonics plus a Gaussian
floor.  Faults add one or more of:

* periodic impulses (one per shaft revolution by default), each a decaying
  ringing of a structural resonance -- tooth faults;
* amplitude modulation of the mesh harmonics at the shaft frequency plus a
  once-per-revolution component -- eccentricity;
* extra broadband noise -- surface wear.

All random parts come from :mod:`uabnn.rng` counter streams indexed by sample
number, so a waveform is reproducible from ``(config, fault)`` alone.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from uabnn import rng
from uabnn.exceptions import ConfigurationError, DegenerateInputError


class FaultClass(enum.IntEnum):
    NoFault = 0
    MissingTooth = 1
    ChippedTooth = 2
    RootCrack = 3
    SurfaceWear = 4
    Eccentricity = 5

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def parse(cls, name: "str | int | FaultClass") -> "FaultClass":
        """Accept an id, an enum member name or a display name (case/space insensitive)."""
        if isinstance(name, FaultClass):
            return name
        if isinstance(name, (int, np.integer)) and not isinstance(name, bool):
            try:
                return cls(int(name))
            except ValueError:
                raise ConfigurationError(f"unknown fault id {name}; valid ids are 0..{len(cls) - 1}") from None
        key = str(name).replace(" ", "").replace("_", "").lower()
        for member in cls:
            if key in (member.name.lower(), member.display_name.replace(" ", "").lower()):
                return member
        valid = ", ".join(m.name for m in cls)
        raise ConfigurationError(f"unknown fault class {name!r}; valid names: {valid}")


_DISPLAY_NAMES = {
    FaultClass.NoFault: "No Fault",
    FaultClass.MissingTooth: "Missing Tooth",
    FaultClass.ChippedTooth: "Chipped Tooth",
    FaultClass.RootCrack: "Root Crack",
    FaultClass.SurfaceWear: "Surface Wear",
    FaultClass.Eccentricity: "Eccentricity",
}


@dataclass(frozen=True)
class SignalConfig:
    sample_rate_hz: float = 5000.0
    duration_s: float = 2.0
    shaft_freq_hz: float = 25.0
    gear_mesh_freq_hz: float = 300.0
    n_harmonics: int = 4
    harmonic_amplitudes: tuple[float, ...] = (1.0, 0.5, 0.3, 0.2)
    base_noise_std: float = 0.05
    seed: int = 0
    # Time of the first sample; shifting it changes the phase of every component.
    start_time_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "harmonic_amplitudes", tuple(float(a) for a in self.harmonic_amplitudes))
        self.validate()

    def validate(self) -> None:
        reals = {
            "sample_rate_hz": self.sample_rate_hz,
            "duration_s": self.duration_s,
            "shaft_freq_hz": self.shaft_freq_hz,
            "gear_mesh_freq_hz": self.gear_mesh_freq_hz,
            "base_noise_std": self.base_noise_std,
            "start_time_s": self.start_time_s,
        }
        for name, value in reals.items():
            if not math.isfinite(value):
                raise ConfigurationError(f"{name} must be finite, got {value}")
        for name in ("sample_rate_hz", "duration_s", "shaft_freq_hz", "gear_mesh_freq_hz"):
            if reals[name] <= 0:
                raise ConfigurationError(f"{name} must be positive, got {reals[name]}")
        if self.base_noise_std < 0:
            raise ConfigurationError("base_noise_std must be non-negative")
        if int(self.n_harmonics) != self.n_harmonics or self.n_harmonics < 1:
            raise ConfigurationError("n_harmonics must be a positive integer")
        if len(self.harmonic_amplitudes) != self.n_harmonics:
            raise ConfigurationError(
                f"harmonic_amplitudes has {len(self.harmonic_amplitudes)} entries, expected {self.n_harmonics}"
            )
        if any(not math.isfinite(a) or a < 0 for a in self.harmonic_amplitudes):
            raise ConfigurationError("harmonic_amplitudes must be finite and non-negative")
        if self.gear_mesh_freq_hz * self.n_harmonics >= self.sample_rate_hz / 2:
            raise ConfigurationError(
                f"highest mesh harmonic {self.gear_mesh_freq_hz * self.n_harmonics} Hz "
                f"is not below Nyquist ({self.sample_rate_hz / 2} Hz)"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def with_(self, **changes) -> "SignalConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class FaultSignature:
    impulse_amplitude: float = 0.0
    impulses_per_rev: float = 1.0
    sideband_depth: float = 0.0
    broadband_gain: float = 0.0
    resonance_hz: float = 1500.0
    impulse_decay_s: float = 0.004
    shaft_amplitude: float = 0.0
    # Multiplies the mesh harmonic amplitudes (tooth damage changes meshing stiffness);
    # empty means unchanged.
    harmonic_gains: tuple[float, ...] = ()

    def impulse_period_s(self, shaft_freq_hz: float) -> float:
        return 1.0 / (shaft_freq_hz * self.impulses_per_rev)


DEFAULT_SIGNATURES: dict[FaultClass, FaultSignature] = {
    FaultClass.NoFault: FaultSignature(),
    FaultClass.MissingTooth: FaultSignature(
        impulse_amplitude=2.0, resonance_hz=1500.0, impulse_decay_s=0.004, harmonic_gains=(0.4, 2.0, 1.0, 1.0)
    ),
    FaultClass.ChippedTooth: FaultSignature(
        impulse_amplitude=1.2, resonance_hz=2100.0, impulse_decay_s=0.003, harmonic_gains=(0.5, 0.6, 3.0, 1.0)
    ),
    FaultClass.RootCrack: FaultSignature(
        impulse_amplitude=1.5, resonance_hz=900.0, impulse_decay_s=0.005, sideband_depth=0.2
    ),
    FaultClass.SurfaceWear: FaultSignature(broadband_gain=0.6),
    FaultClass.Eccentricity: FaultSignature(sideband_depth=0.8, shaft_amplitude=1.0),
}


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: float
    fault: FaultClass | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform samples must be finite")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def power(self) -> float:
        return float(np.mean(self.samples**2)) if self.samples.size else 0.0

    def csv_name(self) -> str:
        fault = self.fault.name if self.fault is not None else "Unknown"
        return f"{fault}_seed{self.seed if self.seed is not None else 0}.csv"

    def to_csv(self, directory: str | Path) -> Path:
        """Write a single ``accel`` column; the file name embeds fault class and seed."""
        path = Path(directory) / self.csv_name()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["accel"])
            writer.writerows([repr(float(v))] for v in self.samples)
        return path

    @classmethod
    def from_csv(cls, path: str | Path, sample_rate_hz: float) -> "Waveform":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["accel"]:
                raise ValueError(f"{path}: expected header 'accel'")
            values = [float(row[0]) for row in reader if row]
        return cls(np.array(values), sample_rate_hz)


def _time_axis(config: SignalConfig) -> np.ndarray:
    return config.start_time_s + np.arange(config.n_samples) / config.sample_rate_hz


def harmonic_sum(config: SignalConfig, gains: tuple[float, ...] = ()) -> np.ndarray:
    """Noise-free gear-mesh harmonic content; ``gains`` rescales individual harmonics."""
    t = _time_axis(config)
    out = np.zeros_like(t)
    for k, amp in enumerate(config.harmonic_amplitudes, start=1):
        if k <= len(gains):
            amp = amp * gains[k - 1]
        out += amp * np.sin(2.0 * np.pi * k * config.gear_mesh_freq_hz * t)
    return out


def _impulse_train(t: np.ndarray, sig: FaultSignature, shaft_freq_hz: float) -> np.ndarray:
    period = sig.impulse_period_s(shaft_freq_hz)
    since = np.mod(t, period)
    out = np.zeros_like(t)
    # Earlier impulses still ringing; beyond 12 decay constants they are below 1e-5.
    n_tail = int(math.ceil(12 * sig.impulse_decay_s / period))
    for m in range(n_tail + 1):
        dt = since + m * period
        out += np.exp(-dt / sig.impulse_decay_s) * np.sin(2.0 * np.pi * sig.resonance_hz * dt)
    return sig.impulse_amplitude * out


def generate_vibration(
    config: SignalConfig,
    fault: FaultClass | str | int,
    signatures: dict[FaultClass, FaultSignature] | None = None,
) -> Waveform:
    """Generate one accelerometer channel for ``fault`` under ``config``."""
    config.validate()
    fault = FaultClass.parse(fault)
    sig = (signatures or DEFAULT_SIGNATURES)[fault]
    nyquist = config.sample_rate_hz / 2
    if sig.impulse_amplitude > 0 and not 0 < sig.resonance_hz < nyquist:
        raise ConfigurationError(f"resonance {sig.resonance_hz} Hz of {fault.name} is not below Nyquist")
    if not 0 <= sig.sideband_depth <= 1:
        raise ConfigurationError("sideband_depth must lie in [0, 1]")

    t = _time_axis(config)
    samples = harmonic_sum(config, sig.harmonic_gains)
    if sig.sideband_depth > 0:
        samples = samples * (1.0 + sig.sideband_depth * np.cos(2.0 * np.pi * config.shaft_freq_hz * t))
    if sig.shaft_amplitude > 0:
        samples = samples + sig.shaft_amplitude * np.sin(2.0 * np.pi * config.shaft_freq_hz * t)
    if sig.impulse_amplitude > 0:
        samples = samples + _impulse_train(t, sig, config.shaft_freq_hz)
    if sig.broadband_gain > 0:
        key = rng.derive_key(config.seed, "broadband")
        samples = samples + sig.broadband_gain * rng.normals(key, t.size)
    if config.base_noise_std > 0:
        key = rng.derive_key(config.seed, "floor")
        samples = samples + config.base_noise_std * rng.normals(key, t.size)
    return Waveform(samples, config.sample_rate_hz, fault=fault, seed=config.seed)


def inject_noise(w: Waveform, snr_db: float | None, seed: int) -> Waveform:
    """Add white Gaussian noise at ``snr_db`` relative to the power of ``w``.

    ``snr_db=None`` means no noise and returns a copy.  SNR is
    ``10 log10(P_signal / P_noise)`` with power the mean squared sample.
    """
    if snr_db is None:
        return Waveform(w.samples.copy(), w.sample_rate_hz, w.fault, w.seed, dict(w.meta))
    snr_db = float(snr_db)
    if not math.isfinite(snr_db):
        raise ConfigurationError("snr_db must be finite; pass None for a noise-free copy")
    if len(w) == 0:
        raise DegenerateInputError("cannot add noise to an empty waveform")
    power = w.power
    if power == 0.0:
        raise DegenerateInputError("signal power is zero, SNR is undefined")
    noise_std = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    noise = noise_std * rng.normals(rng.derive_key(seed, "noise"), len(w))
    meta = dict(w.meta, snr_db=snr_db)
    return Waveform(w.samples + noise, w.sample_rate_hz, w.fault, w.seed, meta)


def normalize_power(w: Waveform) -> Waveform:
    """Scale to unit mean-square amplitude (sensor gain normalisation)."""
    power = w.power
    if power == 0.0:
        raise DegenerateInputError("cannot normalise a zero-power waveform")
    return Waveform(w.samples / math.sqrt(power), w.sample_rate_hz, w.fault, w.seed, dict(w.meta))
