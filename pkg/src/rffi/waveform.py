"""Ideal LoRa preamble synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LoRaConfig:
    sf: int = 7
    bandwidth_hz: float = 125_000.0
    sample_rate_hz: float = 250_000.0
    n_preamble_symbols: int = 8
    amplitude: float = 1.0

    def __post_init__(self):
        if not 7 <= self.sf <= 12:
            raise ValueError(f"spreading factor must be in [7, 12], got {self.sf}")
        if self.n_preamble_symbols < 1:
            raise ValueError("n_preamble_symbols must be >= 1")
        if self.bandwidth_hz <= 0 or self.sample_rate_hz < self.bandwidth_hz:
            raise ValueError("sample_rate_hz must be >= bandwidth_hz > 0")
        ratio = self.sample_rate_hz / self.bandwidth_hz
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"sample_rate_hz / bandwidth_hz must be an integer, got {ratio}"
            )

    @property
    def oversampling(self) -> int:
        return int(round(self.sample_rate_hz / self.bandwidth_hz))

    @property
    def symbol_len(self) -> int:
        """Samples per chirp symbol."""
        return (2**self.sf) * self.oversampling


@dataclass
class ComplexSignal:
    """Complex baseband samples with their sample rate."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def sample_period(self) -> float:
        return 1.0 / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "ComplexSignal":
        return ComplexSignal(samples, self.sample_rate_hz)


def symbol_duration(config: LoRaConfig) -> float:
    """Chirp duration in seconds, 2**sf / bandwidth."""
    return (2**config.sf) / config.bandwidth_hz


def samples_per_preamble(config: LoRaConfig) -> int:
    return config.n_preamble_symbols * config.symbol_len


def upchirp(config: LoRaConfig) -> np.ndarray:
    """One up-chirp sweeping -B/2 to +B/2, sampled at t_n = n / fs."""
    bw = config.bandwidth_hz
    duration = symbol_duration(config)
    t = np.arange(config.symbol_len) / config.sample_rate_hz
    phase = -np.pi * bw * t + np.pi * (bw / duration) * t**2
    return config.amplitude * np.exp(1j * phase)


def synth_preamble(config: LoRaConfig) -> ComplexSignal:
    # time restarts at every symbol boundary, so the preamble is an exact tiling
    samples = np.tile(upchirp(config), config.n_preamble_symbols)
    return ComplexSignal(samples, config.sample_rate_hz)
