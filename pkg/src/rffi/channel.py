"""Propagation: static multipath and SNR-calibrated AWGN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rffi.waveform import ComplexSignal

NOISELESS = "noiseless"


def rms(x: np.ndarray, axis=None) -> np.ndarray:
    return np.sqrt(np.mean(np.abs(x) ** 2, axis=axis))


@dataclass(frozen=True)
class ChannelSpec:
    taps: tuple = (1.0 + 0j,)
    snr_db: float | str = NOISELESS

    def __post_init__(self):
        taps = tuple(complex(t) for t in self.taps)
        if not taps:
            raise ValueError("channel needs at least one tap")
        if taps[0] == 0:
            raise ValueError("first channel tap must be nonzero")
        object.__setattr__(self, "taps", taps)
        if self.snr_db != NOISELESS and not np.isfinite(float(self.snr_db)):
            raise ValueError(f"snr_db must be finite or {NOISELESS!r}")

    def to_dict(self) -> dict:
        return {"taps": [[t.real, t.imag] for t in self.taps], "snr_db": self.snr_db}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSpec":
        return cls(taps=tuple(complex(re, im) for re, im in d["taps"]), snr_db=d["snr_db"])


def apply_multipath(signal: ComplexSignal, taps) -> ComplexSignal:
    """Linear convolution with ``taps``, truncated to the input length."""
    h = np.asarray(taps, dtype=np.complex128)
    y = np.convolve(signal.samples, h)[: len(signal)]
    return signal.with_samples(y)


def awgn(shape, noise_rms, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian noise; each branch has variance noise_rms**2 / 2."""
    scale = np.asarray(noise_rms) / np.sqrt(2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def noise_rms_for(signal_rms, snr_db):
    return np.asarray(signal_rms) / 10.0 ** (np.asarray(snr_db) / 20.0)


def add_awgn(signal: ComplexSignal, snr_db: float, rng: np.random.Generator) -> ComplexSignal:
    power = rms(signal.samples)
    if power == 0:
        raise ValueError("cannot calibrate noise against a zero-power signal")
    noise = awgn(len(signal), noise_rms_for(power, snr_db), rng)
    return signal.with_samples(signal.samples + noise)


def add_awgn_batch(x: np.ndarray, snr_db, rng: np.random.Generator) -> np.ndarray:
    """Row-wise :func:`add_awgn` for a (B, L) array with per-row SNRs."""
    power = rms(x, axis=-1)
    if np.any(power == 0):
        raise ValueError("cannot calibrate noise against a zero-power signal")
    sigma = noise_rms_for(power, np.broadcast_to(snr_db, power.shape))
    return x + awgn(x.shape, sigma[..., None], rng)


def realized_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    return float(20.0 * np.log10(rms(clean) / rms(noisy - clean)))


def apply_channel(
    signal: ComplexSignal, spec: ChannelSpec, rng: np.random.Generator | None = None
) -> ComplexSignal:
    # SNR is measured on the post-multipath signal
    out = apply_multipath(signal, spec.taps)
    if spec.snr_db == NOISELESS:
        return out
    if rng is None:
        raise ValueError("noisy channel requires an rng stream")
    return add_awgn(out, float(spec.snr_db), rng)
