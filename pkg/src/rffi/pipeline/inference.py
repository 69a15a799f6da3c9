"""Single-packet classification and multi-packet probability fusion."""

from __future__ import annotations

from collections import deque

import numpy as np

from rffi.models import TrainedModel
from rffi.pipeline.features import is_slicing, packet_spectrograms, slice_spectrograms
from rffi.waveform import ComplexSignal, LoRaConfig


def config_for_length(n_samples: int, base: LoRaConfig = LoRaConfig()) -> LoRaConfig:
    """Infer the spreading factor of a preamble from its length."""
    per_symbol = n_samples // base.n_preamble_symbols
    for sf in range(7, 13):
        if (2**sf) * base.oversampling == per_symbol and per_symbol * base.n_preamble_symbols == n_samples:
            return LoRaConfig(sf, base.bandwidth_hz, base.sample_rate_hz, base.n_preamble_symbols)
    raise ValueError(f"{n_samples} samples is not a whole preamble")


def packet_probs(
    model: TrainedModel, iq: np.ndarray, config: LoRaConfig, positions=None
) -> np.ndarray:
    """(n, L) synchronised preambles -> (n, K) probabilities.

    Slicing models average the softmax outputs over the packet's slices.
    """
    if is_slicing(model.spec.architecture):
        spec = slice_spectrograms(iq, config, positions)
        n, s = spec.shape[:2]
        probs = model.predict_proba(spec.reshape(n * s, *spec.shape[2:]), batch_size=256)
        return probs.reshape(n, s, -1).mean(axis=1)
    return model.predict_proba(packet_spectrograms(iq, config))


def infer_single(
    model: TrainedModel, iq: ComplexSignal, config: LoRaConfig | None = None
) -> np.ndarray:
    """Probability vector for one synchronised preamble."""
    config = config or config_for_length(len(iq))
    return packet_probs(model, iq.samples[None], config)[0]


class InferenceHistory:
    """Per-stream ring buffers holding the last ``n_pkt - 1`` probability vectors."""

    def __init__(self, n_pkt: int):
        if n_pkt < 1:
            raise ValueError("n_pkt must be >= 1")
        self.n_pkt = n_pkt
        self._buffers: dict = {}

    def buffer(self, key=None) -> deque:
        if key not in self._buffers:
            self._buffers[key] = deque(maxlen=max(self.n_pkt - 1, 0))
        return self._buffers[key]

    def to_dict(self) -> dict:
        return {
            "n_pkt": self.n_pkt,
            "streams": {str(k): [list(map(float, p)) for p in v] for k, v in self._buffers.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceHistory":
        hist = cls(d["n_pkt"])
        for key, vectors in d["streams"].items():
            buf = hist.buffer(key)
            for v in vectors:
                buf.append(np.asarray(v, dtype=float))
        return hist


def fuse_multi_packet(history: InferenceHistory, new: np.ndarray, key=None):
    """Average ``new`` with the stream's stored vectors; returns (label, fused).

    Before the buffer fills, the average runs over however many packets exist.
    Ties go to the lowest index (np.argmax).
    """
    new = np.asarray(new, dtype=float)
    buf = history.buffer(key)
    fused = np.mean([new, *buf], axis=0)
    if buf.maxlen:
        buf.append(new)
    return int(np.argmax(fused)), fused


def fuse_blocks(probs: np.ndarray, n_pkt: int) -> np.ndarray:
    """Average consecutive non-overlapping blocks of ``n_pkt`` rows; the remainder is dropped."""
    n_blocks = len(probs) // n_pkt
    if n_blocks == 0:
        raise ValueError(f"need at least {n_pkt} packets, got {len(probs)}")
    return probs[: n_blocks * n_pkt].reshape(n_blocks, n_pkt, -1).mean(axis=1)
