"""Length-versatile classifiers and the fixed-input slicing CNN."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from rffi import dsp
from rffi.tensornet import checkpoint
from rffi.tensornet import functional as F
from rffi.tensornet.layers import (
    GRU,
    LSTM,
    Conv2D,
    Dense,
    FeedForward,
    LayerNorm,
    Module,
    MultiHeadAttention,
)
from rffi.tensornet.tensor import Tensor, add, no_grad, relu

ARCHITECTURES = ("FlattenFreeCnn", "LstmNet", "GruNet", "Transformer", "SlicingCnn")
LENGTH_VERSATILE = ARCHITECTURES[:4]
SCALES = ("paper", "desk")

SPECTROGRAM_HEIGHT = 64
SLICE_WIDTH = 6
CNN_CHANNELS = (32, 32, 64, 64, 64, 64, 128, 128, 128, 128)
RNN_UNITS = {"paper": 256, "desk": 64}
TRANSFORMER_HEADS = 4
TRANSFORMER_FFN = 128
# small output-head init keeps untrained predictions near uniform
HEAD_GAIN = 0.1


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    k_classes: int = 10
    scale: str = "desk"
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.k_classes < 2:
            raise ValueError("k_classes must be >= 2")
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)

    def channels(self) -> tuple[int, ...]:
        plan = self.hyperparameters.get("channels")
        if plan is not None:
            return tuple(plan)
        div = 1 if self.scale == "paper" else 4
        return tuple(c // div for c in CNN_CHANNELS)

    def units(self) -> int:
        return int(self.hyperparameters.get("units", RNN_UNITS[self.scale]))


# --- networks ---------------------------------------------------------------


def _even_crop(x: Tensor) -> Tensor:
    """Drop a trailing odd row/column so 2x2 pooling tiles the map."""
    h, w = x.shape[-3], x.shape[-2]
    if h % 2 == 0 and w % 2 == 0:
        return x
    return x[:, : h - h % 2, : w - w % 2, :]


class ConvStack(Module):
    """Ten 3x3 ReLU convolutions, one 2x2 pool after conv2, 1x1 skip conv5 -> conv7."""

    def __init__(self, channels, rng, dtype=np.float32, second_skip=False):
        if len(channels) != 10:
            raise ValueError("the convolution stack has exactly ten layers")
        cin = 1
        self.convs = []
        for c in channels:
            self.convs.append(Conv2D(cin, c, rng, dtype=dtype))
            cin = c
        self.skip = Conv2D(channels[4], channels[6], rng, kernel=1, dtype=dtype)
        self.skip2 = (
            Conv2D(channels[6], channels[8], rng, kernel=1, dtype=dtype) if second_skip else None
        )

    def forward(self, x: Tensor) -> Tensor:
        """(B, H, W, 1) -> (B, H/2, W/2, C_last)."""
        c = self.convs
        x = relu(c[0](x))
        x = relu(c[1](x))
        x = F.max_pool2d(_even_crop(x))
        x = relu(c[2](x))
        x = relu(c[3](x))
        x5 = relu(c[4](x))
        x = relu(c[5](x5))
        x7 = relu(add(c[6](x), self.skip(x5)))
        x = relu(c[7](x7))
        pre9 = c[8](x)
        if self.skip2 is not None:
            pre9 = add(pre9, self.skip2(x7))
        x = relu(pre9)
        return relu(c[9](x))


class FlattenFreeCnn(Module):
    def __init__(self, spec: ModelSpec, rng, dtype=np.float32):
        ch = spec.channels()
        self.features = ConvStack(ch, rng, dtype, spec.hyperparameters.get("second_skip", False))
        self.classifier = Dense(ch[-1], spec.k_classes, rng, dtype, HEAD_GAIN)

    def embed(self, x: Tensor) -> Tensor:
        return self.features(x)

    def forward(self, x: Tensor) -> Tensor:
        """(B, 64, W) spectrograms -> (B, K) logits."""
        fmap = self.features(x.reshape(*x.shape, 1))
        return self.classifier(F.global_average_pool2d(fmap))


class SlicingCnn(Module):
    """The flatten-free stack with flatten in place of global pooling: 64x6 input only."""

    def __init__(self, spec: ModelSpec, rng, dtype=np.float32):
        ch = spec.channels()
        self.features = ConvStack(ch, rng, dtype, spec.hyperparameters.get("second_skip", False))
        flat = (SPECTROGRAM_HEIGHT // 2) * (SLICE_WIDTH // 2) * ch[-1]
        self.classifier = Dense(flat, spec.k_classes, rng, dtype, HEAD_GAIN)

    def forward(self, x: Tensor) -> Tensor:
        # checked up front: the pooling crop would otherwise let width 7 through
        if tuple(x.shape[-2:]) != (SPECTROGRAM_HEIGHT, SLICE_WIDTH):
            raise F.DimensionMismatchError(
                f"slicing CNN accepts only {SPECTROGRAM_HEIGHT}x{SLICE_WIDTH} inputs, got "
                f"{x.shape[-2]}x{x.shape[-1]}; its flatten + dense head fixes the input size"
            )
        fmap = self.features(x.reshape(*x.shape, 1))
        return self.classifier(F.flatten(fmap))


class RecurrentNet(Module):
    def __init__(self, spec: ModelSpec, rng, dtype=np.float32):
        cell = LSTM if spec.architecture == "LstmNet" else GRU
        u = spec.units()
        self.rnn1 = cell(SPECTROGRAM_HEIGHT, u, rng, dtype)
        self.rnn2 = cell(u, u, rng, dtype)
        self.classifier = Dense(u, spec.k_classes, rng, dtype, HEAD_GAIN)

    def embed(self, x: Tensor) -> Tensor:
        """(B, 64, W) -> (B, W, units) hidden sequence."""
        return self.rnn2(self.rnn1(x.transpose(0, 2, 1)))

    def forward(self, x: Tensor) -> Tensor:
        return self.classifier(F.global_average_pool1d(self.embed(x)))


class EncoderBlock(Module):
    def __init__(self, d, heads, hidden, rng, dtype=np.float32):
        self.attention = MultiHeadAttention(d, heads, rng, dtype)
        self.norm1 = LayerNorm(d, dtype)
        self.ffn = FeedForward(d, hidden, rng, dtype)
        self.norm2 = LayerNorm(d, dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(add(x, self.attention(x)))
        return self.norm2(add(x, self.ffn(x)))


class TransformerNet(Module):
    def __init__(self, spec: ModelSpec, rng, dtype=np.float32):
        hp = spec.hyperparameters
        d = SPECTROGRAM_HEIGHT
        heads = hp.get("heads", TRANSFORMER_HEADS)
        hidden = hp.get("ffn_hidden", TRANSFORMER_FFN)
        self.blocks = [EncoderBlock(d, heads, hidden, rng, dtype) for _ in range(2)]
        self.classifier = Dense(d, spec.k_classes, rng, dtype, HEAD_GAIN)

    def embed(self, x: Tensor) -> Tensor:
        """(B, 64, W) -> (B, W, 64) encoded sequence."""
        seq = x.transpose(0, 2, 1)
        pe = F.sinusoidal_position_encoding(seq.shape[1], seq.shape[2], dtype=seq.dtype)
        h = add(seq, pe)
        for block in self.blocks:
            h = block(h)
        return h

    def forward(self, x: Tensor) -> Tensor:
        return self.classifier(F.global_average_pool1d(self.embed(x)))


_NETWORKS = {
    "FlattenFreeCnn": FlattenFreeCnn,
    "LstmNet": RecurrentNet,
    "GruNet": RecurrentNet,
    "Transformer": TransformerNet,
    "SlicingCnn": SlicingCnn,
}


# --- model wrapper ------------------------------------------------------------


@dataclass
class TrainedModel:
    spec: ModelSpec
    network: Module
    metadata: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return self.network.parameters()[0].data.dtype

    def logits(self, values: np.ndarray) -> Tensor:
        """Logits for raw dB spectrograms of shape (B, 64, W) or (64, W)."""
        x = dsp.model_input(np.asarray(values), dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        return self.network(Tensor(x))

    def predict_proba(self, values: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """(B, 64, W) -> (B, K) probabilities, or (64, W) -> (K,)."""
        values = np.asarray(values)
        single = values.ndim == 2
        if single:
            values = values[None]
        out = []
        with no_grad():
            for start in range(0, len(values), batch_size):
                z = self.logits(values[start : start + batch_size]).data
                out.append(F.softmax_np(z.astype(np.float64)))
        probs = np.concatenate(out)
        return probs[0] if single else probs

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, p.data) for name, p in self.network.named_parameters()]

    def save(self, path) -> None:
        header = {"format": "rffi-model", "spec": self.spec.to_dict(), "metadata": self.metadata}
        checkpoint.save(path, header, self.named_arrays())

    def to_bytes(self) -> bytes:
        header = {"format": "rffi-model", "spec": self.spec.to_dict(), "metadata": self.metadata}
        return checkpoint.dumps(header, self.named_arrays())


def build_model(spec: ModelSpec, dtype=np.float32) -> TrainedModel:
    rng = np.random.default_rng(spec.seed)
    network = _NETWORKS[spec.architecture](spec, rng, dtype)
    for name, p in network.named_parameters():
        p.name = name
    return TrainedModel(spec, network, {"epochs": 0, "final_val_loss": None})


def build_flatten_free_cnn(spec: ModelSpec, dtype=np.float32) -> TrainedModel:
    if spec.architecture != "FlattenFreeCnn":
        raise ValueError("spec is not a FlattenFreeCnn")
    return build_model(spec, dtype)


def build_lstm_net(spec: ModelSpec, dtype=np.float32) -> TrainedModel:
    if spec.architecture != "LstmNet":
        raise ValueError("spec is not an LstmNet")
    return build_model(spec, dtype)


def build_gru_net(spec: ModelSpec, dtype=np.float32) -> TrainedModel:
    if spec.architecture != "GruNet":
        raise ValueError("spec is not a GruNet")
    return build_model(spec, dtype)


def build_transformer(spec: ModelSpec, dtype=np.float32) -> TrainedModel:
    if spec.architecture != "Transformer":
        raise ValueError("spec is not a Transformer")
    return build_model(spec, dtype)


def build_slicing_cnn(spec: ModelSpec, dtype=np.float32) -> TrainedModel:
    if spec.architecture != "SlicingCnn":
        raise ValueError("spec is not a SlicingCnn")
    return build_model(spec, dtype)


def from_bytes(data: bytes) -> TrainedModel:
    header, arrays = checkpoint.loads(data)
    if header.get("format") != "rffi-model":
        raise ValueError("checkpoint does not hold an rffi model")
    model = build_model(ModelSpec.from_dict(header["spec"]))
    params = dict(model.network.named_parameters())
    if set(params) != {n for n, _ in arrays}:
        raise ValueError("checkpoint parameters do not match the architecture")
    for name, arr in arrays:
        if params[name].data.shape != arr.shape:
            raise ValueError(f"shape mismatch for {name}")
        params[name].data = arr.copy()
    model.metadata = header.get("metadata", {})
    return model


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def forward(model: TrainedModel, spectrogram) -> np.ndarray:
    """Probability vector for one spectrogram (a :class:`dsp.Spectrogram` or 2-D array)."""
    values = spectrogram.values if isinstance(spectrogram, dsp.Spectrogram) else spectrogram
    return model.predict_proba(np.asarray(values))


def param_count(model) -> int:
    network = model.network if isinstance(model, TrainedModel) else model
    return network.param_count()


def describe(model: TrainedModel) -> str:
    return json.dumps({"spec": model.spec.to_dict(), "params": param_count(model)}, sort_keys=True)
