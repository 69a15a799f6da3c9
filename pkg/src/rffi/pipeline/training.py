"""Mini-batch training with none / offline / online AWGN augmentation."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from rffi.models import TrainedModel
from rffi.pipeline.dataset import (
    Dataset,
    SfGroup,
    augment_offline,
    noise_group,
    noise_group_uniform,
    stream,
)
from rffi.pipeline.features import training_inputs
from rffi.tensornet import functional as F
from rffi.tensornet.optim import TrainState, adam_step, scheduler_update
from rffi.tensornet.tensor import Tensor, no_grad

log = logging.getLogger(__name__)

AUGMENTATIONS = ("none", "offline", "online")

# stream-key tags; any distinct integers work
SPLIT_KEY, SHUFFLE_KEY, VAL_KEY, CAPTURE_KEY, ONLINE_KEY = 21, 22, 23, 24, 25


class TrainingDivergence(RuntimeError):
    """Loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    augmentation: str = "online"
    copies: int = 1
    snr_low_db: float = 0.0
    snr_high_db: float = 40.0
    # finite capture SNR given to un-augmented training signals
    clean_snr_db: float = 40.0
    batch_size: int = 32
    lr0: float = 1e-3
    val_fraction: float = 0.1
    max_epochs: int = 100
    lr_patience: int = 5
    stop_patience: int = 10
    seed: int = 0
    slice_positions: tuple | None = None

    def __post_init__(self):
        if self.augmentation not in AUGMENTATIONS:
            raise ValueError(f"augmentation must be one of {AUGMENTATIONS}")
        if self.snr_low_db > self.snr_high_db:
            raise ValueError("snr_low_db must not exceed snr_high_db")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.copies < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("copies, batch_size and max_epochs must be positive")

    @property
    def snr_range(self) -> tuple[float, float]:
        return (self.snr_low_db, self.snr_high_db)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["slice_positions"] is not None:
            d["slice_positions"] = list(d["slice_positions"])
        return d


@dataclass
class TrainingHistory:
    rows: list = field(default_factory=list)
    steps: int = 0
    noisy_examples: int = 0

    FIELDS = ("epoch", "lr", "train_loss", "val_loss", "val_acc")

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.FIELDS)
            for row in self.rows:
                writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in self.FIELDS[1:]])


def split_train_val(dataset: Dataset, val_fraction: float, seed: int):
    """Per-SF random hold-out; returns (train_groups, val_groups)."""
    train, val = {}, {}
    for sf, g in dataset.groups.items():
        perm = stream(seed, SPLIT_KEY, sf).permutation(len(g))
        n_val = max(1, int(round(val_fraction * len(g))))
        val[sf] = g.take(np.sort(perm[:n_val]))
        train[sf] = g.take(np.sort(perm[n_val:]))
    return train, val


class _Materialized:
    """Network inputs for one pass, grouped by spreading factor."""

    def __init__(self):
        self.x: dict[int, np.ndarray] = {}
        self.y: dict[int, np.ndarray] = {}

    def add(self, sf, x, y):
        self.x[sf], self.y[sf] = x, y

    def __len__(self):
        return sum(len(v) for v in self.y.values())


def _materialize(model, dataset, groups: dict[int, SfGroup], iq_of, cfg) -> _Materialized:
    out = _Materialized()
    for sf, g in groups.items():
        x, y = training_inputs(
            model.spec.architecture, iq_of(sf, g), g.labels, dataset.lora_config(sf), cfg.slice_positions
        )
        out.add(sf, x.astype(model.dtype), y)
    return out


def _batches(data: _Materialized, batch_size: int, rng: np.random.Generator):
    """Shuffled same-width batches, interleaved across spreading factors."""
    batches = []
    for sf in sorted(data.y):
        order = rng.permutation(len(data.y[sf]))
        batches.extend((sf, order[i : i + batch_size]) for i in range(0, len(order), batch_size))
    for j in rng.permutation(len(batches)):
        yield batches[j]


def evaluate_inputs(model: TrainedModel, data: _Materialized, batch_size: int = 128):
    """Mean loss and accuracy over materialised inputs."""
    total_loss, correct, n = 0.0, 0, 0
    with no_grad():
        for sf in sorted(data.y):
            x, y = data.x[sf], data.y[sf]
            for start in range(0, len(y), batch_size):
                xb, yb = x[start : start + batch_size], y[start : start + batch_size]
                loss, probs = F.softmax_cross_entropy(model.network(Tensor(xb)), yb)
                total_loss += float(loss.data) * len(yb)
                correct += int((probs.argmax(axis=1) == yb).sum())
                n += len(yb)
    return total_loss / n, correct / n


def train(model: TrainedModel, dataset: Dataset, cfg: TrainConfig = TrainConfig()):
    """Train ``model`` in place; returns (model with best-validation weights, history)."""
    counts = dataset.label_counts()
    k = model.spec.k_classes
    if len(counts) != k or np.any(counts == 0):
        missing = [i for i in range(k) if i >= len(counts) or counts[i] == 0]
        raise ValueError(f"dataset does not cover every label; missing {missing}")

    train_groups, val_groups = split_train_val(dataset, cfg.val_fraction, cfg.seed)
    seed = cfg.seed

    def clean_capture(sf, g):
        if dataset.augmented:
            return g.iq
        return noise_group(g, cfg.clean_snr_db, seed, CAPTURE_KEY)

    def fixed_uniform(sf, g):
        return noise_group_uniform(g, cfg.snr_range, seed, VAL_KEY)[0]

    if cfg.augmentation == "none":
        val = _materialize(model, dataset, val_groups, clean_capture, cfg)
        fixed = _materialize(model, dataset, train_groups, clean_capture, cfg)
    elif cfg.augmentation == "offline":
        val_fn = (lambda sf, g: g.iq) if dataset.augmented else fixed_uniform
        val = _materialize(model, dataset, val_groups, val_fn, cfg)
        train_set = dataset.with_groups(train_groups)
        if not dataset.augmented:
            train_set = augment_offline(train_set, cfg.snr_range, cfg.copies, seed)
        fixed = _materialize(model, dataset, train_set.groups, lambda sf, g: g.iq, cfg)
    else:
        val = _materialize(model, dataset, val_groups, fixed_uniform, cfg)
        fixed = None

    params = model.network.parameters()
    state = TrainState(learning_rate=cfg.lr0)
    history = TrainingHistory()
    best = [p.data.copy() for p in params]
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.time()
        if fixed is None:
            data = _materialize(
                model,
                dataset,
                train_groups,
                lambda sf, g: noise_group_uniform(g, cfg.snr_range, seed, ONLINE_KEY, epoch)[0],
                cfg,
            )
            history.noisy_examples += len(data)
        else:
            data = fixed
        losses = []
        for sf, idx in _batches(data, cfg.batch_size, stream(seed, SHUFFLE_KEY, epoch)):
            xb, yb = data.x[sf][idx], data.y[sf][idx]
            model.network.zero_grad()
            loss, _ = F.softmax_cross_entropy(model.network(Tensor(xb)), yb)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergence(
                    f"non-finite training loss at epoch {epoch}, step {history.steps + 1}"
                )
            loss.backward()
            history.steps += 1
            adam_step(params, [p.grad for p in params], state.learning_rate, history.steps)
            losses.append(value)
        if fixed is not None and epoch == 1:
            history.noisy_examples = len(data)

        val_loss, val_acc = evaluate_inputs(model, val)
        if not np.isfinite(val_loss):
            raise TrainingDivergence(f"non-finite validation loss at epoch {epoch}")
        lr_used = state.learning_rate
        improved = val_loss < state.best_val_loss - 1e-4
        state = scheduler_update(
            state, val_loss, lr_patience=cfg.lr_patience, stop_patience=cfg.stop_patience
        )
        state = replace(state, step=history.steps)
        if improved:
            best = [p.data.copy() for p in params]
        history.rows.append(
            {
                "epoch": epoch,
                "lr": lr_used,
                "train_loss": float(np.mean(losses)),
                "val_loss": val_loss,
                "val_acc": val_acc,
            }
        )
        log.info(
            "epoch %d lr %.2g train %.4f val %.4f acc %.3f (%.1fs)",
            epoch,
            lr_used,
            np.mean(losses),
            val_loss,
            val_acc,
            time.time() - t0,
        )
        if state.stop:
            break

    for p, b in zip(params, best):
        p.data = b
        p.grad = None
    model.metadata = {
        "epochs": len(history.rows),
        "final_val_loss": state.best_val_loss,
        "steps": history.steps,
        "train_config": cfg.to_dict(),
        "dataset_seed": dataset.seed,
    }
    return model, history
