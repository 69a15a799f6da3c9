"""Analytic-vs-central-difference gradient comparison."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rffi.tensornet.tensor import Tensor

# finite-difference round-off reaches ~1e-9 on exactly-zero gradients
NORM_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_tensor: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    @property
    def failures(self) -> dict:
        return {k: v for k, v in self.per_tensor.items() if v >= self.tolerance}


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), floored so all-zero gradients compare equal."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), NORM_FLOOR)
    return float(diff / scale)


def grad_check(
    fn,
    tensors,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    names=None,
) -> GradCheckReport:
    """Compare backprop gradients of ``fn()`` w.r.t. ``tensors`` with finite differences.

    ``fn`` takes no arguments and returns a Tensor; non-scalar outputs are
    reduced with a fixed random projection. ``max_entries`` caps how many
    randomly chosen entries of each tensor are perturbed (None = all).
    Tensors must be float64.
    """
    tensors = list(tensors)
    names = list(names) if names is not None else [f"t{i}" for i in range(len(tensors))]
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        if t.data.dtype != np.float64:
            raise TypeError("gradient checks require float64 tensors")
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True

    probe = fn()
    weights = None if probe.data.size == 1 else rng.standard_normal(probe.shape)

    def scalar(out: Tensor) -> Tensor:
        return out.sum() if weights is None else (out * weights).sum()

    for t in tensors:
        t.grad = None
    scalar(fn()).backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    report = GradCheckReport(0.0, tolerance=tolerance)
    for t, a, name in zip(tensors, analytic, names):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for j, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + h
            up = float(scalar(fn()).data)
            flat[k] = orig - h
            down = float(scalar(fn()).data)
            flat[k] = orig
            numeric[j] = (up - down) / (2 * h)
        err = rel_error(a.reshape(-1)[idx], numeric)
        report.per_tensor[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
    for t in tensors:
        t.grad = None
    return report


def check_module(module, forward, tolerance=1e-4, max_entries=None, rng=None, extra=(), h=1e-5):
    """grad_check over every parameter of ``module`` plus ``extra`` (name, tensor) pairs."""
    named = list(module.named_parameters()) + list(extra)
    return grad_check(
        forward,
        [t for _, t in named],
        tolerance=tolerance,
        h=h,
        max_entries=max_entries,
        rng=rng,
        names=[n for n, _ in named],
    )
