"""Supervision signals for mixed-dataset training.

Three per-dataset losses, a flag-gated sum, and a softmax-weighted
combination across datasets. The monotonicity loss reads labels only
through pairwise difference signs; the linearity loss only through
batch-level correlation; the error loss through range-normalized
absolute error. Pairs are always formed within one dataset's batch,
never across datasets.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Tensor, as_tensor
from .errors import ConfigError, DegenerateDataError, ValidationError


@dataclasses.dataclass
class LossFlags:
    """Which supervision components participate (the ablation switch)."""

    rel: bool = True
    lin: bool = True
    err: bool = True

    def any(self):
        return self.rel or self.lin or self.err


@dataclasses.dataclass
class BatchPredictions:
    """Model outputs and labels for one dataset's mini-batch."""

    dataset_id: str
    q_r: Tensor
    q_p: Tensor
    q_s: Tensor
    mos: np.ndarray
    s_d: float

    def __post_init__(self):
        self.mos = np.asarray(self.mos, dtype=np.float64)
        n = self.mos.shape[0]
        for name, vec in (("q_r", self.q_r), ("q_p", self.q_p), ("q_s", self.q_s)):
            if vec.shape != (n,):
                raise ValidationError(
                    f"{name} has shape {vec.shape}, expected ({n},) to match mos"
                )
        if not self.s_d > 0:
            raise ValidationError(f"s_d must be positive, got {self.s_d}")


def monotonicity_loss(q_r, mos):
    """Mean hinge penalty over all label-ordered pairs in the batch.

    (2/(N(N-1))) * sum_{i<j} max((q_r,i - q_r,j) * sign(mos_j - mos_i), 0),
    evaluated as one vectorized pairwise matrix rather than a pair loop.
    Tied labels contribute nothing (their sign is zero).
    """
    q_r = as_tensor(q_r)
    mos = np.asarray(mos, dtype=np.float64)
    n = mos.shape[0]
    if n < 2:
        raise DegenerateDataError(f"monotonicity loss needs at least 2 items, got {n}")
    signs = np.sign(mos[None, :] - mos[:, None])  # signs[i, j] = sign(mos_j - mos_i)
    diffs = q_r.reshape(n, 1) - q_r.reshape(1, n)
    # the (j, i) entry duplicates (i, j), so the full-matrix sum double-counts
    # ordered pairs; dividing by N(N-1) restores the pair mean
    return (diffs * Tensor(signs)).relu().sum() * (1.0 / (n * (n - 1)))


def linearity_loss(q_p, mos):
    """(1 - PLCC(q_p, mos)) / 2, differentiable through the correlation."""
    q_p = as_tensor(q_p)
    mos = np.asarray(mos, dtype=np.float64)
    n = mos.shape[0]
    if n < 2:
        raise DegenerateDataError(f"linearity loss needs at least 2 items, got {n}")
    if mos.std() == 0.0:
        raise DegenerateDataError("linearity loss: labels have zero spread")
    centered = q_p - q_p.mean()
    mos_centered = Tensor(mos - mos.mean())
    q_var = (centered * centered).sum()
    if float(q_var.data) == 0.0:
        raise DegenerateDataError("linearity loss: predictions have zero spread")
    m_var = float((mos_centered.data ** 2).sum())
    plcc = (centered * mos_centered).sum() / (q_var * m_var).sqrt()
    return (1.0 - plcc) * 0.5


def error_loss(q_s, mos, s_d):
    """Mean absolute error in dataset units, normalized by the MOS range."""
    if not s_d > 0:
        raise ValidationError(f"error loss needs a positive MOS range, got {s_d}")
    q_s = as_tensor(q_s)
    mos = np.asarray(mos, dtype=np.float64)
    return (q_s - Tensor(mos)).abs().mean() * (1.0 / s_d)


def component_losses(batch: BatchPredictions, flags: LossFlags | None = None):
    """Enabled loss components keyed by name ('rel', 'lin', 'err')."""
    flags = flags or LossFlags()
    if not flags.any():
        raise ConfigError("all loss components disabled; nothing to optimize")
    out = {}
    if flags.rel:
        out["rel"] = monotonicity_loss(batch.q_r, batch.mos)
    if flags.lin:
        out["lin"] = linearity_loss(batch.q_p, batch.mos)
    if flags.err:
        out["err"] = error_loss(batch.q_s, batch.mos, batch.s_d)
    return out


def dataset_loss(batch: BatchPredictions, flags: LossFlags | None = None):
    """Unweighted sum of the enabled components for one dataset's batch."""
    components = component_losses(batch, flags)
    total = None
    for value in components.values():
        total = value if total is None else total + value
    return total


def softmax_weights(values):
    """softmax of the per-dataset losses; harder datasets get larger weight."""
    values = np.asarray(values, dtype=np.float64)
    shifted = np.exp(values - values.max())
    return shifted / shifted.sum()


def overall_loss(per_dataset):
    """Softmax-weighted sum of per-dataset losses.

    The weights are computed from the current loss values but treated as
    constants in the backward pass: gradient pressure must not be able to
    lower a dataset's weight instead of its loss.
    """
    per_dataset = [as_tensor(x) for x in per_dataset]
    if not per_dataset:
        raise ConfigError("overall loss needs at least one dataset loss")
    weights = softmax_weights([float(t.data) for t in per_dataset])
    total = None
    for w, t in zip(weights, per_dataset):
        term = t * float(w)
        total = term if total is None else total + term
    return total
