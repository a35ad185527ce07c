"""The three-stage quality model.

Stage one maps frame features to a relative quality score Q_r in (0,1):
a per-frame linear reduction, a GRU over time, a scalar score per frame,
and a memory-aware temporal pooling. Stage two maps Q_r through a learned
logistic to perceptual quality Q_p. Stage three applies a per-dataset
affine to express Q_p in a dataset's subjective units (Q_s).
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .autodiff import (
    GRUParams,
    Tensor,
    affine,
    as_tensor,
    gather_last,
    masked_min_last,
    no_grad,
    seq_gru,
)
from .errors import (
    ConfigError,
    DegenerateDataError,
    FormatError,
    MissingAlignmentError,
    ShapeError,
)

CHECKPOINT_FORMAT = "vqalign-checkpoint"
CHECKPOINT_VERSION = 1
MASK_OFFSET = -1e9  # additive exponent offset; exp underflows to exactly 0


@dataclasses.dataclass
class PoolingConfig:
    """Temporal pooling knobs: window length tau, memory/current balance gamma."""

    tau: int = 12
    gamma: float = 0.5

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 1:
            raise ConfigError(f"tau must be a positive integer, got {self.tau}")
        self.tau = int(self.tau)
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclasses.dataclass
class QualityTriple:
    """Model outputs for one video; q_s only when a dataset alignment applies."""

    q_r: float
    q_p: float
    q_s: float | None = None


class ModelParams:
    """All trainable parameters plus the per-dataset alignment table."""

    def __init__(self, feature_dim, reduced_dim, hidden_dim,
                 W_fx, b_fx, gru: GRUParams, W_hq, b_hq, beta, alignments=None):
        self.feature_dim = int(feature_dim)
        self.reduced_dim = int(reduced_dim)
        self.hidden_dim = int(hidden_dim)
        self.W_fx, self.b_fx = W_fx, b_fx
        self.gru = gru
        self.W_hq, self.b_hq = W_hq, b_hq
        self.beta = beta
        self.alignments = dict(alignments or {})

    @classmethod
    def init(cls, feature_dim, rng, reduced_dim=128, hidden_dim=32):
        """Fresh parameters: weights uniform in +-1/sqrt(fan_in), biases zero."""

        def weight(fan_out, fan_in):
            bound = fan_in ** -0.5
            return Tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)))

        def bias(n):
            return Tensor(np.zeros(n))

        gru = GRUParams(
            W_xz=weight(hidden_dim, reduced_dim),
            W_hz=weight(hidden_dim, hidden_dim),
            b_z=bias(hidden_dim),
            W_xr=weight(hidden_dim, reduced_dim),
            W_hr=weight(hidden_dim, hidden_dim),
            b_r=bias(hidden_dim),
            W_xn=weight(hidden_dim, reduced_dim),
            b_xn=bias(hidden_dim),
            W_hn=weight(hidden_dim, hidden_dim),
            b_hn=bias(hidden_dim),
        )
        return cls(
            feature_dim=feature_dim,
            reduced_dim=reduced_dim,
            hidden_dim=hidden_dim,
            W_fx=weight(reduced_dim, feature_dim),
            b_fx=bias(reduced_dim),
            gru=gru,
            W_hq=weight(1, hidden_dim),
            b_hq=bias(1),
            beta=Tensor(np.array([1.0, 0.0, 0.0, 1.0])),
        )

    def named_tensors(self, include_alignments=True):
        """Deterministically ordered (name, tensor) pairs."""
        pairs = [("W_fx", self.W_fx), ("b_fx", self.b_fx)]
        pairs += [(f"gru.{n}", t) for n, t in self.gru.named_tensors()]
        pairs += [("W_hq", self.W_hq), ("b_hq", self.b_hq), ("beta", self.beta)]
        if include_alignments:
            for name in sorted(self.alignments):
                pairs.append((f"align.{name}", self.alignments[name]))
        return pairs

    def set_requires_grad(self, flag, include_alignments=True):
        for _, t in self.named_tensors(include_alignments=include_alignments):
            t.requires_grad = flag
        return self


# -- stage one: relative quality ------------------------------------------


def reduce_features(f, params: ModelParams):
    """Per-frame linear reduction of raw features to the GRU input size."""
    f = as_tensor(f)
    if f.shape[-1] != params.feature_dim:
        raise ShapeError(
            f"feature dim {f.shape[-1]} does not match model feature dim {params.feature_dim}"
        )
    return affine(f, params.W_fx, params.b_fx)


def frame_scores(x, params: ModelParams, h0=None):
    """Per-frame scalar quality scores from GRU hidden states.

    ``x`` is [T, reduced] or [B, T, reduced]; result drops the trailing
    singleton axis, giving [T] or [B, T].
    """
    h = seq_gru(x, h0, params.gru)
    q = affine(h, params.W_hq, params.b_hq)
    return q.reshape(q.shape[:-1])


def _window_indices(t_max, cfg: PoolingConfig):
    """Index matrices for the backward-min and forward-softmin windows.

    Returns (idx_prev, valid_prev, idx_next, next_offsets) where idx_* are
    [T, W] clipped into range and valid_prev marks in-range history slots
    (position 0 falls back to itself, matching l_1 = q_1).
    """
    t = np.arange(t_max)[:, None]
    prev_off = np.arange(-cfg.tau, 0)[None, :]
    idx_prev = np.clip(t + prev_off, 0, t_max - 1)
    valid_prev = (t + prev_off) >= 0
    valid_prev[0, -1] = True  # frame 0 has no history; its element is itself
    next_off = np.arange(0, cfg.tau + 1)[None, :]
    idx_next = np.clip(t + next_off, 0, t_max - 1)
    return idx_prev, valid_prev, idx_next, t + next_off


def temporal_pool(q, cfg: PoolingConfig, lengths=None):
    """Pool per-frame scores into Q_r = sigmoid(mean of blended elements).

    Each frame blends a memory element (hard min over up to tau previous
    frames) and a current element (softmin-weighted mean over the frame and
    up to tau following frames): q'_t = gamma*l_t + (1-gamma)*m_t.

    ``q`` is [T] for one video or [B, T_max] for a padded batch with
    ``lengths`` giving true frame counts; padded positions never influence
    the result. Returns a scalar or [B] tensor with values in (0, 1).
    """
    q = as_tensor(q)
    if q.ndim not in (1, 2):
        raise ShapeError(f"temporal_pool expects [T] or [B,T], got shape {q.shape}")
    t_max = q.shape[-1]
    if t_max < 1:
        raise ShapeError("temporal_pool: empty sequence")
    batched = q.ndim == 2
    if lengths is None:
        lengths = np.full(q.shape[0], t_max) if batched else None
    if not batched and lengths is not None:
        raise ShapeError("lengths only applies to batched input")

    idx_prev, valid_prev, idx_next, next_pos = _window_indices(t_max, cfg)

    if batched:
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != (q.shape[0],):
            raise ShapeError(f"lengths {lengths.shape} does not match batch {q.shape[0]}")
        if np.any(lengths < 1) or np.any(lengths > t_max):
            raise ShapeError("lengths must lie in [1, T_max]")
        # per-sample window validity: [B, T, W]
        valid_next = next_pos[None] < lengths[:, None, None]
        valid_next[:, :, 0] = True  # self slot; padded rows are masked out below
        valid_prev_b = np.broadcast_to(valid_prev[None], valid_next.shape[:2] + valid_prev.shape[1:])
    else:
        valid_next = next_pos < t_max
        valid_prev_b = valid_prev

    gathered_prev = gather_last(q, idx_prev)
    memory = masked_min_last(gathered_prev, np.broadcast_to(valid_prev_b, gathered_prev.shape))

    gathered_next = gather_last(q, idx_next)
    neg = -gathered_next
    # shift-invariant softmin, stabilized against overflow; invalid slots get
    # an exponent of about -1e9 whose exp is exactly zero
    shift = np.max(np.where(valid_next, neg.data, -np.inf), axis=-1, keepdims=True)
    mask_add = np.where(valid_next, 0.0, MASK_OFFSET)
    w = (neg - shift + mask_add).exp()
    weights = w / w.sum(axis=-1, keepdims=True)
    current = (gathered_next * weights).sum(axis=-1)

    blended = cfg.gamma * memory + (1.0 - cfg.gamma) * current
    if batched:
        time_mask = np.arange(t_max)[None, :] < lengths[:, None]
        mean = (blended * Tensor(time_mask.astype(np.float64))).sum(axis=-1) / Tensor(
            lengths.astype(np.float64)
        )
    else:
        mean = blended.mean()
    return mean.sigmoid()


# -- stage two: nonlinear mapping -----------------------------------------


def nonlinear_map(q_r, beta):
    """Q_p = beta1' * sigmoid(beta4' * Q_r + beta3') + beta2'."""
    q_r, beta = as_tensor(q_r), as_tensor(beta)
    return beta[0] * (beta[3] * q_r + beta[2]).sigmoid() + beta[1]


def init_nonlinear_map(calibration_qr):
    """Initial beta from the spread of Q_r over a calibration sample.

    beta1'=1, beta2'=0, beta3'=-mean/std, beta4'=1/std (sample std), so the
    logistic's active region straddles the observed Q_r distribution.
    """
    values = np.asarray(list(calibration_qr), dtype=np.float64)
    if values.size < 2:
        raise DegenerateDataError(
            f"calibration needs at least 2 values, got {values.size}"
        )
    std = float(values.std(ddof=1))
    if std == 0.0:
        raise DegenerateDataError("calibration values have zero spread")
    mean = float(values.mean())
    return Tensor(np.array([1.0, 0.0, -mean / std, 1.0 / std]))


# -- stage three: perceptual scale alignment ------------------------------


def align(q_p, dataset_id, params: ModelParams):
    """Map perceptual quality into dataset units: q_s = xi1*q_p + xi2."""
    if dataset_id not in params.alignments:
        known = sorted(params.alignments)
        raise MissingAlignmentError(
            f"no alignment for dataset {dataset_id!r}; known: {known}"
        )
    xi = params.alignments[dataset_id]
    return xi[0] * as_tensor(q_p) + xi[1]


# -- composition -----------------------------------------------------------


def forward_batch(features, lengths, params: ModelParams, cfg: PoolingConfig):
    """(q_r, q_p) tensors of shape [B] for padded batch features [B,T,F]."""
    x = reduce_features(features, params)
    q = frame_scores(x, params)
    q_r = temporal_pool(q, cfg, lengths=lengths)
    return q_r, nonlinear_map(q_r, params.beta)


def predict_video(seq, params: ModelParams, cfg: PoolingConfig, dataset_id=None):
    """Full inference for one video; pure function of its inputs."""
    feats = np.asarray(seq.features, dtype=np.float64)
    if feats.shape[1] != params.feature_dim:
        raise ShapeError(
            f"video {seq.video_id!r} has feature dim {feats.shape[1]}, "
            f"model expects {params.feature_dim}"
        )
    with no_grad():
        x = reduce_features(Tensor(feats), params)
        q = frame_scores(x, params)
        q_r = temporal_pool(q, cfg)
        q_p = nonlinear_map(q_r, params.beta)
        q_s = None
        if dataset_id is not None:
            q_s = float(align(q_p, dataset_id, params).data)
    return QualityTriple(q_r=float(q_r.data), q_p=float(q_p.data), q_s=q_s)


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, params: ModelParams, cfg: PoolingConfig,
                    alignment_mode="dataset_specific", splits=None):
    """Versioned JSON serialization of parameters, pooling, and splits."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "feature_dim": params.feature_dim,
        "reduced_dim": params.reduced_dim,
        "hidden_dim": params.hidden_dim,
        "pooling": {"tau": cfg.tau, "gamma": cfg.gamma},
        "alignment_mode": alignment_mode,
        "params": {
            name: t.data.tolist()
            for name, t in params.named_tensors(include_alignments=False)
        },
        "alignments": {name: t.data.tolist() for name, t in params.alignments.items()},
        "splits": splits,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


@dataclasses.dataclass
class CheckpointBundle:
    params: ModelParams
    pooling: PoolingConfig
    alignment_mode: str
    splits: dict | None


def load_checkpoint(path) -> CheckpointBundle:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    try:
        raw = doc["params"]
        gru = GRUParams(**{
            name: Tensor(np.array(raw[f"gru.{name}"], dtype=np.float64))
            for name in GRUParams.__slots__
        })
        params = ModelParams(
            feature_dim=doc["feature_dim"],
            reduced_dim=doc["reduced_dim"],
            hidden_dim=doc["hidden_dim"],
            W_fx=Tensor(np.array(raw["W_fx"], dtype=np.float64)),
            b_fx=Tensor(np.array(raw["b_fx"], dtype=np.float64)),
            gru=gru,
            W_hq=Tensor(np.array(raw["W_hq"], dtype=np.float64)),
            b_hq=Tensor(np.array(raw["b_hq"], dtype=np.float64)),
            beta=Tensor(np.array(raw["beta"], dtype=np.float64)),
            alignments={
                name: Tensor(np.array(xi, dtype=np.float64))
                for name, xi in doc.get("alignments", {}).items()
            },
        )
        pooling = PoolingConfig(**doc["pooling"])
        mode = doc["alignment_mode"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint: {exc}") from exc
    for name, t in params.named_tensors():
        if not np.isfinite(t.data).all():
            raise FormatError(f"{path}: parameter {name!r} contains non-finite values")
    return CheckpointBundle(
        params=params, pooling=pooling, alignment_mode=mode, splits=doc.get("splits")
    )
