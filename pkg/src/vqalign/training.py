"""Dataset splitting, mini-batching, Adam, and the mixed-datasets loop.

One optimizer step consumes exactly one batch from every dataset: each
dataset's batch yields its own loss, the per-dataset losses combine under
softmax weighting, and a single Adam step updates all parameters. Datasets
with fewer batches per epoch recycle (reshuffle and restart) until the
largest dataset is exhausted. Model selection keeps the epoch with the
highest dataset-size-weighted validation rank correlation.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import ConfigError, NumericError, ValidationError
from .featureio import DatasetSpec, read_features
from .losses import BatchPredictions, LossFlags, component_losses, overall_loss, softmax_weights
from .metrics import srocc, weighted_overall
from .model import ModelParams, PoolingConfig, align, forward_batch, init_nonlinear_map
from .seeding import CALIB, INIT, SHUFFLE, SPLIT, rng_for

ALIGNMENT_MODES = ("dataset_specific", "linear_rescale")


@dataclasses.dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 40
    batch_size: int = 32
    pooling: PoolingConfig = dataclasses.field(default_factory=PoolingConfig)
    seed: int = 0
    loss_flags: LossFlags = dataclasses.field(default_factory=LossFlags)
    alignment_mode: str = "dataset_specific"
    reduced_dim: int = 128
    hidden_dim: int = 32
    calibration_size: int = 256

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.alignment_mode not in ALIGNMENT_MODES:
            raise ConfigError(
                f"alignment_mode must be one of {ALIGNMENT_MODES}, got {self.alignment_mode!r}"
            )
        if not self.loss_flags.any():
            raise ConfigError("all loss components disabled; nothing to optimize")
        if self.calibration_size < 2:
            raise ConfigError(f"calibration_size must be >= 2, got {self.calibration_size}")
        return self


@dataclasses.dataclass
class PaddedBatch:
    """One dataset's mini-batch, zero-padded to its own longest video."""

    dataset_id: str
    features: np.ndarray
    lengths: np.ndarray
    mos: np.ndarray
    video_ids: list


def split_dataset(spec: DatasetSpec, seed: int, index: int = 0) -> DatasetSpec:
    """Assign train/val/test: 80/20, then a quarter of train becomes val."""
    n = len(spec.records)
    if n < 5:
        raise ValidationError(
            f"dataset {spec.name!r} has {n} records; need at least 5 to split"
        )
    perm = rng_for(seed, SPLIT, index).permutation(n)
    n_test = round(0.2 * n)
    n_val = round(0.25 * (n - n_test))
    assignment = {}
    for pos, rec_idx in enumerate(perm):
        if pos < n_test:
            part = "test"
        elif pos < n_test + n_val:
            part = "val"
        else:
            part = "train"
        assignment[spec.records[rec_idx].video_id] = part
    out = DatasetSpec(
        name=spec.name,
        mos_min=spec.mos_min,
        mos_max=spec.mos_max,
        records=spec.records,
        split=assignment,
    )
    return out.validate()


def load_features_map(datasets):
    """Read every referenced feature file once; float64 arrays keyed by id."""
    table = {}
    for spec in datasets:
        per = {}
        for rec in spec.records:
            seq = read_features(rec.feature_path)
            if seq.video_id != rec.video_id:
                raise ValidationError(
                    f"{rec.feature_path}: stores video {seq.video_id!r}, "
                    f"manifest says {rec.video_id!r}"
                )
            per[rec.video_id] = np.asarray(seq.features, dtype=np.float64)
        table[spec.name] = per
    return table


def make_batches(spec: DatasetSpec, part, features, batch_size, seed, epoch,
                 dataset_index=0, cycle=0, shuffle=True):
    """Shuffled, padded mini-batches for one dataset and split.

    A final batch shorter than 2 records merges into the previous one. The
    shuffle stream is keyed by (seed, dataset, epoch, cycle) so recycled
    passes within one epoch reshuffle.
    """
    records = spec.records_in(part)
    if not records:
        raise ValidationError(f"dataset {spec.name!r} has an empty {part!r} split")
    order = np.arange(len(records))
    if shuffle:
        order = rng_for(seed, SHUFFLE, dataset_index, epoch, cycle).permutation(len(records))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    batches = []
    feats = features[spec.name]
    for chunk in chunks:
        chosen = [records[i] for i in chunk]
        lengths = np.array([feats[r.video_id].shape[0] for r in chosen])
        t_max = int(lengths.max())
        dim = feats[chosen[0].video_id].shape[1]
        padded = np.zeros((len(chosen), t_max, dim))
        for row, rec in enumerate(chosen):
            arr = feats[rec.video_id]
            padded[row, : arr.shape[0]] = arr
        batches.append(
            PaddedBatch(
                dataset_id=spec.name,
                features=padded,
                lengths=lengths,
                mos=np.array([r.mos for r in chosen]),
                video_ids=[r.video_id for r in chosen],
            )
        )
    return batches


class Adam:
    """Adam with bias correction over named parameter tensors."""

    def __init__(self, named_tensors, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = list(named_tensors)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(t.data) for name, t in self.named}
        self.v = {name: np.zeros_like(t.data) for name, t in self.named}
        self.t = 0

    def zero_grad(self):
        for _, tensor in self.named:
            tensor.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, tensor in self.named:
            g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g**2
            tensor.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclasses.dataclass
class TrainResult:
    params: ModelParams
    log: list
    splits: dict
    best_epoch: int
    best_weighted_val_srocc: float
    alignment_mode: str
    pooling: PoolingConfig


def _effective_labels(spec: DatasetSpec, config: TrainConfig):
    """(per-video label map, loss range s_d) under the alignment mode."""
    if config.alignment_mode == "linear_rescale":
        return (
            {r.video_id: (r.mos - spec.mos_min) / spec.scale for r in spec.records},
            1.0,
        )
    return {r.video_id: r.mos for r in spec.records}, spec.scale


def _predict_split(spec, part, features, params, config):
    """(q_s values, labels) over one split, outside the autodiff graph."""
    labels, _ = _effective_labels(spec, config)
    preds = []
    targets = []
    with no_grad():
        for batch in make_batches(
            spec, part, features, batch_size=64, seed=0, epoch=0, shuffle=False
        ):
            _, q_p = forward_batch(
                Tensor(batch.features), batch.lengths, params, config.pooling
            )
            if config.alignment_mode == "dataset_specific":
                q_s = align(q_p, spec.name, params)
            else:
                q_s = q_p
            preds.extend(float(v) for v in q_s.data)
            targets.extend(labels[v] for v in batch.video_ids)
    return np.array(preds), np.array(targets)


def _calibration_qr(datasets, features, params, config):
    """Q_r over up to calibration_size uniformly sampled training videos."""
    pool = []
    for spec in datasets:
        for rec in spec.records_in("train"):
            pool.append((spec.name, rec.video_id))
    k = min(config.calibration_size, len(pool))
    idx = rng_for(config.seed, CALIB).choice(len(pool), size=k, replace=False)
    values = []
    with no_grad():
        for i in sorted(idx):
            name, vid = pool[i]
            arr = features[name][vid]
            q_r, _ = forward_batch(
                Tensor(arr[None]), np.array([arr.shape[0]]), params, config.pooling
            )
            values.append(float(q_r.data[0]))
    return values


def train(datasets, config: TrainConfig, features=None) -> TrainResult:
    """Mixed-datasets training; returns the best-validation checkpoint."""
    config.validate()
    if not datasets:
        raise ConfigError("train needs at least one dataset")
    datasets = [
        spec if spec.split is not None else split_dataset(spec, config.seed, index=d)
        for d, spec in enumerate(datasets)
    ]
    for spec in datasets:
        spec.validate()
        if not spec.records_in("val"):
            raise ConfigError(f"dataset {spec.name!r} has an empty validation split")
        if not spec.records_in("train"):
            raise ConfigError(f"dataset {spec.name!r} has an empty training split")
    if features is None:
        features = load_features_map(datasets)

    dims = {
        arr.shape[1] for per in features.values() for arr in per.values()
    }
    if len(dims) != 1:
        raise ValidationError(f"inconsistent feature dims across videos: {sorted(dims)}")
    feature_dim = dims.pop()

    params = ModelParams.init(
        feature_dim,
        rng_for(config.seed, INIT),
        reduced_dim=config.reduced_dim,
        hidden_dim=config.hidden_dim,
    )
    if config.alignment_mode == "dataset_specific":
        for spec in datasets:
            params.alignments[spec.name] = Tensor(
                np.array([spec.scale, spec.mos_min])
            )
    params.beta = Tensor(
        init_nonlinear_map(_calibration_qr(datasets, features, params, config)).data
    )

    train_alignments = config.alignment_mode == "dataset_specific"
    params.set_requires_grad(True, include_alignments=train_alignments)
    optimizer = Adam(
        params.named_tensors(include_alignments=train_alignments), config.learning_rate
    )

    labels_and_scale = {spec.name: _effective_labels(spec, config) for spec in datasets}
    log = []
    best_epoch = -1
    best_score = -np.inf
    best_snapshot = None

    for epoch in range(config.epochs):
        streams = []
        for d, spec in enumerate(datasets):
            batches = make_batches(
                spec, "train", features, config.batch_size, config.seed, epoch,
                dataset_index=d, cycle=0,
            )
            streams.append({"spec": spec, "index": d, "batches": batches,
                            "pos": 0, "cycle": 0})
        steps = max(len(s["batches"]) for s in streams)
        sums = {
            spec.name: {"rel": 0.0, "lin": 0.0, "err": 0.0, "total": 0.0, "weight": 0.0}
            for spec in datasets
        }
        for _ in range(steps):
            per_dataset_losses = []
            per_dataset_components = []
            for stream in streams:
                if stream["pos"] >= len(stream["batches"]):
                    stream["cycle"] += 1
                    stream["batches"] = make_batches(
                        stream["spec"], "train", features, config.batch_size,
                        config.seed, epoch, dataset_index=stream["index"],
                        cycle=stream["cycle"],
                    )
                    stream["pos"] = 0
                batch = stream["batches"][stream["pos"]]
                stream["pos"] += 1
                spec = stream["spec"]
                labels, s_d = labels_and_scale[spec.name]
                q_r, q_p = forward_batch(
                    Tensor(batch.features), batch.lengths, params, config.pooling
                )
                if config.alignment_mode == "dataset_specific":
                    q_s = align(q_p, spec.name, params)
                else:
                    q_s = q_p
                mos = np.array([labels[v] for v in batch.video_ids])
                parts = component_losses(
                    BatchPredictions(
                        dataset_id=spec.name, q_r=q_r, q_p=q_p, q_s=q_s,
                        mos=mos, s_d=s_d,
                    ),
                    config.loss_flags,
                )
                total = None
                for value in parts.values():
                    total = value if total is None else total + value
                per_dataset_losses.append(total)
                per_dataset_components.append((spec.name, parts, total))
            weights = softmax_weights([float(t.data) for t in per_dataset_losses])
            optimizer.zero_grad()
            overall_loss(per_dataset_losses).backward()
            optimizer.step()
            for (name, parts, total), w in zip(per_dataset_components, weights):
                for key, value in parts.items():
                    sums[name][key] += float(value.data)
                sums[name]["total"] += float(total.data)
                sums[name]["weight"] += float(w)

        val_srocc = {}
        val_sizes = {}
        for spec in datasets:
            preds, targets = _predict_split(spec, "val", features, params, config)
            val_srocc[spec.name] = srocc(preds, targets)
            val_sizes[spec.name] = len(preds)
        weighted = weighted_overall(
            [(val_srocc[name], val_sizes[name]) for name in val_srocc]
        )
        log.append(
            {
                "epoch": epoch,
                "datasets": {
                    name: {key: value / steps for key, value in block.items()}
                    for name, block in sums.items()
                },
                "val_srocc": val_srocc,
                "weighted_val_srocc": weighted,
            }
        )
        if weighted > best_score:
            best_score = weighted
            best_epoch = epoch
            best_snapshot = {
                name: t.data.copy() for name, t in params.named_tensors()
            }

    for name, tensor in params.named_tensors():
        tensor.data[...] = best_snapshot[name]
    params.set_requires_grad(False)
    splits = {
        spec.name: {
            part: [r.video_id for r in spec.records_in(part)]
            for part in ("train", "val", "test")
        }
        for spec in datasets
    }
    return TrainResult(
        params=params,
        log=log,
        splits=splits,
        best_epoch=best_epoch,
        best_weighted_val_srocc=float(best_score),
        alignment_mode=config.alignment_mode,
        pooling=config.pooling,
    )
