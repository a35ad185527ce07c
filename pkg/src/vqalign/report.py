"""Checkpoint evaluation, run aggregation, and diagnostic artifacts.

Evaluation keeps the scoring convention of the training protocol: datasets
the checkpoint holds an alignment for are scored directly in their own MOS
units; anything else (unseen datasets, or checkpoints trained in the
shared-rescale mode) gets a 4-parameter logistic fitted from perceptual
scores to MOS before PLCC/RMSE. Rank metrics always use the perceptual
score itself. Every report is accompanied by delimited scatter data and a
rendered figure.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .autodiff import Tensor, no_grad
from .errors import ValidationError
from .featureio import DatasetSpec, VideoRecord
from .metrics import DatasetMetrics, EvalReport, build_report, fit_4pl, krocc
from .metrics import plcc as plcc_metric
from .metrics import rmse as rmse_metric
from .metrics import srocc as srocc_metric
from .model import CheckpointBundle, forward_batch


@dataclasses.dataclass
class ScatterRow:
    video_id: str
    q_r: float
    q_p: float
    mapped: float
    mos: float


def _records_for_eval(spec: DatasetSpec, bundle: CheckpointBundle, split):
    """Stored-split records when the checkpoint saw this dataset, else all."""
    stored = (bundle.splits or {}).get(spec.name)
    if stored is None:
        return list(spec.records)
    wanted = set(stored.get(split, []))
    records = [r for r in spec.records if r.video_id in wanted]
    if not records:
        raise ValidationError(
            f"dataset {spec.name!r} has no records in stored split {split!r}"
        )
    return records


def _check_features_exist(datasets):
    missing = [
        rec.feature_path
        for spec in datasets
        for rec in spec.records
        if not os.path.exists(rec.feature_path)
    ]
    if missing:
        shown = ", ".join(missing[:5])
        more = f" (+{len(missing) - 5} more)" if len(missing) > 5 else ""
        raise ValidationError(f"missing feature files: {shown}{more}")


def _predict_records(records, features_by_id, bundle: CheckpointBundle, chunk=64):
    """(q_r, q_p) arrays over the given records, batched for throughput."""
    q_r_all, q_p_all = [], []
    with no_grad():
        for start in range(0, len(records), chunk):
            part = records[start : start + chunk]
            arrays = [features_by_id[r.video_id] for r in part]
            lengths = np.array([a.shape[0] for a in arrays])
            padded = np.zeros((len(part), int(lengths.max()), arrays[0].shape[1]))
            for row, arr in enumerate(arrays):
                padded[row, : arr.shape[0]] = arr
            q_r, q_p = forward_batch(
                Tensor(padded), lengths, bundle.params, bundle.pooling
            )
            q_r_all.extend(float(v) for v in q_r.data)
            q_p_all.extend(float(v) for v in q_p.data)
    return np.array(q_r_all), np.array(q_p_all)


def evaluate_checkpoint(bundle: CheckpointBundle, datasets, features,
                        split="test", run_index=None):
    """Score one checkpoint; returns (EvalReport, scatter rows per dataset)."""
    per_dataset = {}
    scatter = {}
    for spec in datasets:
        records = _records_for_eval(spec, bundle, split)
        q_r, q_p = _predict_records(records, features[spec.name], bundle)
        mos = np.array([r.mos for r in records])
        aligned = (
            bundle.alignment_mode == "dataset_specific"
            and spec.name in bundle.params.alignments
        )
        if aligned:
            xi = bundle.params.alignments[spec.name].data
            mapped = xi[0] * q_p + xi[1]
        else:
            mapped = fit_4pl(q_p, mos).mapped
        per_dataset[spec.name] = DatasetMetrics(
            srocc=srocc_metric(q_p, mos),
            krocc=krocc(q_p, mos),
            plcc=plcc_metric(mapped, mos),
            rmse=rmse_metric(mapped, mos),
            n=len(records),
        )
        scatter[spec.name] = [
            ScatterRow(r.video_id, float(a), float(b), float(c), float(d))
            for r, a, b, c, d in zip(records, q_r, q_p, mapped, mos)
        ]
    return build_report(per_dataset, run_index=run_index), scatter


def report_to_dict(report: EvalReport, split):
    return {
        "split": split,
        "run_index": report.run_index,
        "per_dataset": {
            name: dataclasses.asdict(m) for name, m in sorted(report.per_dataset.items())
        },
        "weighted": {"srocc": report.weighted_srocc, "plcc": report.weighted_plcc},
    }


def aggregate_reports(reports):
    """Median/mean/std of every metric across repeated runs."""
    if not reports:
        raise ValidationError("no reports to aggregate")
    names = sorted(reports[0].per_dataset)
    out = {"runs": len(reports)}
    metric_names = ("srocc", "krocc", "plcc", "rmse")

    def stats(values):
        arr = np.asarray(values, dtype=np.float64)
        spread = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        return float(np.median(arr)), float(arr.mean()), spread

    for stat_idx, stat in enumerate(("median", "mean", "std")):
        block = {"per_dataset": {}, "weighted": {}}
        for name in names:
            block["per_dataset"][name] = {
                metric: stats([getattr(r.per_dataset[name], metric) for r in reports])[stat_idx]
                for metric in metric_names
            }
            block["per_dataset"][name]["n"] = reports[0].per_dataset[name].n
        block["weighted"] = {
            "srocc": stats([r.weighted_srocc for r in reports])[stat_idx],
            "plcc": stats([r.weighted_plcc for r in reports])[stat_idx],
        }
        out[stat] = block
    return out


# -- artifacts -------------------------------------------------------------


def write_scatter_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "q_r", "q_p", "mapped", "mos"])
        for row in rows:
            writer.writerow([row.video_id, row.q_r, row.q_p, row.mapped, row.mos])


def render_scatter_png(path, rows, dataset_name, metrics: DatasetMetrics):
    q_p = [r.q_p for r in rows]
    mos = [r.mos for r in rows]
    order = np.argsort(q_p)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(q_p, mos, s=12, alpha=0.6, label="videos")
    ax.plot(
        np.asarray(q_p)[order],
        np.asarray([r.mapped for r in rows])[order],
        color="tab:red",
        linewidth=1.5,
        label="fitted mapping",
    )
    ax.set_xlabel("perceptual quality")
    ax.set_ylabel("subjective score")
    ax.set_title(
        f"{dataset_name}: SROCC {metrics.srocc:.3f}, PLCC {metrics.plcc:.3f} (n={metrics.n})"
    )
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Date": None})
    plt.close(fig)


def render_training_curves_png(path, log):
    epochs = [entry["epoch"] for entry in log]
    names = sorted(log[0]["datasets"])
    fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(9, 3.5))
    for name in names:
        ax_loss.plot(epochs, [e["datasets"][name]["total"] for e in log], label=name)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.legend(fontsize=8)
    for name in names:
        ax_val.plot(epochs, [e["val_srocc"][name] for e in log], label=name)
    ax_val.plot(
        epochs,
        [e["weighted_val_srocc"] for e in log],
        color="black",
        linewidth=2.0,
        label="weighted",
    )
    ax_val.set_xlabel("epoch")
    ax_val.set_ylabel("validation SROCC")
    ax_val.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Date": None})
    plt.close(fig)
