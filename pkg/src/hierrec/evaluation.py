"""Top-k / coherent accuracy metrics and the ablation harness."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset, Splits
from .encoding import ProjectionParams
from .hier import HierPrediction, predict, predict_independent
from .taxonomy import SCORES_PER_ITEM, Taxonomy
from .trainpipe import TrainConfig, run_forward, train

METRIC_COLUMNS = ["c1_top1", "c1_top3", "c2_top1_independent", "c2_top1_coherent", "n_eval"]

ABLATION_VARIANTS = [
    ("full", {}),
    ("no_cross", {"no_cross": True}),
    ("no_hier_units", {"no_hier_units": True}),
    ("video_only", {"video_only": True}),
    ("text_only", {"text_only": True}),
    ("ce_loss", {"ce_loss": True}),
]


def topk_accuracy(scores, labels, k: int) -> float:
    """Fraction of rows whose label is among the k best scores (ties favour lower index)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if k > scores.shape[1] or k < 1:
        raise ValueError(f"k={k} invalid for {scores.shape[1]} classes")
    if len(labels) == 0:
        return 0.0
    # stable sort on negated scores keeps lower indices first among ties
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float(np.mean((order == labels[:, None]).any(axis=1)))


def coherent_c2_accuracy(pred: HierPrediction, labels) -> float:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1, 2)
    if len(pred.item) != len(labels):
        raise ValueError(f"{len(pred.item)} predictions for {len(labels)} labels")
    if len(labels) == 0:
        return 0.0
    return float(np.mean((pred.item == labels[:, 0]) & (pred.score == labels[:, 1])))


@dataclass
class MetricsReport:
    c1_top1: float
    c1_top3: float
    c2_top1_independent: float
    c2_top1_coherent: float
    n_eval: int
    confusion_c1: np.ndarray = field(repr=False, default=None)
    confusion_c2: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for name in METRIC_COLUMNS[:-1]:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.c2_top1_coherent > self.c1_top1 + 1e-12:
            raise AssertionError("coherent C2 accuracy exceeds C1 accuracy")

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_COLUMNS}

    def to_json(self) -> dict:
        out = self.summary()
        out["confusion_c1"] = self.confusion_c1.tolist()
        out["confusion_c2"] = self.confusion_c2.tolist()
        return out


def _confusion(truth: np.ndarray, pred: np.ndarray, m: int) -> np.ndarray:
    out = np.zeros((m, m), dtype=np.int64)
    np.add.at(out, (truth, pred), 1)
    return out


def evaluate(
    params: ProjectionParams,
    ds: LabeledDataset,
    split,
    taxonomy: Taxonomy,
    flags: TrainConfig | None = None,
) -> MetricsReport:
    flags = flags or TrainConfig()
    idx = np.asarray(split, dtype=np.int64)
    labels = ds.labels[idx]
    j = taxonomy.n_items
    if len(idx) == 0:
        z = np.zeros((j, j), dtype=np.int64)
        return MetricsReport(0.0, 0.0, 0.0, 0.0, 0, z, np.zeros((3 * j, 3 * j), dtype=np.int64))
    out = run_forward(ds.embeddings.subset(idx), labels, flags, params)
    head = out.head
    pred = predict(head)
    indep = predict_independent(head)
    flat_truth = labels[:, 0] * SCORES_PER_ITEM + labels[:, 1]
    s1 = head.S_hat_C1.data
    return MetricsReport(
        c1_top1=topk_accuracy(s1, labels[:, 0], 1),
        c1_top3=topk_accuracy(s1, labels[:, 0], min(3, j)),
        c2_top1_independent=float(np.mean(indep == flat_truth)),
        c2_top1_coherent=coherent_c2_accuracy(pred, labels),
        n_eval=len(idx),
        confusion_c1=_confusion(labels[:, 0], pred.item, j),
        confusion_c2=_confusion(flat_truth, pred.flat, j * SCORES_PER_ITEM),
    )


def run_ablation(
    ds: LabeledDataset,
    splits: Splits,
    taxonomy: Taxonomy,
    base_cfg: TrainConfig,
    split: str = "test",
) -> list[dict]:
    """Train and evaluate the full model plus each single-flag ablation with shared seeds."""
    rows = []
    for name, flags in ABLATION_VARIANTS:
        cfg = base_cfg.replace(**flags)
        report = train(ds, splits, taxonomy, cfg)
        metrics = evaluate(report.params, ds, getattr(splits, split), taxonomy, cfg)
        row = {"variant": name, "flat_baseline": name == "no_hier_units", "seed": cfg.seed}
        row.update(metrics.summary())
        rows.append(row)
    return rows


ABLATION_COLUMNS = ["variant", "flat_baseline", "seed"] + METRIC_COLUMNS


def write_metrics_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_ablation(rows: list[dict], directory) -> None:
    directory = Path(directory)
    write_metrics_csv(directory / "ablation_table.csv", rows, ABLATION_COLUMNS)
    (directory / "ablation_table.json").write_text(json.dumps(rows, indent=2) + "\n")
