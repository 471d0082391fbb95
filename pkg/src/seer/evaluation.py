"""Cleaning, per-timestep confusion counting and precision/recall reporting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import SequenceRecord, stack
from .errors import ConfigError, DataError
from .planner import IntentionLabel, NUM_CLASSES
from .rnn import RnnModel, forward

STOP_POLICIES = ("drop", "decelerate")


def clean(records, stop_as: str = "drop") -> list[SequenceRecord]:
    """Drop every sequence containing a CarFollow frame.

    Stop frames either drop their sequence too (``"drop"``) or are relabelled
    Decelerate (``"decelerate"``).
    """
    if stop_as not in STOP_POLICIES:
        raise ConfigError("stop_as", f"must be one of {STOP_POLICIES}")
    out = []
    for rec in records:
        labels = rec.labels
        if np.any(labels == IntentionLabel.CAR_FOLLOW):
            continue
        if np.any(labels == IntentionLabel.STOP):
            if stop_as == "drop":
                continue
            labels = np.where(labels == IntentionLabel.STOP, IntentionLabel.DECELERATE, labels)
            rec = SequenceRecord(rec.sequence_id, rec.agent_id, rec.scene, rec.features, labels,
                                 rec.timestamps_ms, rec.split)
        if np.any(labels >= NUM_CLASSES):
            continue
        out.append(rec)
    return out


class ConfusionMatrix:
    """Counts of (true label, predicted label) timesteps; rows are truth."""

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or np.any(counts < 0):
            raise DataError("confusion counts must be a non-negative square matrix")
        self.counts = counts

    @classmethod
    def from_pairs(cls, truth, pred, num_classes: int = NUM_CLASSES) -> ConfusionMatrix:
        truth = np.asarray(truth, dtype=np.int64).ravel()
        pred = np.asarray(pred, dtype=np.int64).ravel()
        if truth.shape != pred.shape:
            raise DataError("truth and prediction lengths differ")
        if truth.size and (truth.min() < 0 or pred.min() < 0
                           or max(truth.max(), pred.max()) >= num_classes):
            raise DataError(f"labels must lie in [0, {num_classes})")
        counts = np.bincount(truth * num_classes + pred, minlength=num_classes ** 2)
        return cls(counts.reshape(num_classes, num_classes))

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def truth_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def predicted_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def binomial_error(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


@dataclass(frozen=True)
class ClassMetrics:
    """``None`` marks a metric whose denominator is zero."""

    label: int
    precision: float | None
    recall: float | None
    precision_err: float | None
    recall_err: float | None
    support: int  # truth timesteps (recall denominator)
    predicted: int  # predicted timesteps (precision denominator)

    @property
    def name(self) -> str:
        return IntentionLabel(self.label).display

    def to_dict(self) -> dict:
        return {"label": self.label, "name": self.name, "precision": self.precision,
                "recall": self.recall, "precision_err": self.precision_err,
                "recall_err": self.recall_err, "support": self.support, "predicted": self.predicted}


def class_metrics(cm: ConfusionMatrix) -> list[ClassMetrics]:
    out = []
    truth, predicted = cm.truth_counts(), cm.predicted_counts()
    for c in range(cm.num_classes):
        tp = int(cm.counts[c, c])
        n_p, n_r = int(predicted[c]), int(truth[c])
        p = tp / n_p if n_p else None
        r = tp / n_r if n_r else None
        out.append(ClassMetrics(c, p, r, binomial_error(p, n_p) if n_p else None,
                                binomial_error(r, n_r) if n_r else None, n_r, n_p))
    return out


def three_class_view(metrics: list[ClassMetrics]) -> list[ClassMetrics]:
    """Rows for LaneKeep and the two lane changes, as reported per class."""
    return [m for m in metrics if m.label < 3]


def predict_records(model: RnnModel, records, batch: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    x, y = stack(list(records))
    check_compatible(model, x.shape[2], x.shape[1])
    pred = np.concatenate([np.argmax(forward(x[i:i + batch], model), axis=-1)
                           for i in range(0, len(x), batch)])
    return y, pred


def check_compatible(model: RnnModel, dims: int, T: int, dataset_variant: str | None = None) -> None:
    cfg = model.config
    variant = dataset_variant or {2: "A2", 3: "A3"}.get(dims, f"D{dims}")
    if dims != cfg.input_dim:
        raise ConfigError("feature_variant", f"model expects {cfg.feature_variant}, "
                                             f"dataset has {variant}")
    if T != cfg.T:
        raise ConfigError("T", f"model expects T={cfg.T}, dataset has T={T}")


def evaluate(model: RnnModel, records) -> tuple[ConfusionMatrix, list[ClassMetrics]]:
    """Per-timestep argmax evaluation over cleaned records."""
    records = list(records)
    if not records:
        cm = ConfusionMatrix(np.zeros((model.config.num_classes,) * 2, dtype=np.int64))
        return cm, class_metrics(cm)
    y, pred = predict_records(model, records)
    if y.max() >= model.config.num_classes:
        raise DataError("records contain raw-only labels; clean them first")
    cm = ConfusionMatrix.from_pairs(y, pred, model.config.num_classes)
    return cm, class_metrics(cm)


# -- reports -------------------------------------------------------------------------

@dataclass
class ReportBlock:
    """One evaluated configuration: cell kind, feature variant, T and scene."""

    cell: str
    feature_variant: str
    T: int
    scene: str
    confusion: ConfusionMatrix
    folds: list = field(default_factory=list)  # (train seed, test seed) or k-fold ids
    train_accuracy: float | None = None

    @property
    def metrics(self) -> list[ClassMetrics]:
        return class_metrics(self.confusion)

    def metric(self, label: int) -> ClassMetrics:
        return self.metrics[label]

    def to_dict(self) -> dict:
        metrics = self.metrics
        return {"cell": self.cell, "feature_variant": self.feature_variant, "T": self.T,
                "scene": self.scene, "timesteps": self.confusion.total,
                "folds": [list(f) for f in self.folds], "train_accuracy": self.train_accuracy,
                "confusion": self.confusion.counts.tolist(),
                "classes": [m.to_dict() for m in metrics],
                "three_class": [m.to_dict() for m in three_class_view(metrics)]}


_NUM_OR_NULL = {"type": ["number", "null"], "minimum": 0, "maximum": 1}
_CLASS_ROW = {
    "type": "object",
    "required": ["label", "name", "precision", "recall", "precision_err", "recall_err",
                 "support", "predicted"],
    "properties": {"label": {"type": "integer", "minimum": 0}, "name": {"type": "string"},
                   "precision": _NUM_OR_NULL, "recall": _NUM_OR_NULL,
                   "precision_err": _NUM_OR_NULL, "recall_err": _NUM_OR_NULL,
                   "support": {"type": "integer", "minimum": 0},
                   "predicted": {"type": "integer", "minimum": 0}},
    "additionalProperties": False,
}
REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["version", "blocks"],
    "properties": {
        "version": {"const": 1},
        "blocks": {"type": "array", "items": {
            "type": "object",
            "required": ["cell", "feature_variant", "T", "scene", "timesteps", "confusion",
                         "classes", "three_class"],
            "properties": {
                "cell": {"enum": ["lstm", "gru"]},
                "feature_variant": {"enum": ["A2", "A3"]},
                "T": {"type": "integer", "minimum": 1},
                "scene": {"enum": ["highway", "urban"]},
                "timesteps": {"type": "integer", "minimum": 0},
                "folds": {"type": "array"},
                "train_accuracy": {"type": ["number", "null"]},
                "confusion": {"type": "array", "items": {"type": "array",
                                                         "items": {"type": "integer", "minimum": 0}}},
                "classes": {"type": "array", "items": _CLASS_ROW},
                "three_class": {"type": "array", "items": _CLASS_ROW, "maxItems": 3},
            },
        }},
    },
}


def report_json(blocks: list[ReportBlock]) -> str:
    return json.dumps({"version": 1, "blocks": [b.to_dict() for b in blocks]}, indent=2)


def _fmt(value, err) -> str:
    if value is None:
        return "        n/a     "
    return f"{100 * value:6.2f} ± {100 * err:5.2f}"


def format_table(blocks: list[ReportBlock], three_class: bool = False) -> str:
    lines = []
    for b in blocks:
        lines.append(f"{b.cell.upper()}  features={b.feature_variant}  T={b.T}  scene={b.scene}  "
                     f"timesteps={b.confusion.total}")
        lines.append(f"  {'class':<20} {'precision %':>16} {'recall %':>16}")
        rows = three_class_view(b.metrics) if three_class else b.metrics
        for m in rows:
            lines.append(f"  {m.label} {m.name:<18} {_fmt(m.precision, m.precision_err):>16} "
                         f"{_fmt(m.recall, m.recall_err):>16}")
        lines.append("")
    return "\n".join(lines)
