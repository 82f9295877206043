"""Balanced accuracy, model evaluation and experiment-grid reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, ParameterError
from .nn import no_grad


@dataclass
class Metrics:
    balanced_accuracy: float
    per_class_recall: np.ndarray  # NaN for classes absent from y
    confusion: np.ndarray  # rows: true class, columns: predicted class
    n: int

    def to_dict(self) -> dict:
        return {
            "balanced_accuracy": self.balanced_accuracy,
            "per_class_recall": [None if math.isnan(r) else float(r) for r in self.per_class_recall],
            "confusion": self.confusion.tolist(),
            "n": self.n,
        }


def balanced_accuracy(y, y_pred, n_classes: int | None = None) -> Metrics:
    """Mean per-class recall over the classes present in ``y``.

    ``y`` may be one-hot ``(N, K)`` or integer labels ``(N,)``; ``y_pred``
    holds integer predictions.
    """
    y = np.asarray(y)
    if y.ndim == 2:
        n_classes = y.shape[1] if n_classes is None else n_classes
        y = y.argmax(axis=1)
    y = y.astype(np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y.size == 0:
        raise ParameterError("balanced accuracy of an empty set is undefined")
    if y.shape != y_pred.shape:
        raise ParameterError(f"label shapes differ: {y.shape} vs {y_pred.shape}")
    if n_classes is None:
        n_classes = int(max(y.max(), y_pred.max())) + 1
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y, y_pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan)
    return Metrics(float(np.nanmean(recall)), recall, confusion, int(y.size))


def predict_proba(model, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Class probabilities for ``(N, C, W)`` inputs in eval mode."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = [model(inputs[i:i + batch_size]).data for i in range(0, len(inputs), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(out, axis=0)


def evaluate(model, windows, batch_size: int = 64) -> Metrics:
    """Balanced accuracy of ``model`` (eval mode) on labelled windows."""
    if not windows:
        raise InsufficientDataError("cannot evaluate on an empty split")
    inputs = np.stack([w.data for w in windows])
    labels = np.array([w.label for w in windows], dtype=np.int64)
    probs = predict_proba(model, inputs, batch_size)
    return balanced_accuracy(labels, probs.argmax(axis=1), n_classes=probs.shape[1])


# -- reports -------------------------------------------------------------------

REPORT_KEYS = ("variant", "r_train", "w_self", "split")


def run_experiment_grid(configs, runner) -> list[dict]:
    """Run ``runner(config)`` for every config and collect report rows.

    ``runner`` returns ``{split: balanced_accuracy}``. A run that raises is
    recorded as one row with ``status = "failed"`` and the grid continues.
    """
    rows = []
    for config in configs:
        key = {
            "variant": getattr(config, "variant", "?"),
            "r_train": getattr(config, "r_train", None),
            "w_self": getattr(config, "w_self", None),
            "seed": getattr(config, "seed", None),
        }
        try:
            result = runner(config)
        except Exception as exc:  # a failed run must not stop the grid
            rows.append({**key, "split": None, "balanced_accuracy": None,
                         "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
            continue
        for split, acc in result.items():
            rows.append({**key, "split": split, "balanced_accuracy": acc, "status": "ok"})
    return rows


def aggregate_rows(rows) -> list[dict]:
    """Merge seeds: mean, min and max balanced accuracy per (variant, r_train, w_self, split)."""
    groups: dict = {}
    for row in rows:
        key = tuple(row.get(k) for k in REPORT_KEYS)
        entry = groups.setdefault(key, {"values": [], "failed": 0})
        if row.get("status") == "ok" and row.get("balanced_accuracy") is not None:
            entry["values"].append(row["balanced_accuracy"])
        else:
            entry["failed"] += 1
    out = []
    for key, entry in groups.items():
        values = entry["values"]
        out.append({
            **dict(zip(REPORT_KEYS, key)),
            "mean": float(np.mean(values)) if values else None,
            "min": float(np.min(values)) if values else None,
            "max": float(np.max(values)) if values else None,
            "runs": len(values),
            "failed": entry["failed"],
        })
    return out


def _pct(value) -> str:
    return "-" if value is None else f"{100 * value:.1f}%"


def format_table(rows, splits=("validation", "test_a", "test_b")) -> str:
    """Plain-text table with one line per (variant, r_train, w_self) and a column per split.

    Accepts raw rows or :func:`aggregate_rows` output; aggregated cells show
    ``mean ±half-range`` when more than one run contributed.
    """
    aggregated = rows if rows and "mean" in rows[0] else aggregate_rows(rows)
    lines = {}
    for row in aggregated:
        key = (row["variant"], row["r_train"], row["w_self"])
        cells = lines.setdefault(key, {})
        if row["split"] is None:
            cells["_failed"] = True
            continue
        cell = _pct(row["mean"])
        if row["runs"] > 1 and row["mean"] is not None:
            cell += f" ±{100 * (row['max'] - row['min']) / 2:.1f}"
        if row.get("failed"):
            cell += " (failed runs: %d)" % row["failed"]
        cells[row["split"]] = cell

    header = ["r_train", "W_Self", "Experiment", *[s.replace("_", " ").title() for s in splits]]
    body = []
    for (variant, r_train, w_self), cells in lines.items():
        status = "FAILED" if cells.get("_failed") and len(cells) == 1 else None
        body.append([
            "-" if r_train is None else f"{100 * r_train:g}%",
            "-" if w_self is None else f"{w_self:g}sec",
            str(variant),
            *[status or cells.get(s, "-") for s in splits],
        ])
    if not body:
        return ""
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    fmt = "  ".join("{:<%d}" % w for w in widths)
    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([fmt.format(*header), rule, *(fmt.format(*r) for r in body)])


def write_report(path_prefix, rows) -> None:
    """Write ``<prefix>.txt`` (human table) and ``<prefix>.json`` (rows)."""
    with open(f"{path_prefix}.txt", "w") as fh:
        fh.write(format_table(rows) + "\n")
    with open(f"{path_prefix}.json", "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
