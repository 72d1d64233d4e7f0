"""Confusion matrices, accuracy metrics and report files (CSV / JSON / PGM)."""
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray

    @property
    def class_count(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


def confusion(preds, labels, k):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ConfigError(f"preds {preds.shape} and labels {labels.shape} must be equal-length 1-D")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ConfigError(f"{name} class out of range [0, {k}): {arr.min()}..{arr.max()}")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels.astype(np.intp), preds.astype(np.intp)), 1)
    return ConfusionMatrix(counts)


def metrics(cm):
    """Accuracy, per-class recall (classes with no samples omitted) and row-normalized matrix."""
    total = cm.total
    if total == 0:
        raise ConfigError("confusion matrix has no samples")
    rows = cm.counts.sum(axis=1)
    diag = np.diag(cm.counts)
    recall = {int(c): float(diag[c] / rows[c]) for c in range(cm.class_count) if rows[c] > 0}
    normalized = np.zeros(cm.counts.shape, dtype=np.float64)
    nz = rows > 0
    normalized[nz] = cm.counts[nz] / rows[nz, None]
    return {
        "accuracy": float(diag.sum() / total),
        "per_class_recall": recall,
        "normalized_matrix": normalized,
        "n_samples": total,
    }


def metrics_json(m, **extra):
    """JSON-ready dict: accuracy, per_class_recall (string keys), n_samples, then ``extra``."""
    out = {
        "accuracy": m["accuracy"],
        "per_class_recall": {str(k): v for k, v in m["per_class_recall"].items()},
        "n_samples": m["n_samples"],
    }
    out.update(extra)
    return out


def write_csv(cm, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true\\pred"] + list(range(cm.class_count)))
        for c in range(cm.class_count):
            w.writerow([c] + cm.counts[c].tolist())


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return ConfusionMatrix(np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64))


def heatmap_pgm(normalized, cell=1):
    """Binary PGM (P5) of a row-normalized matrix scaled to 0-255."""
    img = np.floor(np.clip(normalized, 0, 1) * 255 + 0.5).astype(np.uint8)
    if cell > 1:
        img = np.kron(img, np.ones((cell, cell), np.uint8))
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], np.uint8).reshape(h, w)


def export(cm, m, path, stem="confusion", **extra):
    """Write ``<stem>.csv``, ``<stem>_metrics.json`` and ``<stem>.pgm`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "csv": out / f"{stem}.csv",
        "json": out / f"{stem}_metrics.json",
        "pgm": out / f"{stem}.pgm",
    }
    write_csv(cm, files["csv"])
    files["json"].write_text(json.dumps(metrics_json(m, **extra), indent=2, sort_keys=True) + "\n")
    files["pgm"].write_bytes(heatmap_pgm(m["normalized_matrix"]))
    return files
