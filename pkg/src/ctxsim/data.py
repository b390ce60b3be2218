"""Synthetic concentric-circle data and an m-per-class batch sampler."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass
class LabeledDataset:
    points: np.ndarray
    labels: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.ndim != 2 or self.points.shape[0] != self.labels.shape[0]:
            raise ConfigError("points must be (m, p) with one label per row")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def num_labels(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def indices_by_label(self) -> dict:
        return {int(c): np.flatnonzero(self.labels == c) for c in np.unique(self.labels)}


@dataclass(frozen=True)
class SamplerPlan:
    batches: tuple
    labels_per_batch: int
    samples_per_label: int

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def gen_concentric_circles(
    num_circles: int = 5,
    points_per_circle: int = 200,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> LabeledDataset:
    """Circle ``c`` has radius ``(c + 1) / num_circles`` and label ``c``.

    Angles are uniform; isotropic Gaussian noise of std ``noise_sigma`` is
    added to each point.
    """
    if num_circles < 2:
        raise ConfigError("need at least two circles")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_circles), points_per_circle)
    radii = (labels + 1) / num_circles
    angles = rng.uniform(0.0, 2.0 * np.pi, size=labels.shape[0])
    points = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    if noise_sigma > 0:
        points = points + rng.normal(0.0, noise_sigma, size=points.shape)
    meta = {
        "generator": "concentric_circles",
        "seed": seed,
        "noise_sigma": noise_sigma,
        "num_circles": num_circles,
        "points_per_circle": points_per_circle,
    }
    return LabeledDataset(points, labels, meta)


def m_per_class_sampler(
    dataset: LabeledDataset,
    labels_per_batch: int,
    k: int,
    epochs: int,
    seed: int,
    batches_per_epoch: int | None = None,
) -> SamplerPlan:
    """Each batch holds ``labels_per_batch`` distinct labels with ``k`` samples each.

    Labels are drawn uniformly without replacement, then ``k`` indices per
    label without replacement. ``batches_per_epoch`` defaults to
    ``len(dataset) // (labels_per_batch * k)``.
    """
    by_label = dataset.indices_by_label()
    short = [c for c, idx in by_label.items() if idx.shape[0] < k]
    if short:
        raise ConfigError(f"labels {short} have fewer than k={k} samples")
    if labels_per_batch > len(by_label):
        raise ConfigError(
            f"labels_per_batch={labels_per_batch} exceeds the {len(by_label)} labels available"
        )
    if batches_per_epoch is None:
        batches_per_epoch = max(1, len(dataset) // (labels_per_batch * k))
    rng = np.random.default_rng(seed)
    label_ids = np.array(sorted(by_label))
    batches = []
    for _ in range(epochs * batches_per_epoch):
        chosen = rng.choice(label_ids, size=labels_per_batch, replace=False)
        batch = []
        for c in chosen:
            batch.extend(rng.choice(by_label[int(c)], size=k, replace=False).tolist())
        batches.append(tuple(batch))
    return SamplerPlan(tuple(batches), labels_per_batch, k)


def save_csv(dataset: LabeledDataset, path, extra_header: dict | None = None) -> None:
    """Write ``x,y,label`` rows; floats use round-trip ``repr`` formatting."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        header = ["x", "y", "label"]
        if extra_header:
            header += list(extra_header)
        w.writerow(header)
        tail = [str(v) for v in (extra_header or {}).values()]
        for (x, y), c in zip(dataset.points, dataset.labels):
            w.writerow([repr(float(x)), repr(float(y)), int(c)] + tail)


def load_csv(path) -> LabeledDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"x", "y", "label"} <= rows[0].keys():
        raise ConfigError(f"{path}: expected an x,y,label header")
    points = np.array([[float(r["x"]), float(r["y"])] for r in rows])
    labels = np.array([int(r["label"]) for r in rows])
    return LabeledDataset(points, labels, {"source": str(path)})
