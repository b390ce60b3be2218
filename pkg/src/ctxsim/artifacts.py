"""Run outputs: checkpoints, CSV/JSON tables and an SVG scatter plot.

Floats are written with ``repr`` so files round-trip exactly and reruns
are byte-comparable.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import MlpParams

MANIFEST = "manifest.json"

# label colors for the scatter plot
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf"]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, rows: list, columns: list, stamp: dict) -> None:
    """One row per dict in ``rows``; ``stamp`` columns are appended to every row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns) + list(stamp))
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns] + [_fmt(v) for v in stamp.values()])


def write_json(path, data: dict) -> None:
    Path(path).write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def save_checkpoint(directory, params: MlpParams, stamp: dict, extra: dict | None = None) -> Path:
    """Raw little-endian float64 ``.bin`` per array plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, a in enumerate(params.arrays()):
        name = f"param_{i:02d}.bin"
        (directory / name).write_bytes(np.ascontiguousarray(a, dtype="<f8").tobytes())
        entries.append({"file": name, "shape": list(a.shape)})
    manifest = {"format": "float64-le", "widths": params.widths, "arrays": entries, **stamp}
    if extra:
        manifest.update(extra)
    write_json(directory / MANIFEST, manifest)
    return directory


def load_checkpoint(directory) -> tuple:
    """Returns ``(params, manifest)``."""
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.is_file():
        raise ConfigError(f"no checkpoint manifest at {path}")
    manifest = read_json(path)
    params = MlpParams.init(tuple(manifest["widths"]))
    arrays = []
    for entry in manifest["arrays"]:
        raw = (directory / entry["file"]).read_bytes()
        shape = tuple(entry["shape"])
        if len(raw) != 8 * int(np.prod(shape)):
            raise ConfigError(f"{entry['file']}: size does not match shape {shape}")
        arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64))
    params.load_arrays(arrays)
    return params, manifest


def scatter_svg(path, points, labels, stamp: dict, size: int = 480, title: str = "") -> None:
    """Points on a square canvas spanning [-1.1, 1.1]^2 with an axis box."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    pad = 20
    span = size - 2 * pad

    def px(v):
        return pad + (v + 1.1) / 2.2 * span

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        "<!-- " + " ".join(f"{k}={v}" for k, v in stamp.items()) + " -->",
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="white" stroke="black"/>',
        f'<circle cx="{px(0):.2f}" cy="{px(0):.2f}" r="{span / 2.2:.2f}" fill="none" stroke="#cccccc"/>',
    ]
    if title:
        lines.append(f'<text x="{pad}" y="{pad - 6}" font-size="12" font-family="sans-serif">{title}</text>')
    for (x, y), c in zip(points, labels):
        color = PALETTE[int(c) % len(PALETTE)]
        # svg y grows downward
        lines.append(f'<circle cx="{px(x):.2f}" cy="{px(-y):.2f}" r="2.5" fill="{color}" fill-opacity="0.7"/>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")
