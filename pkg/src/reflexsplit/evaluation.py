"""Benchmark evaluation: per-image PSNR/SSIM on the transmission, plus stream NCC."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .config import ATTENTION_LEVELS
from .dataset import DataError, iter_triplets
from .metrics import psnr, ssim, stream_ncc
from .training import to_image, to_tensor

CSV_COLUMNS = ("image_id", "psnr_db", "ssim") + tuple(f"ncc_l{l}" for l in ATTENTION_LEVELS)


@dataclass
class ImageMetrics:
    image_id: str
    psnr_db: float
    ssim: float
    ncc: dict[int, float] = field(default_factory=dict)

    @property
    def identical(self) -> bool:
        return math.isinf(self.psnr_db)


@dataclass
class MetricReport:
    rows: list[ImageMetrics] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)  # (image_id, reason)

    def mean(self, column: str) -> float:
        if column.startswith("ncc_l"):
            level = int(column[5:])
            vals = [r.ncc[level] for r in self.rows if level in r.ncc]
        else:
            vals = [getattr(r, column) for r in self.rows]
        return float(np.mean(vals)) if vals else math.nan

    def means(self) -> dict[str, float]:
        return {c: self.mean(c) for c in CSV_COLUMNS[1:]}

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r.image_id, repr(r.psnr_db), repr(r.ssim)]
                           + [repr(r.ncc[l]) if l in r.ncc else "" for l in ATTENTION_LEVELS])
        return path

    @classmethod
    def read_csv(cls, path) -> "MetricReport":
        rows = []
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise DataError(f"{path}: unexpected columns {reader.fieldnames}")
            for rec in reader:
                ncc = {l: float(rec[f"ncc_l{l}"]) for l in ATTENTION_LEVELS if rec[f"ncc_l{l}"]}
                rows.append(ImageMetrics(rec["image_id"], float(rec["psnr_db"]), float(rec["ssim"]), ncc))
        return cls(rows)


class NetSeparator:
    """Adapts a ``ReflexSplitNet`` to the ``image -> output`` callable used by ``evaluate``."""

    def __init__(self, net, lambda_diff: float = 1.0):
        self.net, self.lambda_diff = net, lambda_diff

    def __call__(self, image: np.ndarray):
        self.net.eval()
        dtype = next(self.net.parameters()).dtype
        with torch.no_grad():
            return self.net(to_tensor(image, dtype), self.lambda_diff)


def _transmission(out) -> np.ndarray:
    t = out.transmission if hasattr(out, "transmission") else out
    if isinstance(t, torch.Tensor):
        t = to_image(t)
    return np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)


def _score(model, image_id: str, triplet, window: int) -> ImageMetrics:
    out = model(triplet.mixed)
    t_hat = _transmission(out)
    ncc = {level: stream_ncc(ft, fr, window)
           for level, (ft, fr) in sorted(getattr(out, "streams", {}).items())}
    return ImageMetrics(image_id, psnr(t_hat, triplet.transmission),
                        ssim(t_hat, triplet.transmission), ncc)


def evaluate_triplets(model: Callable, triplets, window: int = 12) -> MetricReport:
    return MetricReport([_score(model, f"{k:05d}", trip, window) for k, trip in enumerate(triplets)])


def evaluate(model: Callable, benchmark_dir, size: int | None = None, window: int = 12,
             csv_path=None) -> MetricReport:
    """Run ``model(mixed)`` on every manifest triplet under ``benchmark_dir``.

    ``model`` returns either an image or an object with ``transmission``; if
    it also carries ``streams`` (level -> decoder pair) NCC is recorded per
    level.  Records that cannot be read are listed in ``failures``.
    """
    report = MetricReport()
    for image_id, item in iter_triplets(benchmark_dir, size):
        if isinstance(item, DataError):
            report.failures.append((image_id, str(item)))
        else:
            report.rows.append(_score(model, image_id, item, window))
    if csv_path is not None:
        report.write_csv(csv_path)
    return report
