"""Ablation harness: trains each variant of one design axis at desk scale and tabulates it.

Row names follow the published ablation tables; every number in the output
comes from this artifact's own runs.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .evaluation import NetSeparator, evaluate_triplets
from .losses import StubPerceptualExtractor
from .model import ReflexSplitNet
from .synth import EpochSampler, build_epoch, procedural_sources
from .training import train

log = logging.getLogger(__name__)

AXES: dict[str, list[tuple[str, dict]]] = {
    "fusion": [
        ("(a) No Fusion (Direct Aggregation)", {"fusion": "direct"}),
        ("(b) Simple Concatenation", {"fusion": "concat"}),
        ("(c) Element-wise Addition", {"fusion": "add"}),
        ("(d) CrGF (Ours)", {"fusion": "crgf"}),
    ],
    "lfsb": [
        ("(a) Baseline", {"lfsb_variant": "baseline"}),
        ("(b) + Early Fusion", {"lfsb_variant": "early_fusion"}),
        ("(c) + SA", {"lfsb_variant": "sa"}),
        ("(d) + SA + CA", {"lfsb_variant": "sa_ca"}),
        ("(e) + Diff Sep", {"lfsb_variant": "diff_sep"}),
        ("(f) Full LFSB (Ours)", {"lfsb_variant": "full"}),
    ],
    "schedule": [
        ("Fixed λ (=0.5)", {"lambda_strategy": "fixed"}),
        ("Warmup only", {"lambda_strategy": "warmup_only"}),
        ("Depth-init only", {"lambda_strategy": "depth_init_only"}),
        ("Full strategy (Ours)", {"lambda_strategy": "full"}),
    ],
}

TABLE_COLUMNS = ("variant", "settings", "psnr_db", "ssim", "final_loss", "status")


@dataclass
class AblationRow:
    variant: str
    settings: dict
    psnr_db: float = math.nan
    ssim: float = math.nan
    final_loss: float = math.nan
    status: str = "not run"
    losses: list[float] = field(default_factory=list)

    def cells(self):
        settings = ";".join(f"{k}={v}" for k, v in self.settings.items())
        return [self.variant, settings, f"{self.psnr_db:.4f}", f"{self.ssim:.4f}",
                f"{self.final_loss:.6f}", self.status]


@dataclass
class AblationTable:
    axis: str
    rows: list[AblationRow]

    @property
    def variants(self) -> list[str]:
        return [r.variant for r in self.rows]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_COLUMNS)
            for row in self.rows:
                w.writerow(row.cells())
        return path

    def format(self) -> str:
        width = max(len(v) for v in self.variants)
        lines = [f"{'variant':<{width}}  psnr_db   ssim    final_loss  status"]
        for r in self.rows:
            lines.append(f"{r.variant:<{width}}  {r.psnr_db:7.3f}  {r.ssim:6.4f}  {r.final_loss:10.5f}  {r.status}")
        return "\n".join(lines)


def ablation_rows(axis: str) -> list[AblationRow]:
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    return [AblationRow(name, dict(settings)) for name, settings in AXES[axis]]


def run_ablation(axis: str, run_cfg: RunConfig, *, epochs: int = 1, train_pairs: int = 4,
                 val_pairs: int = 2, dry_run: bool = False, work_dir=None,
                 extractor=None) -> AblationTable:
    """Train every variant of ``axis`` from the same seed on procedural data.

    A failing variant is recorded in the row's status and the table is still
    returned.  ``dry_run`` skips training and yields the rows only.  Without
    an ``extractor`` the perceptual term uses the frozen random stand-in.
    """
    table = AblationTable(axis, ablation_rows(axis))
    if dry_run:
        return table
    size = run_cfg.model.image_size
    sources = {"synthetic": procedural_sources(train_pairs, size, run_cfg.seed)}
    val_sources = {"synthetic": procedural_sources(val_pairs, size, run_cfg.seed + 1)}
    validation = build_epoch(EpochSampler(val_pairs, (1.0, 0.0, 0.0), run_cfg.seed + 1),
                             val_sources, 0)
    if extractor is None and run_cfg.loss.weights.vgg:
        extractor = StubPerceptualExtractor(seed=run_cfg.seed)
    synth = dataclasses.replace(run_cfg.synth, pairs_per_epoch=train_pairs, ratio=(1.0, 0.0, 0.0))
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(work_dir or tmp)
        for k, row in enumerate(table.rows):
            cfg = dataclasses.replace(run_cfg, model=run_cfg.model.replace(**row.settings), synth=synth)
            try:
                net = ReflexSplitNet(cfg.model)
                result = train(net, sources, cfg, root / f"variant_{k}", epochs=epochs, extractor=extractor)
                row.losses = [rec["total"] for rec in result.history]
                row.final_loss = row.losses[-1]
                lam = result.history[-1]["lambda_diff"]
                report = evaluate_triplets(NetSeparator(net, lam), validation, cfg.model.window_size)
                row.psnr_db, row.ssim = report.mean("psnr_db"), report.mean("ssim")
                row.status = "ok"
            except Exception as exc:  # recorded, the table is still emitted
                log.exception("ablation variant %s failed", row.variant)
                row.status = f"failed: {type(exc).__name__}: {exc}"
    return table
