"""Training loop, learning-rate schedule and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .config import OptimizerSpec, RunConfig, run_config_from_entries, run_config_to_entries
from .curriculum import CurriculumState, Strategy
from .losses import NumericalError, total_loss
from .metrics import psnr
from .model import ReflexSplitNet
from .synth import EpochSampler, build_epoch

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def cosine_lr(epoch: int, spec: OptimizerSpec) -> float:
    """Cosine annealing from ``spec.lr`` down to ``spec.eta_min`` over ``t_max`` epochs.

    Same closed form as ``torch.optim.lr_scheduler.CosineAnnealingLR``: the
    rate reaches ``eta_min`` at odd multiples of ``t_max`` and climbs back,
    so the curve repeats every ``2 * t_max`` epochs.
    """
    return spec.eta_min + (spec.lr - spec.eta_min) * (1 + math.cos(math.pi * epoch / spec.t_max)) / 2


def to_tensor(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).to(dtype).unsqueeze(0)


def to_image(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().double()[0].permute(1, 2, 0).numpy()


def parameter_layout_hash(net: torch.nn.Module) -> str:
    layout = [(k, tuple(v.shape)) for k, v in net.state_dict().items()]
    return hashlib.sha256(json.dumps(layout).encode()).hexdigest()[:16]


def save_checkpoint(path, net: ReflexSplitNet, optimizer, epoch: int, run_cfg: RunConfig,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "config": run_config_to_entries(run_cfg),
        "structural_hash": net.config.structural_hash(),
        "layout_hash": parameter_layout_hash(net),
        "params": net.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "rng_state": torch.get_rng_state(),
        "extra": extra or {},
    }, path)
    return path


class CheckpointError(RuntimeError):
    pass


def load_checkpoint(path, net: ReflexSplitNet | None = None):
    """Returns ``(net, payload)``; builds the net from the stored config when none is given."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('format_version')}")
    if net is None:
        net = ReflexSplitNet(run_config_from_entries(payload["config"]).model)
    if net.config.structural_hash() != payload["structural_hash"]:
        raise CheckpointError("checkpoint was written for a structurally different model config")
    if parameter_layout_hash(net) != payload["layout_hash"]:
        raise CheckpointError("parameter layout differs from the checkpoint")
    net.load_state_dict(payload["params"])
    return net, payload


@dataclass
class TrainResult:
    checkpoints: list[Path] = field(default_factory=list)
    log_path: Path | None = None
    history: list[dict] = field(default_factory=list)
    best_psnr: float = -math.inf


def _validate(net, triplets, lambda_diff) -> float:
    net.eval()
    scores = []
    with torch.no_grad():
        for trip in triplets:
            out = net(to_tensor(trip.mixed, next(net.parameters()).dtype), lambda_diff)
            scores.append(min(psnr(to_image(out.transmission).clip(0, 1), trip.transmission), 100.0))
    net.train()
    return float(np.mean(scores))


def train(net: ReflexSplitNet, sources: dict, run_cfg: RunConfig, out_dir, *,
          epochs: int | None = None, extractor=None, validation=None,
          lambda_diff_fn: Callable[[int], float] | None = None,
          max_steps: int | None = None) -> TrainResult:
    """Epoch loop: sample, forward with the epoch's curriculum, weighted loss, Adam step.

    Writes ``train_log.jsonl`` (one record per step) and ``epoch_XXXX.pt``
    checkpoints every ``train.checkpoint_every`` epochs and at the last
    epoch, plus ``best.pt`` when ``validation`` triplets are given.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec, mcfg = run_cfg.train, net.config
    epochs = mcfg.total_epochs if epochs is None else epochs
    torch.manual_seed(run_cfg.seed)
    dtype = next(net.parameters()).dtype
    sampler = EpochSampler(run_cfg.synth.pairs_per_epoch, run_cfg.synth.ratio, run_cfg.seed,
                           run_cfg.synth.augment, run_cfg.synth.reflection_blur)
    params = [p for p in net.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=spec.lr, weight_decay=spec.weight_decay)
    result = TrainResult(log_path=out_dir / "train_log.jsonl")
    last_good: Path | None = None
    step = 0
    net.train()
    with result.log_path.open("w") as logf:
        for epoch in range(epochs):
            lr = cosine_lr(epoch, spec)
            for group in optimizer.param_groups:
                group["lr"] = lr
            state = CurriculumState(epoch, mcfg.warmup_epochs, Strategy(mcfg.lambda_strategy))
            lam = state.lambda_diff if lambda_diff_fn is None else lambda_diff_fn(epoch)
            triplets = build_epoch(sampler, sources, epoch)
            for start in range(0, len(triplets), spec.batch_size):
                batch = triplets[start:start + spec.batch_size]
                i, t, r = (torch.cat([to_tensor(getattr(x, name), dtype) for x in batch])
                           for name in ("mixed", "transmission", "reflection"))
                optimizer.zero_grad(set_to_none=True)
                out = net(i, lam)
                try:
                    report = total_loss(out, t, r, i, run_cfg.loss.weights, extractor,
                                        run_cfg.loss.charbonnier_eps)
                except NumericalError as exc:
                    raise NumericalError(f"{exc}; last good checkpoint: {last_good}") from exc
                report.total.backward()
                optimizer.step()
                record = {"epoch": epoch, "step": step, "lr": lr, "lambda_diff": lam,
                          **report.as_floats()}
                result.history.append(record)
                logf.write(json.dumps(record) + "\n")
                step += 1
                if max_steps is not None and step >= max_steps:
                    break
            log.info("epoch %d done: lr=%.3g lambda_diff=%.3f last total=%.4f", epoch, lr, lam,
                     result.history[-1]["total"] if result.history else float("nan"))
            extra = {}
            if validation:
                score = _validate(net, validation, lam)
                extra["val_psnr"] = score
                if score > result.best_psnr:
                    result.best_psnr = score
                    save_checkpoint(out_dir / "best.pt", net, optimizer, epoch, run_cfg, extra)
            if (epoch + 1) % spec.checkpoint_every == 0 or epoch == epochs - 1:
                last_good = save_checkpoint(out_dir / f"epoch_{epoch:04d}.pt", net, optimizer,
                                            epoch, run_cfg, extra)
                result.checkpoints.append(last_good)
            if max_steps is not None and step >= max_steps:
                break
    return result
