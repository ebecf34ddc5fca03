"""Training objective: six weighted terms, all mean-reduced over elements."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import LossWeights
from .layers import check_same_shape

log = logging.getLogger(__name__)

TERMS = ("rec", "refl", "vgg", "exclu", "recons", "color")


class NumericalError(RuntimeError):
    pass


def charbonnier(pred, gt, eps: float = 1e-6):
    check_same_shape(pred, gt, what="charbonnier")
    if eps <= 0:
        raise ValueError("eps must be positive")
    return torch.sqrt((pred - gt) ** 2 + eps * eps).mean()


def reflection_l1(pred_r, gt_r):
    check_same_shape(pred_r, gt_r, what="reflection l1")
    return (pred_r - gt_r).abs().mean()


class PerceptualExtractor(Protocol):
    tap_weights: Sequence[float]

    def __call__(self, x) -> list[torch.Tensor]: ...


class StubPerceptualExtractor(nn.Module):
    """Five-tap random conv pyramid with frozen weights, standing in for VGG-19."""

    def __init__(self, widths=(8, 16, 16, 32, 32), seed: int = 0, dtype=torch.float32):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.stages = nn.ModuleList()
        prev = 3
        for k, w in enumerate(widths):
            conv = nn.Conv2d(prev, w, 3, padding=1, stride=1 if k == 0 else 2)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) / math.sqrt(9 * prev))
                conv.bias.zero_()
            self.stages.append(conv)
            prev = w
        self.requires_grad_(False)
        self.to(dtype)
        self.tap_weights = [1.0 / len(widths)] * len(widths)

    def forward(self, x):
        feats = []
        for conv in self.stages:
            x = F.gelu(conv(x))
            feats.append(x)
        return feats


class VGGPerceptualExtractor(nn.Module):
    """Pretrained VGG-19 taps after layers 2, 7, 12, 21, 30 of ``features``.

    Needs torchvision; pass ``weights="DEFAULT"`` to load ImageNet weights.
    """

    LAYERS = (2, 7, 12, 21, 30)
    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, weights=None):
        super().__init__()
        from torchvision.models import vgg19

        self.features = vgg19(weights=weights).features[: max(self.LAYERS) + 1].eval()
        self.requires_grad_(False)
        self.register_buffer("mean", torch.tensor(self.MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(self.STD).view(1, 3, 1, 1))
        self.tap_weights = [1.0 / len(self.LAYERS)] * len(self.LAYERS)

    def forward(self, x):
        x = (x - self.mean) / self.std
        feats = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.LAYERS:
                feats.append(x)
        return feats


def perceptual(pred_t, gt_t, extractor):
    check_same_shape(pred_t, gt_t, what="perceptual")
    total = pred_t.new_zeros(())
    for w, fp, fg in zip(extractor.tap_weights, extractor(pred_t), extractor(gt_t)):
        total = total + w * (fp - fg).abs().mean()
    return total


def _forward_gradients(x):
    return x[..., :, 1:] - x[..., :, :-1], x[..., 1:, :] - x[..., :-1, :]


def exclusion(pred_t, pred_r, scales: int = 3):
    """Gradient-product penalty summed over ``scales`` successive 2x bilinear downsamples."""
    check_same_shape(pred_t, pred_r, what="exclusion")
    coarsest = min(pred_t.shape[-2:]) // 2 ** (scales - 1)
    if coarsest < 2:
        raise ValueError(f"image {tuple(pred_t.shape[-2:])} too small for {scales} exclusion scales")
    total = pred_t.new_zeros(())
    t, r = pred_t, pred_r
    for k in range(scales):
        if k:
            t = F.interpolate(t, scale_factor=0.5, mode="bilinear", align_corners=False)
            r = F.interpolate(r, scale_factor=0.5, mode="bilinear", align_corners=False)
        tx, ty = _forward_gradients(t)
        rx, ry = _forward_gradients(r)
        total = total + (tx * rx).abs().mean() + (ty * ry).abs().mean()
    return total


def reconstruction_consistency(pred_t, pred_r, pred_rr, input_i):
    check_same_shape(pred_t, pred_r, pred_rr, input_i, what="reconstruction consistency")
    return (pred_t + pred_r + pred_rr - input_i).abs().mean()


def color_consistency(pred_r, gt_r):
    """Channel-wise L1 gaps of spatial mean and population std, summed over channels.

    Averaged over the batch.
    """
    check_same_shape(pred_r, gt_r, what="color consistency")
    dims = (-2, -1)
    mean_gap = (pred_r.mean(dims) - gt_r.mean(dims)).abs()
    std_gap = (pred_r.std(dims, correction=0) - gt_r.std(dims, correction=0)).abs()
    return (mean_gap + std_gap).sum(-1).mean()


@dataclass
class LossReport:
    terms: dict[str, torch.Tensor]
    weights: dict[str, float]
    total: torch.Tensor = field(init=False)

    def __post_init__(self):
        self.total = sum(self.weights[k] * self.terms[k] for k in TERMS)

    def as_floats(self) -> dict[str, float]:
        out = {k: float(v.detach()) for k, v in self.terms.items()}
        out["total"] = float(self.total.detach())
        return out


def total_loss(pred, target_t, target_r, input_i, weights: LossWeights = LossWeights(),
               extractor=None, eps: float = 1e-6) -> LossReport:
    """``pred`` is a ``SeparationOutput`` (anything with transmission/reflection/residue)."""
    t_hat, r_hat, rr_hat = pred.transmission, pred.reflection, pred.residue
    w = weights.as_dict()
    terms = {
        "rec": charbonnier(t_hat, target_t, eps),
        "refl": reflection_l1(r_hat, target_r),
        "exclu": exclusion(t_hat, r_hat),
        "recons": reconstruction_consistency(t_hat, r_hat, rr_hat, input_i),
        "color": color_consistency(r_hat, target_r),
    }
    if extractor is not None:
        terms["vgg"] = perceptual(t_hat, target_t, extractor)
    elif w["vgg"] == 0:
        log.warning("no perceptual extractor registered; vgg term reported as 0")
        terms["vgg"] = t_hat.new_zeros(())
    else:
        raise ValueError("perceptual loss weight is non-zero but no extractor is registered")
    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise NumericalError(f"loss term {name} is not finite ({float(value.detach())})")
    return LossReport({k: terms[k] for k in TERMS}, w)
