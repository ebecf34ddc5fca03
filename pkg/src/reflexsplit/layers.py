"""Small modules shared by the encoder and decoder."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ShapeError


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel axis of a ``(B, C, H, W)`` map."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.norm = nn.LayerNorm(channels, eps=eps)

    def forward(self, x):
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class StreamPair(nn.Module):
    """Separate copies of one module for the transmission (``t``) and reflection (``r``) stream."""

    def __init__(self, factory):
        super().__init__()
        self.t = factory()
        self.r = factory()

    def forward(self, xt, xr):
        return self.t(xt), self.r(xr)


def _twin_name(name: str) -> str:
    parts = []
    for part in name.split("."):
        if part == "r":
            part = "t"
        elif part.endswith("_r"):
            part = part[:-2] + "_t"
        parts.append(part)
    return ".".join(parts)


def symmetrize_streams(module: nn.Module) -> nn.Module:
    """Copy every transmission-side weight onto its reflection-side twin, in place.

    Twins are found by name: ``r`` submodules mirror ``t`` ones and ``*_r``
    attributes mirror ``*_t``.
    """
    params = dict(module.named_parameters())
    with torch.no_grad():
        for name, p in params.items():
            twin = params.get(_twin_name(name))
            if twin is not None and twin is not p:
                p.copy_(twin)
    return module


def check_same_shape(*tensors, what: str = "inputs") -> None:
    shape = tensors[0].shape
    for x in tensors[1:]:
        if x.shape != shape:
            raise ShapeError(f"{what}: shape mismatch {tuple(shape)} vs {tuple(x.shape)}")


def pixel_shuffle_up(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    if x.shape[1] % (factor * factor):
        raise ShapeError(f"{x.shape[1]} channels not divisible by {factor * factor}")
    return F.pixel_shuffle(x, factor)


def pixel_unshuffle_down(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    return F.pixel_unshuffle(x, factor)
