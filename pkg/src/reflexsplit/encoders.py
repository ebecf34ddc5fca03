"""Global (semantic) and local (texture) feature pyramids."""

from __future__ import annotations

from typing import Callable

import torch
import torch.nn as nn

from .config import GFEB_LEVELS, FeaturePyramid, ModelConfig, ShapeError
from .layers import LayerNorm2d, StreamPair, check_same_shape


class MuGIBlock(nn.Module):
    """Mutual gated interaction between the two streams.

    Each stream runs a 3x3 conv feature path; the path is multiplied by a
    sigmoid gate computed (1x1 conv) from ``[other || own]`` channels, i.e.
    gated by the opposite stream, projected by a 1x1 conv and added back.
    """

    def __init__(self, channels: int, prenorm: bool = True):
        super().__init__()
        c = channels
        self.norm = StreamPair(lambda: LayerNorm2d(c) if prenorm else nn.Identity())
        self.path = StreamPair(lambda: nn.Conv2d(c, c, 3, padding=1))
        # gate.t is computed from the transmission stream and applied to r, and vice versa
        self.gate = StreamPair(lambda: nn.Conv2d(2 * c, c, 1))
        self.proj = StreamPair(lambda: nn.Conv2d(c, c, 1))

    def forward(self, xt, xr):
        check_same_shape(xt, xr, what="MuGI streams")
        nt, nr = self.norm(xt, xr)
        gate_from_t = torch.sigmoid(self.gate.t(torch.cat([nt, nr], 1)))
        gate_from_r = torch.sigmoid(self.gate.r(torch.cat([nr, nt], 1)))
        ft, fr = self.path(nt, nr)
        return xt + self.proj.t(ft * gate_from_r), xr + self.proj.r(fr * gate_from_t)


class MuGIStack(nn.Sequential):
    def forward(self, xt, xr):
        for block in self:
            xt, xr = block(xt, xr)
        return xt, xr


class LocalEncoder(nn.Module):
    """Per-stream 3x3 stem, then (MuGI stack, strided 2x2 conv) per level."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.channel_schedule
        self.stem = StreamPair(lambda: nn.Conv2d(3, c[0], 3, padding=1))
        self.mugi = nn.ModuleList(
            MuGIStack(*[MuGIBlock(c[lvl]) for _ in range(config.mugi_blocks)])
            for lvl in range(5))
        self.down = nn.ModuleList(
            StreamPair(lambda lvl=lvl: nn.Conv2d(c[lvl], c[lvl + 1], 2, stride=2))
            for lvl in range(5))

    def forward(self, image):
        et, er = self.stem(image, image)
        maps_t, maps_r = {0: et}, {0: er}
        for lvl in range(5):
            et, er = self.mugi[lvl](et, er)
            et, er = self.down[lvl](et, er)
            maps_t[lvl + 1], maps_r[lvl + 1] = et, er
        return FeaturePyramid("LFEB", maps_t), FeaturePyramid("LFEB", maps_r)


class StubGlobalEncoder(nn.Module):
    """Strided-conv stand-in for a pretrained hierarchical backbone.

    Patch-embeds by 4 (level 2) and then halves resolution while doubling
    channels, producing the same level 2..5 shapes a Swin-style backbone does.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.channel_schedule
        self.embed = nn.Sequential(nn.Conv2d(3, c[2], 4, stride=4), LayerNorm2d(c[2]))
        self.stages = nn.ModuleList(
            nn.Sequential(nn.GELU(), nn.Conv2d(c[lvl], c[lvl + 1], 2, stride=2), LayerNorm2d(c[lvl + 1]))
            for lvl in (2, 3, 4))

    def forward(self, image):
        x = self.embed(image)
        out = {2: x}
        for lvl, stage in zip((3, 4, 5), self.stages):
            x = stage(x)
            out[lvl] = x
        return out


_BACKENDS: dict[str, Callable[[ModelConfig], nn.Module]] = {}


def register_global_encoder(name: str, factory: Callable[[ModelConfig], nn.Module]) -> None:
    """Make ``factory(config)`` available as ``gfeb.backend = external:<name>``."""
    _BACKENDS[name] = factory


def make_global_backend(config: ModelConfig) -> nn.Module:
    spec = config.gfeb_backend
    if spec == "stub":
        return StubGlobalEncoder(config)
    name = spec.split(":", 1)[1]
    if name not in _BACKENDS:
        raise KeyError(f"no global encoder registered as {name!r}")
    return _BACKENDS[name](config)


class GlobalEncoderAdapter(nn.Module):
    """Wraps a backbone and enforces the level 2..5 shape contract on its output.

    The backbone may return a mapping ``{level: map}`` or a sequence of four
    maps ordered by level.
    """

    def __init__(self, backend: nn.Module, config: ModelConfig):
        super().__init__()
        self.backend = backend
        self.channels = config.channel_schedule
        if config.gfeb_freeze:
            for p in backend.parameters():
                p.requires_grad_(False)

    def forward(self, image) -> FeaturePyramid:
        raw = self.backend(image)
        if not isinstance(raw, dict):
            raw = list(raw)
            if len(raw) != len(GFEB_LEVELS):
                raise ShapeError(f"global encoder returned {len(raw)} maps, expected 4")
            raw = dict(zip(GFEB_LEVELS, raw))
        return FeaturePyramid("GFEB", dict(raw)).check(image.shape[-1], self.channels)
