"""Full dual-stream separation network: encoders, feature mixing, hierarchical
decoding with fusion + LFSB stacks, output heads and the learnable residue."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .attention import LFSB, LFSBStack
from .config import ModelConfig, validate_config
from .curriculum import CurriculumState, Strategy
from .encoders import GlobalEncoderAdapter, LocalEncoder, MuGIBlock, MuGIStack, make_global_backend
from .fusion import direct_aggregate, make_fusion
from .layers import StreamPair, check_same_shape, pixel_shuffle_up


class SinBlock(nn.Module):
    """Residual 3x3 conv block with a sine activation (GELU for ablation)."""

    def __init__(self, channels: int, activation: str = "sin"):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = torch.sin if activation == "sin" else nn.functional.gelu

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class ResidueModule(nn.Module):
    def __init__(self, channels: int, activation: str = "sin"):
        super().__init__()
        self.block = SinBlock(channels, activation)
        self.head = nn.Conv2d(channels, 3, 3, padding=1)

    def forward(self, ft, fr, taps=None):
        check_same_shape(ft, fr, what="residue inputs")
        agg = ft + fr
        body = self.block(agg)
        if taps is not None:
            taps["lrm.aggregate"], taps["lrm.sinblock"] = agg, body
        return torch.tanh(self.head(body))


def lrm_forward(module: ResidueModule, ft, fr):
    return module(ft, fr)


@dataclass
class SeparationOutput:
    transmission: torch.Tensor
    reflection: torch.Tensor
    residue: torch.Tensor
    # decoder stream pairs after each level's LFSB stack, for stream diagnostics
    streams: dict[int, tuple[torch.Tensor, torch.Tensor]] = field(default_factory=dict)


def _stack(config: ModelConfig, dim: int, heads: int, level: int, count: int) -> LFSBStack:
    return LFSBStack(
        LFSB(dim, heads, config.window_size, level, config.lfsb_variant, config.lambda_mode,
             Strategy(config.lambda_strategy), config.lfsb_prenorm, config.ffn_expansion,
             config.rel_pos_bias, config.shared_sa_ca)
        for _ in range(count))


class ReflexSplitNet(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = validate_config(config)
        c, heads = config.channel_schedule, config.heads_per_level

        def mugi(ch):
            return MuGIStack(*[MuGIBlock(ch) for _ in range(config.mugi_blocks)])

        self.gfeb = GlobalEncoderAdapter(make_global_backend(config), config)
        self.lfeb = LocalEncoder(config)
        self.seed_proj = nn.Conv2d(c[5], c[5], 1)
        self.mix_lfsb5 = _stack(config, c[5] // 4, heads[5], 5, 1)
        self.mix_expand = StreamPair(lambda: nn.Conv2d(c[5] // 4, c[4], 1))
        self.mix_lfsb4 = _stack(config, c[4], heads[4], 4, 1)
        self.fusion = nn.ModuleDict(
            {str(l): StreamPair(lambda l=l: make_fusion(config.fusion, c[l])) for l in (4, 3, 2)})
        self.lfsb = nn.ModuleDict(
            {str(l): _stack(config, c[l], heads[l], l, config.lfsb_counts[l]) for l in range(5)})
        self.refine = nn.ModuleDict({str(l): mugi(c[l] // 4) for l in (4, 3, 2, 1)})
        self.refine["0"] = mugi(c[0])
        self.expand = nn.ModuleDict(
            {str(l): StreamPair(lambda l=l: nn.Conv2d(c[l] // 4, c[l - 1], 1)) for l in (4, 3, 2, 1)})
        self.head = StreamPair(lambda: nn.Conv2d(c[0], 3, 3, padding=1))
        self.lrm = ResidueModule(c[0], config.sinblock_activation)

    def lfsb_blocks(self):
        return [m for m in self.modules() if isinstance(m, LFSB)]

    def forward(self, image, curriculum: CurriculumState | float = 1.0, taps: dict | None = None):
        """``image`` is ``(B, 3, H, W)``; ``curriculum`` gives the epoch-wise multiplier.

        When ``taps`` is a dict it is filled with the intermediate map of every
        architecture stage, keyed by stage name (see ``stage_shapes``).
        """
        lam = curriculum.lambda_diff if isinstance(curriculum, CurriculumState) else float(curriculum)

        def tap(name, *xs):
            if taps is not None:
                taps[name] = xs[0] if len(xs) == 1 else xs

        prior = self.gfeb(image)
        et, er = self.lfeb(image)
        for l in (2, 3, 4, 5):
            tap(f"gfeb.P{l}", prior[l])
        for l in range(6):
            tap(f"lfeb.E{l}", et[l], er[l])

        seed = self.seed_proj(prior[5])
        ft, fr = pixel_shuffle_up(et[5] + seed), pixel_shuffle_up(er[5] + seed)
        tap("mix.pixelshuffle", ft, fr)
        ft, fr = self.mix_lfsb5(ft, fr, lam)
        tap("mix.lfsb5", ft, fr)
        ft, fr = self.mix_expand(ft, fr)
        tap("mix.expand", ft, fr)
        ft, fr = self.mix_lfsb4(ft, fr, lam)
        tap("mix.lfsb4", ft, fr)

        streams = {}
        for l in (4, 3, 2, 1, 0):
            if l >= 2:
                ft = self.fusion[str(l)].t(ft, prior[l], et[l])
                fr = self.fusion[str(l)].r(fr, prior[l], er[l])
            else:
                ft, fr = direct_aggregate(ft, et[l]), direct_aggregate(fr, er[l])
            tap(f"dec{l}.fusion", ft, fr)
            for k, block in enumerate(self.lfsb[str(l)]):
                ft, fr = block(ft, fr, lam)
                if k == 0:
                    tap(f"dec{l}.lfsb.first", ft, fr)
            tap(f"dec{l}.lfsb", ft, fr)
            streams[l] = (ft, fr)
            if l >= 1:
                ft, fr = pixel_shuffle_up(ft), pixel_shuffle_up(fr)
                tap(f"dec{l}.pixelshuffle", ft, fr)
            ft, fr = self.refine[str(l)](ft, fr)
            tap(f"dec{l}.mugi", ft, fr)
            if l >= 1:
                ft, fr = self.expand[str(l)](ft, fr)
                tap(f"dec{l}.expand", ft, fr)

        t_hat, r_hat = self.head(ft, fr)
        tap("out.T", t_hat)
        tap("out.R", r_hat)
        rr_hat = self.lrm(ft, fr, taps)
        tap("out.RR", rr_hat)
        return SeparationOutput(t_hat, r_hat, rr_hat, streams)


def stage_shapes(config: ModelConfig) -> dict[str, tuple[int, int, int]]:
    """Expected ``(C, H, W)`` of every tapped stage, derived from the shape laws."""
    c, s = config.channel_schedule, config.image_size
    size = [s // 2**l for l in range(6)]
    out = {f"gfeb.P{l}": (c[l], size[l], size[l]) for l in (2, 3, 4, 5)}
    out.update({f"lfeb.E{l}": (c[l], size[l], size[l]) for l in range(6)})
    out["mix.pixelshuffle"] = (c[5] // 4, size[4], size[4])
    out["mix.lfsb5"] = (c[5] // 4, size[4], size[4])
    out["mix.expand"] = (c[4], size[4], size[4])
    out["mix.lfsb4"] = (c[4], size[4], size[4])
    for l in (4, 3, 2, 1, 0):
        for name in ("fusion", "lfsb.first", "lfsb"):
            out[f"dec{l}.{name}"] = (c[l], size[l], size[l])
        if l >= 1:
            out[f"dec{l}.pixelshuffle"] = (c[l] // 4, size[l - 1], size[l - 1])
            out[f"dec{l}.mugi"] = (c[l] // 4, size[l - 1], size[l - 1])
            out[f"dec{l}.expand"] = (c[l - 1], size[l - 1], size[l - 1])
        else:
            out["dec0.mugi"] = (c[0], size[0], size[0])
    out["out.T"] = out["out.R"] = out["out.RR"] = (3, s, s)
    out["lrm.aggregate"] = out["lrm.sinblock"] = (c[0], s, s)
    return out


def count_parameters(net: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in net.parameters() if p.requires_grad or not trainable_only)


def build_on_meta(config: ModelConfig) -> ReflexSplitNet:
    """Instantiate without allocating weights; enough for shapes and parameter counts."""
    with torch.device("meta"):
        return ReflexSplitNet(config)
