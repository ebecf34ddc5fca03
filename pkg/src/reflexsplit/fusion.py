"""Cross-scale gated fusion and the alternative fusion strategies used in ablations."""

from __future__ import annotations

import torch
import torch.nn as nn

from .layers import check_same_shape

DEBUG = False


class SplitGate(nn.Module):
    """Selects one half of the channels, gates it and re-expands to full width.

    ``half=0`` reads the first half, ``half=1`` the second; the two halves are
    what make G1 and G2 complementary.
    """

    def __init__(self, channels: int, half: int):
        super().__init__()
        if channels % 2:
            raise ValueError(f"split gate needs an even channel count, got {channels}")
        self.half = half
        h = channels // 2
        self.score = nn.Conv2d(h, h, 1)
        self.expand = nn.Conv2d(h, channels, 1)

    def forward(self, x):
        part = x.chunk(2, dim=1)[self.half]
        return self.expand(torch.sigmoid(self.score(part)))


class CrossScaleGatedFusion(nn.Module):
    """``w1 * phi1(G1(raw) * G2(ctx)) + w2 * phi2(G1(ctx) * G2(raw))`` with ``raw = ctx + P + E``.

    ``gates="identity"`` and ``projections="identity"`` swap the learned
    gates / 1x1 convs for the identity, for closed-form checks.
    """

    def __init__(self, channels: int, gates: str = "split", projections: str = "conv"):
        super().__init__()
        if gates == "split":
            self.g1, self.g2 = SplitGate(channels, 0), SplitGate(channels, 1)
        else:
            self.g1 = self.g2 = nn.Identity()
        if projections == "conv":
            self.phi1, self.phi2 = nn.Conv2d(channels, channels, 1), nn.Conv2d(channels, channels, 1)
        else:
            self.phi1 = self.phi2 = nn.Identity()
        self.mix_logits = nn.Parameter(torch.zeros(2))

    def mixing_weights(self):
        w = torch.softmax(self.mix_logits, dim=0)
        if DEBUG:
            assert abs(float(w.detach().sum()) - 1.0) < 1e-6 and bool(((w >= 0) & (w <= 1)).all())
        return w

    def forward(self, ctx, semantic, texture):
        check_same_shape(ctx, semantic, texture, what="CrGF inputs")
        raw = ctx + semantic + texture
        main = self.g1(raw) * self.g2(ctx)
        aux = self.g1(ctx) * self.g2(raw)
        w = self.mixing_weights()
        return w[0] * self.phi1(main) + w[1] * self.phi2(aux)


def direct_aggregate(ctx, texture):
    check_same_shape(ctx, texture, what="direct aggregation")
    return ctx + texture


class DirectFusion(nn.Module):
    """Drops the semantic prior: ``ctx + E``."""

    def forward(self, ctx, semantic, texture):
        return direct_aggregate(ctx, texture)


class AddFusion(nn.Module):
    def forward(self, ctx, semantic, texture):
        check_same_shape(ctx, semantic, texture, what="addition fusion")
        return ctx + semantic + texture


class ConcatFusion(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.proj = nn.Conv2d(3 * channels, channels, 1)

    def forward(self, ctx, semantic, texture):
        check_same_shape(ctx, semantic, texture, what="concatenation fusion")
        return self.proj(torch.cat([ctx, semantic, texture], dim=1))


def make_fusion(kind: str, channels: int) -> nn.Module:
    if kind == "crgf":
        return CrossScaleGatedFusion(channels)
    if kind == "concat":
        return ConcatFusion(channels)
    if kind == "add":
        return AddFusion()
    if kind == "direct":
        return DirectFusion()
    raise ValueError(f"unknown fusion kind {kind!r}")
