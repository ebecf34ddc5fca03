"""Layer fusion-separation block: early fusion, windowed self/cross attention,
cross-stream differential subtraction and FFN late fusion.

The differential operator acts on attended features (post value aggregation),
not on score matrices: self-attention scores are ``N x N`` per stream while
cross-attention scores are ``2N x 2N``, so only the outputs can be summed.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .curriculum import Strategy, logit
from .layers import StreamPair, check_same_shape

VARIANT_FLAGS = {
    # (early fusion, self-attn, cross-attn, differential, late fusion)
    "baseline": (False, False, False, False, False),
    "early_fusion": (True, False, False, False, False),
    "sa": (True, True, False, False, False),
    "sa_ca": (True, True, True, False, False),
    "diff_sep": (True, True, True, True, False),
    "full": (True, True, True, True, True),
}


@dataclass(frozen=True)
class WindowedSequence:
    tokens: torch.Tensor  # (B * windows, wh * ww, C), row-major inside each window
    batch: int
    height: int
    width: int
    padded_height: int
    padded_width: int
    window: tuple[int, int]

    @property
    def windows(self) -> int:
        return self.tokens.shape[0]


def window_partition(x: torch.Tensor, window: int) -> WindowedSequence:
    """Split a ``(B, C, H, W)`` map into windows, reflect-padding up to a multiple.

    A map smaller than the window uses a window equal to the map, which keeps
    reflect padding well defined (pad < size).
    """
    b, c, h, w = x.shape
    wh, ww = min(window, h), min(window, w)
    pad_h, pad_w = (-h) % wh, (-w) % ww
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
    hp, wp = h + pad_h, w + pad_w
    tokens = (x.view(b, c, hp // wh, wh, wp // ww, ww)
              .permute(0, 2, 4, 3, 5, 1)
              .reshape(b * (hp // wh) * (wp // ww), wh * ww, c))
    return WindowedSequence(tokens, b, h, w, hp, wp, (wh, ww))


def window_reverse(seq: WindowedSequence, tokens: torch.Tensor | None = None) -> torch.Tensor:
    tokens = seq.tokens if tokens is None else tokens
    wh, ww = seq.window
    nh, nw = seq.padded_height // wh, seq.padded_width // ww
    c = tokens.shape[-1]
    x = (tokens.view(seq.batch, nh, nw, wh, ww, c)
         .permute(0, 5, 1, 3, 2, 4)
         .reshape(seq.batch, c, seq.padded_height, seq.padded_width))
    return x[:, :, :seq.height, :seq.width]


class TokenAttention(nn.Module):
    """Multi-head softmax attention over whatever token set it is handed."""

    def __init__(self, dim: int, heads: int, window: int, rel_pos_bias: bool = False):
        super().__init__()
        if dim % heads:
            raise ValueError(f"{heads} heads do not divide {dim} channels")
        self.heads = heads
        self.window = window
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.bias_table = (nn.Parameter(torch.zeros((2 * window - 1) ** 2, heads))
                           if rel_pos_bias else None)

    def position_bias(self, wh: int, ww: int, repeat: int):
        if self.bias_table is None:
            return None
        ys, xs = torch.meshgrid(torch.arange(wh), torch.arange(ww), indexing="ij")
        ys, xs = ys.flatten(), xs.flatten()
        span = 2 * self.window - 1
        index = ((ys[:, None] - ys[None, :] + self.window - 1) * span
                 + xs[:, None] - xs[None, :] + self.window - 1)
        bias = self.bias_table[index.to(self.bias_table.device)].permute(2, 0, 1)
        return bias.repeat(1, repeat, repeat)

    def forward(self, x, bias=None, return_weights: bool = False):
        b, n, c = x.shape
        q, k, v = self.qkv(x).view(b, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        if return_weights:
            scores = (q @ k.transpose(-2, -1)) * self.scale
            if bias is not None:
                scores = scores + bias
            weights = scores.softmax(dim=-1)
            y = weights @ v
        else:
            weights = None
            y = F.scaled_dot_product_attention(q, k, v, attn_mask=bias, scale=self.scale)
        y = self.out(y.transpose(1, 2).reshape(b, n, c))
        return (y, weights) if return_weights else y


def _channels_last_linear(layer: nn.Module, x):
    return layer(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


def early_fusion(ft, fr, proj_t: nn.Module, proj_r: nn.Module):
    """``W_t [ft || fr]`` and ``W_r [fr || ft]`` applied per pixel."""
    check_same_shape(ft, fr, what="early fusion streams")
    return (_channels_last_linear(proj_t, torch.cat([ft, fr], 1)),
            _channels_last_linear(proj_r, torch.cat([fr, ft], 1)))


def dual_dimensional_attention(ft, fr, sa: TokenAttention, ca: TokenAttention | None, window: int,
                               return_weights: bool = False):
    """Returns ``(A_sa_t, A_sa_r, A_ca_t, A_ca_r)`` as maps shaped like the inputs.

    Self-attention stacks the two streams on the batch axis (no mixing);
    cross-attention stacks them on the token axis so every token attends
    over both streams.  ``ca=None`` skips the cross branch.
    """
    check_same_shape(ft, fr, what="attention streams")
    st, sr = window_partition(ft, window), window_partition(fr, window)
    nwin, n = st.tokens.shape[:2]
    wh, ww = st.window
    weights = {}

    sa_bias = sa.position_bias(wh, ww, 1)
    out = sa(torch.cat([st.tokens, sr.tokens], 0), sa_bias, return_weights)
    if return_weights:
        out, weights["sa"] = out
    sa_t, sa_r = out[:nwin], out[nwin:]
    result = [window_reverse(st, sa_t), window_reverse(sr, sa_r)]

    if ca is not None:
        ca_bias = ca.position_bias(wh, ww, 2)
        out = ca(torch.cat([st.tokens, sr.tokens], 1), ca_bias, return_weights)
        if return_weights:
            out, weights["ca"] = out
        result += [window_reverse(st, out[:, :n]), window_reverse(sr, out[:, n:])]
    else:
        result += [None, None]
    return (*result, weights) if return_weights else tuple(result)


def cross_subtract(sum_t, sum_r, coefficient):
    return sum_t - coefficient * sum_r, sum_r - coefficient * sum_t


def differential_separation(a_sa_t, a_sa_r, a_ca_t, a_ca_r, lambda_eff):
    """``(A_sa_t + A_ca_t) - sigmoid(lambda) (A_sa_r + A_ca_r)`` and the mirrored term."""
    check_same_shape(a_sa_t, a_sa_r, a_ca_t, a_ca_r, what="differential separation")
    strength = torch.sigmoid(torch.as_tensor(lambda_eff, dtype=a_sa_t.dtype, device=a_sa_t.device))
    return cross_subtract(a_sa_t + a_ca_t, a_sa_r + a_ca_r, strength)


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, expansion: int = 4):
        super().__init__(nn.Linear(dim, expansion * dim), nn.GELU(), nn.Linear(expansion * dim, dim))


class LFSB(nn.Module):
    """One layer fusion-separation block acting on a pair of ``(B, C, H, W)`` maps.

    ``level`` is the decoder depth that sets the initial separation strength.
    In ``learned`` mode the coefficient applied to the opposite stream is
    ``sigmoid(raw) * lambda_diff`` with ``raw`` initialized at the logit of
    the depth-dependent initial value; ``schedule`` mode uses the closed form
    ``sigmoid(init * lambda_diff)`` with nothing learned.
    """

    def __init__(self, dim: int, heads: int, window: int, level: int, variant: str = "full",
                 lambda_mode: str = "learned", strategy: Strategy = Strategy(),
                 prenorm: bool = True, ffn_expansion: int = 4, rel_pos_bias: bool = False,
                 shared_sa_ca: bool = False):
        super().__init__()
        self.dim = dim
        self.window = window
        self.level = level
        self.variant = variant
        self.lambda_mode = lambda_mode
        self.strategy = strategy
        (self.use_early, self.use_sa, self.use_ca,
         self.use_diff, self.use_late) = VARIANT_FLAGS[variant]
        if variant == "baseline":
            return
        self.norm = StreamPair(lambda: nn.LayerNorm(dim) if prenorm else nn.Identity())
        if self.use_early:
            self.proj_t = nn.Linear(2 * dim, dim, bias=False)
            self.proj_r = nn.Linear(2 * dim, dim, bias=False)
        if self.use_sa:
            self.sa = TokenAttention(dim, heads, window, rel_pos_bias)
            if self.use_ca:
                self.ca = self.sa if shared_sa_ca else TokenAttention(dim, heads, window, rel_pos_bias)
        if self.use_late:
            self.ffn = StreamPair(lambda: FeedForward(dim, ffn_expansion))
        if self.use_diff:
            init = strategy.initial_strength(level)
            if lambda_mode == "learned" and strategy.learnable:
                self.raw_lambda = nn.Parameter(torch.tensor(logit(init)))
            else:
                self.register_buffer("raw_lambda", torch.tensor(logit(init)))

    def strength(self, lambda_diff: float = 1.0):
        """Coefficient multiplying the opposite stream in the differential step."""
        if self.lambda_mode == "schedule":
            value = self.strategy.initial_strength(self.level) * lambda_diff
            return torch.sigmoid(torch.tensor(value, dtype=self.raw_lambda.dtype, device=self.raw_lambda.device))
        return torch.sigmoid(self.raw_lambda) * lambda_diff

    def forward(self, xt, xr, lambda_diff: float = 1.0):
        check_same_shape(xt, xr, what="LFSB streams")
        if self.variant == "baseline":
            return xt, xr
        nt = _channels_last_linear(self.norm.t, xt)
        nr = _channels_last_linear(self.norm.r, xr)
        if self.use_early:
            nt, nr = early_fusion(nt, nr, self.proj_t, self.proj_r)
        if self.use_sa:
            sa_t, sa_r, ca_t, ca_r = dual_dimensional_attention(
                nt, nr, self.sa, self.ca if self.use_ca else None, self.window)
            at, ar = (sa_t + ca_t, sa_r + ca_r) if self.use_ca else (sa_t, sa_r)
        else:
            at, ar = nt, nr
        if self.use_diff:
            at, ar = cross_subtract(at, ar, self.strength(lambda_diff))
        if self.use_late:
            at = _channels_last_linear(self.ffn.t, at)
            ar = _channels_last_linear(self.ffn.r, ar)
        return xt + at, xr + ar


class LFSBStack(nn.ModuleList):
    def forward(self, xt, xr, lambda_diff: float = 1.0):
        for block in self:
            xt, xr = block(xt, xr, lambda_diff)
        return xt, xr


def lfsb_forward(block: LFSB, xt, xr, lambda_diff: float = 1.0):
    return block(xt, xr, lambda_diff)


__all__ = [
    "WindowedSequence", "window_partition", "window_reverse", "TokenAttention", "early_fusion",
    "dual_dimensional_attention", "cross_subtract", "differential_separation", "FeedForward",
    "LFSB", "LFSBStack", "lfsb_forward",
]
