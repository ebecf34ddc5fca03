"""Straight-line numpy re-implementations used to cross-check the torch modules.

Everything here loops over pixels, windows and heads explicitly and shares no
code with the production path.  Maps are ``(C, H, W)`` float64 arrays (one
image); weights come from ``numpy_weights(module)``, keyed by parameter name.
"""

from __future__ import annotations

import math

import numpy as np


def numpy_weights(module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().double().numpy() for k, v in module.state_dict().items()}


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gelu(x):
    return np.vectorize(lambda v: 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))))(x)


def conv1x1(x, weight, bias=None):
    """``weight`` is ``(out, in, 1, 1)`` or ``(out, in)``."""
    w = weight.reshape(weight.shape[0], -1)
    c, h, wd = x.shape
    out = np.zeros((w.shape[0], h, wd))
    for i in range(h):
        for j in range(wd):
            out[:, i, j] = w @ x[:, i, j] + (0 if bias is None else bias)
    return out


def screen_blend(t, r, g1, g2):
    out = np.empty_like(t)
    for idx in np.ndindex(t.shape):
        v = g1 * t[idx] + g2 * r[idx] - g1 * g2 * t[idx] * r[idx]
        out[idx] = min(1.0, max(0.0, v))
    return out


# ---------------------------------------------------------------- fusion

def split_gate(x, w, prefix):
    half = x.shape[0] // 2
    part = x[:half] if prefix.endswith("g1") else x[half:]
    score = sigmoid(conv1x1(part, w[f"{prefix}.score.weight"], w[f"{prefix}.score.bias"]))
    return conv1x1(score, w[f"{prefix}.expand.weight"], w[f"{prefix}.expand.bias"])


def crgf(ctx, semantic, texture, w):
    raw = ctx + semantic + texture
    main = split_gate(raw, w, "g1") * split_gate(ctx, w, "g2")
    aux = split_gate(ctx, w, "g1") * split_gate(raw, w, "g2")
    logits = w["mix_logits"]
    e = np.exp(logits - logits.max())
    mix = e / e.sum()
    return (mix[0] * conv1x1(main, w["phi1.weight"], w["phi1.bias"])
            + mix[1] * conv1x1(aux, w["phi2.weight"], w["phi2.bias"]))


# ---------------------------------------------------------------- attention

def early_fusion(ft, fr, w_t, w_r):
    return conv1x1(np.concatenate([ft, fr]), w_t), conv1x1(np.concatenate([fr, ft]), w_r)


def _reflect(i, n):
    return 2 * (n - 1) - i if i >= n else i


def windows(h, w, window):
    """Yields lists of (row, col) source pixels per window, row-major inside."""
    wh, ww = min(window, h), min(window, w)
    hp = h + (-h) % wh
    wp = w + (-w) % ww
    for by in range(0, hp, wh):
        for bx in range(0, wp, ww):
            yield [((by + y), (bx + x)) for y in range(wh) for x in range(ww)]


def attention(tokens, w, heads, prefix):
    """Multi-head softmax attention over an ``(n, C)`` token matrix."""
    n, c = tokens.shape
    d = c // heads
    qkv = tokens @ w[f"{prefix}.qkv.weight"].T + w[f"{prefix}.qkv.bias"]
    q, k, v = qkv[:, :c], qkv[:, c:2 * c], qkv[:, 2 * c:]
    out = np.zeros((n, c))
    for hd in range(heads):
        sl = slice(hd * d, (hd + 1) * d)
        for i in range(n):
            scores = np.array([q[i, sl] @ k[j, sl] for j in range(n)]) / math.sqrt(d)
            p = np.exp(scores - scores.max())
            p /= p.sum()
            out[i, sl] = sum(p[j] * v[j, sl] for j in range(n))
    return out @ w[f"{prefix}.out.weight"].T + w[f"{prefix}.out.bias"]


def dual_attention(ft, fr, w, heads, window, sa="sa", ca="ca"):
    """Returns ``(sa_t, sa_r, ca_t, ca_r)``; ``ca=None`` leaves the cross pair as zeros."""
    c, h, wd = ft.shape
    outs = [np.zeros((c, h, wd)) for _ in range(4)]
    for cells in windows(h, wd, window):
        idx = [(_reflect(y, h), _reflect(x, wd)) for y, x in cells]
        tt = np.stack([ft[:, y, x] for y, x in idx])
        tr = np.stack([fr[:, y, x] for y, x in idx])
        n = len(idx)
        results = [attention(tt, w, heads, sa), attention(tr, w, heads, sa)]
        if ca is not None:
            both = attention(np.concatenate([tt, tr]), w, heads, ca)
            results += [both[:n], both[n:]]
        for out, res in zip(outs, results):
            for k, (y, x) in enumerate(cells):
                if y < h and x < wd:
                    out[:, y, x] = res[k]
    return tuple(outs)


def differential(sa_t, sa_r, ca_t, ca_r, lam):
    s = 1.0 / (1.0 + math.exp(-lam))
    return (sa_t + ca_t) - s * (sa_r + ca_r), (sa_r + ca_r) - s * (sa_t + ca_t)


def layer_norm(x, weight, bias, eps=1e-5):
    out = np.empty_like(x)
    for i in range(x.shape[1]):
        for j in range(x.shape[2]):
            v = x[:, i, j]
            mu = v.mean()
            var = ((v - mu) ** 2).mean()
            out[:, i, j] = (v - mu) / math.sqrt(var + eps) * weight + bias
    return out


def ffn(x, w, prefix):
    hidden = gelu(conv1x1(x, w[f"{prefix}.0.weight"], w[f"{prefix}.0.bias"]))
    return conv1x1(hidden, w[f"{prefix}.2.weight"], w[f"{prefix}.2.bias"])


def lfsb(xt, xr, w, heads, window, coefficient):
    """Full block with every component on; ``coefficient`` multiplies the opposite stream."""
    nt = layer_norm(xt, w["norm.t.weight"], w["norm.t.bias"])
    nr = layer_norm(xr, w["norm.r.weight"], w["norm.r.bias"])
    nt, nr = early_fusion(nt, nr, w["proj_t.weight"], w["proj_r.weight"])
    sa_t, sa_r, ca_t, ca_r = dual_attention(nt, nr, w, heads, window)
    at = (sa_t + ca_t) - coefficient * (sa_r + ca_r)
    ar = (sa_r + ca_r) - coefficient * (sa_t + ca_t)
    return xt + ffn(at, w, "ffn.t"), xr + ffn(ar, w, "ffn.r")


# ---------------------------------------------------------------- losses

def exclusion(t, r, scales=3):
    """``t``/``r`` are ``(C, H, W)``; downsampling is 2x2 averaging."""
    total = 0.0
    for k in range(scales):
        if k:
            t = t.reshape(t.shape[0], t.shape[1] // 2, 2, t.shape[2] // 2, 2).mean((2, 4))
            r = r.reshape(r.shape[0], r.shape[1] // 2, 2, r.shape[2] // 2, 2).mean((2, 4))
        c, h, w = t.shape
        sx = sum(abs((t[ch, i, j + 1] - t[ch, i, j]) * (r[ch, i, j + 1] - r[ch, i, j]))
                 for ch in range(c) for i in range(h) for j in range(w - 1))
        sy = sum(abs((t[ch, i + 1, j] - t[ch, i, j]) * (r[ch, i + 1, j] - r[ch, i, j]))
                 for ch in range(c) for i in range(h - 1) for j in range(w))
        total += sx / (c * h * (w - 1)) + sy / (c * (h - 1) * w)
    return total


def color_consistency(pred, gt):
    total = 0.0
    for ch in range(pred.shape[0]):
        a, b = pred[ch].ravel(), gt[ch].ravel()
        total += abs(a.mean() - b.mean()) + abs(math.sqrt(((a - a.mean()) ** 2).mean())
                                                - math.sqrt(((b - b.mean()) ** 2).mean()))
    return total
