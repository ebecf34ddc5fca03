import math

import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings, strategies as st

from fixtures import cosine, monotonicity_fixture
from gradcheck import check_directional, check_inputs, readout
from reflexsplit import oracles
from reflexsplit.attention import (
    LFSB, TokenAttention, differential_separation, dual_dimensional_attention, early_fusion,
    window_partition, window_reverse,
)
from reflexsplit.config import ShapeError
from reflexsplit.curriculum import Strategy, lambda_init
from reflexsplit.layers import symmetrize_streams


def _rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


@pytest.mark.parametrize("size,windows", [(24, 4), (12, 1), (13, 4)])
def test_partition_examples(size, windows):
    seq = window_partition(torch.zeros(1, 3, size, size), 12)
    assert seq.windows == windows
    assert seq.tokens.shape[1] == 144


@pytest.mark.parametrize("size", [12, 13, 24, 96])
def test_partition_round_trip(size):
    x = _rand(2, 5, size, size)
    assert torch.equal(window_reverse(window_partition(x, 12)), x)


def test_partition_row_major_order():
    x = torch.arange(16.0).view(1, 1, 4, 4)
    seq = window_partition(x, 2)
    assert seq.tokens[0, :, 0].tolist() == [0, 1, 4, 5]
    assert seq.tokens[1, :, 0].tolist() == [2, 3, 6, 7]


def test_small_map_shrinks_window():
    seq = window_partition(torch.zeros(1, 2, 6, 6), 12)
    assert seq.window == (6, 6) and seq.windows == 1


def test_early_fusion_selectors():
    c = 4
    ft, fr = _rand(1, c, 3, 3), _rand(1, c, 3, 3, seed=1)
    first, second = nn.Linear(2 * c, c, bias=False).double(), nn.Linear(2 * c, c, bias=False).double()
    eye = torch.eye(c, dtype=torch.float64)
    with torch.no_grad():
        first.weight.copy_(torch.cat([eye, torch.zeros_like(eye)], 1))
        second.weight.copy_(torch.cat([torch.zeros_like(eye), eye], 1))
    out_t, _ = early_fusion(ft, fr, first, first)
    assert torch.equal(out_t, ft)
    out_t, _ = early_fusion(ft, fr, second, second)
    assert torch.equal(out_t, fr)


def test_early_fusion_oracle():
    c = 4
    wt, wr = nn.Linear(2 * c, c, bias=False).double(), nn.Linear(2 * c, c, bias=False).double()
    ft, fr = _rand(1, c, 3, 2), _rand(1, c, 3, 2, seed=1)
    ot, orr = early_fusion(ft, fr, wt, wr)
    pt, pr = oracles.early_fusion(ft[0].numpy(), fr[0].numpy(), wt.weight.detach().numpy(),
                                  wr.weight.detach().numpy())
    assert np.allclose(ot[0].detach().numpy(), pt, atol=1e-12)
    assert np.allclose(orr[0].detach().numpy(), pr, atol=1e-12)


def _attn_pair(dim=8, heads=2, seed=0):
    torch.manual_seed(seed)
    return TokenAttention(dim, heads, 4).double(), TokenAttention(dim, heads, 4).double()


def test_identical_streams_give_identical_outputs():
    sa, ca = _attn_pair()
    x = _rand(1, 8, 4, 4)
    a = dual_dimensional_attention(x, x.clone(), sa, ca, 4)
    assert torch.allclose(a[0], a[1], atol=1e-12) and torch.allclose(a[2], a[3], atol=1e-12)


def test_single_token_self_attention_is_value_projection():
    sa, ca = _attn_pair()
    x = _rand(1, 8, 1, 1)
    a_sa_t = dual_dimensional_attention(x, -x, sa, ca, 4)[0]
    qkv = sa.qkv(x[0, :, 0, 0])
    expected = sa.out(qkv[16:])
    assert torch.allclose(a_sa_t[0, :, 0, 0], expected, atol=1e-12)


def test_hand_coded_two_token_attention():
    attn = TokenAttention(2, 1, 2).double()
    with torch.no_grad():
        attn.qkv.weight.copy_(torch.tensor([[1.0, 0], [0, 1], [1, 0], [0, 1], [2, 0], [0, 3]]))
        attn.qkv.bias.zero_()
        attn.out.weight.copy_(torch.eye(2))
        attn.out.bias.zero_()
    x = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]], dtype=torch.float64)
    # q = k = x, v = diag(2, 3) x; scores/\sqrt2: identity / sqrt 2
    s = 1 / math.sqrt(2)
    p_same = math.exp(s) / (math.exp(s) + 1)
    expected = torch.tensor([[[2 * p_same, 3 * (1 - p_same)], [2 * (1 - p_same), 3 * p_same]]],
                            dtype=torch.float64)
    assert torch.allclose(attn(x), expected, atol=1e-12)
    y, w = attn(x, return_weights=True)
    assert torch.allclose(y, expected, atol=1e-12)


def test_attention_matches_oracle_with_padding():
    sa, ca = _attn_pair(seed=4)
    ft, fr = _rand(1, 8, 5, 7), _rand(1, 8, 5, 7, seed=1)
    got = dual_dimensional_attention(ft, fr, sa, ca, 4)
    w = {**{f"sa.{k}": v for k, v in oracles.numpy_weights(sa).items()},
         **{f"ca.{k}": v for k, v in oracles.numpy_weights(ca).items()}}
    want = oracles.dual_attention(ft[0].numpy(), fr[0].numpy(), w, 2, 4)
    for g, o in zip(got, want):
        assert np.abs(g[0].detach().numpy() - o).max() <= 1e-6 * np.abs(o).max()


def test_attention_rows_are_distributions():
    sa, ca = _attn_pair()
    *_, weights = dual_dimensional_attention(_rand(1, 8, 6, 6), _rand(1, 8, 6, 6, seed=2), sa, ca, 4,
                                             return_weights=True)
    for w in weights.values():
        assert torch.allclose(w.sum(-1), torch.ones_like(w.sum(-1)), atol=1e-6)
    assert weights["ca"].shape[-1] == 2 * weights["sa"].shape[-1]


def test_self_attention_has_no_cross_stream_mixing():
    sa, ca = _attn_pair()
    ft = _rand(1, 8, 4, 4)
    a = dual_dimensional_attention(ft, _rand(1, 8, 4, 4, seed=1), sa, ca, 4)
    b = dual_dimensional_attention(ft, _rand(1, 8, 4, 4, seed=2), sa, ca, 4)
    assert torch.equal(a[0], b[0])
    assert not torch.allclose(a[2], b[2])


def test_differential_examples():
    xs = [_rand(1, 4, 3, 3, seed=k) for k in range(4)]
    t, r = differential_separation(*xs, -1e4)
    assert torch.allclose(t, xs[0] + xs[2], atol=1e-12)
    s = xs[0] + xs[2]
    lam = 0.3
    sig = 1 / (1 + math.exp(-lam))
    t, r = differential_separation(xs[0], xs[0], xs[2], xs[2], lam)
    assert torch.allclose(t, (1 - sig) * s, atol=1e-12) and torch.allclose(r, t, atol=1e-12)
    t, r = differential_separation(*xs, 0.0)
    pt, pr = oracles.differential(*[x.numpy() for x in xs], 0.0)
    assert np.allclose(t.numpy(), pt, atol=1e-12) and np.allclose(r.numpy(), pr, atol=1e-12)
    assert np.allclose(pt, (xs[0] + xs[2] - 0.5 * (xs[1] + xs[3])).numpy(), atol=1e-12)
    with pytest.raises(ShapeError):
        differential_separation(xs[0], xs[1], xs[2], torch.zeros(1, 4, 3, 2), 0.0)


@pytest.mark.parametrize("correlation", [0.0, 0.3, 0.7, 0.95])
def test_monotonicity_hook(correlation):
    fixture = monotonicity_fixture(correlation)
    sims = [cosine(*differential_separation(*fixture, lam)) for lam in np.linspace(-6, 6, 41)]
    assert all(b < a for a, b in zip(sims, sims[1:]))


def _block(variant="full", seed=0, **kw):
    torch.manual_seed(seed)
    return LFSB(8, 2, 4, 2, variant, **kw).double()


def test_lfsb_matches_oracle():
    block = _block(seed=5)
    xt, xr = _rand(1, 8, 4, 4, seed=1), _rand(1, 8, 4, 4, seed=2)
    with torch.no_grad():
        ot, orr = block(xt, xr, 0.55)
        coeff = float(block.strength(0.55))
    wt, wr = oracles.lfsb(xt[0].numpy(), xr[0].numpy(), oracles.numpy_weights(block), 2, 4, coeff)
    assert np.abs(ot[0].numpy() - wt).max() <= 1e-5 * np.abs(wt).max()
    assert np.abs(orr[0].numpy() - wr).max() <= 1e-5 * np.abs(wr).max()


def test_lfsb_zero_ffn_is_identity():
    block = _block()
    for p in block.ffn.parameters():
        nn.init.zeros_(p)
    xt, xr = _rand(1, 8, 4, 4), _rand(1, 8, 4, 4, seed=1)
    ot, orr = block(xt, xr)
    assert torch.equal(ot, xt) and torch.equal(orr, xr)


def test_lfsb_stream_swap_equivariance():
    block = symmetrize_streams(_block(seed=2))
    xt, xr = _rand(1, 8, 5, 5), _rand(1, 8, 5, 5, seed=1)
    with torch.no_grad():
        ot, orr = block(xt, xr, 0.8)
        st_, sr = block(xr, xt, 0.8)
    assert torch.allclose(ot, sr, atol=1e-12) and torch.allclose(orr, st_, atol=1e-12)


def test_lfsb_gradients_wrt_input_and_lambda():
    block = _block(seed=3)
    xs = [_rand(1, 8, 3, 3, seed=k) for k in range(2)]
    assert check_inputs(lambda a, b: readout(block(a, b, 0.7)), xs) < 1e-3
    xt, xr = xs
    err = check_directional(lambda: readout(block(xt, xr, 0.7)), [block.raw_lambda], directions=1)
    assert err < 1e-3


def test_lambda_initialization_and_strength():
    block = _block()
    assert isinstance(block.raw_lambda, nn.Parameter)
    assert float(torch.sigmoid(block.raw_lambda.detach())) == pytest.approx(lambda_init(2))
    assert float(block.strength(0.1).detach()) == pytest.approx(lambda_init(2) * 0.1)
    fixed = _block(strategy=Strategy("fixed"))
    assert not isinstance(fixed.raw_lambda, nn.Parameter)
    assert float(fixed.strength(1.0)) == pytest.approx(0.5)
    sched = _block(lambda_mode="schedule")
    sig = 1 / (1 + math.exp(-lambda_init(2) * 0.4))
    assert float(sched.strength(0.4)) == pytest.approx(sig)


@pytest.mark.parametrize("variant", ["baseline", "early_fusion", "sa", "sa_ca", "diff_sep", "full"])
def test_variants_preserve_shape(variant):
    block = _block(variant)
    x = _rand(1, 8, 5, 5)
    ot, orr = block(x, x.flip(-1))
    assert ot.shape == x.shape and orr.shape == x.shape
    if variant == "baseline":
        assert torch.equal(ot, x) and not list(block.parameters())


def test_shared_sa_ca_and_position_bias():
    block = _block(shared_sa_ca=True, rel_pos_bias=True)
    assert block.ca is block.sa
    with torch.no_grad():
        block.sa.bias_table.normal_()
    ot, _ = block(_rand(1, 8, 6, 6), _rand(1, 8, 6, 6, seed=1))
    assert torch.isfinite(ot).all()


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 14), st.integers(1, 14))
def test_lfsb_any_spatial_size(h, w):
    block = _block()
    ot, _ = block(_rand(1, 8, h, w), _rand(1, 8, h, w, seed=1))
    assert ot.shape == (1, 8, h, w)
