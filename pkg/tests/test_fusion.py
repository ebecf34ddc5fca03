import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from gradcheck import check_inputs, readout
from reflexsplit import fusion, oracles
from reflexsplit.config import ShapeError
from reflexsplit.fusion import CrossScaleGatedFusion, direct_aggregate, make_fusion


def _rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_matches_oracle():
    torch.manual_seed(0)
    m = CrossScaleGatedFusion(8).double()
    with torch.no_grad():
        m.mix_logits.copy_(torch.tensor([0.3, -1.1]))
    xs = [_rand(1, 8, 4, 5, seed=k) for k in range(3)]
    got = m(*xs)[0].detach().numpy()
    want = oracles.crgf(*[x[0].numpy() for x in xs], oracles.numpy_weights(m))
    assert np.abs(got - want).max() <= 1e-6 * np.abs(want).max()


def test_zero_prior_and_texture_makes_paths_equal():
    m = CrossScaleGatedFusion(8).double()
    ctx = _rand(1, 8, 3, 3)
    z = torch.zeros_like(ctx)
    both = m.g1(ctx) * m.g2(ctx)
    w = m.mixing_weights()
    expected = w[0] * m.phi1(both) + w[1] * m.phi2(both)
    assert torch.allclose(m(ctx, z, z), expected, atol=1e-12)


def test_softmax_saturation():
    m = CrossScaleGatedFusion(8).double()
    with torch.no_grad():
        m.mix_logits.copy_(torch.tensor([1e3, -1e3]))
    ctx, p, e = (_rand(1, 8, 3, 3, seed=k) for k in range(3))
    raw = ctx + p + e
    assert torch.equal(m(ctx, p, e), m.phi1(m.g1(raw) * m.g2(ctx)))


def test_identity_closed_form():
    m = CrossScaleGatedFusion(8, gates="identity", projections="identity").double()
    ctx, p, e = (_rand(1, 8, 3, 3, seed=k) for k in range(3))
    assert torch.allclose(m(ctx, p, e), (ctx + p + e) * ctx, atol=1e-12)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_mixing_weights_on_simplex(logits):
    m = CrossScaleGatedFusion(4)
    with torch.no_grad():
        m.mix_logits.copy_(torch.tensor(logits))
    w = m.mixing_weights()
    w = w.detach()
    assert abs(float(w.sum()) - 1) < 1e-6 and bool(((w >= 0) & (w <= 1)).all())


def test_debug_assertion_runs(monkeypatch):
    monkeypatch.setattr(fusion, "DEBUG", True)
    m = CrossScaleGatedFusion(4)
    m(*(torch.randn(1, 4, 2, 2) for _ in range(3)))


def test_gradient_wrt_each_input():
    torch.manual_seed(3)
    m = CrossScaleGatedFusion(8).double()
    xs = [_rand(1, 8, 4, 4, seed=k) for k in range(3)]
    assert check_inputs(lambda a, b, c: readout(m(a, b, c)), xs) < 1e-3


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        CrossScaleGatedFusion(4)(torch.zeros(1, 4, 2, 2), torch.zeros(1, 4, 2, 2), torch.zeros(1, 4, 2, 3))
    with pytest.raises(ShapeError):
        direct_aggregate(torch.zeros(1, 4, 2, 2), torch.zeros(1, 4, 3, 2))


def test_direct_aggregate():
    x = _rand(1, 4, 3, 3)
    assert torch.equal(direct_aggregate(x, torch.zeros_like(x)), x)
    assert torch.equal(direct_aggregate(x, -x), torch.zeros_like(x))
    y = _rand(1, 4, 3, 3, seed=1)
    out = direct_aggregate(x, y)
    for idx in np.ndindex(*x.shape):
        assert out[idx] == x[idx] + y[idx]


def test_alternative_fusions():
    xs = [torch.randn(1, 4, 2, 2) for _ in range(3)]
    assert torch.equal(make_fusion("direct", 4)(*xs), xs[0] + xs[2])
    assert torch.equal(make_fusion("add", 4)(*xs), xs[0] + xs[1] + xs[2])
    assert make_fusion("concat", 4)(*xs).shape == xs[0].shape
    with pytest.raises(ValueError):
        make_fusion("other", 4)
