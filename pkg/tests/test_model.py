import os

import pytest
import torch

from gradcheck import check_directional, readout
from reflexsplit.config import ModelConfig
from reflexsplit.curriculum import CurriculumState, Strategy
from reflexsplit.layers import symmetrize_streams
from reflexsplit.losses import StubPerceptualExtractor, total_loss
from reflexsplit.model import (
    ReflexSplitNet, ResidueModule, build_on_meta, count_parameters, lrm_forward, stage_shapes,
)

SMALL = ModelConfig.desk(base_width=4, image_size=32, lfsb_counts=(1, 1, 1, 1, 1), mugi_blocks=1)


def _shape(x):
    return tuple(x.shape[1:])


def test_desk_forward_matches_every_stage_shape():
    torch.manual_seed(0)
    cfg = ModelConfig.desk()
    net = ReflexSplitNet(cfg)
    taps = {}
    with torch.no_grad():
        out = net(torch.rand(1, 3, 96, 96), 0.5, taps=taps)
    expected = stage_shapes(cfg)
    assert set(taps) == set(expected)
    for name, shape in expected.items():
        maps = taps[name] if isinstance(taps[name], tuple) else (taps[name],)
        for m in maps:
            assert _shape(m) == shape, name
    for t in (out.transmission, out.reflection, out.residue):
        assert t.shape == (1, 3, 96, 96)


@pytest.mark.skipif(bool(os.environ.get("REFLEXSPLIT_SKIP_REFERENCE")), reason="reference run disabled")
def test_reference_forward_shapes_on_meta():
    cfg = ModelConfig.reference()
    net = build_on_meta(cfg)
    taps = {}
    with torch.device("meta"):
        net(torch.empty(1, 3, 384, 384), 1.0, taps=taps)
    for name, shape in stage_shapes(cfg).items():
        maps = taps[name] if isinstance(taps[name], tuple) else (taps[name],)
        assert all(_shape(m) == shape for m in maps), name
    assert stage_shapes(cfg)["lfeb.E5"] == (1536, 12, 12)
    assert stage_shapes(cfg)["dec0.lfsb"] == (48, 384, 384)


def test_parameter_counts_are_pinned():
    assert count_parameters(build_on_meta(ModelConfig.reference())) == 329_749_445
    assert count_parameters(ReflexSplitNet(ModelConfig.desk())) == 3_691_815


def test_every_parameter_receives_gradient():
    torch.manual_seed(0)
    net = ReflexSplitNet(ModelConfig.desk(image_size=32))
    i, t, r = (torch.rand(1, 3, 32, 32) for _ in range(3))
    out = net(i, CurriculumState(10, 30, Strategy("full")))
    total_loss(out, t, r, i, extractor=StubPerceptualExtractor()).total.backward()
    dead = [n for n, p in net.named_parameters() if p.requires_grad and p.grad is None]
    assert not dead


def test_seeded_construction_and_forward_are_deterministic():
    outs = []
    for _ in range(2):
        torch.manual_seed(3)
        net = ReflexSplitNet(SMALL)
        with torch.no_grad():
            outs.append(net(torch.ones(1, 3, 32, 32) * 0.3, 0.7).transmission)
    assert torch.equal(*outs)


def test_residue_cancels_for_opposite_streams():
    module = ResidueModule(4)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, torch.nn.Conv2d):
                m.bias.zero_()
    ft = torch.randn(1, 4, 8, 8)
    assert torch.equal(lrm_forward(module, ft, -ft), torch.zeros(1, 3, 8, 8))
    out = lrm_forward(module, 50 * torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8))
    assert out.abs().max() <= 1


def test_symmetric_weights_give_identical_layers():
    torch.manual_seed(0)
    net = symmetrize_streams(ReflexSplitNet(SMALL))
    with torch.no_grad():
        out = net(torch.rand(1, 3, 32, 32), 1.0)
    assert torch.allclose(out.transmission, out.reflection, atol=1e-6)
    for ft, fr in out.streams.values():
        assert torch.allclose(ft, fr, atol=1e-5)


def test_full_model_readout_gradient(f64):
    torch.manual_seed(0)
    net = ReflexSplitNet(SMALL.replace(lfsb_counts=(1, 0, 0, 0, 1), mugi_blocks=1)).double()
    image = torch.rand(1, 3, 32, 32, dtype=torch.float64)
    params = [p for p in net.parameters() if p.requires_grad] + [image.requires_grad_()]

    def fn():
        out = net(image, 0.6)
        return readout((out.transmission, out.reflection, out.residue))

    assert check_directional(fn, params, directions=3, eps=1e-6) < 1e-3
