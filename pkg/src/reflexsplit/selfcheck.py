"""Quick oracle/invariant suite behind the ``selfcheck`` command.

Each check reads the implementation it verifies from an ``impl`` mapping, so a
caller can substitute a deliberately broken function and watch the matching
check fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable

import numpy as np
import torch

from . import curriculum, oracles, synth
from .attention import LFSB
from .fusion import CrossScaleGatedFusion
from .losses import charbonnier, color_consistency, exclusion, reconstruction_consistency


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}" + (f"  ({self.detail})" if self.detail else "")


def default_impl() -> dict[str, Callable]:
    return {
        "lambda_init": curriculum.lambda_init,
        "lambda_warmup": curriculum.lambda_warmup,
        "lambda_effective": curriculum.lambda_effective,
        "screen_blend": synth.screen_blend,
        "crgf": CrossScaleGatedFusion,
        "lfsb": LFSB,
    }


def _close(a, b, tol):
    return abs(a - b) <= tol


def check_schedule(impl) -> str | None:
    lam_init, warm, eff = impl["lambda_init"], impl["lambda_warmup"], impl["lambda_effective"]
    expected = [
        ("lambda_init(0)", lam_init(0), 0.2),
        ("lambda_warmup(0, 30)", warm(0, 30), 0.1),
        ("lambda_warmup(15, 30)", warm(15, 30), 0.55),
        ("lambda_warmup(30, 30)", warm(30, 30), 1.0),
        ("lambda_warmup(45, 30)", warm(45, 30), 1.0),
        ("lambda_effective(0, 0, 30)", eff(0, 0, 30), 0.02),
        ("lambda_init(5)", lam_init(5), 0.8 - 0.6 * math.exp(-1.5)),
    ]
    for label, got, want in expected:
        if not _close(got, want, 1e-12):
            return f"{label} = {got!r}, expected {want!r}"
    return None


def check_blend(impl) -> str | None:
    blend = impl["screen_blend"]
    rng = np.random.default_rng(0)
    t, r = rng.random((6, 5, 3)), rng.random((6, 5, 3))
    ones = np.ones((4, 4, 3))
    if not np.array_equal(blend(ones, ones, synth.BlendCoefficients(1.0, 1.0)), ones):
        return "white over white at unit coefficients is not white"
    for _ in range(20):
        c = synth.sample_coefficients(rng)
        if not np.allclose(blend(t, np.zeros_like(r), c), c.gamma1 * t, atol=1e-12):
            return "zero reflection does not give gamma1 * T"
        # the swapped pair can fall outside the sampling ranges, so skip validation
        swapped = SimpleNamespace(gamma1=c.gamma2, gamma2=c.gamma1)
        if not np.allclose(blend(t, r, c), blend(r, t, swapped), atol=1e-12):
            return "swapping layers and coefficients changes the blend"
        if not np.allclose(blend(t, r, c), oracles.screen_blend(t, r, c.gamma1, c.gamma2), atol=1e-12):
            return "blend differs from the scalar oracle"
    return None


def _rel_err(a, b) -> float:
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


def check_crgf(impl) -> str | None:
    torch.manual_seed(0)
    module = impl["crgf"](8).double()
    with torch.no_grad():
        module.mix_logits.normal_()
    xs = [torch.randn(1, 8, 4, 5, dtype=torch.float64) for _ in range(3)]
    with torch.no_grad():
        got = module(*xs)[0].numpy()
    want = oracles.crgf(*[x[0].numpy() for x in xs], oracles.numpy_weights(module))
    err = _rel_err(got, want)
    return None if err < 1e-5 else f"relative error {err:.3g}"


def check_lfsb(impl) -> str | None:
    torch.manual_seed(1)
    block = impl["lfsb"](8, 2, 4, 2).double()
    xt, xr = (torch.randn(1, 8, 5, 6, dtype=torch.float64) for _ in range(2))
    with torch.no_grad():
        ot, orr = block(xt, xr, 0.7)
        coeff = float(block.strength(0.7).detach())
    wt, wr = oracles.lfsb(xt[0].numpy(), xr[0].numpy(), oracles.numpy_weights(block), 2, 4, coeff)
    err = max(_rel_err(ot[0].numpy(), wt), _rel_err(orr[0].numpy(), wr))
    return None if err < 1e-5 else f"relative error {err:.3g}"


def check_loss_gradients(impl) -> str | None:
    gen = torch.Generator().manual_seed(2)

    def rand():
        return torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64, requires_grad=True)

    cases = {
        "charbonnier": (lambda a, b: charbonnier(a, b, 1e-3), 2),
        "exclusion": (exclusion, 2),
        "color": (color_consistency, 2),
        "recons": (reconstruction_consistency, 4),
    }
    for name, (fn, arity) in cases.items():
        if not torch.autograd.gradcheck(fn, tuple(rand() for _ in range(arity)), eps=1e-6,
                                        atol=1e-6, rtol=1e-3, raise_exception=False):
            return f"{name} gradient mismatch"
    return None


CHECKS: dict[str, Callable] = {
    "schedule values": check_schedule,
    "blend identities": check_blend,
    "crgf oracle": check_crgf,
    "lfsb oracle": check_lfsb,
    "loss gradients": check_loss_gradients,
}


def run_selfcheck(overrides: dict[str, Callable] | None = None, emit: Callable[[str], None] | None = print):
    impl = default_impl()
    impl.update(overrides or {})
    results = []
    for name, check in CHECKS.items():
        try:
            problem = check(impl)
        except Exception as exc:
            problem = f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, problem is None, problem or "")
        results.append(res)
        if emit is not None:
            emit(res.line())
    return results
