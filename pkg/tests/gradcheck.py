"""Central-difference gradient checks in float64, compared by norm-relative error."""

import torch


def _flat_grad(fn, inputs):
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = fn(*inputs)
    grads = torch.autograd.grad(out, inputs, allow_unused=True)
    return [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]


def numeric_grad(fn, inputs, eps=1e-6):
    grads = []
    with torch.no_grad():
        for k, x in enumerate(inputs):
            g = torch.zeros_like(x)
            flat = x.detach().clone().reshape(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                args = list(inputs)
                flat[i] = old + eps
                args[k] = flat.view_as(x)
                hi = float(fn(*args))
                flat[i] = old - eps
                lo = float(fn(*args))
                flat[i] = old
                g.view(-1)[i] = (hi - lo) / (2 * eps)
            grads.append(g)
    return grads


def relative_error(a, b):
    a = torch.cat([t.reshape(-1) for t in a])
    b = torch.cat([t.reshape(-1) for t in b])
    denom = max(a.norm().item(), b.norm().item(), 1e-30)
    return (a - b).norm().item() / denom


def check_inputs(fn, inputs, eps=1e-6):
    """Norm-relative error between autograd and full central differences."""
    return relative_error(_flat_grad(fn, inputs), numeric_grad(fn, inputs, eps))


def check_directional(fn, params, directions=3, eps=1e-6, seed=0):
    """Worst relative error of directional derivatives along random directions.

    ``fn()`` evaluates a scalar from the current values of ``params`` (tensors
    updated in place), which suits module parameters and large inputs.
    """
    gen = torch.Generator().manual_seed(seed)
    for p in params:
        p.grad = None
    out = fn()
    grads = torch.autograd.grad(out, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    worst = 0.0
    for _ in range(directions):
        dirs = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
        norm = sum((d * d).sum() for d in dirs).sqrt()
        dirs = [d / norm for d in dirs]
        analytic = sum((g * d).sum() for g, d in zip(grads, dirs)).item()
        with torch.no_grad():
            for p, d in zip(params, dirs):
                p.add_(eps * d)
            hi = float(fn())
            for p, d in zip(params, dirs):
                p.sub_(2 * eps * d)
            lo = float(fn())
            for p, d in zip(params, dirs):
                p.add_(eps * d)
        fd = (hi - lo) / (2 * eps)
        worst = max(worst, abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-30))
    return worst


def readout(out, seed=0):
    """Fixed random linear functional of one tensor or a tuple of tensors."""
    outs = out if isinstance(out, (tuple, list)) else (out,)
    gen = torch.Generator().manual_seed(seed)
    return sum((torch.randn(o.shape, generator=gen, dtype=o.dtype) * o).sum() for o in outs)
