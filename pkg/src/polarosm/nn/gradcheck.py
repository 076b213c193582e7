"""Central finite-difference validation of backward passes."""

from __future__ import annotations

import copy

import torch
import torch.nn as nn


def _as_double(x):
    if isinstance(x, torch.Tensor) and x.is_floating_point():
        return x.detach().double().clone()
    return x


def finite_difference_check(op, inputs=(), eps: float = 1e-4, samples: int = 24, seed: int = 0,
                            floor: float = 1e-3, check_inputs: bool = True, report: dict | None = None) -> float:
    """Max relative error between backward-pass gradients and central differences.

    ``op`` is an ``nn.Module`` or a plain callable over ``inputs``. The output
    is reduced to a scalar with a fixed random projection. Gradients come from
    autograd at the op's own precision; the differences are always taken on a
    float64 copy so 32-bit backward passes are judged against an accurate
    reference. ``samples`` coordinates are drawn per tensor (all of them when
    the tensor is smaller).

    The relative error of one coordinate is ``|g - fd| / max(|g|, |fd|, floor * s)``
    where ``s`` is the largest gradient magnitude of that tensor, so
    coordinates whose gradient is negligible next to its neighbours do not
    dominate through cancellation noise.
    """
    gen = torch.Generator().manual_seed(seed)
    inputs = tuple(inputs)
    params = dict(op.named_parameters()) if isinstance(op, nn.Module) else {}
    leaves = {f"param:{k}": v for k, v in params.items() if v.requires_grad}
    if check_inputs:
        leaves.update({f"input:{i}": x for i, x in enumerate(inputs)
                       if isinstance(x, torch.Tensor) and x.requires_grad})

    for t in leaves.values():
        t.grad = None
    out = op(*inputs)
    proj = torch.randn(out.shape, generator=gen, dtype=torch.float64)
    (out * proj.to(out.dtype)).sum().backward()

    op64 = copy.deepcopy(op).double() if isinstance(op, nn.Module) else op
    params64 = dict(op64.named_parameters()) if isinstance(op64, nn.Module) else {}
    inputs64 = tuple(_as_double(x) for x in inputs)

    def scalar():
        with torch.no_grad():
            return float((op64(*inputs64) * proj).sum())

    worst = 0.0
    for name, leaf in leaves.items():
        kind, key = name.split(":", 1)
        target = params64[key] if kind == "param" else inputs64[int(key)]
        grad = leaf.grad
        if grad is None:
            grad = torch.zeros_like(leaf)
        grad = grad.detach().double().reshape(-1)
        n = target.numel()
        coords = torch.randperm(n, generator=gen)[:samples] if n > samples else torch.arange(n)
        scale = float(grad.abs().max()) if n else 0.0
        flat = target.data.view(-1)
        errs = []
        for i in coords.tolist():
            orig = float(flat[i])
            flat[i] = orig + eps
            up = scalar()
            flat[i] = orig - eps
            down = scalar()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            g = float(grad[i])
            denom = max(abs(g), abs(fd), floor * scale, 1e-300)
            errs.append(abs(g - fd) / denom if g != fd else 0.0)
        err = max(errs, default=0.0)
        if report is not None:
            report[name] = err
        worst = max(worst, err)
    return worst
