"""Central-difference gradient verification against autograd."""

from __future__ import annotations

from typing import Callable, Sequence

import torch

from glyphfill.errors import NonFiniteError


def grad_check(
    fn: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    eps: float = 1e-6,
    floor: float = 1e-8,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central differences.

    ``fn(*inputs)`` must return a scalar. Every input is a float64 leaf tensor
    (``requires_grad`` is set here). Per coordinate the error is
    ``|a - n| / max(|a|, |n|, floor)``. With ``max_coords`` a random subset of
    coordinates per input is probed instead of all of them.
    """
    inputs = list(inputs)
    for x in inputs:
        if x.dtype != torch.float64:
            raise TypeError("grad_check needs float64 inputs")
        x.requires_grad_(True)

    out = fn(*inputs)
    if out.numel() != 1:
        raise ValueError("grad_check: fn must return a scalar")
    analytic = torch.autograd.grad(out, inputs, allow_unused=True)
    analytic = [torch.zeros_like(x) if g is None else g for g, x in zip(analytic, inputs)]
    for g in analytic:
        if not torch.all(torch.isfinite(g)):
            raise NonFiniteError("grad_check: analytic gradient is not finite")

    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    with torch.no_grad():
        for x, g in zip(inputs, analytic):
            flat = x.view(-1)
            gflat = g.reshape(-1)
            idx = torch.arange(flat.numel())
            if max_coords is not None and flat.numel() > max_coords:
                idx = torch.randperm(flat.numel(), generator=gen)[:max_coords]
            for i in idx.tolist():
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = fn(*inputs).item()
                flat[i] = orig - eps
                f_minus = fn(*inputs).item()
                flat[i] = orig
                num = (f_plus - f_minus) / (2 * eps)
                a = gflat[i].item()
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
    return worst


def projected(op: Callable[..., torch.Tensor], seed: int = 1) -> Callable[..., torch.Tensor]:
    """Wrap a tensor-valued op into a scalar via a fixed random projection of its output."""
    cache: dict = {}

    def scalar(*args):
        y = op(*args)
        key = (tuple(y.shape), y.dtype)
        if key not in cache:
            gen = torch.Generator().manual_seed(seed)
            cache[key] = torch.randn(y.shape, generator=gen, dtype=y.dtype)
        return (y * cache[key]).sum()

    return scalar
