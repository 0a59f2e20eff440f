"""Self-contained verification suite: gradient checks and oracle comparisons on tiny configurations."""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from glyphfill.canvas import compose_input
from glyphfill.flow import AdapterSet, fm_loss, interpolate, select_trainable
from glyphfill.metrics import patch_frechet, patch_frechet_eig
from glyphfill.mmdit import CMAModule, Denoiser, DenoiserConfig, cma_forward
from glyphfill.nn.checkpoint import load_checkpoint, save_checkpoint
from glyphfill.nn.gradcheck import grad_check, projected
from glyphfill.nn.layers import LoRA, Linear, attention, gelu, linear, lora_merge, rms_norm
from glyphfill.redirection import verify_reweight
from glyphfill.sampler import SampleConfig, euler_sample

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def tiny_config(**kw) -> DenoiserConfig:
    """Depth 2, C=32, patch 2 on a 16 x 16 glyph (16 x 26 canvas)."""
    base = dict(depth=2, dim=32, heads=2, patch=2, text_len=4, H=16, W=16, seed=3)
    base.update(kw)
    return DenoiserConfig(**base)


def randomize_(module: torch.nn.Module, std: float = 0.3, seed: int = 0) -> None:
    """Overwrite every parameter with Gaussian noise (lifts zero inits so all paths carry gradient)."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(std * torch.randn(p.shape, generator=g, dtype=p.dtype))


def _g(seed):
    return torch.Generator().manual_seed(seed)


def _functional(module: torch.nn.Module, names: list[str], call: Callable):
    """Scalar function of the named parameters of ``module`` (swapped in via ``functional_call``)."""

    def f(*vals):
        return torch.func.functional_call(module, dict(zip(names, vals)), ())

    module.forward = call
    return f


class _Bundle(torch.nn.Module):
    """Holds modules together so their parameters share one namespace."""

    def __init__(self, **mods):
        super().__init__()
        for k, m in mods.items():
            setattr(self, k, m)


def _params_check(name: str, bundle: _Bundle, call: Callable, max_coords=None, eps: float = 1e-6) -> CheckResult:
    names = [n for n, _ in bundle.named_parameters()]
    f = _functional(bundle, names, call)
    inputs = [p.detach().clone() for _, p in bundle.named_parameters()]
    err = grad_check(f, inputs, eps=eps, max_coords=max_coords)
    return CheckResult(name, err < GRAD_TOL, f"{len(names)} tensors, max rel err {err:.2e}")


def check_linear_lora() -> CheckResult:
    layer = Linear(5, 4, generator=_g(0)).double()
    ad = LoRA(5, 4, rank=2, alpha=4.0, generator=_g(1)).double()
    randomize_(ad, seed=3)
    x = torch.randn(3, 5, generator=_g(2), dtype=torch.float64)
    proj = torch.randn(3, 4, generator=_g(4), dtype=torch.float64)
    return _params_check("grad linear+lora", _Bundle(layer=layer, ad=ad), lambda: (linear(x, layer, ad) * proj).sum())


def check_attention() -> CheckResult:
    q, k, v = (torch.randn(2, 5, 8, generator=_g(s), dtype=torch.float64) for s in (0, 1, 2))
    bias = torch.zeros(5, 5, dtype=torch.float64)
    bias[3:, :2] = np.log(0.3)
    err = grad_check(projected(lambda q, k, v: attention(q, k, v, 2, bias)), [q, k, v])
    return CheckResult("grad attention (biased)", err < GRAD_TOL, f"max rel err {err:.2e}")


def check_gelu() -> CheckResult:
    x = torch.linspace(-4, 4, 41, dtype=torch.float64).reshape(1, -1)
    err = grad_check(projected(gelu), [x])
    return CheckResult("grad gelu", err < GRAD_TOL, f"max rel err {err:.2e}")


def check_rms_norm() -> CheckResult:
    x = torch.randn(3, 6, generator=_g(0), dtype=torch.float64)
    gain = 1 + 0.1 * torch.randn(6, generator=_g(1), dtype=torch.float64)
    err = grad_check(projected(rms_norm), [x, gain])
    return CheckResult("grad rms_norm", err < GRAD_TOL, f"max rel err {err:.2e}")


def check_cma() -> CheckResult:
    cma = CMAModule(6, 4, generator=_g(0)).double()
    randomize_(cma, seed=1)
    x = torch.randn(2, 5, 6, generator=_g(2), dtype=torch.float64)
    m = torch.rand(2, 5, 1, generator=_g(3), dtype=torch.float64)
    proj = torch.randn(2, 5, 6, generator=_g(4), dtype=torch.float64)
    return _params_check("grad cma", _Bundle(cma=cma), lambda: (cma_forward(x, m, cma) * proj).sum())


def check_fm_loss(max_coords: int | None = 16, std: float = 0.05, eps: float = 1e-3, seed: int = 0) -> CheckResult:
    """Gradient of the flow-matching loss with respect to every trainable (adapter) tensor.

    Base and adapter weights are redrawn with ``std`` so every path carries gradient. The loss is
    O(1) while some coordinates have gradients below the 1e-8 floor, so the difference quotient
    is roundoff-limited for small steps; small weights keep the curvature low enough that a step
    of 1e-3 stays truncation-safe. ``max_coords`` random coordinates of every tensor are probed
    (``None`` probes all of them).
    """
    cfg = tiny_config()
    model = Denoiser(cfg).double()
    randomize_(model, std=std, seed=4 + seed)
    adapters = AdapterSet.create(model, "amorphous", rank=2, alpha=4.0).double()
    randomize_(adapters, std=std, seed=50 + seed)
    model.attach(adapters)
    select_trainable(model, adapters)
    lay = cfg.layout
    g = _g(6 + seed)
    x0 = torch.rand(2, lay.H, lay.w_total, 3, generator=g, dtype=torch.float64)
    noise = torch.randn(x0.shape, generator=g, dtype=torch.float64)
    sample = interpolate(x0, noise, torch.tensor([0.3, 0.8], dtype=torch.float64))
    cond = torch.rand(x0.shape, generator=g, dtype=torch.float64)
    mask = (torch.rand(2, lay.H, lay.w_total, generator=g) > 0.5).double()
    return _params_check(
        "grad fm_loss (adapters)",
        _Bundle(adapters=adapters),
        lambda: fm_loss(model, sample, cond, mask),
        max_coords=max_coords,
        eps=eps,
    )


def check_lora_merge() -> CheckResult:
    layer = Linear(16, 12, generator=_g(0))
    ad = LoRA(16, 12, rank=4, alpha=8.0, generator=_g(1))
    with torch.no_grad():
        ad.up.normal_(0, 0.1, generator=_g(2))
    x = torch.randn(7, 16, generator=_g(3))
    with torch.no_grad():
        diff = float((linear(x, layer, ad) - linear(x, lora_merge(layer, ad))).abs().max())
    return CheckResult("lora merge vs compose", diff < 1e-5, f"max abs diff {diff:.2e}")


def check_frechet_oracle() -> CheckResult:
    rng = np.random.default_rng(0)
    A = rng.normal(size=(60, 17)) @ rng.normal(size=(17, 17)) * 0.3
    B = rng.normal(size=(50, 17)) @ rng.normal(size=(17, 17)) * 0.3 + 0.2
    d = abs(patch_frechet(A, B).value - patch_frechet_eig(A, B).value)
    return CheckResult("frechet sqrtm vs eigen oracle", d < 1e-6, f"abs diff {d:.2e}")


def check_reweight() -> CheckResult:
    ok = verify_reweight(np.zeros(3), np.array([np.log(0.5), np.log(0.5), 0.0]), 0.5, [0, 1])
    rng = np.random.default_rng(1)
    a = rng.normal(size=12)
    b = np.zeros(12)
    b[:5] = np.log(0.3)
    ok = ok and verify_reweight(a, b, 0.3, range(5))
    return CheckResult("redirection reweight identity", bool(ok), "softmax(A + log lam) matches closed form")


def check_euler_telescoping() -> CheckResult:
    cfg = tiny_config()
    lay = cfg.layout
    cond = compose_input(np.zeros((lay.H, lay.w_ref, 3)), np.zeros((lay.H, lay.W)), lay)
    c = torch.full((3,), 0.25, dtype=torch.float64)

    def const(x, *_):
        return c.expand_as(x)

    worst = 0.0
    for n in (1, 4, 32):
        out, noise = euler_sample(const, cond, None, SampleConfig(steps=n, seed=2), clamp=False, return_noise=True)
        worst = max(worst, float(np.abs(out - (noise - 0.25)).max()))
    return CheckResult("euler constant-velocity telescoping", worst < 1e-12, f"max abs err {worst:.1e}")


def check_checkpoint_roundtrip() -> CheckResult:
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.float32([1.5, -2.0])}
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "x.ckpt"
        save_checkpoint(path, arrays, trainable=["b"], meta={"kind": "object"})
        back, header = load_checkpoint(path)
    ok = all(np.array_equal(arrays[k], back[k]) for k in arrays) and header["tensors"]["b"]["trainable"]
    return CheckResult("checkpoint round trip", bool(ok), "arrays and flags preserved")


CHECKS: list[Callable[[], CheckResult]] = [
    check_linear_lora,
    check_attention,
    check_gelu,
    check_rms_norm,
    check_cma,
    check_fm_loss,
    check_lora_merge,
    check_frechet_oracle,
    check_reweight,
    check_euler_telescoping,
    check_checkpoint_roundtrip,
]


def run_all() -> list[CheckResult]:
    results = []
    for check in CHECKS:
        try:
            results.append(check())
        except Exception as exc:  # a crashing check is a failing check
            results.append(CheckResult(check.__name__, False, f"{type(exc).__name__}: {exc}"))
    return results
