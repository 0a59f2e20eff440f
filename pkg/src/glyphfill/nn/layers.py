"""Layers and functional ops for the denoiser.

Tensors are torch tensors. LoRA adapters are attached to :class:`Linear` layers
without registering them as submodules, so a model's own parameter tree stays
the frozen base while adapter sets can be swapped in and out.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from glyphfill.errors import ShapeError


class LoRA(nn.Module):
    """Low-rank delta ``(alpha / r) * up @ down``; ``up`` starts at zero."""

    def __init__(self, d_in: int, d_out: int, rank: int = 4, alpha: float = 8.0, generator=None):
        super().__init__()
        if rank < 1:
            raise ValueError("LoRA rank must be >= 1")
        self.rank = rank
        self.alpha = float(alpha)
        down = torch.empty(rank, d_in)
        nn.init.kaiming_uniform_(down, a=math.sqrt(5), generator=generator)
        self.down = nn.Parameter(down)
        self.up = nn.Parameter(torch.zeros(d_out, rank))

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def delta(self, x: torch.Tensor) -> torch.Tensor:
        return self.scale * F.linear(F.linear(x, self.down), self.up)

    def n_params(self) -> int:
        return self.down.numel() + self.up.numel()


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, generator=None):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        w = torch.empty(d_out, d_in)
        nn.init.kaiming_uniform_(w, a=math.sqrt(5), generator=generator)
        self.weight = nn.Parameter(w)
        if bias:
            bound = 1.0 / math.sqrt(d_in)
            self.bias = nn.Parameter(torch.empty(d_out).uniform_(-bound, bound, generator=generator))
        else:
            self.register_parameter("bias", None)
        object.__setattr__(self, "adapter", None)

    def attach(self, adapter: LoRA | None) -> None:
        if adapter is not None and (adapter.down.shape[1] != self.d_in or adapter.up.shape[0] != self.d_out):
            raise ShapeError(
                f"LoRA {tuple(adapter.up.shape)}x{tuple(adapter.down.shape)} does not fit Linear {self.d_in}->{self.d_out}"
            )
        object.__setattr__(self, "adapter", adapter)

    def zero_(self) -> "Linear":
        with torch.no_grad():
            self.weight.zero_()
            if self.bias is not None:
                self.bias.zero_()
        return self

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return linear(x, self, self.adapter)


def linear(x: torch.Tensor, layer: Linear, adapter: LoRA | None = None) -> torch.Tensor:
    """``x W^T + b`` plus the optional low-rank delta."""
    if x.shape[-1] != layer.d_in:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != {layer.d_in}")
    y = F.linear(x, layer.weight, layer.bias)
    if adapter is not None:
        y = y + adapter.delta(x)
    return y


def lora_merge(layer: Linear, adapter: LoRA) -> Linear:
    """New layer with ``W' = W + (alpha/r) up @ down`` and the same bias."""
    if adapter.down.shape[1] != layer.d_in or adapter.up.shape[0] != layer.d_out:
        raise ShapeError("lora_merge: adapter does not match layer")
    merged = Linear(layer.d_in, layer.d_out, bias=layer.bias is not None)
    merged = merged.to(layer.weight.dtype)
    with torch.no_grad():
        merged.weight.copy_(layer.weight + adapter.scale * adapter.up @ adapter.down)
        if layer.bias is not None:
            merged.bias.copy_(layer.bias)
    return merged


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x, approximate="tanh")


def rms_norm(x: torch.Tensor, gain: torch.Tensor | None = None, eps: float = 1e-6) -> torch.Tensor:
    y = x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + eps)
    return y if gain is None else y * gain


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(dim))
        self.eps = eps

    def forward(self, x):
        return rms_norm(x, self.gain, self.eps)


def attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    heads: int,
    logit_bias: torch.Tensor | None = None,
    return_weights: bool = False,
):
    """Multi-head scaled dot-product attention over ``[..., L, d]`` inputs.

    ``logit_bias`` (``[L, L]`` or ``[B, L, L]``) is added to the pre-softmax
    logits of every head.
    """
    *lead, L, d = q.shape
    if k.shape != q.shape or v.shape != q.shape:
        raise ShapeError(f"attention: q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)}")
    if d % heads:
        raise ShapeError(f"attention: dim {d} not divisible by heads {heads}")
    dh = d // heads

    def split(t):
        return t.reshape(*lead, L, heads, dh).transpose(-2, -3)  # [..., heads, L, dh]

    qh, kh, vh = split(q), split(k), split(v)
    logits = qh @ kh.transpose(-1, -2) / math.sqrt(dh)
    if logit_bias is not None:
        if logit_bias.shape[-2:] != (L, L):
            raise ShapeError(f"logit_bias must end in ({L}, {L}), got {tuple(logit_bias.shape)}")
        logits = logits + logit_bias.unsqueeze(-3)
    weights = torch.softmax(logits, dim=-1)
    out = (weights @ vh).transpose(-2, -3).reshape(*lead, L, d)
    return (out, weights) if return_weights else out


def patchify(x: torch.Tensor, p: int) -> torch.Tensor:
    """``[B, H, W, C]`` -> ``[B, (H/p)(W/p), p*p*C]``; tokens row-major, each a flattened p x p x C block."""
    B, H, W, C = x.shape
    if H % p or W % p:
        raise ShapeError(f"patchify: {H}x{W} not divisible by patch {p}")
    x = x.reshape(B, H // p, p, W // p, p, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, (H // p) * (W // p), p * p * C)


def unpatchify(tokens: torch.Tensor, p: int, H: int, W: int) -> torch.Tensor:
    B, L, D = tokens.shape
    C = D // (p * p)
    if H % p or W % p or L != (H // p) * (W // p) or C * p * p != D:
        raise ShapeError(f"unpatchify: tokens {tuple(tokens.shape)} do not tile {H}x{W} at patch {p}")
    x = tokens.reshape(B, H // p, W // p, p, p, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, H, W, C)


def sinusoidal_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    """``[sin(f t), cos(f t)]`` with ``dim/2`` frequencies spaced geometrically from 1 to 1e4."""
    half = dim // 2
    freqs = torch.logspace(0.0, 4.0, half, dtype=t.dtype, device=t.device)
    args = t[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class TimestepEmbedder(nn.Module):
    def __init__(self, dim: int, freq_dim: int = 64, generator=None):
        super().__init__()
        self.freq_dim = freq_dim
        self.fc1 = Linear(freq_dim, dim, generator=generator)
        self.fc2 = Linear(dim, dim, generator=generator)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=self.fc1.weight.dtype)
        if torch.any((t < 0) | (t > 1)):
            raise ValueError("timestep must lie in [0, 1]")
        return self.fc2(F.silu(self.fc1(sinusoidal_features(t, self.freq_dim))))


def timestep_embed(t, dim: int, embedder: TimestepEmbedder | None = None) -> torch.Tensor:
    embedder = embedder or TimestepEmbedder(dim, generator=torch.Generator().manual_seed(0))
    return embedder(torch.as_tensor(t))
