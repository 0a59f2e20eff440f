"""A small MM-DiT denoiser over joint [null-text; image] token sequences.

Each block runs adaLN-modulated joint attention and per-stream MLPs, then the
Context-aware Mask Adapter (CMA) adds a shape-control residual to the image
tokens from the block output concatenated with the token-downsampled glyph mask.

LoRA adapters and CMA modules are not owned by the model: they belong to an
adapter set (see :mod:`glyphfill.flow`) and are attached with
:meth:`Denoiser.attach`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F
from torch import nn

from glyphfill.canvas import LayoutSpec, derive_layout
from glyphfill.errors import ConfigError, ShapeError
from glyphfill.nn.layers import (
    Linear,
    RMSNorm,
    TimestepEmbedder,
    attention,
    gelu,
    patchify,
    rms_norm,
    unpatchify,
)

# linear layers inside one stream of a block, by name
STREAM_LINEARS = ("mod", "qkv", "out", "mlp1", "mlp2")
DEFAULT_LORA_TARGETS = ("qkv", "out", "mlp1", "mlp2")


@dataclass
class DenoiserConfig:
    depth: int = 4
    dim: int = 128
    heads: int = 4
    patch: int = 2
    text_len: int = 8
    cond_channels: int = 7
    mlp_ratio: int = 4
    H: int = 64
    W: int = 64
    cma_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.cond_channels != 7:
            raise ConfigError("cond_channels is fixed at 7 (noisy 3 + masked image 3 + mask 1)")
        derive_layout(self.H, self.W, self.patch)

    @property
    def layout(self) -> LayoutSpec:
        return derive_layout(self.H, self.W, self.patch)

    @property
    def n_img_tokens(self) -> int:
        return self.layout.n_tokens

    @property
    def n_tokens(self) -> int:
        return self.text_len + self.n_img_tokens

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class CMAModule(nn.Module):
    """``C+1 -> hidden -> C`` bottleneck; the output layer starts at zero."""

    def __init__(self, dim: int, hidden: int = 64, generator=None):
        super().__init__()
        self.lin1 = Linear(dim + 1, hidden, generator=generator)
        self.lin2 = Linear(hidden, dim, generator=generator).zero_()


def cma_forward(img_tokens: torch.Tensor, mask_tokens: torch.Tensor, cma: CMAModule) -> torch.Tensor:
    if img_tokens.shape[:-1] != mask_tokens.shape[:-1] or mask_tokens.shape[-1] != 1:
        raise ShapeError(f"cma: tokens {tuple(img_tokens.shape)} vs mask {tuple(mask_tokens.shape)}")
    h = torch.cat([img_tokens, mask_tokens.to(img_tokens.dtype)], dim=-1)
    return img_tokens + cma.lin2(gelu(cma.lin1(h)))


def downsample_mask_to_tokens(mask: torch.Tensor, p: int) -> torch.Tensor:
    """Area-average a ``[B, H, W]`` mask over p x p blocks -> ``[B, L_img, 1]``."""
    B, H, W = mask.shape
    if H % p or W % p:
        raise ShapeError(f"mask {H}x{W} not divisible by patch {p}")
    return mask.reshape(B, H // p, p, W // p, p).mean(dim=(2, 4)).reshape(B, -1, 1)


class Stream(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, generator=None):
        super().__init__()
        self.norm1 = RMSNorm(dim)
        self.norm2 = RMSNorm(dim)
        self.mod = Linear(dim, 6 * dim, generator=generator).zero_()
        self.qkv = Linear(dim, 3 * dim, generator=generator)
        self.q_gain = nn.Parameter(torch.ones(dim // heads))
        self.k_gain = nn.Parameter(torch.ones(dim // heads))
        self.out = Linear(dim, dim, generator=generator)
        self.mlp1 = Linear(dim, mlp_ratio * dim, generator=generator)
        self.mlp2 = Linear(mlp_ratio * dim, dim, generator=generator)
        self.heads = heads

    def modulation(self, c: torch.Tensor):
        return self.mod(F.silu(c)).unsqueeze(1).chunk(6, dim=-1)

    def qkv_of(self, x, shift, scale):
        B, L, C = x.shape
        h = self.norm1(x) * (1 + scale) + shift
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        dh = C // self.heads
        q = rms_norm(q.reshape(B, L, self.heads, dh), self.q_gain).reshape(B, L, C)
        k = rms_norm(k.reshape(B, L, self.heads, dh), self.k_gain).reshape(B, L, C)
        return q, k, v

    def finish(self, x, attn_out, gate1, shift2, scale2, gate2):
        x = x + gate1 * self.out(attn_out)
        h = self.norm2(x) * (1 + scale2) + shift2
        return x + gate2 * self.mlp2(gelu(self.mlp1(h)))


class MMDiTBlock(nn.Module):
    def __init__(self, cfg: DenoiserConfig, generator=None):
        super().__init__()
        self.txt = Stream(cfg.dim, cfg.heads, cfg.mlp_ratio, generator)
        self.img = Stream(cfg.dim, cfg.heads, cfg.mlp_ratio, generator)
        self.heads = cfg.heads
        object.__setattr__(self, "cma", None)

    def attach_cma(self, cma: CMAModule | None) -> None:
        object.__setattr__(self, "cma", cma)

    def linears(self) -> dict[str, Linear]:
        return {f"{s}.{n}": getattr(getattr(self, s), n) for s in ("txt", "img") for n in STREAM_LINEARS}

    def forward(self, txt, img, t_emb, mask_tokens, logit_bias=None, attn_sink=None):
        T = txt.shape[1]
        mt = self.txt.modulation(t_emb)
        mi = self.img.modulation(t_emb)
        qt, kt, vt = self.txt.qkv_of(txt, mt[0], mt[1])
        qi, ki, vi = self.img.qkv_of(img, mi[0], mi[1])
        q = torch.cat([qt, qi], dim=1)
        k = torch.cat([kt, ki], dim=1)
        v = torch.cat([vt, vi], dim=1)
        if attn_sink is not None:
            out, w = attention(q, k, v, self.heads, logit_bias, return_weights=True)
            attn_sink.append(w.detach())
        else:
            out = attention(q, k, v, self.heads, logit_bias)
        txt = self.txt.finish(txt, out[:, :T], mt[2], mt[3], mt[4], mt[5])
        img = self.img.finish(img, out[:, T:], mi[2], mi[3], mi[4], mi[5])
        if self.cma is not None:
            img = cma_forward(img, mask_tokens, self.cma)
        return txt, img


def block_forward(block: MMDiTBlock, txt, img, t_emb, mask_tokens, logit_bias=None):
    return block(txt, img, t_emb, mask_tokens, logit_bias)


class Denoiser(nn.Module):
    """Velocity predictor ``v(x_t, t | input canvas, inpaint mask)`` in pixel space."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        g = torch.Generator().manual_seed(cfg.seed)
        p, C = cfg.patch, cfg.dim
        self.patch_embed = Linear(p * p * cfg.cond_channels, C, generator=g)
        self.pos = nn.Parameter(0.02 * torch.randn(cfg.n_img_tokens, C, generator=g))
        self.null_text = nn.Parameter(0.02 * torch.randn(cfg.text_len, C, generator=g))
        self.t_embed = TimestepEmbedder(C, generator=g)
        self.blocks = nn.ModuleList([MMDiTBlock(cfg, g) for _ in range(cfg.depth)])
        self.final_norm = RMSNorm(C)
        self.final_mod = Linear(C, 2 * C, generator=g).zero_()
        self.final = Linear(C, p * p * 3, generator=g).zero_()
        object.__setattr__(self, "adapters", None)

    @property
    def layout(self) -> LayoutSpec:
        return self.cfg.layout

    def attach(self, adapters) -> None:
        """Point every block at ``adapters`` (LoRA per linear, CMA per block); ``None`` detaches all."""
        for i, block in enumerate(self.blocks):
            for name, layer in block.linears().items():
                key = f"blocks.{i}.{name}"
                layer.attach(None if adapters is None else adapters.lora.get(key))
            block.attach_cma(None if adapters is None else adapters.cma[i])
        object.__setattr__(self, "adapters", adapters)

    def forward(self, x_t, cond_image, inpaint_mask, t, logit_bias=None, attn_sink=None):
        """``x_t``, ``cond_image``: ``[B, H, W_total, 3]``; ``inpaint_mask``: ``[B, H, W_total]``; ``t``: ``[B]``."""
        lay = self.layout
        expected = (lay.H, lay.w_total)
        for name, arr in (("x_t", x_t), ("cond_image", cond_image)):
            if tuple(arr.shape[1:3]) != expected or arr.shape[-1] != 3:
                raise ShapeError(f"{name}: expected [B, {lay.H}, {lay.w_total}, 3], got {tuple(arr.shape)}")
        if tuple(inpaint_mask.shape[1:]) != expected:
            raise ShapeError(f"inpaint_mask: expected [B, {lay.H}, {lay.w_total}], got {tuple(inpaint_mask.shape)}")
        B = x_t.shape[0]
        dtype = self.pos.dtype
        t = torch.as_tensor(t, dtype=dtype).reshape(-1).expand(B)

        feats = torch.cat([x_t, cond_image, inpaint_mask.unsqueeze(-1)], dim=-1).to(dtype)
        img = self.patch_embed(patchify(feats, lay.patch)) + self.pos
        txt = self.null_text.expand(B, -1, -1)
        c = self.t_embed(t)
        mask_tokens = downsample_mask_to_tokens(inpaint_mask.to(dtype), lay.patch)
        for block in self.blocks:
            txt, img = block(txt, img, c, mask_tokens, logit_bias, attn_sink)
        shift, scale = self.final_mod(F.silu(c)).unsqueeze(1).chunk(2, dim=-1)
        out = self.final(self.final_norm(img) * (1 + scale) + shift)
        return unpatchify(out, lay.patch, lay.H, lay.w_total)

    def base_parameters(self) -> dict[str, nn.Parameter]:
        return dict(self.named_parameters())


def denoiser_forward(model: Denoiser, x_t, cond: dict, t, adapters=None, redirection=None):
    """Functional entry: attach ``adapters`` (if given), apply an optional redirection bias."""
    if adapters is not None and model.adapters is not adapters:
        model.attach(adapters)
    bias = None
    if redirection is not None:
        from glyphfill.redirection import bias_tensor

        bias = bias_tensor(redirection, model.cfg.n_tokens, model.pos.dtype)
    return model(x_t, cond["image"], cond["mask"], t, logit_bias=bias)
