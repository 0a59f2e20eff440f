"""Differentiable substrate: layers, attention with a logit-bias hook, LoRA, checkpoints, gradient checks."""

from glyphfill.nn.checkpoint import load_checkpoint, read_header, save_checkpoint
from glyphfill.nn.gradcheck import grad_check, projected
from glyphfill.nn.layers import (
    LoRA,
    Linear,
    RMSNorm,
    TimestepEmbedder,
    attention,
    gelu,
    linear,
    lora_merge,
    patchify,
    rms_norm,
    sinusoidal_features,
    timestep_embed,
    unpatchify,
)
