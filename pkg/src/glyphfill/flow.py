"""Rectified-flow training of the denoiser and per-kind adapter sets.

Convention: ``x_t = (1 - t) x0 + t eps`` with target velocity ``u = eps - x0``;
data sits at ``t = 0`` and noise at ``t = 1``.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from glyphfill.errors import CheckpointError, ConfigError, KindMismatchError, NonFiniteError
from glyphfill.mmdit import DEFAULT_LORA_TARGETS, STREAM_LINEARS, CMAModule, Denoiser, DenoiserConfig
from glyphfill.nn.checkpoint import load_checkpoint, read_header, save_checkpoint
from glyphfill.nn.layers import LoRA

log = logging.getLogger(__name__)


class AdapterKind(str, enum.Enum):
    AMORPHOUS = "amorphous"
    OBJECT = "object"
    EDGE_REPAINT = "edge_repaint"

    @classmethod
    def parse(cls, value) -> "AdapterKind":
        if isinstance(value, cls):
            return value
        value = str(value).lower()
        if value == "edge":
            return cls.EDGE_REPAINT
        return cls(value)


# ----------------------------------------------------------------------------- samples & loss


@dataclass
class FlowSample:
    x0: torch.Tensor
    eps: torch.Tensor
    t: torch.Tensor  # [B]
    x_t: torch.Tensor
    u: torch.Tensor


def interpolate(x0: torch.Tensor, eps: torch.Tensor, t: torch.Tensor) -> FlowSample:
    tb = t.reshape(-1, *([1] * (x0.dim() - 1))).to(x0.dtype)
    return FlowSample(x0=x0, eps=eps, t=t, x_t=(1 - tb) * x0 + tb * eps, u=eps - x0)


def make_flow_sample(x0: torch.Tensor, generator: torch.Generator, t: torch.Tensor | None = None) -> FlowSample:
    """Draw ``eps ~ N(0, I)`` and (unless given) ``t ~ U(0, 1)`` per batch item."""
    if not torch.all(torch.isfinite(x0)):
        raise NonFiniteError("x0 contains non-finite values")
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    if t is None:
        t = torch.rand(x0.shape[0], generator=generator, dtype=x0.dtype)
    return interpolate(x0, eps, torch.as_tensor(t, dtype=x0.dtype).reshape(-1))


def fm_loss(model: Callable, sample: FlowSample, cond_image, inpaint_mask, logit_bias=None) -> torch.Tensor:
    """Mean squared error between predicted velocity and ``u`` over every canvas pixel and channel."""
    pred = model(sample.x_t, cond_image, inpaint_mask, sample.t, logit_bias)
    return torch.mean((pred - sample.u) ** 2)


# ----------------------------------------------------------------------------- adapter sets


def _safe(key: str) -> str:
    return key.replace(".", "__")


class AdapterSet(nn.Module):
    """LoRA adapters for the targeted block linears plus one CMA per block, for one element kind."""

    def __init__(self, kind, lora: dict[str, LoRA], cma: list[CMAModule], meta: dict | None = None):
        super().__init__()
        self.kind = AdapterKind.parse(kind)
        self._lora = nn.ModuleDict({_safe(k): v for k, v in lora.items()})
        self._keys = list(lora)
        self.cma = nn.ModuleList(cma)
        self.meta = dict(meta or {})

    @property
    def lora(self) -> dict[str, LoRA]:
        return {k: self._lora[_safe(k)] for k in self._keys}

    @classmethod
    def create(
        cls,
        model: Denoiser,
        kind,
        rank: int = 4,
        alpha: float = 8.0,
        targets=DEFAULT_LORA_TARGETS,
        seed: int = 0,
    ) -> "AdapterSet":
        unknown = set(targets) - set(STREAM_LINEARS)
        if unknown:
            raise ConfigError(f"unknown LoRA targets {sorted(unknown)}")
        g = torch.Generator().manual_seed(seed)
        lora = {}
        for i, block in enumerate(model.blocks):
            for name, layer in block.linears().items():
                if name.split(".")[1] in targets:
                    lora[f"blocks.{i}.{name}"] = LoRA(layer.d_in, layer.d_out, rank, alpha, generator=g)
        cma = [CMAModule(model.cfg.dim, model.cfg.cma_hidden, generator=g) for _ in model.blocks]
        meta = {"rank": rank, "alpha": alpha, "targets": list(targets)}
        return cls(kind, lora, cma, meta).to(model.pos.dtype)

    def named_arrays(self) -> dict[str, torch.Tensor]:
        out = {}
        for k, mod in self.lora.items():
            out[f"lora.{k}.down"] = mod.down
            out[f"lora.{k}.up"] = mod.up
        for i, c in enumerate(self.cma):
            for n, p in c.named_parameters():
                out[f"cma.{i}.{n}"] = p
        return out


def switch(model: Denoiser, adapters: AdapterSet | None) -> None:
    """Swap adapter references on the model; base weights are untouched."""
    model.attach(adapters)


@dataclass
class TrainableView:
    params: dict[str, nn.Parameter]
    n_trainable: int
    n_total: int

    @property
    def ratio(self) -> float:
        return self.n_trainable / self.n_total


def select_trainable(model: Denoiser, adapters: AdapterSet) -> TrainableView:
    """Freeze every base parameter; LoRA and CMA parameters become the trainable set."""
    for p in model.parameters():
        p.requires_grad_(False)
    params = adapters.named_arrays()
    for p in params.values():
        p.requires_grad_(True)
    n_train = sum(p.numel() for p in params.values())
    n_base = sum(p.numel() for p in model.parameters())
    return TrainableView(params=params, n_trainable=n_train, n_total=n_base + n_train)


# ----------------------------------------------------------------------------- training


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 8
    steps: int = 2000
    seed: int = 0
    precision: str = "float32"
    pretrain_steps: int = 1000
    pretrain_lr: float = 1e-3
    pretrain_schedule: str = "cosine"
    warmup_steps: int = 50
    lora_rank: int = 4
    lora_alpha: float = 8.0
    lora_targets: tuple = DEFAULT_LORA_TARGETS
    edge_band_radius: int = 2
    eval_draws: int = 8

    def __post_init__(self):
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch < 1 or self.steps < 0 or self.pretrain_steps < 0:
            raise ConfigError("batch must be >= 1 and step counts >= 0")
        if self.pretrain_schedule not in ("cosine", "constant"):
            raise ConfigError(f"pretrain_schedule must be cosine or constant, got {self.pretrain_schedule}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision}")
        self.lora_targets = tuple(self.lora_targets)

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lora_targets"] = list(self.lora_targets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TensorData:
    """Stacked canvases: ``inputs``/``gts`` ``[N, H, W_total, 3]``, ``masks`` ``[N, H, W_total]``."""

    inputs: torch.Tensor
    masks: torch.Tensor
    gts: torch.Tensor
    ids: list = field(default_factory=list)

    def __len__(self):
        return self.inputs.shape[0]

    @classmethod
    def from_arrays(cls, inputs, masks, gts, ids=None, dtype=torch.float32) -> "TensorData":
        if len(inputs) == 0:
            raise ValueError("empty dataset")
        return cls(
            inputs=torch.as_tensor(np.stack(inputs), dtype=dtype),
            masks=torch.as_tensor(np.stack(masks), dtype=dtype),
            gts=torch.as_tensor(np.stack(gts), dtype=dtype),
            ids=list(ids or range(len(inputs))),
        )

    def to(self, dtype) -> "TensorData":
        return TensorData(self.inputs.to(dtype), self.masks.to(dtype), self.gts.to(dtype), self.ids)


@dataclass
class TrainResult:
    losses: list[float]
    eval_before: float
    eval_after: float
    trainable: int
    total: int


def evaluate_loss(model: Denoiser, data: TensorData, draws: int = 8, seed: int = 1234) -> float:
    """Flow-matching loss averaged over a fixed set of ``(t, eps)`` draws for every sample."""
    g = torch.Generator().manual_seed(seed)
    total = 0.0
    with torch.no_grad():
        for _ in range(draws):
            t = (torch.arange(len(data), dtype=data.gts.dtype) + torch.rand(len(data), generator=g, dtype=data.gts.dtype)) / len(data)
            s = make_flow_sample(data.gts, g, t=t[torch.randperm(len(data), generator=g)])
            total += float(fm_loss(model, s, data.inputs, data.masks))
    return total / draws


def _optimise(
    model: Denoiser,
    params: list[nn.Parameter],
    data: TensorData,
    steps: int,
    lr: float,
    batch: int,
    seed: int,
    on_step: Callable[[int, float], None] | None,
    schedule: str = "constant",
    warmup: int = 0,
) -> list[float]:
    opt = torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)
    sched = None
    if schedule == "cosine" and steps > 0:
        w = min(warmup, steps)

        def factor(i):
            if i < w:
                return (i + 1) / w
            return 0.5 * (1 + math.cos(math.pi * (i - w) / max(1, steps - w)))

        sched = torch.optim.lr_scheduler.LambdaLR(opt, factor)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for step in range(steps):
        idx = torch.as_tensor(rng.integers(len(data), size=batch))
        sample = make_flow_sample(data.gts[idx], gen)
        loss = fm_loss(model, sample, data.inputs[idx], data.masks[idx])
        if not torch.isfinite(loss):
            raise NonFiniteError(f"non-finite loss at step {step} (batch ids {idx.tolist()})")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if sched is not None:
            sched.step()
        value = float(loss.detach())
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
    return losses


def pretrain_base(model: Denoiser, data: TensorData, cfg: TrainConfig, on_step=None) -> list[float]:
    """Short full-parameter stage standing in for a pretrained inpainting backbone."""
    model.attach(None)
    for p in model.parameters():
        p.requires_grad_(True)
    losses = _optimise(
        model,
        list(model.parameters()),
        data,
        cfg.pretrain_steps,
        cfg.pretrain_lr,
        cfg.batch,
        cfg.seed + 1,
        on_step,
        schedule=cfg.pretrain_schedule,
        warmup=cfg.warmup_steps,
    )
    for p in model.parameters():
        p.requires_grad_(False)
    return losses


def train_adapters(model: Denoiser, adapters: AdapterSet, data: TensorData, cfg: TrainConfig, on_step=None) -> list[float]:
    model.attach(adapters)
    view = select_trainable(model, adapters)
    log.info("trainable %d / %d parameters (%.2f%%)", view.n_trainable, view.n_total, 100 * view.ratio)
    return _optimise(model, list(view.params.values()), data, cfg.steps, cfg.lr, cfg.batch, cfg.seed, on_step)


def train(
    model: Denoiser,
    data: TensorData,
    kind,
    cfg: TrainConfig,
    pretrain: bool = True,
    on_step=None,
) -> tuple[AdapterSet, TrainResult]:
    """Optional base pretrain, then LoRA + CMA training for ``kind``; returns the adapter set and loss curve."""
    torch.manual_seed(cfg.seed)
    model.to(cfg.dtype)
    data = data.to(cfg.dtype)
    model.attach(None)
    eval_before = evaluate_loss(model, data, cfg.eval_draws)
    losses = []
    if pretrain and cfg.pretrain_steps:
        losses += pretrain_base(model, data, cfg, on_step)
    adapters = AdapterSet.create(model, kind, cfg.lora_rank, cfg.lora_alpha, cfg.lora_targets, seed=cfg.seed + 7)
    offset = len(losses)
    step_cb = None if on_step is None else (lambda s, v: on_step(offset + s, v))
    losses += train_adapters(model, adapters, data, cfg, step_cb)
    eval_after = evaluate_loss(model, data, cfg.eval_draws)
    view = select_trainable(model, adapters)
    for p in adapters.parameters():
        p.requires_grad_(False)
    adapters.meta["trainable_ratio"] = view.ratio
    return adapters, TrainResult(losses, eval_before, eval_after, view.n_trainable, view.n_total)


def write_loss_csv(path, losses) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


# ----------------------------------------------------------------------------- persistence


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_base(path, model: Denoiser) -> None:
    arrays = {k: v for k, v in model.state_dict().items()}
    save_checkpoint(path, arrays, trainable=arrays.keys(), meta={"format": "base", "config": model.cfg.to_dict()})


def load_base(path, dtype=torch.float32) -> Denoiser:
    arrays, header = load_checkpoint(path)
    if header.get("format") != "base":
        raise CheckpointError(f"{path}: not a base model checkpoint")
    model = Denoiser(DenoiserConfig.from_dict(header["config"]))
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)[:5]}")
    model.load_state_dict(state)
    for p in model.parameters():
        p.requires_grad_(False)
    return model.to(dtype)


def save_adapters(path, adapters: AdapterSet, model: Denoiser, base_path=None) -> None:
    """Write the adapter arrays with a kind tag; ``base_path`` is recorded relative to the file."""
    arrays = adapters.named_arrays()
    meta = {
        "format": "adapter",
        "kind": adapters.kind.value,
        "config": model.cfg.to_dict(),
        **adapters.meta,
    }
    if base_path is not None:
        rel = os.path.relpath(Path(base_path).resolve(), Path(path).resolve().parent)
        meta["base"] = {"path": rel, "sha256": _sha256(base_path)}
    save_checkpoint(path, arrays, trainable=arrays.keys(), meta=meta)


def load_adapters(path, expected_kind=None, model: Denoiser | None = None) -> AdapterSet:
    arrays, header = load_checkpoint(path)
    if header.get("format") != "adapter" or "kind" not in header:
        raise CheckpointError(f"{path}: not an adapter checkpoint")
    kind = AdapterKind.parse(header["kind"])
    if expected_kind is not None and kind is not AdapterKind.parse(expected_kind):
        raise KindMismatchError(f"{path}: adapter kind {kind.value!r}, expected {AdapterKind.parse(expected_kind).value!r}")
    cfg = DenoiserConfig.from_dict(header["config"])
    shell = model if model is not None else Denoiser(cfg)
    adapters = AdapterSet.create(
        shell, kind, header.get("rank", 4), header.get("alpha", 8.0), tuple(header.get("targets", DEFAULT_LORA_TARGETS))
    ).to(torch.float32)
    own = adapters.named_arrays()
    if set(own) != set(arrays):
        raise CheckpointError(f"{path}: adapter tensor names do not match the model")
    with torch.no_grad():
        for k, p in own.items():
            p.copy_(torch.from_numpy(arrays[k]))
            p.requires_grad_(False)
    adapters.meta.update({k: v for k, v in header.items() if k not in ("tensors", "format", "kind", "config")})
    adapters.meta["path"] = str(path)
    return adapters


def load_model_for_adapter(path, dtype=torch.float32) -> Denoiser:
    """Load the base model an adapter file points at, checking its hash."""
    header = read_header(path)
    base = header.get("base")
    if not base:
        raise CheckpointError(f"{path}: adapter does not reference a base model")
    base_path = (Path(path).resolve().parent / base["path"]).resolve()
    if not base_path.exists():
        raise FileNotFoundError(f"base model {base_path} referenced by {path} not found")
    if _sha256(base_path) != base["sha256"]:
        raise CheckpointError(f"{base_path}: hash does not match the one recorded in {path}")
    return load_base(base_path, dtype)


def trainable_fraction_report(cfg: DenoiserConfig, rank: int = 4, alpha: float = 8.0) -> dict:
    model = Denoiser(cfg)
    adapters = AdapterSet.create(model, AdapterKind.AMORPHOUS, rank, alpha)
    view = select_trainable(model, adapters)
    lora = sum(m.n_params() for m in adapters.lora.values())
    cma = sum(p.numel() for p in adapters.cma.parameters())
    return {
        "base": view.n_total - view.n_trainable,
        "lora": lora,
        "cma": cma,
        "trainable": view.n_trainable,
        "total": view.n_total,
        "ratio": view.ratio,
        "percent": round(100 * view.ratio, 3),
    }
