"""Overfit calibration: train the desk model on 8 amorphous triplets and measure what it learned.

``python -m glyphfill.calibration OUT_DIR`` trains from scratch and records the
checkpoints, loss curve and measured metrics in ``OUT_DIR``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from glyphfill.canvas import compose_input, extract_glyph_region
from glyphfill.flow import (
    AdapterSet,
    TensorData,
    TrainConfig,
    evaluate_loss,
    load_adapters,
    load_model_for_adapter,
    save_adapters,
    save_base,
    train,
    write_loss_csv,
)
from glyphfill.metrics import background_cleanliness, mask_iou, patch_frechet, style_features
from glyphfill.mmdit import Denoiser, DenoiserConfig
from glyphfill.redirection import cross_region_mass
from glyphfill.sampler import SampleConfig, canvas_region_sets, generate, redirection_spec
from glyphfill.redirection import bias_tensor
from glyphfill.synth.elements import random_element_spec
from glyphfill.synth.triplets import TrainingTriplet, build_training_triplet

LAMBDAS = (1.0, 0.6, 0.3)


@dataclass(frozen=True)
class CalibrationSetup:
    n_triplets: int = 8
    H: int = 64
    W: int = 64
    patch: int = 4
    depth: int = 4
    dim: int = 128
    rank: int = 4
    pretrain_steps: int = 2000
    adapter_steps: int = 1000
    batch: int = 8
    seed: int = 0

    def model_config(self) -> DenoiserConfig:
        return DenoiserConfig(depth=self.depth, dim=self.dim, patch=self.patch, H=self.H, W=self.W, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.adapter_steps,
            pretrain_steps=self.pretrain_steps,
            batch=self.batch,
            seed=self.seed,
            lora_rank=self.rank,
        )

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def calibration_triplets(setup: CalibrationSetup) -> list[TrainingTriplet]:
    lay = setup.model_config().layout
    return [
        build_training_triplet(random_element_spec("amorphous", setup.seed + i), lay, rng_seed=i)
        for i in range(setup.n_triplets)
    ]


def fresh_glyph(setup: CalibrationSetup, element_index: int, draw: int) -> TrainingTriplet:
    """A new glyph of one calibration element (different mask from its training triplet)."""
    lay = setup.model_config().layout
    return build_training_triplet(random_element_spec("amorphous", setup.seed + element_index), lay, rng_seed=10_000 + draw)


def tensor_data(triplets) -> TensorData:
    return TensorData.from_arrays([t.input for t in triplets], [t.glyph_mask for t in triplets], [t.gt for t in triplets])


def run(out_dir, setup: CalibrationSetup = CalibrationSetup(), log_every: int = 100) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(max(1, torch.get_num_threads()))
    triplets = calibration_triplets(setup)
    data = tensor_data(triplets)
    model = Denoiser(setup.model_config())
    t0 = time.time()

    def report(step, loss):
        if step % log_every == 0:
            print(f"step {step} loss {loss:.5f} ({time.time() - t0:.0f}s)", flush=True)

    adapters, result = train(model, data, "amorphous", setup.train_config(), on_step=report)
    elapsed = time.time() - t0
    save_base(out / "base.ckpt", model)
    save_adapters(out / "amorphous.ckpt", adapters, model, out / "base.ckpt")
    write_loss_csv(out / "loss.csv", result.losses)
    summary = {
        "setup": asdict(setup),
        "fingerprint": setup.fingerprint(),
        "steps": len(result.losses),
        "train_seconds": round(elapsed, 1),
        "loss_initial": result.eval_before,
        "loss_final": result.eval_after,
        "loss_ratio": result.eval_after / result.eval_before,
        "trainable": result.trainable,
        "total": result.total,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def load(out_dir, setup: CalibrationSetup = CalibrationSetup()) -> tuple[Denoiser, AdapterSet, dict] | None:
    """Recorded calibration run for ``setup``, or ``None`` when absent or recorded for another setup."""
    out = Path(out_dir)
    try:
        summary = json.loads((out / "summary.json").read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if summary.get("fingerprint") != setup.fingerprint():
        return None
    model = load_model_for_adapter(out / "amorphous.ckpt")
    adapters = load_adapters(out / "amorphous.ckpt", expected_kind="amorphous", model=model)
    model.attach(adapters)
    return model, adapters, summary


def initial_loss(setup: CalibrationSetup, triplets) -> float:
    """Loss of the untrained model on the calibration set (same fixed draws as the final loss)."""
    return evaluate_loss(Denoiser(setup.model_config()), tensor_data(triplets), setup.train_config().eval_draws)


def regenerate(model, adapters, triplets, spec: SampleConfig) -> list[np.ndarray]:
    lay = model.layout
    out = []
    for i, tri in enumerate(triplets):
        s = SampleConfig.from_dict({**spec.to_dict(), "seed": spec.seed + i})
        ref = tri.input[:, : lay.w_ref]
        out.append(generate(model, ref, tri.glyph_mask[:, lay.glyph_start :], "amorphous", s, adapters))
    return out


def attention_mass(model: Denoiser, tri: TrainingTriplet, lam: float, t: float = 0.5, seed: int = 0) -> float:
    """Attention mass from reference-foreground keys to glyph-background queries, summed over blocks,
    for one denoiser call at a fixed noisy canvas."""
    lay = model.layout
    cond = compose_input(tri.input[:, : lay.w_ref], tri.glyph_mask[:, lay.glyph_start :], lay)
    regions = canvas_region_sets(cond, np.ones((lay.H, lay.w_ref)), 0.5, model.cfg.text_len)
    spec = SampleConfig(lam=lam)
    bias = bias_tensor(redirection_spec(model, cond, np.ones((lay.H, lay.w_ref)), spec), model.cfg.n_tokens)
    g = torch.Generator().manual_seed(seed)
    x0 = torch.as_tensor(tri.gt, dtype=torch.float32)[None]
    x_t = (1 - t) * x0 + t * torch.randn(x0.shape, generator=g)
    sink: list = []
    with torch.no_grad():
        model(
            x_t,
            torch.as_tensor(cond.image, dtype=torch.float32)[None],
            torch.as_tensor(cond.inpaint_mask, dtype=torch.float32)[None],
            torch.tensor([t]),
            bias,
            attn_sink=sink,
        )
    return cross_region_mass(sink, regions)


def evaluate(model: Denoiser, adapters: AdapterSet, setup: CalibrationSetup = CalibrationSetup(), trials: int = 20) -> dict:
    triplets = calibration_triplets(setup)
    lay = model.layout
    g0 = lay.glyph_start
    spec = SampleConfig()
    gens = regenerate(model, adapters, triplets, spec)
    gts = [t.glyph_gt for t in triplets]
    masks = [t.glyph_mask[:, g0:] for t in triplets]
    ious = [mask_iou(g, m) for g, m in zip(gens, masks)]
    maes = [float(np.abs(g - gt).mean()) for g, gt in zip(gens, gts)]

    wins = []
    for j in range(trials):
        e = j % setup.n_triplets
        other = (e + 1 + j // setup.n_triplets) % setup.n_triplets
        same = fresh_glyph(setup, e, j)
        cross = fresh_glyph(setup, other, j)
        f_gen = style_features(gens[e], masks[e], seed=j)
        fd_same = patch_frechet(f_gen, style_features(same.glyph_gt, same.glyph_mask[:, g0:], seed=100 + j)).value
        fd_cross = patch_frechet(f_gen, style_features(cross.glyph_gt, cross.glyph_mask[:, g0:], seed=100 + j)).value
        wins.append(fd_same < fd_cross)

    masses = {lam: attention_mass(model, triplets[0], lam) for lam in LAMBDAS}
    clean = {}
    for lam in (1.0, 0.3):
        g = regenerate(model, adapters, triplets, SampleConfig(lam=lam))
        clean[lam] = float(np.mean([background_cleanliness(x, m) for x, m in zip(g, masks)]))

    half = regenerate(model, adapters, triplets, SampleConfig(steps=16))
    double = regenerate(model, adapters, triplets, SampleConfig(steps=32))
    step_mae = float(np.mean([np.abs(a - b).mean() for a, b in zip(half, double)]))

    return {
        "mask_iou": ious,
        "mae": maes,
        "fd_same_wins": int(sum(wins)),
        "fd_trials": trials,
        "attention_mass": {str(k): v for k, v in masses.items()},
        "cleanliness": {str(k): v for k, v in clean.items()},
        "steps_16_vs_32_mae": step_mae,
    }


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description="train and record the overfit calibration run")
    p.add_argument("out_dir")
    p.add_argument("--eval-only", action="store_true")
    args = p.parse_args(argv)
    setup = CalibrationSetup()
    if not args.eval_only:
        print(json.dumps(run(args.out_dir, setup), indent=2))
    loaded = load(args.out_dir, setup)
    if loaded is None:
        raise SystemExit(f"no calibration run for this setup in {args.out_dir}")
    model, adapters, _ = loaded
    metrics = evaluate(model, adapters, setup)
    Path(args.out_dir, "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(json.dumps(metrics, indent=2))


if __name__ == "__main__":
    main()
