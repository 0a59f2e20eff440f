"""Command-line entry point: ``glyphfill <subcommand>``.

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 shape/kind mismatch, 5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np
import torch

from glyphfill.config import RunConfig
from glyphfill.errors import CheckpointError, ConfigError, KindMismatchError, ShapeError, VerificationError
from glyphfill.flow import (
    AdapterKind,
    TensorData,
    load_adapters,
    load_base,
    load_model_for_adapter,
    save_adapters,
    save_base,
    train,
    write_loss_csv,
)
from glyphfill.imageio import load_mask, load_rgb, save_rgb
from glyphfill.metrics import aggregate, evaluate_pair
from glyphfill.mmdit import Denoiser
from glyphfill.sampler import SampleConfig, assemble_reference, generate, mix_styles
from glyphfill.synth.dataset import load_triplets, synthesize_dataset, thread_count
from glyphfill.synth.triplets import edge_repaint_canvases

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISMATCH, EXIT_VERIFY = 0, 2, 3, 4, 5

log = logging.getLogger("glyphfill")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ShapeError, KindMismatchError)):
        return EXIT_MISMATCH
    if isinstance(exc, VerificationError):
        return EXIT_VERIFY
    if isinstance(exc, (ConfigError, ValueError)):
        return EXIT_CONFIG
    if isinstance(exc, (OSError, CheckpointError)):
        return EXIT_IO
    raise exc


# ----------------------------------------------------------------------------- subcommands


def cmd_synth_data(args) -> int:
    cfg = RunConfig.load(args.config)
    out = Path(args.out)
    records = synthesize_dataset(cfg.data, out, workers=args.workers or thread_count())
    cfg.write_resolved(out / "config.resolved.json")
    counts = Counter(r.kind for r in records)
    print(json.dumps({"out": str(out), "counts": dict(sorted(counts.items())), "total": len(records)}))
    return EXIT_OK


def _training_data(triplets, model: Denoiser, kind: AdapterKind, band_radius: int) -> TensorData:
    lay = model.layout
    inputs, masks, gts, ids = [], [], [], []
    for tri in triplets:
        if tri.input.shape[:2] != (lay.H, lay.w_total):
            raise ShapeError(f"triplet {tri.record.id}: canvas {tri.input.shape[:2]} does not match model layout {(lay.H, lay.w_total)}")
        if kind is AdapterKind.EDGE_REPAINT:
            g0 = lay.glyph_start
            inp, mask, gt = edge_repaint_canvases(tri.gt[:, g0:], tri.glyph_mask[:, g0:], lay, band_radius)
        else:
            inp, mask, gt = tri.input, tri.glyph_mask, tri.gt
        inputs.append(inp)
        masks.append(mask)
        gts.append(gt)
        ids.append(tri.record.id)
    return TensorData.from_arrays(inputs, masks, gts, ids)


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.steps is not None:
        cfg.train.steps = args.steps
    if args.pretrain_steps is not None:
        cfg.train.pretrain_steps = args.pretrain_steps
    kind = AdapterKind.parse(args.kind)
    kinds = None if kind is AdapterKind.EDGE_REPAINT else [kind.value]
    triplets = load_triplets(args.data, kinds=kinds, split="train")
    if not triplets:
        raise ConfigError(f"no training triplets of kind {kind.value!r} in {args.data}")

    out = Path(args.out)
    if args.base:
        model = load_base(args.base)
        base_path = Path(args.base)
        if model.cfg != cfg.model:
            log.warning("model section of the config is ignored; using the base checkpoint's config")
        cfg.model = model.cfg
    else:
        model = Denoiser(cfg.model)
        base_path = out.with_name(out.stem + ".base.ckpt")

    data = _training_data(triplets, model, kind, cfg.train.edge_band_radius)
    every = max(1, args.log_every)

    def report(step, loss):
        if step % every == 0:
            log.info("step %d loss %.6f", step, loss)

    adapters, result = train(model, data, kind, cfg.train, pretrain=not args.base, on_step=report)
    model.to(torch.float32)
    adapters.to(torch.float32)
    if not args.base:
        save_base(base_path, model)
    save_adapters(out, adapters, model, base_path)
    write_loss_csv(out.with_name(out.stem + ".loss.csv"), result.losses)
    cfg.write_resolved(out.with_name(out.stem + ".config.json"))
    print(
        json.dumps(
            {
                "adapter": str(out),
                "base": str(base_path),
                "kind": kind.value,
                "triplets": len(data),
                "loss_initial": result.eval_before,
                "loss_final": result.eval_after,
                "trainable": result.trainable,
                "total": result.total,
                "trainable_percent": round(100 * result.trainable / result.total, 3),
            }
        )
    )
    return EXIT_OK


def _sample_config(args, cfg: RunConfig) -> SampleConfig:
    d = cfg.sample.to_dict()
    if args.steps is not None:
        d["steps"] = args.steps
    if args.seed is not None:
        d["seed"] = args.seed
    if args.lam is not None:
        d["lam"] = args.lam
    if getattr(args, "repaint", False):
        d["edge_repaint"] = True
    if getattr(args, "regions", None):
        d["mix_rules"] = args.regions
    return SampleConfig.from_dict(d)


def _load_style(args):
    adapters = load_adapters(args.adapter)
    if adapters.kind is AdapterKind.EDGE_REPAINT:
        raise KindMismatchError(f"{args.adapter}: an edge_repaint adapter cannot drive generation")
    if args.kind and AdapterKind.parse(args.kind) is not adapters.kind:
        raise KindMismatchError(f"{args.adapter}: adapter kind {adapters.kind.value!r}, requested {args.kind!r}")
    model = load_model_for_adapter(args.adapter)
    edge = edge_model = None
    if getattr(args, "repaint", False):
        if not args.edge_adapter:
            raise ConfigError("--repaint needs --edge-adapter")
        edge = load_adapters(args.edge_adapter, expected_kind=AdapterKind.EDGE_REPAINT)
        edge_model = load_model_for_adapter(args.edge_adapter)
        if edge_model.cfg != model.cfg:
            raise ShapeError("edge adapter was trained on a model of a different shape")
    return model, adapters, edge, edge_model


def _glyph_mask(path, model: Denoiser) -> np.ndarray:
    mask = load_mask(path)
    lay = model.layout
    if mask.shape != (lay.H, lay.W):
        raise ShapeError(f"{path}: mask is {mask.shape}, model expects {(lay.H, lay.W)}")
    return mask


def cmd_generate(args) -> int:
    cfg = RunConfig.load(args.config)
    spec = _sample_config(args, cfg)
    model, adapters, edge, edge_model = _load_style(args)
    mask = _glyph_mask(args.mask, model)
    element = assemble_reference([(load_rgb(args.element), 1.0)], model.layout)
    out = generate(model, element, mask, adapters.kind, spec, adapters, edge, edge_model=edge_model)
    save_rgb(args.out, out)
    return EXIT_OK


def _parse_elements(items) -> list[tuple[str, float]]:
    parsed = []
    for item in items:
        path, sep, weight = item.rpartition(":")
        if not sep:
            path, weight = item, "1"
        try:
            parsed.append((path, float(weight)))
        except ValueError as exc:
            raise ConfigError(f"bad element spec {item!r}; expected PATH:WEIGHT") from exc
    return parsed


def cmd_mix(args) -> int:
    cfg = RunConfig.load(args.config)
    spec = _sample_config(args, cfg)
    model, adapters, edge, edge_model = _load_style(args)
    mask = _glyph_mask(args.mask, model)
    elements = [(load_rgb(p), w) for p, w in _parse_elements(args.elements)]
    out = mix_styles(model, elements, mask, adapters.kind, spec, adapters, edge, edge_model=edge_model)
    save_rgb(args.out, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    gen_dir, ref_dir = Path(args.gen), Path(args.ref)
    ids = sorted(p.stem for p in gen_dir.glob("*.png"))
    if not ids:
        raise FileNotFoundError(f"no generated PNGs in {gen_dir}")
    gts = {i: load_rgb(ref_dir / f"{i}_gt.png") for i in ids}
    masks = {i: load_mask(ref_dir / f"{i}_mask.png") for i in ids}
    rows = {}
    for n, i in enumerate(ids):
        other = ids[(n + 1) % len(ids)] if len(ids) > 1 else None
        rows[i] = evaluate_pair(
            load_rgb(gen_dir / f"{i}.png"),
            gts[i],
            masks[i],
            cross_gt=None if other is None else gts[other],
            cross_mask=None if other is None else masks[other],
            n=args.patches,
            size=args.patch_size,
            seed=args.seed,
        )
    report = {"samples": rows, "aggregate": aggregate(rows)}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report["aggregate"]))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from glyphfill.verify import run_all

    results = run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationError(f"{len(failed)} verification check(s) failed: {', '.join(failed)}")
    return EXIT_OK


# ----------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glyphfill", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="synthesize the procedural triplet corpus")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train a per-kind adapter (and the base model unless --base)")
    s.add_argument("--config")
    s.add_argument("--kind", required=True, choices=["amorphous", "object", "edge"])
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--base", help="existing base checkpoint; skips the pretrain stage")
    s.add_argument("--steps", type=int)
    s.add_argument("--pretrain-steps", type=int)
    s.add_argument("--log-every", type=int, default=50)
    s.set_defaults(func=cmd_train)

    def sampling(s):
        s.add_argument("--config")
        s.add_argument("--mask", required=True)
        s.add_argument("--adapter", required=True)
        s.add_argument("--kind", choices=["amorphous", "object"])
        s.add_argument("--lambda", dest="lam", type=float)
        s.add_argument("--steps", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--repaint", action="store_true")
        s.add_argument("--edge-adapter")
        s.add_argument("--out", required=True)

    s = sub.add_parser("generate", help="render a glyph mask in the style of an element image")
    s.add_argument("--element", required=True)
    sampling(s)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("mix", help="render a glyph from several weighted elements")
    s.add_argument("--elements", nargs="+", required=True, metavar="PNG:WEIGHT")
    s.add_argument("--regions", nargs="+", type=float, metavar="CUT")
    sampling(s)
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("eval", help="score generated glyphs against references")
    s.add_argument("--gen", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--patches", type=int, default=64)
    s.add_argument("--patch-size", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="run the gradient and oracle verification suite")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(thread_count())
    try:
        return args.func(args)
    except (ConfigError, ShapeError, KindMismatchError, VerificationError, CheckpointError, OSError, ValueError) as exc:
        code = _exit_code(exc)
        print(f"glyphfill {args.command}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
