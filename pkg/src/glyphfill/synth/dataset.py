"""Writing and reading the synthetic triplet corpus (PNG files + JSONL manifest)."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from glyphfill.canvas import LayoutSpec, derive_layout
from glyphfill.imageio import load_mask, load_rgb, save_mask, save_rgb
from glyphfill.synth.elements import ElementKind, random_element_spec
from glyphfill.synth.triplets import build_training_triplet

OBJECT_SEED_OFFSET = 1_000_000


@dataclass
class DataConfig:
    n_amorphous: int = 200
    n_object: int = 100
    per_element: int = 4
    H: int = 64
    W: int = 64
    patch: int = 2
    seed: int = 0
    val_fraction: float = 0.1


@dataclass
class TripletRecord:
    id: str
    kind: str
    seed: int
    element_seed: int
    paths: dict
    split: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class LoadedTriplet:
    record: TripletRecord
    input: np.ndarray
    glyph_mask: np.ndarray
    gt: np.ndarray
    ref_coverage: np.ndarray


def thread_count(default: int | None = None) -> int:
    env = os.environ.get("FONTCRAFTER_THREADS")
    if env:
        return max(1, int(env))
    return default or os.cpu_count() or 1


def _jobs(cfg: DataConfig):
    for kind, n, offset in (
        (ElementKind.AMORPHOUS, cfg.n_amorphous, 0),
        (ElementKind.OBJECT, cfg.n_object, OBJECT_SEED_OFFSET),
    ):
        n_val = int(round(n * cfg.val_fraction))
        for e in range(n):
            element_seed = cfg.seed * 10_000_000 + offset + e
            split = "val" if e >= n - n_val else "train"
            for j in range(cfg.per_element):
                yield kind, element_seed, element_seed * 16 + j, split


def _write_one(args) -> TripletRecord:
    kind, element_seed, seed, split, H, W, patch, root = args
    layout = derive_layout(H, W, patch)
    tri = build_training_triplet(random_element_spec(kind, element_seed), layout, seed)
    rid = f"{kind.value[:3]}_{element_seed}_{seed}"
    rel = {
        "input": f"{rid}/input.png",
        "glyph_mask": f"{rid}/glyph_mask.png",
        "gt": f"{rid}/gt.png",
        "ref_coverage": f"{rid}/ref_coverage.png",
    }
    root = Path(root)
    save_rgb(root / rel["input"], tri.input)
    save_mask(root / rel["glyph_mask"], tri.glyph_mask)
    save_rgb(root / rel["gt"], tri.gt)
    save_mask(root / rel["ref_coverage"], tri.ref_coverage)
    return TripletRecord(id=rid, kind=kind.value, seed=seed, element_seed=element_seed, paths=rel, split=split)


def synthesize_dataset(cfg: DataConfig, out_dir, workers: int | None = None) -> list[TripletRecord]:
    """Generate every triplet, write PNGs under ``out_dir`` and a ``manifest.jsonl`` index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(k, es, s, sp, cfg.H, cfg.W, cfg.patch, str(out)) for k, es, s, sp in _jobs(cfg)]
    workers = thread_count(workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_write_one, jobs, chunksize=8))
    else:
        records = [_write_one(j) for j in jobs]
    # manifest order follows job order regardless of worker scheduling
    with open(out / "manifest.jsonl", "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    return records


def read_manifest(data_dir) -> list[TripletRecord]:
    path = Path(data_dir) / "manifest.jsonl"
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(TripletRecord(**json.loads(line)))
    seeds = [r.seed for r in records]
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"{path}: duplicate seeds in manifest")
    return records


def load_triplets(data_dir, kinds=None, split: str | None = "train") -> list[LoadedTriplet]:
    """Load triplets whose kind is in ``kinds``; records of other kinds are never opened."""
    root = Path(data_dir)
    kinds = None if kinds is None else {ElementKind(k).value for k in kinds}
    out = []
    for r in read_manifest(root):
        if kinds is not None and r.kind not in kinds:
            continue
        if split is not None and r.split != split:
            continue
        out.append(
            LoadedTriplet(
                record=r,
                input=load_rgb(root / r.paths["input"]),
                glyph_mask=load_mask(root / r.paths["glyph_mask"]),
                gt=load_rgb(root / r.paths["gt"]),
                ref_coverage=load_mask(root / r.paths["ref_coverage"]),
            )
        )
    return out


def layout_of(triplet: LoadedTriplet, patch: int) -> LayoutSpec:
    H, w_total = triplet.glyph_mask.shape
    # w_total = W/2 + band + W; band only depends on W and patch
    for W in range(2, 2 * w_total, 2):
        try:
            lay = derive_layout(H, W, patch)
        except ValueError:
            continue
        if lay.w_total == w_total:
            return lay
    raise ValueError(f"no layout with patch {patch} matches canvas width {w_total}")
