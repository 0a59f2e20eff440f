import json

import numpy as np
import pytest

from glyphfill.imageio import load_mask, load_rgb, save_mask, save_rgb
from glyphfill.synth.dataset import (
    DataConfig,
    layout_of,
    load_triplets,
    read_manifest,
    synthesize_dataset,
    thread_count,
)

TINY = DataConfig(n_amorphous=3, n_object=2, per_element=2, H=16, W=16, patch=2, val_fraction=0.34)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    synthesize_dataset(TINY, out, workers=1)
    return out


def test_png_round_trip(tmp_path, rng):
    img = np.round(rng.random((5, 7, 3)) * 255) / 255
    save_rgb(tmp_path / "a.png", img)
    assert np.array_equal(load_rgb(tmp_path / "a.png"), img)
    mask = (rng.random((5, 7)) > 0.5).astype(float)
    save_mask(tmp_path / "m.png", mask)
    assert np.array_equal(load_mask(tmp_path / "m.png"), mask)


def test_manifest_records(corpus):
    recs = read_manifest(corpus)
    assert len(recs) == (3 + 2) * 2
    assert len({r.seed for r in recs}) == len(recs)
    for r in recs:
        for p in r.paths.values():
            assert (corpus / p).exists()
    line = json.loads((corpus / "manifest.jsonl").read_text().splitlines()[0])
    assert {"id", "kind", "seed", "paths", "split"} <= set(line)
    assert {"input", "glyph_mask", "gt"} <= set(line["paths"])
    assert {r.split for r in recs} == {"train", "val"}


def test_loaded_triplets_keep_invariants(corpus):
    for t in load_triplets(corpus, split=None):
        lay = layout_of(t, 2)
        assert np.array_equal(t.gt[:, : lay.w_ref], t.input[:, : lay.w_ref])
        assert not t.input[:, lay.w_ref :].any()
        assert not t.glyph_mask[:, : lay.glyph_start].any()


def test_kind_filter_never_opens_other_kinds(corpus, tmp_path):
    # copy the corpus, delete every object image: loading amorphous records must still work
    import shutil

    copy = tmp_path / "c"
    shutil.copytree(corpus, copy)
    for r in read_manifest(copy):
        if r.kind == "object":
            shutil.rmtree(copy / r.id)
    got = load_triplets(copy, kinds=["amorphous"], split=None)
    assert len(got) == 6 and all(t.record.kind == "amorphous" for t in got)
    with pytest.raises(FileNotFoundError):
        load_triplets(copy, kinds=["object"], split=None)


def test_parallel_matches_serial(corpus, tmp_path):
    synthesize_dataset(TINY, tmp_path, workers=2)
    assert (tmp_path / "manifest.jsonl").read_bytes() == (corpus / "manifest.jsonl").read_bytes()
    for r in read_manifest(corpus):
        for p in r.paths.values():
            assert (tmp_path / p).read_bytes() == (corpus / p).read_bytes()


def test_duplicate_seeds_rejected(corpus, tmp_path):
    line = (corpus / "manifest.jsonl").read_text().splitlines()[0]
    (tmp_path / "manifest.jsonl").write_text(line + "\n" + line + "\n")
    with pytest.raises(ValueError, match="duplicate"):
        read_manifest(tmp_path)


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("FONTCRAFTER_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.delenv("FONTCRAFTER_THREADS")
    assert thread_count(5) == 5
