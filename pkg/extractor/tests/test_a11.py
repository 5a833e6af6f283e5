"""Cross-component conformance: every file this tool emits must load in
the core with zero warnings, at the declared widths, byte-stable across
re-extraction. The core is imported here only to verify the contract;
the extractor itself never touches it."""
import warnings

import numpy as np
import pytest

import smn.corpus as cp
import smn.graph as gr
from extractor import images, words
from extractor.semb import ExtractorError

from helpers import PixelEncoder, write_fixture_corpus, write_png

RECORDS = [
    ("e0", ["sun", "storm", "coast", "wind"]),
    ("e1", ["sun", "coast"]),
    ("e2", ["storm", "flood", "coast"]),
    ("e3", ["quake", "rescue", "wind"]),
    ("e4", ["quake", "rescue", "flood"]),
    ("e5", ["wind", "flood"]),
]


def read_core_semb_strict(path):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table = gr.read_semb(path)
    assert caught == [], [str(w.message) for w in caught]
    return table


def test_a11_extractor_conformance(tmp_path, monkeypatch):
    # word rows: core parse, full coverage, no out-of-vocabulary fallback
    corpus = write_fixture_corpus(tmp_path / "ev.jsonl", RECORDS)
    w1, w2 = tmp_path / "w1.semb", tmp_path / "w2.semb"
    n, dim = words.extract_words(corpus, 8, w1)
    words.extract_words(corpus, 8, w2)
    assert w1.read_bytes() == w2.read_bytes()
    table = read_core_semb_strict(w1)
    assert table.dim == 8 and len(table.vectors) == n == 7
    events, _ = cp.load_corpus(corpus)
    graph = gr.build_graph(events, table, seed=0)
    for t in graph.vocab.tokens:  # every node keeps its emitted vector
        assert np.array_equal(graph.h0[graph.vocab.index_of[t]], table.vectors[t])

    # image rows at the production width, via a deterministic local encoder
    assert images.VIT_B_32_WIDTH == 512
    d = tmp_path / "imgs"
    d.mkdir()
    for i, (ev_id, _) in enumerate(RECORDS[:4]):
        write_png(d / f"{ev_id}.png", seed=40 + i)
    enc = PixelEncoder(name="pixel-512", width=512, grid=(32, 16))
    i1, i2 = tmp_path / "i1.semb", tmp_path / "i2.semb"
    images.extract_images(d, enc, i1)
    images.extract_images(d, enc, i2)
    assert i1.read_bytes() == i2.read_bytes()
    itable = read_core_semb_strict(i1)
    assert itable.dim == 512 and len(itable.vectors) == 4
    assert all(v.shape == (512,) for v in itable.vectors.values())

    # the pretrained encoder itself, when its weights are reachable
    monkeypatch.setenv("HF_HUB_OFFLINE", "1")  # cache-only lookup, fail fast
    live = "live vit-b-32 checked"
    try:
        vit = images.load_encoder("vit-b-32")
    except ExtractorError:
        live = "live vit-b-32 skipped (weights unavailable here)"
    else:
        iv = tmp_path / "vit.semb"
        images.extract_images(d, vit, iv)
        vtable = read_core_semb_strict(iv)
        assert all(v.shape == (512,) for v in vtable.vectors.values())
    print(f"\nA11 extractor output loads in the core, 512-wide image rows, "
          f"deterministic re-extraction ({live}): pass")
