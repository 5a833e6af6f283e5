"""Corpus-trained word embeddings.

Counts document-level co-occurrence over the events, forms the positive
PMI matrix and factorizes it with an SVD; row i of U_k sqrt(S_k) is the
embedding of word i, zero-padded on the right when the vocabulary is
smaller than the requested width. Being count-based, the extraction is
exactly reproducible from the corpus alone, with no training seed.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .semb import ExtractorError, write_semb

CORPUS_TAG = "smn-events/1"


def read_corpus_tokens(path) -> list[tuple[str, list[str]]]:
    """(event id, token list) pairs from an events JSONL file.

    Only the fields the extractor needs are validated; popularity and
    image features pass through untouched.
    """
    path = Path(path)
    if not path.is_file():
        raise ExtractorError(f"events file not found: {path}")
    out: list[tuple[str, list[str]]] = []
    header_seen = False
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ExtractorError(f"{path}: line {lineno}: malformed JSON ({e.msg})") from e
            if not header_seen:
                if not isinstance(obj, dict) or obj.get("format") != CORPUS_TAG:
                    raise ExtractorError(
                        f"{path}: line {lineno}: expected header with format {CORPUS_TAG!r}")
                header_seen = True
                continue
            ev_id = obj.get("id") if isinstance(obj, dict) else None
            tokens = obj.get("tokens") if isinstance(obj, dict) else None
            if (not isinstance(ev_id, str) or not ev_id
                    or not isinstance(tokens, list) or not tokens
                    or not all(isinstance(t, str) and t for t in tokens)):
                raise ExtractorError(
                    f"{path}: line {lineno}: event needs an id and a non-empty token list")
            out.append((ev_id, tokens))
    if not header_seen:
        raise ExtractorError(f"{path}: empty events file (missing header line)")
    return out


def ppmi_matrix(doc_token_ids: list[list[int]], n: int) -> np.ndarray:
    """Positive PMI from document presence counts, zero diagonal."""
    d_word = np.zeros(n)
    d_pair = np.zeros((n, n))
    for ids in doc_token_ids:
        present = sorted(set(ids))
        for i in present:
            d_word[i] += 1.0
        for a in range(len(present)):
            for b in range(a + 1, len(present)):
                i, j = present[a], present[b]
                d_pair[i, j] += 1.0
                d_pair[j, i] += 1.0
    total = float(len(doc_token_ids))
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if d_pair[i, j] > 0.0:
                out[i, j] = max(0.0, math.log(
                    d_pair[i, j] * total / (d_word[i] * d_word[j])))
    return out


def svd_embeddings(ppmi: np.ndarray, dim: int) -> np.ndarray:
    """Truncated SVD rows with a fixed sign convention per component."""
    n = ppmi.shape[0]
    u, s, _ = np.linalg.svd(ppmi)
    k = min(dim, n)
    emb = u[:, :k] * np.sqrt(s[:k])
    for j in range(k):
        lead = int(np.argmax(np.abs(u[:, j])))
        if u[lead, j] < 0.0:  # sign of an SVD column is arbitrary; pin it
            emb[:, j] = -emb[:, j]
    if k < dim:
        emb = np.hstack([emb, np.zeros((n, dim - k))])
    return emb


def extract_words(corpus_path, dim: int, out_path) -> tuple[int, int]:
    """Embed every unique corpus token; returns (token count, dim)."""
    if dim < 1:
        raise ExtractorError(f"dim must be positive, got {dim}")
    records = read_corpus_tokens(corpus_path)
    index: dict[str, int] = {}
    for _, tokens in records:
        for t in tokens:
            if t not in index:
                index[t] = len(index)
    if not index:
        raise ExtractorError("empty vocabulary: the corpus has no events")
    vocab = sorted(index, key=index.get)
    doc_ids = [[index[t] for t in tokens] for _, tokens in records]
    emb = svd_embeddings(ppmi_matrix(doc_ids, len(vocab)), dim)
    write_semb(out_path, dim, ((t, emb[i]) for i, t in enumerate(vocab)))
    return len(vocab), dim
