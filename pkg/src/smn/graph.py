"""Unified word graph: vocabulary, co-occurrence counts, PMI adjacency,
and the initial word-embedding matrix loaded from a `.semb` file.

Co-occurrence is document-level: an event contributes at most 1 to each
unordered token pair regardless of multiplicity. Negative PMI is clipped
to zero and excluded from the edge set, keeping the adjacency sparse and
nonnegative.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SEMB_TAG = "semb/1"
GRAPH_TAG = "smn-graph/1"

# stream id separating OOV-row draws from other consumers of the run seed
_OOV_STREAM = 0x5EB


class GraphError(ValueError):
    pass


class SembError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index_of: dict[str, int]

    @staticmethod
    def from_events(events) -> "Vocabulary":
        """Token order is first occurrence over the corpus."""
        index_of: dict[str, int] = {}
        for ev in events:
            for tok in ev.tokens:
                if tok not in index_of:
                    index_of[tok] = len(index_of)
        tokens = tuple(sorted(index_of, key=index_of.get))
        return Vocabulary(tokens=tokens, index_of=index_of)

    @property
    def n(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class CooccurrenceCounts:
    """Document-level pair and unigram counts over the whole corpus."""
    pair_counts: dict[tuple[int, int], int]  # keyed (i, j) with i < j
    unigram_counts: np.ndarray
    total_pairs: int      # sum over both symmetric cells
    total_unigrams: int

    def pair(self, i: int, j: int) -> int:
        if i == j:
            raise GraphError("pair count undefined for i == j")
        key = (i, j) if i < j else (j, i)
        return self.pair_counts.get(key, 0)

    def unigram(self, i: int) -> int:
        return int(self.unigram_counts[i])


def count_cooccurrence(events, vocab: Vocabulary) -> CooccurrenceCounts:
    """d(i,j) = number of events where both tokens occur; d(i) likewise."""
    if not events:
        raise GraphError("empty corpus")
    unigrams = np.zeros(vocab.n, dtype=np.int64)
    pairs: dict[tuple[int, int], int] = {}
    for ev in events:
        present = sorted({vocab.index_of[t] for t in ev.tokens})
        for i in present:
            unigrams[i] += 1
        for a in range(len(present)):
            for b in range(a + 1, len(present)):
                key = (present[a], present[b])
                pairs[key] = pairs.get(key, 0) + 1
    total_pairs = 2 * sum(pairs.values())
    return CooccurrenceCounts(
        pair_counts=pairs,
        unigram_counts=unigrams,
        total_pairs=total_pairs,
        total_unigrams=int(unigrams.sum()),
    )


def pmi(counts: CooccurrenceCounts, i: int, j: int) -> float:
    """Point-wise mutual information; -inf when the pair never co-occurs."""
    if i == j:
        raise GraphError("PMI undefined for i == j")
    d_ij = counts.pair(i, j)
    if d_ij == 0:
        return -math.inf
    d_i = counts.unigram(i)
    d_j = counts.unigram(j)
    joint = d_ij / counts.total_pairs
    indep = (d_i / counts.total_unigrams) * (d_j / counts.total_unigrams)
    return math.log(joint / indep)


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]  # float64, widened from on-disk f32


def read_semb(path) -> EmbeddingTable:
    """Parse a `.semb` text embedding file (word or image rows)."""
    path = Path(path)
    if not path.is_file():
        raise SembError(f"embedding file not found: {path}")
    vectors: dict[str, np.ndarray] = {}
    with path.open("r", encoding="utf-8") as fh:
        head = fh.readline().rstrip("\n")
        parts = head.split()
        if len(parts) != 2 or parts[0] != SEMB_TAG or not parts[1].startswith("dim="):
            raise SembError(f"{path}: bad header line {head!r}")
        try:
            dim = int(parts[1][4:])
        except ValueError as e:
            raise SembError(f"{path}: bad dim in header {head!r}") from e
        if dim <= 0:
            raise SembError(f"{path}: dim must be positive")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            key, tab, rest = line.partition("\t")
            if not tab or not key:
                raise SembError(f"{path}: line {lineno}: expected 'key<TAB>values'")
            vals = rest.split()
            if len(vals) != dim:
                raise SembError(
                    f"{path}: line {lineno}: {len(vals)} values, expected dim={dim}")
            if key in vectors:
                raise SembError(f"{path}: line {lineno}: duplicate key {key!r}")
            row = np.array([np.float32(v) for v in vals], dtype=np.float32)
            vectors[key] = row.astype(np.float64)
    return EmbeddingTable(dim=dim, vectors=vectors)


def write_semb(path, dim: int, rows):
    """Write rows of (key, vector); values stored as exact-round-trip f32."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{SEMB_TAG} dim={dim}\n")
        for key, vec in rows:
            vec = np.asarray(vec)
            if vec.shape != (dim,):
                raise SembError(f"row {key!r} has shape {vec.shape}, expected ({dim},)")
            # f32 -> f64 is exact, and repr of the f64 round-trips in text
            text = " ".join(repr(float(np.float32(v))) for v in vec)
            fh.write(f"{key}\t{text}\n")


@dataclass(frozen=True)
class WordGraph:
    vocab: Vocabulary
    adjacency: sp.csr_matrix  # symmetric, nonnegative, zero diagonal
    h0: np.ndarray            # N x F initial embeddings, float64
    f: int

    @property
    def edge_count(self) -> int:
        """Number of undirected edges with positive weight."""
        return self.adjacency.nnz // 2


def build_graph(events, embeddings: EmbeddingTable, seed: int = 0) -> WordGraph:
    """Assemble vocabulary, clipped-PMI adjacency and initial embeddings.

    Tokens absent from the embedding table get a seeded unit-variance draw
    scaled by 1/sqrt(F), assigned in vocabulary-index order.
    """
    vocab = Vocabulary.from_events(events)
    counts = count_cooccurrence(events, vocab)
    rows, cols, vals = [], [], []
    for (i, j) in sorted(counts.pair_counts):
        w = pmi(counts, i, j)
        if w > 0.0:
            rows.extend((i, j))
            cols.extend((j, i))
            vals.extend((w, w))
    adjacency = sp.csr_matrix(
        (np.array(vals), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(vocab.n, vocab.n))

    f = embeddings.dim
    h0 = np.zeros((vocab.n, f))
    oov_rng = np.random.default_rng([seed, _OOV_STREAM])
    oov = []
    for i, tok in enumerate(vocab.tokens):
        vec = embeddings.vectors.get(tok)
        if vec is None:
            oov.append(tok)
            h0[i] = oov_rng.standard_normal(f) / math.sqrt(f)
        else:
            h0[i] = vec
    if oov:
        warnings.warn(
            f"{len(oov)} of {vocab.n} tokens missing from embedding file; "
            "initialized from the seeded fallback", stacklevel=2)
    if not np.all(np.isfinite(h0)):
        raise GraphError("non-finite values in initial embedding matrix")
    return WordGraph(vocab=vocab, adjacency=adjacency, h0=h0, f=f)


def vocab_hash(vocab: Vocabulary) -> str:
    digest = hashlib.sha256("\n".join(vocab.tokens).encode("utf-8"))
    return digest.hexdigest()


def save_graph(path, graph: WordGraph):
    """Serialize to deterministic JSON (same inputs give identical bytes)."""
    coo = sp.triu(graph.adjacency, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    edges = [[int(coo.row[k]), int(coo.col[k]), float(coo.data[k])] for k in order]
    doc = {
        "format": GRAPH_TAG,
        "tokens": list(graph.vocab.tokens),
        "f": graph.f,
        "edges": edges,
        "h0": [[float(v) for v in row] for row in graph.h0],
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")


def load_graph(path) -> WordGraph:
    path = Path(path)
    if not path.is_file():
        raise GraphError(f"graph file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != GRAPH_TAG:
        raise GraphError(f"{path}: expected format {GRAPH_TAG!r}")
    tokens = tuple(doc["tokens"])
    vocab = Vocabulary(tokens=tokens, index_of={t: i for i, t in enumerate(tokens)})
    n = len(tokens)
    rows, cols, vals = [], [], []
    for i, j, w in doc["edges"]:
        rows.extend((i, j))
        cols.extend((j, i))
        vals.extend((w, w))
    adjacency = sp.csr_matrix(
        (np.array(vals), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(n, n))
    h0 = np.array(doc["h0"], dtype=np.float64).reshape(n, doc["f"])
    return WordGraph(vocab=vocab, adjacency=adjacency, h0=h0, f=int(doc["f"]))
