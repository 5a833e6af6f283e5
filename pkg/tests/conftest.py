import numpy as np
import pytest

from smn.corpus import Event
from smn.graph import EmbeddingTable, build_graph


def make_event(ev_id: str, tokens, popularity: float = 0.5, feature=None) -> Event:
    return Event(id=ev_id, tokens=tuple(tokens), popularity_raw=popularity,
                 popularity=popularity,
                 image_feature=None if feature is None else tuple(feature))


def make_embeddings(tokens, f: int, seed: int = 0) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    vecs = {}
    for t in tokens:
        # pass through f32 like the on-disk format would
        vecs[t] = rng.standard_normal(f).astype(np.float32).astype(np.float64)
    return EmbeddingTable(dim=f, vectors=vecs)


def random_corpus(rng, n_events: int, vocab_size: int, min_w: int = 2,
                  max_w: int = 5, fc=None):
    tokens = [f"t{i:03d}" for i in range(vocab_size)]
    events = []
    for i in range(n_events):
        count = int(rng.integers(min_w, max_w + 1))
        words = rng.choice(vocab_size, size=min(count, vocab_size), replace=False)
        feature = rng.standard_normal(fc) if fc else None
        events.append(make_event(f"e{i:03d}", [tokens[w] for w in words],
                                 popularity=float(rng.uniform(0.0, 1.0)),
                                 feature=feature))
    return events, tokens


@pytest.fixture
def tiny_graph():
    """12-token vocabulary, 3 events, F = 8; co-occurrence rich enough for
    positive PMI edges."""
    events = [
        make_event("e1", ["alpha", "beta", "gamma", "delta"], 0.9),
        make_event("e2", ["beta", "gamma", "epsilon", "zeta", "kappa"], 0.4),
        make_event("e3", ["alpha", "gamma", "lam", "mu", "nu", "xi", "rho"], 0.1),
    ]
    vocab_tokens = sorted({t for ev in events for t in ev.tokens})
    emb = make_embeddings(vocab_tokens, 8, seed=7)
    graph = build_graph(events, emb, seed=7)
    return events, graph
