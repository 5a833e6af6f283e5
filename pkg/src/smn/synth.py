"""Synthetic corpus generator with a planted additive ground truth.

Raw popularity of each event is

    base + sum_w b_w + eta * sum_{j != k} exp(-gamma * ||e_j - e_k||^2)
         + image_scale * relu(x_image . u) + noise

over planted per-word weights b_w, planted word embeddings e, a planted
image direction u, and Gaussian noise. The planted quantities go to a
sidecar JSON so recovery checks can correlate trained parameters against
the ground truth.

The vocabulary is organized into topics: words of a topic share an
embedding neighborhood and a per-word weight level, and each event draws
most of its words from a single topic. This mirrors real event corpora
(co-occurring words have similar vectors and topical popularity) and
keeps the planted weights recoverable: graph convolution averages within
a topic's near-clique instead of washing out word identity, so per-word
scores stay attributable. With unclustered vocabularies the word graph
is near-uniformly dense and no readout of the smoothed features can
track arbitrary per-word weights.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Event, write_corpus
from .graph import write_semb


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    events: int = 200
    vocab: int = 50
    seed: int = 0
    emb_dim: int = 8
    min_words: int = 3
    max_words: int = 8
    base: float = 0.1
    b_max: float = 0.3       # largest topic weight level
    b_jitter: float = 0.01   # per-word deviation from the topic level
    eta: float = 0.005
    gamma: float = 0.5
    fc: int | None = None    # image feature width; None = text-only corpus
    image_scale: float = 0.3
    noise: float = 0.02
    topic_size: int = 5      # words per topic
    topic_spread: float = 0.25  # embedding scatter around the topic center
    topic_share: float = 0.85   # fraction of an event's words from its topic

    def validate(self):
        if self.events < 1 or self.vocab < 1:
            raise SynthError("need at least one event and one vocabulary word")
        if not 1 <= self.min_words <= self.max_words <= self.vocab:
            raise SynthError(
                f"need 1 <= min_words <= max_words <= vocab, got "
                f"{self.min_words}..{self.max_words} over {self.vocab}")
        if self.emb_dim < 1:
            raise SynthError("emb_dim must be >= 1")
        if self.noise < 0 or self.b_max < 0 or self.b_jitter < 0:
            raise SynthError("noise, b_max and b_jitter must be nonnegative")
        if self.fc is not None and self.fc < 1:
            raise SynthError("fc must be a positive width or None")
        if self.topic_size < 1:
            raise SynthError("topic_size must be >= 1")
        if self.topic_spread < 0:
            raise SynthError("topic_spread must be nonnegative")
        if not 0.0 < self.topic_share <= 1.0:
            raise SynthError("topic_share must be in (0, 1]")


def mutual_term(vectors: np.ndarray, gamma: float) -> float:
    """Ordered-pair kernel sum over one event's planted embeddings."""
    total = 0.0
    k = vectors.shape[0]
    for j in range(k):
        for l in range(k):
            if j != l:
                d = vectors[j] - vectors[l]
                total += math.exp(-gamma * float(d @ d))
    return total


def generate(cfg: SynthConfig):
    """Returns (events, planted-record dict, token list, embedding matrix)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    tokens = [f"w{i:04d}" for i in range(cfg.vocab)]

    n_topics = max(1, cfg.vocab // cfg.topic_size)
    topic_of = np.minimum(np.arange(cfg.vocab) // cfg.topic_size, n_topics - 1)
    centers = rng.standard_normal((n_topics, cfg.emb_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    emb = centers[topic_of] + cfg.topic_spread * rng.standard_normal(
        (cfg.vocab, cfg.emb_dim))
    if cfg.b_max > 0:
        levels = rng.permutation(
            np.linspace(cfg.b_max / n_topics, cfg.b_max, n_topics))
    else:
        levels = np.zeros(n_topics)
    b_w = levels[topic_of] + rng.uniform(-cfg.b_jitter, cfg.b_jitter,
                                         size=cfg.vocab)
    members = [np.where(topic_of == t)[0] for t in range(n_topics)]
    u = None
    if cfg.fc is not None:
        u = rng.standard_normal(cfg.fc) / math.sqrt(cfg.fc)

    events = []
    records = []
    for i in range(cfg.events):
        count = int(rng.integers(cfg.min_words, cfg.max_words + 1))
        topic = int(rng.integers(n_topics))
        pool = members[topic]
        n_in = min(len(pool), max(1, int(math.ceil(cfg.topic_share * count))))
        chosen = list(rng.choice(pool, size=n_in, replace=False))
        n_out = count - n_in
        if n_out > 0:
            others = np.setdiff1d(np.arange(cfg.vocab), pool)
            if len(others) < n_out:  # few topics: top up from the pool itself
                others = np.setdiff1d(np.arange(cfg.vocab), np.array(chosen))
            chosen.extend(rng.choice(others, size=n_out, replace=False))
        words = np.array(chosen)
        text_self = float(b_w[words].sum())
        mutual = cfg.eta * mutual_term(emb[words], cfg.gamma)
        feature = None
        image = 0.0
        if cfg.fc is not None:
            x = rng.standard_normal(cfg.fc) / math.sqrt(cfg.fc)
            # store at f32 precision, and compute the planted contribution
            # from the stored values so the ground truth matches the file
            feature = tuple(float(np.float32(v)) for v in x)
            image = cfg.image_scale * max(0.0, float(np.dot(feature, u)))
        eps = float(rng.normal(0.0, cfg.noise)) if cfg.noise > 0 else 0.0
        raw = max(cfg.base + text_self + mutual + image + eps, 0.0)
        events.append(Event(
            id=f"e{i:05d}",
            tokens=tuple(tokens[w] for w in words),
            popularity_raw=raw,
            popularity=raw,
            image_feature=feature,
        ))
        records.append({
            "id": events[-1].id,
            "text_self": text_self,
            "mutual": mutual,
            "image": image,
            "noise": eps,
            "raw": raw,
        })

    planted = {
        "config": {
            "events": cfg.events, "vocab": cfg.vocab, "seed": cfg.seed,
            "emb_dim": cfg.emb_dim, "min_words": cfg.min_words,
            "max_words": cfg.max_words, "base": cfg.base, "b_max": cfg.b_max,
            "b_jitter": cfg.b_jitter, "eta": cfg.eta, "gamma": cfg.gamma,
            "fc": cfg.fc, "image_scale": cfg.image_scale, "noise": cfg.noise,
            "topic_size": cfg.topic_size, "topic_spread": cfg.topic_spread,
            "topic_share": cfg.topic_share,
        },
        "b_w": {tokens[i]: float(b_w[i]) for i in range(cfg.vocab)},
        "topic": {tokens[i]: int(topic_of[i]) for i in range(cfg.vocab)},
        "image_weight": None if u is None else [float(v) for v in u],
        "events": records,
    }
    return events, planted, tokens, emb


def emit(cfg: SynthConfig, out_path, emb_out=None, planted_out=None):
    """Write the corpus, the planted sidecar, and optionally a `.semb` file
    holding the planted word embeddings."""
    events, planted, tokens, emb = generate(cfg)
    write_corpus(out_path, events, fc=cfg.fc)
    if planted_out is None:
        planted_out = f"{out_path}.planted.json"
    Path(planted_out).write_text(
        json.dumps(planted, sort_keys=True), encoding="utf-8")
    if emb_out is not None:
        write_semb(emb_out, cfg.emb_dim,
                   ((tokens[i], emb[i]) for i in range(cfg.vocab)))
    return events, planted
