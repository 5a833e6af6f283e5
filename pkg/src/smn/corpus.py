"""Event ingestion, popularity normalization, deterministic splits.

Events file is UTF-8 JSONL: a header object on line 1, one event per
subsequent line. All functions here are pure over immutable inputs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

FORMAT_TAG = "smn-events/1"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    id: str
    tokens: tuple[str, ...]
    popularity_raw: float
    popularity: float
    image_feature: tuple[float, ...] | None = None


@dataclass(frozen=True)
class CorpusHeader:
    fc: int | None
    count: int


@dataclass(frozen=True)
class Split:
    train_ids: frozenset[str]
    val_ids: frozenset[str]
    test_ids: frozenset[str]
    seed: int


def load_corpus(path) -> tuple[list[Event], CorpusHeader]:
    """Parse an events JSONL file; errors name the offending line."""
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"events file not found: {path}")
    events: list[Event] = []
    seen_ids: set[str] = set()
    header = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise CorpusError(f"line {lineno}: malformed JSON ({e.msg})") from e
            if header is None:
                header = _parse_header(obj, lineno)
                continue
            events.append(_parse_event(obj, lineno, header, seen_ids))
    if header is None:
        raise CorpusError("empty events file (missing header line)")
    if header.count != len(events):
        raise CorpusError(
            f"header count {header.count} does not match {len(events)} records")
    return events, header


def _parse_header(obj, lineno: int) -> CorpusHeader:
    if not isinstance(obj, dict) or obj.get("format") != FORMAT_TAG:
        raise CorpusError(f"line {lineno}: expected header with format {FORMAT_TAG!r}")
    fc = obj.get("fc")
    if fc is not None and (not isinstance(fc, int) or fc <= 0):
        raise CorpusError(f"line {lineno}: header fc must be a positive int or null")
    count = obj.get("count")
    if not isinstance(count, int) or count < 0:
        raise CorpusError(f"line {lineno}: header count must be a nonnegative int")
    return CorpusHeader(fc=fc, count=count)


def _parse_event(obj, lineno: int, header: CorpusHeader, seen_ids: set[str]) -> Event:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {lineno}: event record must be a JSON object")
    ev_id = obj.get("id")
    if not isinstance(ev_id, str) or not ev_id:
        raise CorpusError(f"line {lineno}: missing or empty id")
    if ev_id in seen_ids:
        raise CorpusError(f"line {lineno}: duplicate id {ev_id!r}")
    seen_ids.add(ev_id)
    tokens = obj.get("tokens")
    if (not isinstance(tokens, list) or not tokens
            or not all(isinstance(t, str) and t for t in tokens)):
        raise CorpusError(f"line {lineno}: tokens must be a non-empty list of strings")
    pop = obj.get("popularity")
    if not isinstance(pop, (int, float)) or isinstance(pop, bool) or not math.isfinite(pop):
        raise CorpusError(f"line {lineno}: popularity must be a finite number")
    if pop < 0:
        raise CorpusError(f"line {lineno}: popularity must be nonnegative")
    feature = obj.get("image_feature")
    if feature is not None:
        if not isinstance(feature, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in feature):
            raise CorpusError(f"line {lineno}: image_feature must be a list of numbers")
        if header.fc is None:
            raise CorpusError(
                f"line {lineno}: image_feature present but header fc is null")
        if len(feature) != header.fc:
            raise CorpusError(
                f"line {lineno}: image_feature length {len(feature)} != header fc {header.fc}")
        feature = tuple(float(v) for v in feature)
    return Event(id=ev_id, tokens=tuple(tokens), popularity_raw=float(pop),
                 popularity=float(pop), image_feature=feature)


def write_corpus(path, events: list[Event], fc: int | None = None):
    """Write events JSONL; floats keep full round-trip precision."""
    path = Path(path)
    if fc is None:
        for ev in events:
            if ev.image_feature is not None:
                fc = len(ev.image_feature)
                break
    with path.open("w", encoding="utf-8") as fh:
        header = {"format": FORMAT_TAG, "fc": fc, "count": len(events)}
        fh.write(json.dumps(header) + "\n")
        for ev in events:
            feature = None
            if ev.image_feature is not None:
                # schema stores image features at f32 precision
                feature = [float(np.float32(v)) for v in ev.image_feature]
            rec = {"id": ev.id, "tokens": list(ev.tokens),
                   "popularity": ev.popularity_raw, "image_feature": feature}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def normalize_popularity(events: list[Event]) -> tuple[list[Event], tuple[float, float]]:
    """Min-max map raw scores to [0, 1]; returns (min, max) for inverse mapping."""
    if not events:
        raise CorpusError("cannot normalize an empty corpus")
    raws = [ev.popularity_raw for ev in events]
    lo, hi = min(raws), max(raws)
    if lo == hi:
        raise CorpusError(
            f"degenerate popularity range: all {len(events)} raw scores equal {lo}")
    out = [replace(ev, popularity=(ev.popularity_raw - lo) / (hi - lo)) for ev in events]
    return out, (lo, hi)


def apply_popularity_range(events: list[Event], lo: float, hi: float) -> list[Event]:
    """Apply an externally computed (min, max), clipping to [0, 1].

    Used to carry the training split's range onto val/test events.
    """
    if hi <= lo:
        raise CorpusError(f"invalid popularity range ({lo}, {hi})")
    span = hi - lo
    return [replace(ev, popularity=min(1.0, max(0.0, (ev.popularity_raw - lo) / span)))
            for ev in events]


def denormalize(y: float, lo: float, hi: float) -> float:
    """Map a [0, 1] popularity back onto the raw scale."""
    return lo + y * (hi - lo)


def split(events: list[Event], ratios: tuple[float, float, float], seed: int) -> Split:
    """Deterministic shuffle-split; floor allocations, remainder to train."""
    r_train, r_val, r_test = ratios
    if min(ratios) <= 0:
        raise CorpusError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(events)
    n_val = int(math.floor(n * r_val))
    n_test = int(math.floor(n * r_test))
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    ids = [events[i].id for i in order]
    return Split(
        train_ids=frozenset(ids[:n_train]),
        val_ids=frozenset(ids[n_train:n_train + n_val]),
        test_ids=frozenset(ids[n_train + n_val:]),
        seed=seed,
    )


def select(events: list[Event], ids: frozenset[str]) -> list[Event]:
    """Events whose id is in ids, preserving corpus order."""
    return [ev for ev in events if ev.id in ids]
