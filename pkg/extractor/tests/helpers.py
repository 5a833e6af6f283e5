import json

import numpy as np
from PIL import Image


def write_fixture_corpus(path, records, fc=None):
    """records: (event id, token list) pairs; popularity is irrelevant here."""
    lines = [json.dumps({"format": "smn-events/1", "fc": fc, "count": len(records)})]
    for ev_id, tokens in records:
        lines.append(json.dumps({"id": ev_id, "tokens": list(tokens),
                                 "popularity": 1.0}))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_png(path, seed: int, size=(24, 18)):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(pixels, mode="RGB").save(path)
    return path


class PixelEncoder:
    """Deterministic stand-in encoder: grayscale thumbnail, flattened."""

    def __init__(self, name="pixel-test", width=16, grid=(4, 4)):
        self.name = name
        self.width = width
        self.grid = grid

    def encode(self, image):
        thumb = image.convert("L").resize(self.grid, Image.BILINEAR)
        return (np.asarray(thumb, dtype=np.float32) / 255.0).reshape(-1)[:self.width]
