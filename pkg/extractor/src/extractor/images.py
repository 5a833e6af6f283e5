"""Image embeddings from a frozen vision encoder.

The production encoder is CLIP ViT-B/32, whose image projection is 512
wide. The pretrained stack (torch + transformers) is imported lazily so
word extraction works without it. Image files are matched to event ids
by filename stem; an unreadable file is skipped with a warning and
listed in the report sidecar instead of aborting the whole directory.
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .semb import ExtractorError, write_semb

VIT_B_32_WIDTH = 512
VIT_B_32_CHECKPOINT = "openai/clip-vit-base-patch32"


class VitB32Encoder:
    """CLIP ViT-B/32 image tower with projection, frozen, eval mode."""

    name = "vit-b-32"
    width = VIT_B_32_WIDTH

    def __init__(self):
        try:
            import torch
            from transformers import CLIPImageProcessor, CLIPVisionModelWithProjection
        except ImportError as e:
            raise ExtractorError(
                "the vit-b-32 encoder needs torch and transformers; "
                "install the package with the [vit] extra") from e
        try:
            self._processor = CLIPImageProcessor.from_pretrained(VIT_B_32_CHECKPOINT)
            self._model = CLIPVisionModelWithProjection.from_pretrained(VIT_B_32_CHECKPOINT)
        except Exception as e:
            raise ExtractorError(
                f"could not load pretrained weights {VIT_B_32_CHECKPOINT!r} "
                f"(offline and not cached?): {e}") from e
        self._model.eval()
        self._torch = torch
        if int(self._model.config.projection_dim) != self.width:
            raise ExtractorError(
                f"checkpoint projection width {self._model.config.projection_dim} "
                f"does not match the declared {self.width}")

    def encode(self, image) -> np.ndarray:
        with self._torch.no_grad():
            inputs = self._processor(images=image.convert("RGB"), return_tensors="pt")
            out = self._model(**inputs).image_embeds[0]
        return out.numpy().astype(np.float32)


ENCODERS = {"vit-b-32": VitB32Encoder}


def load_encoder(name: str):
    if name not in ENCODERS:
        raise ExtractorError(
            f"unknown encoder {name!r}; available: {', '.join(sorted(ENCODERS))}")
    return ENCODERS[name]()


def extract_images(images_dir, encoder, out_path, report_path=None) -> tuple[int, int]:
    """Encode every readable image in the directory; returns (rows, skipped).

    Row keys are filename stems, expected to be corpus event ids. The
    report sidecar records the encoder, the row count, and every skipped
    file with the reason.
    """
    from PIL import Image, UnidentifiedImageError

    root = Path(images_dir)
    if not root.is_dir():
        raise ExtractorError(f"image directory not found: {root}")
    files = sorted(p for p in root.iterdir() if p.is_file())
    stems: dict[str, str] = {}
    for p in files:
        if p.stem in stems:
            raise ExtractorError(
                f"event id {p.stem!r} appears twice: {stems[p.stem]} and {p.name}")
        stems[p.stem] = p.name

    rows = []
    skipped = []
    for p in files:
        try:
            with Image.open(p) as img:
                vec = encoder.encode(img)
        except (OSError, UnidentifiedImageError) as e:
            warnings.warn(f"skipping unreadable image {p.name}: {e}", RuntimeWarning)
            skipped.append({"id": p.stem, "file": p.name, "error": str(e)})
            continue
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape != (encoder.width,):
            raise ExtractorError(
                f"encoder returned {vec.size} values for {p.name}, "
                f"expected width {encoder.width}")
        rows.append((p.stem, vec))

    written = write_semb(out_path, encoder.width, rows)
    if report_path is None:
        report_path = f"{out_path}.report.json"
    report = {"encoder": encoder.name, "width": encoder.width,
              "rows": written, "skipped": skipped}
    Path(report_path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n",
                                 encoding="utf-8")
    return written, len(skipped)
