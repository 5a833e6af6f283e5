"""Image-branch popularity head: a two-layer MLP over a precomputed image
feature vector. Events without an image feature contribute exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import DTensor, ShapeError
from .backbone import init_weight


@dataclass
class ImageHeadParams:
    w1: DTensor  # F_c x F_h
    b1: DTensor  # 1 x F_h
    w2: DTensor  # F_h x 1
    b2: DTensor  # 1 x 1
    final_relu: bool = False  # literal all-relu variant; default keeps layer 2 linear

    @staticmethod
    def init(rng: np.random.Generator, fc: int, fh: int = 64,
             final_relu: bool = False) -> "ImageHeadParams":
        return ImageHeadParams(
            w1=init_weight(rng, fc, fh),
            b1=DTensor.param(np.zeros((1, fh))),
            w2=init_weight(rng, fh, 1),
            b2=DTensor.param(np.zeros((1, 1))),
            final_relu=final_relu,
        )

    @property
    def fc(self) -> int:
        return self.w1.values.shape[0]


def image_popularity(x_image, params: ImageHeadParams) -> DTensor:
    """relu(x W1 + b1) W2 + b2 as a 1x1 tensor; None input returns a
    constant zero so the head drops out of the gradient entirely."""
    if x_image is None:
        return DTensor.const([[0.0]])
    if isinstance(x_image, DTensor):
        x = x_image
    else:
        x = DTensor.const(np.asarray(x_image, dtype=np.float64).reshape(1, -1))
    if x.values.shape[1] != params.fc:
        raise ShapeError(
            f"image feature length {x.values.shape[1]} does not match head input width {params.fc}")
    hidden = dc.relu(dc.add(dc.matmul(x, params.w1), params.b1))
    out = dc.add(dc.matmul(hidden, params.w2), params.b2)
    if params.final_relu:
        out = dc.relu(out)
    return out
