import numpy as np
import pytest

import smn.diffcore as dc
from smn.diffcore import DTensor, ShapeError
from smn.image import ImageHeadParams, image_popularity

from oracles import fd_gradient, rel_err

rng = np.random.default_rng(21)


def make_params(fc=6, fh=4, seed=0, final_relu=False):
    return ImageHeadParams.init(np.random.default_rng(seed), fc, fh,
                                final_relu=final_relu)


class TestForward:
    def test_missing_feature_contributes_zero(self):
        params = make_params()
        out = image_popularity(None, params)
        assert out.values.shape == (1, 1)
        assert out.item() == 0.0

    def test_zero_weights_give_zero(self):
        params = ImageHeadParams(w1=DTensor.param(np.zeros((5, 3))),
                                 b1=DTensor.param(np.zeros((1, 3))),
                                 w2=DTensor.param(np.zeros((3, 1))),
                                 b2=DTensor.param(np.zeros((1, 1))))
        x = DTensor.const(rng.standard_normal((1, 5)))
        assert image_popularity(x, params).item() == 0.0

    def test_matches_dense_recomputation(self):
        params = make_params(fc=7, fh=5, seed=1)
        x_values = rng.standard_normal((1, 7))
        got = image_popularity(DTensor.const(x_values), params).item()
        hidden = np.maximum(x_values @ params.w1.values + params.b1.values, 0.0)
        want = float((hidden @ params.w2.values + params.b2.values)[0, 0])
        assert rel_err(np.array(got), np.array(want), floor=1e-12) < 1e-12

    def test_final_relu_clamps_negative_output(self):
        params = make_params(fc=4, fh=3, seed=2)
        x_values = rng.standard_normal((1, 4))
        raw = image_popularity(DTensor.const(x_values), params).item()
        # force a negative raw output by flipping the sign of the last layer
        if raw >= 0:
            params.w2.values = -params.w2.values
            params.b2.values = -params.b2.values
            raw = image_popularity(DTensor.const(x_values), params).item()
        assert raw < 0
        clamped = ImageHeadParams(w1=params.w1, b1=params.b1, w2=params.w2,
                                  b2=params.b2, final_relu=True)
        assert image_popularity(DTensor.const(x_values), clamped).item() == 0.0

    def test_width_mismatch_raises(self):
        params = make_params(fc=6)
        with pytest.raises(ShapeError):
            image_popularity(DTensor.const(rng.standard_normal((1, 5))), params)

    def test_biases_start_at_zero(self):
        params = make_params(fc=3, fh=2, seed=3)
        assert np.all(params.b1.values == 0.0)
        assert np.all(params.b2.values == 0.0)


class TestGradients:
    @pytest.mark.parametrize("final_relu", [False, True])
    def test_matches_finite_differences(self, final_relu):
        params = make_params(fc=5, fh=4, seed=4, final_relu=final_relu)
        x_values = rng.standard_normal((1, 5)) + 0.5

        def run():
            return image_popularity(DTensor.const(x_values), params).item()

        with dc.Tape() as tape:
            out = image_popularity(DTensor.const(x_values), params)
            tape.backward(out)
        for name, tensor in (("w1", params.w1), ("b1", params.b1),
                             ("w2", params.w2), ("b2", params.b2)):
            fd = fd_gradient(run, tensor.values)
            assert rel_err(tensor.grad, fd) < 1e-6, name

    def test_missing_feature_leaves_gradients_zero(self):
        params = make_params(fc=4, fh=3, seed=5)
        with dc.Tape() as tape:
            out = image_popularity(None, params)
            tape.backward(out)
        for tensor in (params.w1, params.b1, params.w2, params.b2):
            assert tensor.grad is None or np.all(tensor.grad == 0.0)
