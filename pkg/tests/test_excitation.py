import math

import numpy as np
import pytest

import smn.diffcore as dc
from smn.diffcore import DTensor
from smn.excitation import (BaseHeadParams, ExcitationProjectionParams,
                            MutualHeadParams, SelfHeadParams, base_excitation,
                            build_event_view, mutual_excitation,
                            pairwise_sq_dists, project_excitation, refresh_mask,
                            self_excitation)
from smn.graph import Vocabulary

from conftest import make_event
from oracles import (exact_ceil_ratio, fd_gradient, gelu_reference,
                     mutual_direct, pairwise_direct, rel_err)

rng = np.random.default_rng(13)


def make_vocab(n: int) -> Vocabulary:
    tokens = tuple(f"t{i}" for i in range(n))
    return Vocabulary(tokens=tokens, index_of={t: i for i, t in enumerate(tokens)})


def gelu_scalar(x: float) -> float:
    return float(gelu_reference(np.array([x]))[0])


def make_view(tokens, vocab, pool_idx, h_tilde, h_hat, h_unpooled=None):
    event = make_event("ev", tokens)
    if h_unpooled is None:
        h_unpooled = h_tilde
    return build_event_view(event, vocab, np.asarray(pool_idx),
                            h_tilde, h_hat, h_unpooled)


class TestProjection:
    def test_zero_rows_stay_zero(self):
        params = ExcitationProjectionParams.init(np.random.default_rng(0), 4)
        h = np.zeros((5, 4))
        h[2] = rng.standard_normal(4)
        out = project_excitation(DTensor.const(h), params)
        assert np.all(out.values[[0, 1, 3, 4]] == 0.0)

    def test_identity_weights_pass_nonnegative_input(self):
        params = ExcitationProjectionParams(w1=DTensor.const(np.eye(3)),
                                            w2=DTensor.const(np.eye(3)))
        h = np.abs(rng.standard_normal((4, 3)))
        out = project_excitation(DTensor.const(h), params)
        assert np.array_equal(out.values, h)

    def test_matches_dense_recomputation(self):
        params = ExcitationProjectionParams.init(np.random.default_rng(1), 5)
        h = rng.standard_normal((6, 5))
        got = project_excitation(DTensor.const(h), params).values
        want = np.maximum(np.maximum(h @ params.w1.values, 0.0) @ params.w2.values, 0.0)
        assert rel_err(got, want, floor=1e-12) < 1e-12


class TestEventView:
    def test_members_deduped_ascending_and_capped_by_pooling(self):
        vocab = make_vocab(6)
        h_tilde = DTensor.const(rng.standard_normal((6, 3)))
        h_hat = DTensor.const(rng.standard_normal((6, 3)))
        view = make_view(["t4", "t1", "t4", "t2"], vocab, [0, 1, 4],
                         h_tilde, h_hat)
        assert view.members.tolist() == [1, 4]
        assert not view.pooled_out
        assert np.array_equal(view.word_features.values, h_tilde.values[[1, 4]])
        assert np.array_equal(view.excited_features.values, h_hat.values[[1, 4]])
        assert np.allclose(view.event_vector.values,
                           h_tilde.values[[1, 4]].mean(axis=0, keepdims=True))

    def test_all_words_dropped_falls_back_to_unpooled_mean(self):
        vocab = make_vocab(5)
        h_tilde = DTensor.const(np.zeros((5, 3)))
        h_hat = DTensor.const(np.zeros((5, 3)))
        h_unpooled = DTensor.const(rng.standard_normal((5, 3)))
        view = make_view(["t2", "t3"], vocab, [0, 1], h_tilde, h_hat, h_unpooled)
        assert view.pooled_out
        assert view.members.size == 0
        assert view.word_features is None
        assert np.allclose(view.event_vector.values,
                           h_unpooled.values[[2, 3]].mean(axis=0, keepdims=True))


class TestMutual:
    def make_params(self, f=3, seed=2):
        return MutualHeadParams.init(np.random.default_rng(seed), f)

    def test_single_retained_word_contributes_zero(self):
        vocab = make_vocab(4)
        h = DTensor.const(rng.standard_normal((4, 3)))
        view = make_view(["t0", "t1"], vocab, [0], h, h)
        y, z = mutual_excitation(view, self.make_params())
        assert y.item() == 0.0 and z is None

    def test_two_identical_vectors_give_two_eta(self):
        vocab = make_vocab(2)
        params = self.make_params()
        row = rng.standard_normal(3)
        h_hat = DTensor.const(np.vstack([row, row]))
        view = make_view(["t0", "t1"], vocab, [0, 1],
                         DTensor.const(rng.standard_normal((2, 3))), h_hat)
        y, _ = mutual_excitation(view, params)
        eta = gelu_scalar(float(h_hat.values.mean(axis=0) @ params.w_eta.values[:, 0]))
        assert y.item() == pytest.approx(2.0 * eta, rel=1e-12)

    def test_three_words_match_direct_double_loop(self):
        vocab = make_vocab(3)
        params = self.make_params(f=4, seed=5)
        h_hat_values = rng.standard_normal((3, 4))
        view = make_view(["t0", "t1", "t2"], vocab, [0, 1, 2],
                         DTensor.const(rng.standard_normal((3, 4))),
                         DTensor.const(h_hat_values))
        y, z = mutual_excitation(view, params)
        mean = h_hat_values.mean(axis=0)
        eta = gelu_scalar(float(mean @ params.w_eta.values[:, 0]))
        gamma = gelu_scalar(float(mean @ params.w_gamma.values[:, 0]))
        want = mutual_direct(h_hat_values, eta, gamma)
        assert abs(y.item() - want) / max(abs(want), 1e-10) < 1e-10
        assert np.allclose(z.values, h_hat_values @ h_hat_values.T, atol=1e-12)

    def test_token_order_and_duplicates_do_not_matter(self):
        vocab = make_vocab(5)
        params = self.make_params(f=3, seed=6)
        h_tilde = DTensor.const(rng.standard_normal((5, 3)))
        h_hat = DTensor.const(rng.standard_normal((5, 3)))
        views = [make_view(toks, vocab, [0, 2, 3], h_tilde, h_hat)
                 for toks in (["t0", "t2", "t3"], ["t3", "t0", "t2", "t0"])]
        y1, _ = mutual_excitation(views[0], params)
        y2, _ = mutual_excitation(views[1], params)
        assert y1.item() == y2.item()

    def test_diagonal_toggle(self):
        vocab = make_vocab(2)
        params = self.make_params(f=3, seed=7)
        h_hat_values = rng.standard_normal((2, 3))
        view = make_view(["t0", "t1"], vocab, [0, 1],
                         DTensor.const(rng.standard_normal((2, 3))),
                         DTensor.const(h_hat_values))
        y_off, _ = mutual_excitation(view, params)
        y_on, _ = mutual_excitation(view, params, include_diagonal=True)
        mean = h_hat_values.mean(axis=0)
        eta = gelu_scalar(float(mean @ params.w_eta.values[:, 0]))
        # diagonal adds exp(0) = 1 per word
        assert y_on.item() == pytest.approx(y_off.item() + 2.0 * eta, rel=1e-10)

    def test_expansion_identity_against_direct(self):
        for _ in range(50):
            hm = rng.standard_normal((4, 6))
            dist, z = pairwise_sq_dists(DTensor.const(hm))
            want = pairwise_direct(hm)
            assert np.max(np.abs(dist.values - want)) < 1e-10
            assert np.allclose(z.values, hm @ hm.T, atol=1e-12)


class TestSelf:
    def test_zero_weights_give_zero(self):
        vocab = make_vocab(3)
        params = SelfHeadParams(w_beta=DTensor.param(np.zeros((3, 1))), delta=50.0)
        params.refresh_mask()
        h = DTensor.const(rng.standard_normal((3, 3)))
        view = make_view(["t0", "t1"], vocab, [0, 1], h, h)
        y, scores = self_excitation(view, params)
        assert y.item() == 0.0
        assert np.all(scores.values == 0.0)

    def test_sum_matches_per_word_scores(self):
        vocab = make_vocab(4)
        params = SelfHeadParams.init(np.random.default_rng(3), 4, delta=75.0)
        h_values = rng.standard_normal((4, 4))
        view = make_view(["t0", "t1", "t3"], vocab, [0, 1, 3],
                         DTensor.const(h_values), DTensor.const(h_values))
        y, scores = self_excitation(view, params)
        w_eff = params.w_beta.values * params.mask
        want = [gelu_scalar(float(h_values[i] @ w_eff[:, 0])) for i in (0, 1, 3)]
        assert np.allclose(scores.values[:, 0], want, atol=1e-12)
        assert y.item() == pytest.approx(math.fsum(want), rel=1e-12)

    def test_all_zero_mask_forward_zero_but_gradient_flows(self):
        vocab = make_vocab(2)
        params = SelfHeadParams(w_beta=DTensor.param(rng.standard_normal((3, 1))),
                                delta=50.0, mask=np.zeros((3, 1)))
        h = DTensor.const(rng.standard_normal((2, 3)) + 1.0)
        view = make_view(["t0", "t1"], vocab, [0, 1], h, h)
        with dc.Tape() as tape:
            y, _ = self_excitation(view, params)
            tape.backward(y)
        assert y.item() == 0.0  # gelu(0) = 0 for every word
        assert params.w_beta.grad is not None
        assert np.any(params.w_beta.grad != 0.0)

    def test_no_members_contributes_zero(self):
        vocab = make_vocab(3)
        params = SelfHeadParams.init(np.random.default_rng(4), 3, delta=50.0)
        zeros = DTensor.const(np.zeros((3, 3)))
        view = make_view(["t1"], vocab, [0, 2], zeros, zeros,
                         DTensor.const(rng.standard_normal((3, 3))))
        y, scores = self_excitation(view, params)
        assert y.item() == 0.0 and scores is None

    def test_ste_gradient_equals_unmasked_at_masked_point(self):
        # with the mask fixed, dLoss/dW through (mask o W) under the
        # straight-through rule equals dLoss/dW with no mask, evaluated at
        # the masked parameter values
        vocab = make_vocab(3)
        h_values = rng.standard_normal((3, 4))
        mask = np.array([[1.0], [0.0], [1.0], [0.0]])
        w_values = rng.standard_normal((4, 1))

        masked = SelfHeadParams(w_beta=DTensor.param(w_values.copy()),
                                delta=50.0, mask=mask.copy())
        view = make_view(["t0", "t1", "t2"], vocab, [0, 1, 2],
                         DTensor.const(h_values), DTensor.const(h_values))
        with dc.Tape() as tape:
            y, _ = self_excitation(view, masked)
            tape.backward(y)

        plain = SelfHeadParams(w_beta=DTensor.param(w_values * mask),
                               delta=100.0, mask=np.ones((4, 1)))
        with dc.Tape() as tape:
            y2, _ = self_excitation(view, plain)
            tape.backward(y2)
        assert masked.w_beta.grad.tobytes() == plain.w_beta.grad.tobytes()


class TestRefreshMask:
    def test_hand_example(self):
        mask = refresh_mask(np.array([[0.1], [0.9], [0.5], [0.2]]), 50.0)
        assert mask[:, 0].tolist() == [0.0, 1.0, 1.0, 0.0]

    def test_delta_100_all_ones(self):
        mask = refresh_mask(rng.standard_normal((6, 1)), 100.0)
        assert mask.tolist() == np.ones((6, 1)).tolist()

    def test_ties_go_to_lower_index(self):
        mask = refresh_mask(np.full((5, 1), 3.3), 50.0)
        assert mask[:, 0].tolist() == [1.0, 1.0, 1.0, 0.0, 0.0]

    def test_cardinality_sweep(self):
        for f in (1, 4, 7, 10, 16):
            for delta in (10.0, 25.0, 33.3, 50.0, 66.6, 100.0):
                mask = refresh_mask(rng.standard_normal((f, 1)), delta)
                assert int(mask.sum()) == exact_ceil_ratio(delta / 100.0, f)

    def test_invalid_delta(self):
        with pytest.raises(ValueError):
            refresh_mask(np.ones((3, 1)), 0.0)
        with pytest.raises(ValueError):
            refresh_mask(np.ones((3, 1)), 101.0)

    def test_params_refresh_tracks_w_beta(self):
        params = SelfHeadParams.init(np.random.default_rng(5), 4, delta=50.0)
        params.w_beta.values = np.array([[5.0], [-1.0], [4.0], [0.0]])
        params.refresh_mask()
        assert params.mask[:, 0].tolist() == [1.0, 0.0, 1.0, 0.0]


class TestBase:
    def test_zero_vector_or_weights_give_zero(self):
        vocab = make_vocab(2)
        zeros = DTensor.const(np.zeros((2, 3)))
        view = make_view(["t0"], vocab, [0], zeros, zeros)
        params = BaseHeadParams(w_mu=DTensor.param(rng.standard_normal((3, 1))))
        assert base_excitation(view, params).item() == 0.0
        h = DTensor.const(rng.standard_normal((2, 3)))
        view = make_view(["t0"], vocab, [0], h, h)
        params = BaseHeadParams(w_mu=DTensor.param(np.zeros((3, 1))))
        assert base_excitation(view, params).item() == 0.0

    def test_matches_direct_recomputation(self):
        vocab = make_vocab(3)
        h_values = rng.standard_normal((3, 4))
        view = make_view(["t0", "t2"], vocab, [0, 1, 2],
                         DTensor.const(h_values), DTensor.const(h_values))
        params = BaseHeadParams.init(np.random.default_rng(6), 4)
        got = base_excitation(view, params).item()
        want = gelu_scalar(float(h_values[[0, 2]].mean(axis=0) @ params.w_mu.values[:, 0]))
        assert got == pytest.approx(want, rel=1e-12)


class TestHeadGradients:
    def test_all_heads_match_finite_differences(self):
        vocab = make_vocab(4)
        h_values = rng.standard_normal((4, 3))
        proj = ExcitationProjectionParams.init(np.random.default_rng(8), 3)
        mut = MutualHeadParams.init(np.random.default_rng(9), 3)
        slf = SelfHeadParams.init(np.random.default_rng(10), 3, delta=50.0)
        bas = BaseHeadParams.init(np.random.default_rng(11), 3)
        tensors = {"w1": proj.w1, "w2": proj.w2, "w_eta": mut.w_eta,
                   "w_gamma": mut.w_gamma, "w_beta": slf.w_beta, "w_mu": bas.w_mu}

        def total():
            h = DTensor.const(h_values)
            h_hat = project_excitation(h, proj)
            view = make_view(["t0", "t1", "t3"], vocab, [0, 1, 3], h, h_hat)
            y_m, _ = mutual_excitation(view, mut)
            y_s, _ = self_excitation(view, slf)
            y_b = base_excitation(view, bas)
            return dc.add(dc.add(y_b, y_s), y_m)

        with dc.Tape() as tape:
            tape.backward(total())
        for name, tensor in tensors.items():
            fd = fd_gradient(lambda: total().item(), tensor.values)
            analytic = tensor.grad if tensor.grad is not None else np.zeros_like(fd)
            if name == "w_beta":
                # straight-through estimator: only unmasked coordinates move
                # the forward value, so FD can only see those
                analytic = analytic * slf.mask
            assert rel_err(analytic, fd) < 1e-6, name
