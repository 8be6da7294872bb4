import numpy as np
import pytest

from lltts.errors import InputDomainError, NumericError, UsageError
from lltts.model import (
    AdamState,
    Head,
    ModelTopology,
    _Weights,
    adam_step,
    finite_diff_check,
    forward,
    infer,
    init_params,
    loss_and_grad,
    segment_ranges,
)
from lltts.samplers import Batch, Provenance

from conftest import TINY, random_batch, random_sample


def reference_forward(params, sample, head):
    """Straight-line per-position reimplementation of the forward pass."""
    w = _Weights(params.topology, params.values)
    topo = params.topology
    w_h, b_h = w.heads[head]
    pre_rows, post_rows = [], []
    onehot = np.zeros(topo.num_languages)
    onehot[sample.language_id] = 1.0
    for tok in sample.tokens:
        e = w.emb[tok]
        h = np.tanh(w.w_enc @ e + w.b_enc)
        z = np.concatenate([h, onehot])
        u = np.tanh(w.w_trunk @ z + w.b_trunk)
        y_pre = w_h @ u + b_h
        q = np.tanh(w.w_p1 @ y_pre + w.b_p1)
        y_post = y_pre + w.w_p2 @ q + w.b_p2
        pre_rows.append(y_pre)
        post_rows.append(y_post)
    return np.array(pre_rows), np.array(post_rows)


class TestInitParams:
    def test_deterministic(self):
        a = init_params(TINY, 42)
        b = init_params(TINY, 42)
        assert np.array_equal(a.values, b.values)

    def test_seed_changes_values(self):
        a = init_params(TINY, 0)
        b = init_params(TINY, 1)
        assert np.any(a.values != b.values)

    def test_head_segment_length(self):
        # linear head on a trunk_dim=4 trunk with bias, frame_dim=3
        p = init_params(TINY, 0)
        lo, hi = p.segments["head_lbs"]
        assert hi - lo == (4 + 1) * 3

    def test_segments_cover_vector(self):
        ranges = sorted(segment_ranges(TINY).values())
        assert ranges[0][0] == 0
        for (_, hi), (lo, _) in zip(ranges, ranges[1:]):
            assert hi == lo
        assert ranges[-1][1] == TINY.num_params()

    def test_biases_zero(self):
        p = init_params(TINY, 3)
        w = _Weights(TINY, p.values)
        for b in (w.b_enc, w.b_trunk, w.heads[Head.LBS][1], w.b_p1, w.b_p2):
            assert np.all(b == 0)

    def test_invalid_topology_rejected(self):
        with pytest.raises(UsageError):
            ModelTopology(0, 3, 4, 4, 3, 3, 2)


class TestForward:
    def test_zero_params_zero_output(self, tiny_params, rng):
        tiny_params.values[:] = 0.0
        batch = random_batch(rng)
        pre, post = forward(tiny_params, batch, Head.LBS)
        for a, b in zip(pre, post):
            assert np.all(a == 0) and np.all(b == 0)

    def test_duplicate_sample_identical_rows(self, tiny_params, rng):
        s = random_sample(rng)
        batch = Batch([s, s], Provenance.LBS)
        pre, post = forward(tiny_params, batch, Head.LBS)
        assert np.array_equal(pre[0], pre[1])
        assert np.array_equal(post[0], post[1])

    @pytest.mark.parametrize("head", [Head.LBS, Head.RRS])
    def test_matches_reference(self, tiny_params, rng, head):
        batch = random_batch(rng, n=4)
        pre, post = forward(tiny_params, batch, head)
        for i, s in enumerate(batch.samples):
            ref_pre, ref_post = reference_forward(tiny_params, s, head)
            np.testing.assert_allclose(pre[i], ref_pre, atol=1e-12)
            np.testing.assert_allclose(post[i], ref_post, atol=1e-12)

    def test_out_of_range_token(self, tiny_params, rng):
        s = random_sample(rng)
        s.tokens[0] = TINY.vocab_size
        with pytest.raises(InputDomainError, match="token"):
            forward(tiny_params, Batch([s], Provenance.LBS), Head.LBS)

    def test_out_of_range_language(self, tiny_params, rng):
        s = random_sample(rng)
        s.language_id = TINY.num_languages
        with pytest.raises(InputDomainError, match="language"):
            forward(tiny_params, Batch([s], Provenance.LBS), Head.LBS)


class TestLossAndGrad:
    def test_zero_weights_zero_targets(self, rng):
        p = init_params(TINY, 0)
        p.values[:] = 0.0
        s = random_sample(rng)
        s.target_frames[:] = 0.0
        loss, grad = loss_and_grad(p, Batch([s], Provenance.LBS), Head.LBS)
        assert loss.total == 0.0
        assert np.all(grad == 0)

    def test_total_is_sum_of_parts(self, tiny_params, rng):
        loss, _ = loss_and_grad(tiny_params, random_batch(rng), Head.LBS)
        assert loss.total == loss.pre_postnet_mse + loss.post_postnet_mse

    def test_finite_difference(self, tiny_params, rng):
        batch = random_batch(rng, n=3)
        assert finite_diff_check(tiny_params, batch, Head.LBS, 1e-5) < 1e-4

    def test_unselected_head_grad_zero(self, tiny_params, rng):
        batch = random_batch(rng)
        _, grad = loss_and_grad(tiny_params, batch, Head.LBS)
        lo, hi = tiny_params.segments["head_rrs"]
        assert np.all(grad[lo:hi] == 0)
        _, grad = loss_and_grad(tiny_params, batch, Head.RRS)
        lo, hi = tiny_params.segments["head_lbs"]
        assert np.all(grad[lo:hi] == 0)

    def test_head_isolation(self, tiny_params, rng):
        batch = random_batch(rng)
        before, _ = loss_and_grad(tiny_params, batch, Head.LBS)
        lo, hi = tiny_params.segments["head_rrs"]
        tiny_params.values[lo:hi] = rng.standard_normal(hi - lo)
        after, _ = loss_and_grad(tiny_params, batch, Head.LBS)
        assert before.total == after.total

    def test_shared_trunk_couples_heads(self, tiny_params, rng):
        batch = random_batch(rng)
        base_lbs, _ = loss_and_grad(tiny_params, batch, Head.LBS)
        base_rrs, _ = loss_and_grad(tiny_params, batch, Head.RRS)
        for segment in ("embedding", "encoder", "trunk", "postnet"):
            perturbed = tiny_params.copy()
            lo, hi = perturbed.segments[segment]
            perturbed.values[lo:hi] += 0.1
            new_lbs, _ = loss_and_grad(perturbed, batch, Head.LBS)
            new_rrs, _ = loss_and_grad(perturbed, batch, Head.RRS)
            assert new_lbs.total != base_lbs.total, segment
            assert new_rrs.total != base_rrs.total, segment

    def test_deterministic(self, tiny_params, rng):
        batch = random_batch(rng)
        l1, g1 = loss_and_grad(tiny_params, batch, Head.LBS)
        l2, g2 = loss_and_grad(tiny_params, batch, Head.LBS)
        assert l1.total == l2.total
        assert np.array_equal(g1, g2)


class TestFiniteDiffCheck:
    def test_zero_loss_configuration(self, rng):
        p = init_params(TINY, 0)
        p.values[:] = 0.0
        s = random_sample(rng)
        s.target_frames[:] = 0.0
        err = finite_diff_check(p, Batch([s], Provenance.LBS), Head.LBS, 1e-5)
        assert err < 1e-12

    def test_truncation_error_grows_with_eps(self, tiny_params, rng):
        batch = random_batch(rng)
        small = finite_diff_check(tiny_params, batch, Head.LBS, 1e-5)
        large = finite_diff_check(tiny_params, batch, Head.LBS, 1e-1)
        assert large > small

    def test_rejects_nonpositive_eps(self, tiny_params, rng):
        with pytest.raises(UsageError):
            finite_diff_check(tiny_params, random_batch(rng), Head.LBS, 0.0)


def reference_adam(values, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Independent textbook Adam applied to a sequence of gradients."""
    theta = values.astype(float).copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        theta = theta - lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
    return theta


class TestAdam:
    def test_zero_gradient_no_move(self, tiny_params):
        state = AdamState.fresh(len(tiny_params.values))
        new_state, new_params = adam_step(state, tiny_params, np.zeros_like(tiny_params.values))
        assert np.array_equal(new_params.values, tiny_params.values)
        assert new_state.step == 1

    def test_first_step_is_signed_lr(self):
        from lltts.model import ParameterSet

        theta = np.array([1.0, -2.0, 0.5])
        params = ParameterSet(theta.copy(), {}, TINY)
        grad = np.array([0.3, -0.7, 1.2])
        state = AdamState.fresh(3, lr=0.01)
        _, updated = adam_step(state, params, grad)
        np.testing.assert_allclose(
            updated.values, theta - 0.01 * np.sign(grad), atol=1e-9
        )

    def test_two_steps_match_reference(self):
        from lltts.model import ParameterSet

        rng = np.random.default_rng(5)
        theta = rng.standard_normal(3)
        grads = [rng.standard_normal(3), rng.standard_normal(3)]
        params = ParameterSet(theta.copy(), {}, TINY)
        state = AdamState.fresh(3, lr=0.005)
        for g in grads:
            state, params = adam_step(state, params, g)
        np.testing.assert_allclose(
            params.values, reference_adam(theta, grads, 0.005), atol=1e-12
        )

    def test_nonfinite_gradient_rejected(self, tiny_params):
        state = AdamState.fresh(len(tiny_params.values))
        bad = np.zeros_like(tiny_params.values)
        bad[0] = np.nan
        with pytest.raises(NumericError):
            adam_step(state, tiny_params, bad)


class TestInfer:
    def test_equals_forward_lbs(self, tiny_params, rng):
        s = random_sample(rng)
        _, post = forward(tiny_params, Batch([s], Provenance.LBS), Head.LBS)
        np.testing.assert_array_equal(infer(tiny_params, s), post[0])

    def test_zero_params_zero_frames(self, rng):
        p = init_params(TINY, 0)
        p.values[:] = 0.0
        assert np.all(infer(p, random_sample(rng)) == 0)

    def test_matches_reference(self, tiny_params, rng):
        s = random_sample(rng)
        _, ref_post = reference_forward(tiny_params, s, Head.LBS)
        np.testing.assert_allclose(infer(tiny_params, s), ref_post, atol=1e-12)
