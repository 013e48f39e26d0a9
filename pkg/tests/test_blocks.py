import numpy as np
import pytest

from hippo import autodiff as ad
from hippo.autodiff import Tensor
from hippo.blocks import (
    ConvLlamaParams,
    attention_branch,
    cnn_branch,
    conv_llama_block,
    init_conv_llama,
    rope_rotate,
)


def make_params(d=4, seed=0):
    return init_conv_llama(np.random.default_rng(seed), d)


class TestRope:
    def test_position_zero_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-2, 2, 8)
        out = rope_rotate(Tensor(x), 0)
        np.testing.assert_allclose(out.data, x, atol=1e-15)

    def test_planar_rotation_d2(self):
        out = rope_rotate(Tensor([1.0, 0.0]), 1)
        np.testing.assert_allclose(out.data, [np.cos(1.0), np.sin(1.0)], atol=1e-12)

    def test_norm_preserved(self):
        rng = np.random.default_rng(1)
        for m in (0, 3, 17, 511):
            x = rng.uniform(-2, 2, 12)
            out = rope_rotate(Tensor(x), m)
            assert np.linalg.norm(out.data) == pytest.approx(np.linalg.norm(x), abs=1e-12)

    def test_relative_position_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = 8
            q = rng.uniform(-2, 2, d)
            k = rng.uniform(-2, 2, d)
            m, n = rng.integers(0, 513, 2)
            lhs = rope_rotate(Tensor(q), int(m)).data @ rope_rotate(Tensor(k), int(n)).data
            rhs = rope_rotate(Tensor(q), int(m - n)).data @ k
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_odd_width_rejected(self):
        with pytest.raises(ValueError):
            rope_rotate(Tensor([1.0, 2.0, 3.0]), 1)


class TestAttentionBranch:
    def test_single_position_attends_to_itself(self):
        p = make_params()
        x = Tensor(np.random.default_rng(3).uniform(-1, 1, (1, 4)))
        out = attention_branch(x, p)
        assert out.shape == (1, 4)
        assert np.all(np.isfinite(out.data))

    def test_masked_columns_cannot_influence_valid_ones(self):
        p = make_params(d=6, seed=4)
        rng = np.random.default_rng(5)
        valid = rng.uniform(-1, 1, (3, 6))
        mask = np.array([True, True, True, False, False])
        a = np.vstack([valid, rng.uniform(-9, 9, (2, 6))])
        b = np.vstack([valid, rng.uniform(-9, 9, (2, 6))])
        out_a = attention_branch(Tensor(a), p, mask).data[:3]
        out_b = attention_branch(Tensor(b), p, mask).data[:3]
        np.testing.assert_allclose(out_a, out_b, atol=1e-12)

    def test_shape_contract(self):
        p = make_params(d=4, seed=6)
        for L in (1, 7, 64):
            x = Tensor(np.random.default_rng(L).uniform(-1, 1, (L, 4)))
            assert attention_branch(x, p).shape == (L, 4)

    def test_all_masked_rejected(self):
        p = make_params()
        x = Tensor(np.zeros((2, 4)))
        with pytest.raises(ValueError):
            attention_branch(x, p, np.array([False, False]))


class TestCnnBranch:
    def test_finite_and_length_preserving(self):
        p = make_params(d=4, seed=7)
        x = Tensor(np.random.default_rng(8).uniform(-1, 1, (5, 4)))
        out = cnn_branch(x, p)
        assert out.shape == (5, 4)
        assert np.all(np.isfinite(out.data))

    def test_conv_term_is_local_with_k3(self):
        p = make_params(d=4, seed=9)
        rng = np.random.default_rng(10)
        x = rng.uniform(-1, 1, (7, 4))
        y = x.copy()
        y[6] += 1.0  # perturb a column more than k//2 away from column 3
        conv_a = cnn_branch(Tensor(x), p).data - x
        conv_b = cnn_branch(Tensor(y), p).data - y
        np.testing.assert_allclose(conv_a[:5], conv_b[:5], atol=1e-12)
        assert not np.allclose(conv_a[5:], conv_b[5:])

    def test_single_column_center_tap_only(self):
        p = make_params(d=4, seed=11)
        x = Tensor(np.random.default_rng(12).uniform(-1, 1, (1, 4)))
        out = cnn_branch(x, p)
        assert out.shape == (1, 4)
        assert np.all(np.isfinite(out.data))


class TestConvLlamaBlock:
    def test_saturated_merge_selects_attention(self):
        p = make_params(d=4, seed=13)
        p.merge.data[:] = [20.0, -20.0]
        x = Tensor(np.random.default_rng(14).uniform(-1, 1, (3, 4)))
        np.testing.assert_allclose(conv_llama_block(x, p).data,
                                   attention_branch(x, p).data, atol=1e-6)

    def test_equal_merge_is_exact_mean(self):
        p = make_params(d=4, seed=15)
        p.merge.data[:] = 0.0
        x = Tensor(np.random.default_rng(16).uniform(-1, 1, (3, 4)))
        want = 0.5 * (attention_branch(x, p).data + cnn_branch(x, p).data)
        np.testing.assert_allclose(conv_llama_block(x, p).data, want, atol=1e-14)

    def test_full_block_gradient_matches_finite_differences(self):
        d, L = 4, 3
        p = make_params(d=d, seed=17)
        rng = np.random.default_rng(18)
        x0 = rng.uniform(-1, 1, (L, d))
        w = rng.uniform(-1, 1, (L, d))

        x = ad.parameter(x0)
        loss = ad.sum_(ad.cmul(conv_llama_block(x, p), w))
        loss.backward()

        def run(arrs):
            q = ConvLlamaParams(**{f: Tensor(arrs[f]) for f in arrs})
            return float((conv_llama_block(Tensor(arrs["_x"]), q).data * w).sum())

        names = ["wq", "wk", "wv", "wo", "ffn_gate", "ffn_up", "ffn_down",
                 "pw", "dw", "merge", "g_attn", "g_ffn", "g_cnn"]
        base = {f: getattr(p, f).data.copy() for f in names}
        base["_x"] = x0

        for f in ["_x"] + names:
            def fval(a, f=f):
                arrs = {k: v for k, v in base.items()}
                arrs[f] = a
                xx = arrs.pop("_x")
                q = ConvLlamaParams(**{k: Tensor(v) for k, v in arrs.items()})
                return float((conv_llama_block(Tensor(xx), q).data * w).sum())

            fd = ad.finite_difference(fval, base[f].copy())
            analytic = x.grad if f == "_x" else getattr(p, f).grad
            denom = max(np.abs(fd).max(), np.abs(analytic).max(), 1e-10)
            assert np.abs(analytic - fd).max() / denom <= 1e-5, f

    def test_length_extrapolation(self):
        p = make_params(d=4, seed=19)
        short = Tensor(np.random.default_rng(20).uniform(-1, 1, (16, 4)))
        conv_llama_block(short, p)
        long = Tensor(np.random.default_rng(21).uniform(-1, 1, (128, 4)))
        out = conv_llama_block(long, p)
        assert out.shape == (128, 4)
        assert np.all(np.isfinite(out.data))

    def test_masked_position_independence_whole_block(self):
        p = make_params(d=4, seed=22)
        rng = np.random.default_rng(23)
        valid = rng.uniform(-1, 1, (4, 4))
        mask = np.array([True] * 4 + [False] * 3)
        a = np.vstack([valid, rng.uniform(-5, 5, (3, 4))])
        b = np.vstack([valid, rng.uniform(-5, 5, (3, 4))])
        out_a = conv_llama_block(Tensor(a), p, mask).data[:4]
        out_b = conv_llama_block(Tensor(b), p, mask).data[:4]
        np.testing.assert_allclose(out_a, out_b, atol=1e-12)
