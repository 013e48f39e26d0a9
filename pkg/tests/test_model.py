import numpy as np
import pytest

from hippo import autodiff as ad
from hippo.autodiff import Tensor
from hippo.gradcheck import check_gradients
from hippo.model import (
    ALL_ASPECTS,
    ModelConfig,
    ModelInputs,
    ScoreTargets,
    UTT_ASPECTS,
    WORD_ASPECTS,
    attention_pool,
    forward,
    init_params,
    load_checkpoint,
    phone_stage,
    project_inputs,
    save_checkpoint,
    segment_bounds,
    utterance_stage,
    word_stage,
)

CFG = ModelConfig(n_phone_types=5, n_word_types=7, d_p=4, d_w=4, d_u=4)


def toy_inputs(rng, cfg=CFG, phones_per_word=(2, 1), pad_phones=0, pad_words=0):
    n = sum(phones_per_word)
    m = len(phones_per_word)
    p2w = np.concatenate([[w] * c for w, c in enumerate(phones_per_word)])
    n_arr, m_arr = n + pad_phones, m + pad_words
    return ModelInputs(
        gop=rng.uniform(-2, 2, (n_arr, cfg.gop_dim)),
        phone_ids=rng.integers(0, cfg.n_phone_types, n_arr),
        word_ids=rng.integers(0, cfg.n_word_types, m_arr),
        phone_to_word=np.concatenate([p2w, np.zeros(pad_phones, dtype=int)]),
        ssl=rng.normal(0, 1, (3, 1024)),
        n_phones=n,
        n_words=m,
    )


def toy_targets(rng, inputs):
    return ScoreTargets(
        phone=rng.uniform(0, 2, len(inputs.phone_ids)),
        word={a: rng.uniform(0, 2, len(inputs.word_ids)) for a in WORD_ASPECTS},
        utt={a: float(rng.uniform(0, 2)) for a in UTT_ASPECTS},
    )


class TestProjectInputs:
    def test_zero_gop_zero_bias_gives_zero_features(self):
        rng = np.random.default_rng(0)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng)
        inputs.gop[:] = 0.0
        xp, _ = project_inputs(inputs, params)
        np.testing.assert_allclose(xp.data, 0.0)

    def test_single_phone_shape(self):
        rng = np.random.default_rng(1)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng, phones_per_word=(1,))
        xp, xssl = project_inputs(inputs, params)
        assert xp.shape == (1, CFG.d_p)
        assert xssl.shape == (1, CFG.d_u)

    def test_matches_naive_matrix_product(self):
        rng = np.random.default_rng(2)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng)
        xp, xssl = project_inputs(inputs, params)

        w, b = params.lin_p_w.data, params.lin_p_b.data
        want = np.zeros((inputs.n_phones, CFG.d_p))
        for i in range(inputs.n_phones):
            for j in range(CFG.d_p):
                acc = b[j]
                for k in range(CFG.gop_dim):
                    acc += inputs.gop[i, k] * w[k, j]
                want[i, j] = acc
        np.testing.assert_allclose(xp.data, want, atol=1e-12)

        flat = inputs.ssl.reshape(-1)
        want_ssl = params.lin_ssl_b.data.copy()
        for k in range(flat.size):
            want_ssl += flat[k] * params.lin_ssl_w.data[k]
        np.testing.assert_allclose(xssl.data[0], want_ssl, atol=1e-10)

    def test_wrong_gop_width_rejected(self):
        rng = np.random.default_rng(3)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng)
        inputs.gop = inputs.gop[:, :-1]
        with pytest.raises(ValueError):
            project_inputs(inputs, params)


class TestPhoneStage:
    @pytest.mark.parametrize("counts", [(1,), (2, 2, 1), tuple([4] * 10)])
    def test_score_length_matches_phones(self, counts):
        rng = np.random.default_rng(4)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng, phones_per_word=counts)
        xp, _ = project_inputs(inputs, params)
        hp, scores = phone_stage(xp, inputs.phone_ids[:inputs.n_phones], params)
        assert scores.shape == (sum(counts),)
        assert hp.shape == (sum(counts), CFG.d_p)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng)
        runs = []
        for _ in range(2):
            xp, _ = project_inputs(inputs, params)
            _, scores = phone_stage(xp, inputs.phone_ids[:inputs.n_phones], params)
            runs.append(scores.data.copy())
        assert np.array_equal(runs[0], runs[1])

    def test_unknown_phone_id_rejected(self):
        rng = np.random.default_rng(6)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng)
        bad = inputs.phone_ids[:inputs.n_phones].copy()
        bad[0] = CFG.n_phone_types
        xp, _ = project_inputs(inputs, params)
        with pytest.raises(ValueError):
            phone_stage(xp, bad, params)


class TestAttentionPool:
    def test_one_output_row_per_segment(self):
        rng = np.random.default_rng(7)
        params = init_params(CFG, rng)
        x = Tensor(rng.uniform(-1, 1, (6, CFG.d_p)))
        out = attention_pool(x, [(0, 2), (2, 3), (3, 6)], params.pool_feat)
        assert out.shape == (3, CFG.d_p)

    def test_word_isolated_from_distant_phones(self):
        # conv kernel is width 3, so columns >= 2 away cannot reach segment 0
        rng = np.random.default_rng(8)
        params = init_params(CFG, rng)
        base = rng.uniform(-1, 1, (7, CFG.d_p))
        other = base.copy()
        other[5:] = rng.uniform(-3, 3, (2, CFG.d_p))
        bounds = [(0, 3), (3, 7)]
        a = attention_pool(Tensor(base), bounds, params.pool_feat).data
        b = attention_pool(Tensor(other), bounds, params.pool_feat).data
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)
        assert not np.allclose(a[1], b[1])

    def test_single_phone_word_matches_direct_computation(self):
        rng = np.random.default_rng(9)
        params = init_params(CFG, rng)
        p = params.pool_hid
        x = rng.uniform(-1, 1, (1, CFG.d_p))
        out = attention_pool(Tensor(x), [(0, 1)], p).data
        # length-1 conv sees only the center tap; attention weight is 1
        conv_col = x[0] * p.dw.data[:, 1]
        want = (conv_col @ p.wv.data) @ p.wo.data
        np.testing.assert_allclose(out[0], want, atol=1e-12)


class TestWordStage:
    def test_three_score_vectors_of_word_length(self):
        rng = np.random.default_rng(10)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng, phones_per_word=(2, 1, 3))
        xp, _ = project_inputs(inputs, params)
        hp, _ = phone_stage(xp, inputs.phone_ids[:inputs.n_phones], params)
        _, _, scores = word_stage(xp, hp, inputs.word_ids[:3],
                                  inputs.phone_to_word[:6], params)
        assert set(scores) == set(WORD_ASPECTS)
        for s in scores.values():
            assert s.shape == (3,)

    def test_unknown_word_id_rejected(self):
        rng = np.random.default_rng(11)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng)
        xp, _ = project_inputs(inputs, params)
        hp, _ = phone_stage(xp, inputs.phone_ids[:inputs.n_phones], params)
        bad = inputs.word_ids[:inputs.n_words].copy()
        bad[0] = CFG.n_word_types + 3
        with pytest.raises(ValueError):
            word_stage(xp, hp, bad, inputs.phone_to_word[:inputs.n_phones], params)

    def test_gradient_through_stage_matches_fd(self):
        rng = np.random.default_rng(12)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng, phones_per_word=(2, 1))
        n, m = inputs.n_phones, inputs.n_words
        w = {a: rng.uniform(-1, 1, m) for a in WORD_ASPECTS}
        xp0 = rng.uniform(-1, 1, (n, CFG.d_p))
        hp0 = rng.uniform(-1, 1, (n, CFG.d_p))

        def loss_from(xp_arr, hp_arr, leaf_xp=None, leaf_hp=None):
            xp = leaf_xp if leaf_xp is not None else Tensor(xp_arr)
            hp = leaf_hp if leaf_hp is not None else Tensor(hp_arr)
            _, _, scores = word_stage(xp, hp, inputs.word_ids[:m],
                                      inputs.phone_to_word[:n], params)
            total = None
            for a in WORD_ASPECTS:
                term = ad.sum_(ad.cmul(scores[a], w[a]))
                total = term if total is None else ad.add(total, term)
            return total

        lx, lh = ad.parameter(xp0), ad.parameter(hp0)
        loss_from(None, None, lx, lh).backward()
        fdx = ad.finite_difference(lambda a: float(loss_from(a, hp0).data), xp0.copy())
        fdh = ad.finite_difference(lambda a: float(loss_from(xp0, a).data), hp0.copy())
        for got, want in ((lx.grad, fdx), (lh.grad, fdh)):
            denom = max(np.abs(got).max(), np.abs(want).max(), 1e-10)
            assert np.abs(got - want).max() / denom <= 1e-5


class TestUtteranceStage:
    def test_five_finite_scalars(self):
        rng = np.random.default_rng(13)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng, phones_per_word=(2, 2))
        out = forward(inputs, params)
        for a in UTT_ASPECTS:
            assert out.preds[a].shape == (1,)
            assert np.isfinite(out.preds[a].data[0])

    def test_equal_merge_of_identical_aspect_seqs_is_identity(self):
        rng = np.random.default_rng(14)
        params = init_params(CFG, rng)
        params.fuse_merge.data[:] = 0.0
        seq = Tensor(rng.uniform(-1, 1, (2, CFG.d_w)))
        xp = Tensor(rng.uniform(-1, 1, (3, CFG.d_p)))
        hp = Tensor(rng.uniform(-1, 1, (3, CFG.d_p)))
        xssl = Tensor(rng.uniform(-1, 1, (1, CFG.d_u)))
        p2w = np.array([0, 0, 1])
        a = utterance_stage(xp, hp, [seq, seq, seq], xssl, p2w, params)
        # merged representation equals the shared sequence; same scores as
        # merging three copies with any weights
        params.fuse_merge.data[:] = [3.0, -1.0, 0.5]
        b = utterance_stage(xp, hp, [seq, seq, seq], xssl, p2w, params)
        for name in UTT_ASPECTS:
            np.testing.assert_allclose(a[name].data, b[name].data, atol=1e-12)


class TestForward:
    def test_output_cardinality_and_z_dim(self):
        rng = np.random.default_rng(15)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng, phones_per_word=(2, 1, 2))
        out = forward(inputs, params)
        n_scores = sum(out.preds[a].data.size for a in ALL_ASPECTS)
        assert n_scores == inputs.n_phones + 3 * inputs.n_words + 5
        assert out.z.shape == (1, CFG.d_p)

    def test_padding_invariance(self):
        rng = np.random.default_rng(16)
        params = init_params(CFG, rng)
        base = toy_inputs(rng, phones_per_word=(2, 1, 2))
        padded = toy_inputs(rng, phones_per_word=(2, 1, 2), pad_phones=4, pad_words=2)
        for arr, src in (("gop", "gop"), ("phone_ids", "phone_ids"),
                         ("word_ids", "word_ids"), ("phone_to_word", "phone_to_word")):
            getattr(padded, arr)[:getattr(base, src).shape[0]] = getattr(base, src)
        padded.ssl = base.ssl
        a = forward(base, params)
        b = forward(padded, params)
        for name in ALL_ASPECTS:
            valid = a.masks[name].sum()
            np.testing.assert_allclose(a.preds[name].data[:valid],
                                       b.preds[name].data[:valid], atol=1e-9)
        np.testing.assert_allclose(a.z.data, b.z.data, atol=1e-12)
        assert not b.masks["phone_accuracy"][-1]

    def test_variable_length_contract(self):
        rng = np.random.default_rng(17)
        params = init_params(CFG, rng)
        for counts in [(1,), tuple([2] * 8), tuple([4] * 128)]:
            inputs = toy_inputs(rng, phones_per_word=counts)
            out = forward(inputs, params)
            assert np.isfinite(out.preds["utt_total"].data[0])
        assert sum([4] * 128) == 512

    def test_no_dead_parameter_groups(self):
        rng = np.random.default_rng(18)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng, phones_per_word=(2, 2, 1))
        out = forward(inputs, params)
        total = None
        for a in ALL_ASPECTS:
            term = ad.sum_(out.preds[a])
            total = term if total is None else ad.add(total, term)
        total = ad.add(total, ad.sum_(out.z))
        total.backward()
        for name, t in params.named_parameters().items():
            assert t.grad is not None and np.any(t.grad != 0.0), name

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(19)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng)
        a = forward(inputs, params)
        b = forward(inputs, params)
        for name in ALL_ASPECTS:
            assert np.array_equal(a.preds[name].data, b.preds[name].data)

    def test_end_to_end_gradients_match_fd(self):
        rng = np.random.default_rng(20)
        params = init_params(CFG, rng)
        inputs = toy_inputs(rng, phones_per_word=(2, 1))  # 3 phones, 2 words
        weights = {a: rng.uniform(-1, 1, 1) for a in UTT_ASPECTS}

        def build_loss():
            out = forward(inputs, params)
            total = ad.sum_(ad.cmul(out.preds["phone_accuracy"], rng_w["phone"]))
            for a in WORD_ASPECTS:
                total = ad.add(total, ad.sum_(ad.cmul(out.preds[a], rng_w[a])))
            for a in UTT_ASPECTS:
                total = ad.add(total, ad.sum_(ad.cmul(out.preds[a], weights[a])))
            return total

        rng_w = {"phone": rng.uniform(-1, 1, inputs.n_phones + 0)}
        rng_w["phone"] = rng.uniform(-1, 1, len(inputs.phone_ids))
        for a in WORD_ASPECTS:
            rng_w[a] = rng.uniform(-1, 1, len(inputs.word_ids))

        report = check_gradients(build_loss, params.named_parameters(),
                                 coords_per_group=4, tolerance=1e-5, seed=0)
        assert report.passed, "\n".join(report.lines())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(21)
        params = init_params(CFG, rng)
        path = tmp_path / "model.json"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.config == CFG
        for (na, ta), (nb, tb) in zip(params.named_parameters().items(),
                                      loaded.named_parameters().items()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_version_mismatch_rejected(self, tmp_path):
        import json
        rng = np.random.default_rng(22)
        params = init_params(CFG, rng)
        path = tmp_path / "model.json"
        save_checkpoint(params, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestSegmentBounds:
    def test_bounds_partition_sequence(self):
        bounds = segment_bounds(np.array([0, 0, 1, 2, 2, 2]), 3)
        assert bounds == [(0, 2), (2, 3), (3, 6)]
