"""Encoder-level tests: filter construction, causality through the stack,
frozen-operator equivalence, parameter counting, checkpoint round trips."""

import numpy as np
import pytest

from conftest import finite_diff, rel_err
from seqfilt import model as mdl
from seqfilt import nn
from seqfilt import spectral as sp


def tiny_config(**overrides):
    base = dict(
        num_items=20,
        max_len=8,
        dim=8,
        layers=1,
        num_bases=4,
        filter_order=8,
        dropout=0.0,
    )
    base.update(overrides)
    return mdl.ModelConfig(**base)


class TestConfig:
    def test_order_defaults_to_max_len(self):
        assert tiny_config(filter_order=None).order == 8

    @pytest.mark.parametrize(
        "bad",
        [
            dict(num_bases=0),
            dict(num_bases=9),
            dict(dropout=1.0),
            dict(dropout=-0.1),
            dict(layers=0),
            dict(filter_mode="other"),
        ],
    )
    def test_rejects_bad_values(self, bad):
        with pytest.raises(ValueError):
            tiny_config(**bad)

    def test_round_trips_through_dict(self):
        cfg = tiny_config(filter_mode="circular")
        assert mdl.ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestBuildTapMatrix:
    def test_identity_basis_reproduces_coefficients(self, rng):
        coef = rng.normal(size=(6, 4))
        eye = np.eye(4)
        taps, _ = mdl.build_tap_matrix(coef, eye, np.zeros((4, 4)))
        assert np.array_equal(taps.real, coef)
        assert np.abs(taps.imag).max() == 0.0

    def test_row_normalization_closed_form(self):
        coef = np.eye(1)
        taps, _ = mdl.build_tap_matrix(coef, np.array([[3.0, 4.0]]), np.zeros((1, 2)))
        assert np.allclose(taps, [[0.6, 0.8]], atol=1e-15)

    def test_normalized_rows_have_unit_modulus(self, rng):
        br = rng.normal(size=(5, 7))
        bi = rng.normal(size=(5, 7))
        _, (_, _, b_bar, _) = mdl.build_tap_matrix(rng.normal(size=(6, 5)), br, bi)
        norms = np.sqrt((np.abs(b_bar) ** 2).sum(axis=1))
        assert np.abs(norms - 1.0).max() <= 1e-12

    def test_zero_row_raises(self, rng):
        br = rng.normal(size=(3, 4))
        bi = rng.normal(size=(3, 4))
        br[1] = 0.0
        bi[1] = 0.0
        with pytest.raises(mdl.NormalizationError):
            mdl.build_tap_matrix(rng.normal(size=(5, 3)), br, bi)

    def test_gradients_through_normalization(self, rng):
        coef = rng.normal(size=(4, 3))
        br = rng.normal(size=(3, 5))
        bi = rng.normal(size=(3, 5))
        w_re = rng.normal(size=(4, 5))
        w_im = rng.normal(size=(4, 5))

        def loss():
            taps, _ = mdl.build_tap_matrix(coef, br, bi)
            return float((taps.real * w_re).sum() + (taps.imag * w_im).sum())

        _, cache = mdl.build_tap_matrix(coef, br, bi)
        d_coef, d_re, d_im = mdl.build_tap_matrix_backward(cache, w_re + 1j * w_im)
        assert rel_err(d_coef, finite_diff(loss, coef)) <= 1e-4
        assert rel_err(d_re, finite_diff(loss, br)) <= 1e-4
        assert rel_err(d_im, finite_diff(loss, bi)) <= 1e-4


def identity_tap_params(cfg, rng):
    """Parameters whose filter layers are exact identities and whose FFNs
    output zero, so each block reduces to two stacked layer norms."""
    params = mdl.init_params(cfg, rng)
    k = cfg.order
    for layer in range(cfg.layers):
        coef = np.zeros((cfg.max_len, cfg.num_bases))
        coef[:, 0] = 1.0
        basis_re = np.zeros((cfg.num_bases, k + 1))
        basis_re[:, 0] = 1.0  # rows already unit norm
        params[mdl.block_key(layer, "coef")] = coef
        params[mdl.block_key(layer, "basis_re")] = basis_re
        params[mdl.block_key(layer, "basis_im")] = np.zeros_like(basis_re)
        params[mdl.block_key(layer, "w1")] = np.zeros_like(params[mdl.block_key(layer, "w1")])
        params[mdl.block_key(layer, "w2")] = np.zeros_like(params[mdl.block_key(layer, "w2")])
    return params


class TestEmbedding:
    def test_eval_mode_deterministic(self, rng):
        cfg = tiny_config(dropout=0.5)
        params = mdl.init_params(cfg, rng)
        ids = rng.integers(0, 21, size=(3, 8))
        a, _ = mdl.model_forward(params, cfg, ids, training=False)
        b, _ = mdl.model_forward(params, cfg, ids, training=False)
        assert np.array_equal(a, b)

    def test_out_of_vocabulary(self, rng):
        cfg = tiny_config()
        params = mdl.init_params(cfg, rng)
        ids = np.full((1, 8), 21)
        with pytest.raises(mdl.OutOfVocabulary):
            mdl.model_forward(params, cfg, ids)

    def test_lookup_locality(self, rng):
        cfg = tiny_config()
        params = mdl.init_params(cfg, rng)
        ids_a = rng.integers(1, 21, size=(1, 8))
        ids_b = ids_a.copy()
        ids_b[0, 0] = (ids_a[0, 0] % 20) + 1
        xa, ca = mdl._embed_forward(params, cfg, ids_a, None, False)
        xb, cb = mdl._embed_forward(params, cfg, ids_b, None, False)
        assert np.abs(xa[0, 1:] - xb[0, 1:]).max() == 0.0
        assert np.abs(xa[0, 0] - xb[0, 0]).max() > 0.0

    def test_all_pad_rows_standardize_pad_embedding(self, rng):
        cfg = tiny_config()
        params = mdl.init_params(cfg, rng)
        ids = np.zeros((1, 8), dtype=int)
        x, _ = mdl._embed_forward(params, cfg, ids, None, False)
        expected, _ = nn.layer_norm(
            np.tile(params["emb"][0], (8, 1)),
            params["emb_ln_g"],
            params["emb_ln_b"],
            cfg.ln_eps,
        )
        assert np.abs(x[0] - expected).max() <= 1e-12


class TestEncoder:
    def test_identity_filter_zero_ffn_is_double_layer_norm(self, rng):
        cfg = tiny_config()
        params = identity_tap_params(cfg, rng)
        ids = rng.integers(1, 21, size=(2, 8))
        x0, _ = mdl._embed_forward(params, cfg, ids, None, False)
        out, _ = mdl.model_forward(params, cfg, ids, training=False)
        flat = (2.0 * x0).reshape(-1, cfg.dim)
        inner, _ = nn.layer_norm(flat, params["block0_ln1_g"], params["block0_ln1_b"], cfg.ln_eps)
        direct, _ = nn.layer_norm(inner, params["block0_ln2_g"], params["block0_ln2_b"], cfg.ln_eps)
        assert np.abs(out.reshape(-1, cfg.dim) - direct).max() <= 1e-12

    def test_causal_mode_blocks_leakage(self, rng):
        cfg = tiny_config(layers=2, num_bases=3)
        params = mdl.init_params(cfg, rng)
        ids = rng.integers(1, 21, size=(1, 8))
        base, base_cache = mdl.model_forward(params, cfg, ids, training=False)
        for j in (2, 5, 7):
            bumped = ids.copy()
            bumped[0, j] = (ids[0, j] % 20) + 1
            out, cache = mdl.model_forward(params, cfg, bumped, training=False)
            assert np.abs(out[0, :j] - base[0, :j]).max() <= 1e-12
            # filter-layer outputs row-restricted too, in every block
            for blk in range(cfg.layers):
                filt_base = base_cache[1][blk][-1]
                filt_new = cache[1][blk][-1]
                assert np.abs(filt_new[0, :j] - filt_base[0, :j]).max() <= 1e-12

    def test_circular_mode_mixes_all_positions(self, rng):
        cfg = tiny_config(filter_mode="circular")
        params = mdl.init_params(cfg, rng)
        ids = rng.integers(1, 21, size=(1, 8))
        base, _ = mdl.model_forward(params, cfg, ids, training=False)
        bumped = ids.copy()
        bumped[0, 7] = (ids[0, 7] % 20) + 1
        out, _ = mdl.model_forward(params, cfg, bumped, training=False)
        assert np.abs(out[0, :7] - base[0, :7]).max() > 1e-9

    def test_filter_layer_matches_spectral_causal_filter(self, rng):
        cfg = tiny_config(max_len=6, filter_order=4, num_bases=3, dim=5)
        params = mdl.init_params(cfg, rng)
        taps, _ = mdl.build_tap_matrix(
            params["block0_coef"], params["block0_basis_re"], params["block0_basis_im"]
        )
        x = rng.normal(size=(3, 6, 5))
        out, _ = mdl._filter_forward(cfg, taps, x)
        for b in range(3):
            ref = sp.causal_filter(6, 4, taps, x[b])
            assert np.abs(out[b] - ref).max() <= 1e-12


class TestPrediction:
    def test_self_aligned_embedding_wins(self, rng):
        cfg = tiny_config()
        params = mdl.init_params(cfg, rng)
        seq = list(rng.integers(1, 21, size=5))
        x, _ = mdl.model_forward(
            params, cfg, mdl.pad_context(seq, cfg.max_len)[None], training=False
        )
        params["emb"][7] = x[0, -1]
        scores = mdl.predict_scores(params, cfg, seq)
        assert int(np.argmax(scores[1:])) + 1 == 7

    def test_scaling_embeddings_scales_scores(self, rng):
        # layer norms make the encoder scale-invariant, so scaling the
        # (tied) table scales the scores through the head alone
        cfg = tiny_config()
        params = mdl.init_params(cfg, rng)
        seq = list(rng.integers(1, 21, size=6))
        base = mdl.predict_scores(params, cfg, seq)
        scaled_params = {k: v.copy() for k, v in params.items()}
        scaled_params["emb"] *= 3.0
        scaled = mdl.predict_scores(scaled_params, cfg, seq)
        assert np.allclose(scaled, 3.0 * base, rtol=1e-7, atol=1e-9)
        assert int(np.argmax(scaled[1:])) == int(np.argmax(base[1:]))

    def test_scores_match_explicit_products(self, rng):
        cfg = tiny_config()
        params = mdl.init_params(cfg, rng)
        seq = list(rng.integers(1, 21, size=4))
        scores = mdl.predict_scores(params, cfg, seq)
        x, _ = mdl.model_forward(
            params, cfg, mdl.pad_context(seq, cfg.max_len)[None], training=False
        )
        final = x[0, -1]
        for v in range(cfg.num_items + 1):
            assert abs(scores[v] - float(params["emb"][v] @ final)) <= 1e-12

    def test_all_pad_context_is_defined(self, rng):
        cfg = tiny_config()
        params = mdl.init_params(cfg, rng)
        scores = mdl.predict_scores(params, cfg, [])
        assert np.all(np.isfinite(scores))


class TestFreeze:
    def test_identity_taps_freeze_to_identity(self, rng):
        cfg = tiny_config()
        params = identity_tap_params(cfg, rng)
        ops = mdl.freeze_filters(params, cfg)
        for op in ops:
            assert np.array_equal(op, np.eye(cfg.max_len))

    @pytest.mark.parametrize("mode", ["causal", "circular"])
    def test_frozen_scores_match_unfrozen(self, mode, rng):
        cfg = tiny_config(layers=2, filter_mode=mode)
        params = mdl.init_params(cfg, rng)
        ops = mdl.freeze_filters(params, cfg)
        ids = rng.integers(0, 21, size=(32, 8))
        plain = mdl.predict_scores_batch(params, cfg, ids)
        frozen = mdl.predict_scores_batch(params, cfg, ids, frozen_ops=ops)
        assert np.abs(plain - frozen).max() <= 1e-10


class TestParamCount:
    def test_matches_closed_form(self, rng):
        cfg = tiny_config(layers=2)
        params = mdl.init_params(cfg, rng)
        d, n, m, k = cfg.dim, cfg.max_len, cfg.num_bases, cfg.order
        expected = (cfg.num_items + 1) * d + 2 * d
        expected += cfg.layers * (n * m + 2 * m * (k + 1) + 2 * d * d + 2 * d + 4 * d)
        assert mdl.count_params(params) == expected

    def test_reference_configuration_reported(self, rng):
        # published total for this shape is 854,208; the enumerated groups
        # below give 801,536, so the delta is reported rather than hidden
        cfg = mdl.ModelConfig(
            num_items=12101, max_len=50, dim=64, layers=2, num_bases=32, filter_order=50
        )
        params = mdl.init_params(cfg, rng)
        count = mdl.count_params(params)
        assert count == 801_536
        delta = count - 854_208
        print(f"\nparameter count {count}, published 854208, delta {delta}")


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        cfg = tiny_config(layers=2)
        params = mdl.init_params(cfg, rng)
        path = tmp_path / "model.bin"
        mdl.save_checkpoint(path, params, cfg, meta={"seed": 1})
        loaded, cfg2, meta = mdl.load_checkpoint(path)
        assert cfg2 == cfg and meta == {"seed": 1}
        assert sorted(loaded) == sorted(params)
        for key in params:
            assert np.array_equal(loaded[key], params[key])
            assert loaded[key].dtype == np.float64

    def test_double_save_identical_bytes(self, tmp_path, rng):
        cfg = tiny_config()
        params = mdl.init_params(cfg, rng)
        a = tmp_path / "a.bin"
        b = tmp_path / "b.bin"
        mdl.save_checkpoint(a, params, cfg)
        mdl.save_checkpoint(b, params, cfg)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(mdl.CheckpointError):
            mdl.load_checkpoint(path)
