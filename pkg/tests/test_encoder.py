"""Contextual encoder: attention algebra, spatial bias, masking, equivariance."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layoutgroups import autodiff as ad
from layoutgroups.autodiff import ParameterStore
from layoutgroups.embedder import EmbedderConfig, embed_item, init_embedder_params
from layoutgroups.encoder import (
    EncoderConfig,
    attention_scores,
    encode_item,
    init_encoder_params,
    signed_log_buckets,
    spatial_bias,
    spatial_bucket_indices,
)

from conftest import layout_from_raw, raw_rect


def make_model(enc_cfg=None, seed=0):
    emb_cfg = EmbedderConfig()
    enc_cfg = enc_cfg or EncoderConfig()
    store = ParameterStore()
    rng = np.random.default_rng(seed)
    init_embedder_params(store, emb_cfg, rng)
    init_encoder_params(store, enc_cfg, rng)
    return store, emb_cfg, enc_cfg


def random_layout(rng, n):
    raws = []
    for i in range(n):
        x, y = rng.uniform(0, 0.6, 2)
        w, h = rng.uniform(0.05, 0.35, 2)
        raws.append(raw_rect(f"e{i}", x, y, w, h, z=i))
    return layout_from_raw(raws)


class TestConfig:
    def test_head_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            EncoderConfig(heads=3, d_k=32, d_model=128).validate()

    def test_bad_dropout_rejected(self):
        with pytest.raises(ValueError):
            EncoderConfig(dropout=1.0).validate()


class TestAttentionScores:
    def test_zero_weights_uniform_attention(self):
        rng = np.random.default_rng(0)
        e = ad.constant(rng.normal(size=(5, 8)))
        z = ad.constant(np.zeros((8, 4)))
        logits = attention_scores(e, z, z)
        p = ad.row_softmax(logits).value
        assert np.allclose(p, 0.2)

    def test_single_unmasked_element_weight_one(self):
        rng = np.random.default_rng(1)
        e = ad.constant(rng.normal(size=(3, 8)))
        w = ad.constant(rng.normal(size=(8, 4)))
        logits = attention_scores(e, w, w)
        mask = np.array([False, True, False])
        p = ad.row_softmax(logits, mask=mask).value
        assert np.allclose(p[:, 1], 1.0)
        assert np.allclose(p[:, [0, 2]], 0.0)

    def test_matches_naive_triple_loop(self):
        """Dense scaled dot-product oracle computed with explicit loops."""
        rng = np.random.default_rng(2)
        n, d, dk = 4, 6, 3
        e = rng.normal(size=(n, d))
        wq = rng.normal(size=(d, dk))
        wk = rng.normal(size=(d, dk))
        got = attention_scores(
            ad.constant(e), ad.constant(wq), ad.constant(wk)
        ).value
        want = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                qi = [sum(e[i][a] * wq[a][b] for a in range(d)) for b in range(dk)]
                kj = [sum(e[j][a] * wk[a][b] for a in range(d)) for b in range(dk)]
                want[i][j] = sum(qi[b] * kj[b] for b in range(dk)) / np.sqrt(dk)
        assert np.allclose(got, want, atol=1e-12)


class TestBuckets:
    def test_zero_delta_mid_bucket(self):
        idx = signed_log_buckets(np.array([0.0]), 32, 1e-3, 2.0)
        assert idx[0] == 16

    def test_signed_symmetry(self):
        deltas = np.array([0.25, -0.25, 0.9, -0.9])
        idx = signed_log_buckets(deltas, 32, 1e-3, 2.0)
        assert idx[0] + idx[1] == 32
        assert idx[2] + idx[3] == 32

    def test_extremes_clamped(self):
        idx = signed_log_buckets(np.array([50.0, -50.0]), 32, 1e-3, 2.0)
        assert idx[0] == 31 and idx[1] == 1

    def test_monotone_in_magnitude(self):
        mags = np.logspace(-3, 0.3, 40)
        idx = signed_log_buckets(mags, 32, 1e-3, 2.0)
        assert np.all(np.diff(idx) >= 0)

    def test_odd_bucket_count_rejected(self):
        with pytest.raises(ValueError):
            signed_log_buckets(np.array([0.1]), 31, 1e-3, 2.0)


class TestSpatialBias:
    def test_zero_tables_zero_bias(self, square_layout):
        store, emb_cfg, enc_cfg = make_model()
        item = embed_item(square_layout, emb_cfg, store)
        for head in range(enc_cfg.heads):
            b = spatial_bias(item, enc_cfg, store, head)
            assert np.array_equal(b.value, np.zeros((4, 4)))

    def test_diagonal_uses_mid_buckets(self, square_layout):
        store, emb_cfg, enc_cfg = make_model()
        rng = np.random.default_rng(3)
        for axis, nb in (("x", 32), ("y", 32), ("z", 16)):
            store[f"bias.h0.{axis}"].value = rng.normal(size=nb)
        item = embed_item(square_layout, emb_cfg, store)
        b = spatial_bias(item, enc_cfg, store, 0).value
        expected = (
            store["bias.h0.x"].value[16]
            + store["bias.h0.y"].value[16]
            + store["bias.h0.z"].value[8]
        )
        assert np.allclose(np.diag(b), expected)

    def test_translation_invariance(self):
        rng = np.random.default_rng(4)
        layout_a = layout_from_raw([
            raw_rect("a", 0.1, 0.1, 0.1, 0.1, z=0),
            raw_rect("b", 0.4, 0.2, 0.1, 0.1, z=1),
        ])
        layout_b = layout_from_raw([
            raw_rect("a", 0.3, 0.5, 0.1, 0.1, z=0),
            raw_rect("b", 0.6, 0.6, 0.1, 0.1, z=1),
        ])
        store, emb_cfg, enc_cfg = make_model()
        store["bias.h0.x"].value = rng.normal(size=32)
        store["bias.h0.y"].value = rng.normal(size=32)
        store["bias.h0.z"].value = rng.normal(size=16)
        ia = embed_item(layout_a, emb_cfg, store)
        ib = embed_item(layout_b, emb_cfg, store)
        assert np.array_equal(
            spatial_bias(ia, enc_cfg, store, 0).value,
            spatial_bias(ib, enc_cfg, store, 0).value,
        )

    def test_bucket_indices_symmetric_pairs(self, square_layout):
        store, emb_cfg, enc_cfg = make_model()
        item = embed_item(square_layout, emb_cfg, store)
        ix, iy, iz = spatial_bucket_indices(item, enc_cfg)
        # delta(i, j) = -delta(j, i), so buckets mirror around the midpoint
        n = square_layout.n
        for i in range(n):
            for j in range(n):
                if ix[i, j] != 16:
                    assert ix[i, j] + ix[j, i] == 32
                if iz[i, j] != 8:
                    assert iz[i, j] + iz[j, i] == 16


class TestEncode:
    def test_infer_deterministic(self, square_layout):
        store, emb_cfg, enc_cfg = make_model()
        item = embed_item(square_layout, emb_cfg, store)
        a = encode_item(item, enc_cfg, store).value
        b = encode_item(item, enc_cfg, store).value
        assert np.array_equal(a, b)

    def test_zeroed_bias_equals_nonspatial_bitexact(self, square_layout):
        """Freshly initialized bias tables are zero, so the spatial and
        non-spatial encoders must agree to the last bit."""
        store, emb_cfg, _ = make_model()
        item = embed_item(square_layout, emb_cfg, store)
        h_spatial = encode_item(item, EncoderConfig(spatial_bias=True), store)
        h_plain = encode_item(item, EncoderConfig(spatial_bias=False), store)
        assert np.array_equal(h_spatial.value, h_plain.value)

    def test_padding_perturbation_bitexact(self):
        """Randomizing padded embedding rows never changes real outputs."""
        rng = np.random.default_rng(5)
        layout = random_layout(rng, 5)
        store, emb_cfg, enc_cfg = make_model()
        item = embed_item(layout, emb_cfg, store, pad_to=12)
        base = encode_item(item, enc_cfg, store).value[:5]
        noisy = item.embeddings.value.copy()
        noisy[5:] = rng.normal(size=(7, emb_cfg.d_model))
        item.embeddings = ad.constant(noisy)
        perturbed = encode_item(item, enc_cfg, store).value[:5]
        assert np.array_equal(base, perturbed)

    def test_softmax_rows_sum_to_one_inside_encoder(self):
        # checked indirectly: a one-layer encoder with identity-ish FFN is
        # exercised by the attention tests; here assert the row_softmax
        # contract on actual encoder logits
        rng = np.random.default_rng(6)
        layout = random_layout(rng, 6)
        store, emb_cfg, enc_cfg = make_model()
        item = embed_item(layout, emb_cfg, store, pad_to=10)
        logits = attention_scores(
            item.embeddings, store["enc.l0.h0.wq"], store["enc.l0.h0.wk"]
        )
        p = ad.row_softmax(logits, mask=item.mask).value
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.array_equal(p[:, ~item.mask], np.zeros((10, 4)))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_permutation_equivariance(self, seed):
        """Permuting input rows permutes output rows identically.

        z ranks are part of the element features, so the permutation is
        applied to the already-embedded rows (same features, shuffled slots).
        Equality is near-exact: attention sums over the permuted axis, so
        float accumulation order shifts. Bit-exact equivariance via canonical
        re-sorting is asserted in the acceptance suite.
        """
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 8))
        layout = random_layout(rng, n)
        store, emb_cfg, enc_cfg = make_model(seed=seed % 5)
        item = embed_item(layout, emb_cfg, store)
        h = encode_item(item, enc_cfg, store).value

        perm = rng.permutation(n)
        item_p = embed_item(layout, emb_cfg, store)
        item_p.embeddings = ad.constant(item.embeddings.value[perm])
        item_p.centers = item.centers[perm]
        item_p.ranks = item.ranks[perm]
        # bucket tables are zero at init, so the bias term is permutation-
        # neutral here; relatedness-level equivariance (with canonical
        # re-sorting) is covered in the acceptance suite
        h_p = encode_item(item_p, enc_cfg, store).value
        assert np.allclose(h_p, h[perm], rtol=0, atol=1e-10)

    def test_train_mode_dropout_deterministic_under_seed(self, square_layout):
        store, emb_cfg, enc_cfg = make_model()
        item = embed_item(square_layout, emb_cfg, store)
        a = encode_item(item, enc_cfg, store, train=True,
                        rng=np.random.default_rng(7)).value
        b = encode_item(item, enc_cfg, store, train=True,
                        rng=np.random.default_rng(7)).value
        assert np.array_equal(a, b)
