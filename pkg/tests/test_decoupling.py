"""Attention pooling: normalization, the convex-hull property, a scalar
oracle, and the embedding file format."""

import numpy as np
import pytest

from dualstream.decoupling import (
    DecouplingParams,
    decouple,
    init_decoupling_params,
    load_embeddings,
    pseudo_text_embeddings,
    save_embeddings,
)
from dualstream.errors import ConfigError, DataFormatError, ShapeError
from dualstream.tensor import Tensor, constant


def scalar_decouple(F, D, w_feat, w_text, v):
    """Nested-loop mirror.  F: (N, C) one instance, D: (T, E)."""
    n, c = F.shape
    t = D.shape[0]
    d = w_feat.shape[1]
    alpha = np.zeros((t, n))
    for ti in range(t):
        scores = np.zeros(n)
        for i in range(n):
            gate = np.tanh((F[i] @ w_feat) * (D[ti] @ w_text))
            scores[i] = float(v @ gate)
        e = np.exp(scores - scores.max())
        alpha[ti] = e / e.sum()
    pooled = np.zeros((t, c))
    for ti in range(t):
        for i in range(n):
            pooled[ti] += alpha[ti, i] * F[i]
    return pooled, alpha


def tiny_params(rng, c, e, d):
    return DecouplingParams(
        w_feat=Tensor(rng.standard_normal((c, d)), requires_grad=True),
        w_text=Tensor(rng.standard_normal((e, d)), requires_grad=True),
        v=Tensor(rng.standard_normal(d), requires_grad=True),
    )


class TestDecouple:
    def test_scalar_oracle_small(self):
        # 1 instance, 3 positions, 2 tasks, 2x2 parameter blocks
        rng = np.random.default_rng(0)
        F = rng.standard_normal((1, 3, 2))
        D = rng.standard_normal((2, 2))
        params = tiny_params(rng, 2, 2, 2)
        pooled, alpha = decouple(Tensor(F), constant(D), params)
        want_pooled, want_alpha = scalar_decouple(
            F[0], D, params.w_feat.data, params.w_text.data, params.v.data)
        np.testing.assert_allclose(alpha.data[0], want_alpha, atol=1e-12)
        np.testing.assert_allclose(pooled.data[0], want_pooled, atol=1e-12)

    def test_alpha_normalizes(self):
        rng = np.random.default_rng(1)
        F = rng.standard_normal((8, 6, 5)) * 3.0
        D = rng.standard_normal((4, 3))
        params = tiny_params(rng, 5, 3, 4)
        _, alpha = decouple(Tensor(F), constant(D), params)
        assert alpha.shape == (8, 4, 6)
        np.testing.assert_allclose(alpha.data.sum(axis=2), 1.0, atol=1e-10)

    def test_pooled_inside_convex_hull(self):
        rng = np.random.default_rng(2)
        F = rng.standard_normal((5, 7, 4))
        D = rng.standard_normal((3, 6))
        params = tiny_params(rng, 4, 6, 5)
        pooled, _ = decouple(Tensor(F), constant(D), params)
        lo = F.min(axis=1)[:, None, :]  # (B, 1, C) spatial minima
        hi = F.max(axis=1)[:, None, :]
        assert np.all(pooled.data >= lo - 1e-12)
        assert np.all(pooled.data <= hi + 1e-12)

    def test_gradients_reach_all_blocks(self):
        rng = np.random.default_rng(3)
        F = Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True)
        D = constant(rng.standard_normal((2, 3)))
        params = tiny_params(rng, 3, 3, 3)
        pooled, _ = decouple(F, D, params)
        pooled.sum().backward()
        for p in (params.w_feat, params.w_text, params.v, F):
            assert np.any(p.grad != 0.0)

    def test_shape_validation(self):
        rng = np.random.default_rng(4)
        params = tiny_params(rng, 3, 3, 3)
        with pytest.raises(ShapeError, match="positions"):
            decouple(Tensor(np.zeros((2, 3))), constant(np.zeros((2, 3))), params)
        with pytest.raises(ShapeError, match="embed"):
            decouple(Tensor(np.zeros((2, 4, 3))), constant(np.zeros(3)), params)
        with pytest.raises(ShapeError, match="channels"):
            decouple(Tensor(np.zeros((2, 4, 5))), constant(np.zeros((2, 3))), params)
        with pytest.raises(ShapeError, match="embeddings"):
            decouple(Tensor(np.zeros((2, 4, 3))), constant(np.zeros((2, 9))), params)

    def test_named_parameters(self):
        rng = np.random.default_rng(5)
        names = set(tiny_params(rng, 2, 2, 2).named("dec"))
        assert names == {"dec.w_feat", "dec.w_text", "dec.v"}

    def test_init_bounds(self):
        rng = np.random.default_rng(6)
        params = init_decoupling_params(9, 4, 5, rng)
        assert params.w_feat.shape == (9, 5)
        assert np.all(np.abs(params.w_feat.data) <= np.sqrt(6.0 / 9))
        assert np.all(np.abs(params.w_text.data) <= np.sqrt(6.0 / 4))


class TestPseudoEmbeddings:
    def test_unit_norm_and_separation(self):
        emb = pseudo_text_embeddings(7, 16, seed=101)
        np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-12)
        d2 = np.sum((emb[:, None] - emb[None]) ** 2, axis=2)
        np.fill_diagonal(d2, np.inf)
        assert np.sqrt(d2.min()) >= 0.1

    def test_deterministic_by_seed(self):
        a = pseudo_text_embeddings(4, 8, seed=5)
        b = pseudo_text_embeddings(4, 8, seed=5)
        c = pseudo_text_embeddings(4, 8, seed=6)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_single_task(self):
        emb = pseudo_text_embeddings(1, 4, seed=0)
        assert emb.shape == (1, 4)

    def test_bad_sizes(self):
        with pytest.raises(ConfigError):
            pseudo_text_embeddings(0, 4, seed=0)
        with pytest.raises(ConfigError):
            pseudo_text_embeddings(3, 0, seed=0)

    def test_impossible_separation_fails(self):
        # 50 unit vectors on a 1-d "sphere" take only two values
        with pytest.raises(ConfigError, match="could not draw"):
            pseudo_text_embeddings(50, 1, seed=0)


class TestEmbeddingFiles:
    def test_roundtrip_exact(self, tmp_path):
        emb = pseudo_text_embeddings(5, 12, seed=3)
        path = tmp_path / "emb.txt"
        save_embeddings(path, emb)
        np.testing.assert_array_equal(load_embeddings(path), emb)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("")
        with pytest.raises(DataFormatError, match="line 1"):
            load_embeddings(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("3 4 5\n")
        with pytest.raises(DataFormatError, match="header"):
            load_embeddings(p)
        p.write_text("three 4\n")
        with pytest.raises(DataFormatError, match="non-integer"):
            load_embeddings(p)
        p.write_text("0 4\n")
        with pytest.raises(DataFormatError, match="positive"):
            load_embeddings(p)

    def test_short_file(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("2 2\n1.0 2.0\n")
        with pytest.raises(DataFormatError, match="ends after 1"):
            load_embeddings(p)

    def test_bad_row(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("1 3\n1.0 2.0\n")
        with pytest.raises(DataFormatError, match="line 2"):
            load_embeddings(p)
        p.write_text("1 2\n1.0 x\n")
        with pytest.raises(DataFormatError, match="unparsable"):
            load_embeddings(p)
        p.write_text("1 2\n1.0 inf\n")
        with pytest.raises(DataFormatError, match="non-finite"):
            load_embeddings(p)

    def test_save_rejects_bad_rank(self, tmp_path):
        with pytest.raises(ShapeError):
            save_embeddings(tmp_path / "e.txt", np.zeros(3))
