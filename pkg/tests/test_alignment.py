"""Attention variants, block distributions, and the source loss."""

import numpy as np
import pytest

from blockworld import autodiff as ad
from blockworld.alignment import (
    ProbabilityUnderflow,
    attend_dual,
    attend_last_hidden,
    attend_summary,
    block_distribution,
    encode_cnn,
    source_loss,
)
from blockworld.encoders import EncodedInstruction


def encoded(states):
    states = ad.tensor(states)
    return EncodedInstruction(states, ad.row(states, states.values.shape[0] - 1))


def oracle_last_hidden(blocks, h_last, bilinear):
    return np.array([c @ bilinear @ h_last for c in blocks])


def oracle_dual(blocks, states, word_bilinear, context_bilinear):
    scores = []
    for c in blocks:
        word_scores = np.array([c @ word_bilinear @ h for h in states])
        e = np.exp(word_scores - word_scores.max())
        weights = e / e.sum()
        z = sum(w * h for w, h in zip(weights, states))
        scores.append(c @ context_bilinear @ z)
    return np.array(scores)


def oracle_cnn(states, conv_w, conv_b):
    """Nested-loop same-padded convolution followed by max pooling."""
    m, d = states.shape
    k, _, f = conv_w.shape
    left = (k - 1) // 2
    out = np.zeros((m, f))
    for t in range(m):
        for j in range(k):
            src = t + j - left
            if 0 <= src < m:
                for fi in range(f):
                    out[t, fi] += states[src] @ conv_w[j, :, fi]
    return (out + conv_b).max(axis=0)


def test_last_hidden_zero_matrix_gives_uniform():
    rng = np.random.default_rng(0)
    blocks = ad.tensor(rng.normal(size=(4, 3)))
    enc = encoded(rng.normal(size=(5, 6)))
    scores = attend_last_hidden(blocks, enc, ad.tensor(np.zeros((3, 6))))
    assert np.allclose(scores.values, 0.0)
    assert np.allclose(block_distribution(scores).values, 0.25)


def test_last_hidden_identity_bilinear_gives_squared_norm():
    rng = np.random.default_rng(1)
    h_last = rng.normal(size=4)
    states = np.vstack([rng.normal(size=(2, 4)), h_last])
    blocks = ad.tensor(h_last[None, :])
    scores = attend_last_hidden(blocks, encoded(states), ad.tensor(np.eye(4)))
    assert scores.values[0] == pytest.approx(float(h_last @ h_last))


def test_last_hidden_matches_oracle():
    rng = np.random.default_rng(2)
    blocks = rng.normal(size=(5, 3))
    states = rng.normal(size=(4, 6))
    bilinear = rng.normal(size=(3, 6))
    got = attend_last_hidden(ad.tensor(blocks), encoded(states), ad.tensor(bilinear))
    assert np.allclose(got.values, oracle_last_hidden(blocks, states[-1], bilinear), atol=1e-12)


def test_last_hidden_reference_projection_changes_scores():
    rng = np.random.default_rng(3)
    blocks = ad.tensor(rng.normal(size=(4, 3)))
    enc = encoded(rng.normal(size=(5, 6)))
    bilinear = ad.tensor(rng.normal(size=(3, 6)))
    plain = attend_last_hidden(blocks, enc, bilinear)
    projected = attend_last_hidden(blocks, enc, bilinear, ad.tensor(rng.normal(size=(6, 6))))
    assert not np.allclose(plain.values, projected.values)


def test_cnn_constant_rows_pool_to_single_response():
    rng = np.random.default_rng(4)
    row = rng.normal(size=5)
    states = np.tile(row, (6, 1))
    w = rng.normal(size=(1, 5, 2))
    b = rng.normal(size=2)
    got = encode_cnn(encoded(states), [ad.tensor(w)], [ad.tensor(b)])
    assert np.allclose(got.values, row @ w[0] + b, atol=1e-12)


def test_cnn_width1_unit_filter_selects_coordinate_max():
    states = np.array([[0.1, 2.0], [0.7, -1.0], [0.3, 0.5]])
    w = np.zeros((1, 2, 1))
    w[0, 0, 0] = 1.0  # picks hidden coordinate 0
    got = encode_cnn(encoded(states), [ad.tensor(w)], [ad.tensor(np.zeros(1))])
    assert got.values[0] == pytest.approx(0.7)


def test_cnn_matches_nested_loop_oracle():
    rng = np.random.default_rng(5)
    for m in (1, 2, 5, 9):
        states = rng.normal(size=(m, 4))
        pooled = []
        conv_ws, conv_bs = [], []
        for k in (2, 3):
            w = rng.normal(size=(k, 4, 3))
            b = rng.normal(size=3)
            conv_ws.append(ad.tensor(w))
            conv_bs.append(ad.tensor(b))
            pooled.append(oracle_cnn(states, w, b))
        got = encode_cnn(encoded(states), conv_ws, conv_bs)
        assert np.allclose(got.values, np.concatenate(pooled), atol=1e-12)


def test_dual_single_word_context_is_that_word():
    rng = np.random.default_rng(6)
    blocks = rng.normal(size=(3, 4))
    states = rng.normal(size=(1, 5))
    word_w = rng.normal(size=(4, 5))
    ctx_w = rng.normal(size=(4, 5))
    got = attend_dual(ad.tensor(blocks), encoded(states), ad.tensor(word_w), ad.tensor(ctx_w))
    expected = np.array([c @ ctx_w @ states[0] for c in blocks])
    assert np.allclose(got.values, expected, atol=1e-12)


def test_dual_zero_word_matrix_gives_mean_context():
    rng = np.random.default_rng(7)
    blocks = rng.normal(size=(3, 4))
    states = rng.normal(size=(5, 6))
    ctx_w = rng.normal(size=(4, 6))
    got = attend_dual(ad.tensor(blocks), encoded(states), ad.tensor(np.zeros((4, 6))),
                      ad.tensor(ctx_w))
    mean = states.mean(axis=0)
    assert np.allclose(got.values, [c @ ctx_w @ mean for c in blocks], atol=1e-12)


def test_dual_matches_double_loop_oracle():
    rng = np.random.default_rng(8)
    blocks = rng.normal(size=(4, 3))
    states = rng.normal(size=(6, 5))
    word_w = rng.normal(size=(3, 5))
    ctx_w = rng.normal(size=(3, 5))
    got = attend_dual(ad.tensor(blocks), encoded(states), ad.tensor(word_w), ad.tensor(ctx_w))
    assert np.allclose(got.values, oracle_dual(blocks, states, word_w, ctx_w), atol=1e-12)


def test_block_distribution_trivial_cases():
    assert np.allclose(block_distribution(ad.tensor([1.0, 1.0, 1.0])).values, 1 / 3)
    assert np.allclose(block_distribution(ad.tensor([np.log(2.0), 0.0])).values, [2 / 3, 1 / 3])
    assert block_distribution(ad.tensor([4.2])).values[0] == 1.0


def test_block_distribution_shift_invariance():
    rng = np.random.default_rng(9)
    for _ in range(50):
        scores = rng.normal(scale=4, size=6)
        a = block_distribution(ad.tensor(scores)).values
        b = block_distribution(ad.tensor(scores + 17.3)).values
        assert np.allclose(a, b, atol=1e-9)
        assert np.argmax(a) == np.argmax(b)


def test_attention_paths_are_drop_in_interchangeable():
    rng = np.random.default_rng(10)
    blocks = ad.tensor(rng.normal(size=(4, 3)))
    enc = encoded(rng.normal(size=(5, 6)))
    last = attend_last_hidden(blocks, enc, ad.tensor(rng.normal(size=(3, 6))))
    summary = encode_cnn(enc, [ad.tensor(rng.normal(size=(2, 6, 4)))], [ad.tensor(np.zeros(4))])
    cnn = attend_summary(blocks, summary, ad.tensor(rng.normal(size=(3, 4))))
    dual = attend_dual(blocks, enc, ad.tensor(rng.normal(size=(3, 6))),
                       ad.tensor(rng.normal(size=(3, 6))))
    assert last.values.shape == cnn.values.shape == dual.values.shape == (4,)


def test_source_loss_values():
    assert source_loss(ad.tensor([0.0, 1.0, 0.0]), 1).values == pytest.approx(0.0)
    assert source_loss(ad.tensor([0.25, 0.25, 0.25, 0.25]), 2).values == pytest.approx(np.log(4))
    assert source_loss(ad.tensor([0.7, 0.3]), 1).values == pytest.approx(-np.log(0.3))
    assert float(source_loss(ad.tensor([0.7, 0.3]), 1).values) == pytest.approx(1.2040, abs=1e-4)


def test_source_loss_clamps_and_warns_at_zero_probability():
    with pytest.warns(ProbabilityUnderflow):
        loss = source_loss(ad.tensor([1.0, 0.0]), 1)
    assert np.isfinite(loss.values)
    assert loss.values == pytest.approx(-np.log(1e-12))


def test_source_loss_bad_index():
    with pytest.raises(IndexError):
        source_loss(ad.tensor([0.5, 0.5]), 2)


def test_attention_gradients_pass_finite_differences():
    from blockworld.diagnostics import check_attention

    rng = np.random.default_rng(11)
    for variant in ("last_hidden", "cnn", "dual"):
        assert check_attention(variant, rng, instances=5) < 1e-4
