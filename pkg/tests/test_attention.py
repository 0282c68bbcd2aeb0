"""Frame-wise attention block: pairwise score symmetry, masked softmax
aggregation semantics, the identity-mask residual hand case, and frame
permutation equivariance."""

import numpy as np
import pytest

from bam.attention import FrameAttentionBlock, aggregate, attention_map, pairwise_scores
from bam.nn import Linear
from bam.tensor import ShapeError, Tensor

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805


def np_selu(x):
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * (np.exp(x) - 1.0))


def test_pairwise_scores_symmetric():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5, 3))
    s = pairwise_scores(Tensor(x)).data
    assert s.shape == (2, 5, 5, 3)
    assert np.array_equal(s, s.transpose(0, 2, 1, 3))
    assert np.allclose(s[0, 1, 2], x[0, 1] * x[0, 2])


def test_pairwise_scores_orthogonal_rows():
    x = Tensor(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    s = pairwise_scores(x).data
    assert np.array_equal(s[0, 0, 1], [0.0, 0.0])


def test_pairwise_scores_single_frame():
    x = Tensor(np.array([[[2.0, -3.0]]]))
    s = pairwise_scores(x).data
    assert s.shape == (1, 1, 1, 2)
    assert np.array_equal(s[0, 0, 0], [4.0, 9.0])


def test_pairwise_scores_requires_three_dims():
    with pytest.raises(ShapeError):
        pairwise_scores(Tensor(np.zeros((4, 3))))


def test_attention_map_zero_heads():
    rng = np.random.default_rng(1)
    fc = Linear(3, 3, rng)
    scores = pairwise_scores(Tensor(rng.normal(size=(1, 4, 3))))
    out = attention_map(scores, fc, Tensor(np.zeros((3, 2))))
    assert out.shape == (1, 4, 4, 2)
    assert np.array_equal(out.data, np.zeros((1, 4, 4, 2)))


def test_attention_map_tanh_bound():
    rng = np.random.default_rng(2)
    fc = Linear(3, 3, rng)
    head = rng.normal(size=(3, 2))
    scores = pairwise_scores(Tensor(rng.normal(size=(1, 4, 3)) * 100.0))
    out = attention_map(scores, fc, Tensor(head)).data
    bound = np.abs(head).sum(axis=0)
    assert np.all(np.abs(out) <= bound + 1e-12)


def test_attention_map_dim_mismatch():
    rng = np.random.default_rng(3)
    fc = Linear(3, 3, rng)
    scores = pairwise_scores(Tensor(rng.normal(size=(1, 4, 3))))
    with pytest.raises(ShapeError):
        attention_map(scores, fc, Tensor(np.zeros((5, 1))))


def test_aggregate_uniform_when_scores_zero():
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(1, 5, 3))
    out = aggregate(Tensor(np.zeros((1, 5, 5, 2))), Tensor(feats))
    assert out.shape == (1, 2, 5, 3)
    mean = feats.mean(axis=1)
    assert np.allclose(out.data[0, 0], np.tile(mean, (5, 1)), atol=1e-12)


def test_aggregate_identity_mask_returns_input():
    rng = np.random.default_rng(5)
    feats = rng.normal(size=(1, 6, 4))
    attn = Tensor(rng.normal(size=(1, 6, 6, 1)))
    out = aggregate(attn, Tensor(feats), mask=np.eye(6))
    assert np.allclose(out.data[0, 0], feats[0], atol=1e-12)


def test_aggregate_all_ones_mask_matches_unmasked():
    rng = np.random.default_rng(6)
    feats = Tensor(rng.normal(size=(2, 5, 3)))
    attn = Tensor(rng.normal(size=(2, 5, 5, 2)))
    masked = aggregate(attn, feats, mask=np.ones((2, 5, 5)))
    plain = aggregate(attn, feats)
    assert np.max(np.abs(masked.data - plain.data)) <= 1e-12


def test_aggregate_renorm_mode_hand_case():
    """renorm zeroes masked weights after a full softmax, then rescales the
    survivors; with large masked logits this differs from exclusion."""
    feats = Tensor(np.array([[[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]]]))
    attn = np.zeros((1, 3, 3, 1))
    attn[0, 0] = [[0.0], [0.0], [10.0]]  # strong pull toward the masked key
    mask = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    excl = aggregate(Tensor(attn), feats, mask=mask, mask_mode="exclude").data
    ren = aggregate(Tensor(attn), feats, mask=mask, mask_mode="renorm").data
    # both renormalize over keys {0,1} for query 0 with equal weights
    assert np.allclose(excl[0, 0, 0], [0.5, 0.5], atol=1e-12)
    assert np.allclose(ren[0, 0, 0], [0.5, 0.5], atol=1e-12)
    # and the weights on the masked key are exactly zero either way
    assert np.allclose(excl[0, 0, 0], ren[0, 0, 0], atol=1e-12)


def _identity_block(dim, t):
    rng = np.random.default_rng(7)
    block = FrameAttentionBlock(dim, 1, rng)
    block.out_fc.weight.data = np.eye(dim)
    block.out_fc.bias.data = np.zeros(dim)
    block.res_fc.weight.data = np.eye(dim)
    block.res_fc.bias.data = np.zeros(dim)
    # unit running moments; eval mode makes batchnorm the identity up to eps
    block.norm.running_mean = np.zeros(dim)
    block.norm.running_var = np.ones(dim) - block.norm.eps
    return block


def test_block_identity_mask_hand_case():
    """Identity mask + identity projections + unit-moment eval batchnorm:
    the block reduces to SELU(F + F) = SELU(2 F)."""
    rng = np.random.default_rng(8)
    feats = rng.normal(size=(1, 5, 4))
    block = _identity_block(4, 5)
    out = block(Tensor(feats), mask=np.eye(5), training=False)
    assert np.allclose(out.data, np_selu(2.0 * feats), atol=1e-9)


def test_block_all_ones_mask_matches_unmasked():
    rng = np.random.default_rng(9)
    block = FrameAttentionBlock(4, 2, rng)
    feats = Tensor(rng.normal(size=(2, 6, 4)))
    a = block(feats, mask=np.ones((6, 6)), training=False)
    b = block(feats, training=False)
    assert np.max(np.abs(a.data - b.data)) <= 1e-12


def test_block_permutation_equivariance():
    rng = np.random.default_rng(10)
    block = FrameAttentionBlock(4, 1, rng)
    t = 7
    feats = rng.normal(size=(1, t, 4))
    mask = (rng.uniform(size=(t, t)) < 0.5).astype(float)
    np.fill_diagonal(mask, 1.0)
    perm = rng.permutation(t)
    base = block(Tensor(feats), mask=mask, training=False).data
    permuted = block(
        Tensor(feats[:, perm]), mask=mask[np.ix_(perm, perm)], training=False
    ).data
    assert np.allclose(permuted, base[:, perm], atol=1e-12)


def test_block_output_shape_matches_input():
    rng = np.random.default_rng(11)
    for t in (1, 2, 5, 8):
        for d in (2, 4, 8):
            block = FrameAttentionBlock(d, 1, rng)
            out = block(Tensor(rng.normal(size=(1, t, d))), training=True)
            assert out.shape == (1, t, d)
