"""Wave encoder (strided conv stack) and attentive pooling: frame-count
arithmetic, the paper-scale T=25 framing, and convexity of the pooling."""

import numpy as np
import pytest

from bam.config import preset
from bam.frontend import AttentivePool, FeatureProjector, WaveEncoder
from bam.tensor import ShapeError, Tensor


@pytest.fixture(scope="module")
def encoder():
    cfg = preset("desk")
    return WaveEncoder(cfg.encoder_channels, cfg.encoder_widths, np.random.default_rng(0))


def test_hop_is_twenty_ms(encoder):
    assert encoder.hop == 160  # samples at 8 kHz


def test_frame_count_floor_chain(encoder):
    for length in (160, 161, 1600, 4001, 31999, 32000):
        assert encoder.num_frames(length) == length // 160
        out = encoder(np.zeros((1, length)))
        assert out.shape == (1, length // 160, 32)


def test_four_seconds_gives_200_hops_25_frames(encoder):
    out = encoder(np.zeros((1, 32000)))
    assert out.shape[1] == 200
    pool = AttentivePool(32, 8, np.random.default_rng(1))
    assert pool(out).shape == (1, 25, 32)


def test_waveform_too_short_rejected(encoder):
    with pytest.raises(ShapeError, match="160"):
        encoder(np.zeros((1, 159)))


def test_constant_input_gives_identical_frames(encoder):
    out = encoder(np.zeros((2, 1600))).data
    assert np.allclose(out, out[:, :1, :], atol=1e-12)
    out2 = encoder(np.full((1, 1600), 0.37)).data
    assert np.allclose(out2, out2[:, :1, :], atol=1e-12)


def test_pool_stride_one_is_identity():
    rng = np.random.default_rng(2)
    pool = AttentivePool(6, 1, rng)
    x = rng.normal(size=(2, 7, 6))
    out = pool(Tensor(x))
    assert np.allclose(out.data, x, atol=1e-12)


def test_pool_identical_frames_returns_the_frame():
    rng = np.random.default_rng(3)
    pool = AttentivePool(5, 4, rng)
    frame = rng.normal(size=5)
    x = np.tile(frame, (1, 8, 1))
    out = pool(Tensor(x))
    assert out.shape == (1, 2, 5)
    assert np.allclose(out.data, frame, atol=1e-12)


def test_pool_output_in_convex_hull():
    rng = np.random.default_rng(4)
    pool = AttentivePool(3, 8, rng)
    x = rng.normal(size=(2, 16, 3))
    out = pool(Tensor(x)).data
    windows = x.reshape(2, 2, 8, 3)
    assert np.all(out <= windows.max(axis=2) + 1e-12)
    assert np.all(out >= windows.min(axis=2) - 1e-12)


def test_pool_short_input_single_window():
    rng = np.random.default_rng(5)
    pool = AttentivePool(4, 8, rng)
    assert pool.out_frames(3) == 1
    assert pool.out_frames(17) == 2  # trailing partial window dropped
    out = pool(Tensor(rng.normal(size=(1, 3, 4))))
    assert out.shape == (1, 1, 4)


def test_feature_projector_shapes():
    rng = np.random.default_rng(6)
    proj = FeatureProjector(7, 4, rng)
    out = proj(rng.normal(size=(2, 5, 7)))
    assert out.shape == (2, 5, 4)
