import numpy as np
import pytest

from seine.codec import IdentityCodec, LearnedCodec, make_codec, reconstruction_mae, train_codec
from seine.data import make_dataset


def test_identity_round_trip(codec):
    clip = make_dataset(1, 0)[0]
    z = codec.encode(clip)
    assert z.shape == (16, 3, 16, 16)
    assert np.array_equal(z, clip.frames)
    assert np.array_equal(codec.decode(z).frames, clip.frames)
    assert np.array_equal(codec.encode_frames(codec.decode_frames(z)), z)


def test_identity_decode_clamps_and_zero_is_mid_gray(codec):
    assert not codec.decode_frames(np.zeros((2, 3, 4, 4))).any()
    out = codec.decode_frames(np.full((1, 3, 2, 2), 3.0))
    assert out.max() == 1.0


def test_learned_shapes_and_errors():
    c = LearnedCodec(channels=4, factor=2)
    z = c.encode_frames(np.zeros((5, 3, 16, 16), np.float32))
    assert z.shape == (5, 4, 8, 8)
    assert c.latent_shape(5, 16, 16) == (5, 4, 8, 8)
    with pytest.raises(ValueError):
        c.encode_frames(np.zeros((1, 3, 15, 16), np.float32))
    with pytest.raises(ValueError):
        c.decode_frames(np.zeros((1, 3, 8, 8), np.float32))
    with pytest.raises(ValueError):
        LearnedCodec(factor=3)
    with pytest.raises(ValueError):
        make_codec("vq")


def test_learned_codec_frame_independence():
    c = LearnedCodec(seed=1)
    frames = make_dataset(1, 0)[0].frames
    solo = c.encode_frames(frames[3:4])
    # equal up to float32 round-off of batched convolution kernels
    np.testing.assert_allclose(solo[0], c.encode_frames(frames)[3], atol=1e-6)
    scrambled = frames.copy()
    scrambled[[0, 1, 2, 4]] = -scrambled[[0, 1, 2, 4]]
    np.testing.assert_allclose(c.encode_frames(scrambled)[3], c.encode_frames(frames)[3], atol=1e-6)


def test_learned_decode_range():
    c = LearnedCodec(seed=2)
    out = c.decode_frames(np.random.default_rng(0).normal(size=(2, 4, 8, 8)).astype(np.float32) * 10)
    assert out.min() >= -1 and out.max() <= 1


@pytest.mark.slow
def test_learned_codec_reconstructs_training_clips():
    clips = make_dataset(2, 0)
    codec = train_codec(clips, channels=4, factor=2, steps=1500, seed=0)
    assert reconstruction_mae(codec, clips[0]) < 0.05
