"""Distortion pipeline and eval preprocessing tests."""

import numpy as np
import pytest

from jigsawssl.augment import (
    AugmentationPolicy,
    distort,
    eval_transform,
    no_op_policy,
    normalize,
)
from jigsawssl.errors import InputError


def rand_img(seed, h=64, w=64, c=3):
    return np.random.default_rng(seed).random((h, w, c)).astype(np.float32)


class TestDistort:
    def test_no_op_policy_is_identity(self):
        img = rand_img(0)
        out = distort(img, no_op_policy(), np.random.default_rng(0))
        np.testing.assert_array_equal(out, img)

    def test_same_rng_state_reproduces(self):
        img = rand_img(1)
        policy = AugmentationPolicy()
        a = distort(img, policy, np.random.default_rng(7))
        b = distort(img, policy, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_output_clamped_and_shape_stable(self):
        policy = AugmentationPolicy()
        rng = np.random.default_rng(2)
        for i in range(100):
            img = rand_img(1000 + i, 32, 32)
            out = distort(img, policy, rng)
            assert out.shape == img.shape
            assert np.isfinite(out).all()
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_flip_only_policy(self):
        policy = no_op_policy()
        policy.flip_prob = 1.0
        img = rand_img(3)
        out = distort(img, policy, np.random.default_rng(0))
        np.testing.assert_array_equal(out, img[:, ::-1])

    def test_solarize_only_policy(self):
        policy = no_op_policy()
        policy.solarize_prob = 1.0
        img = np.full((8, 8, 3), 0.75, dtype=np.float32)
        out = distort(img, policy, np.random.default_rng(0))
        np.testing.assert_allclose(out, 0.25, atol=1e-7)

    def test_grayscale_only_policy_equalizes_channels(self):
        policy = no_op_policy()
        policy.grayscale_prob = 1.0
        out = distort(rand_img(4), policy, np.random.default_rng(0))
        np.testing.assert_allclose(out[..., 0], out[..., 1], atol=1e-7)
        np.testing.assert_allclose(out[..., 0], out[..., 2], atol=1e-7)

    def test_invalid_probability_rejected(self):
        with pytest.raises(ValueError):
            AugmentationPolicy(flip_prob=1.5)


class TestEvalTransform:
    def test_256_input_center_crops_224(self):
        img = np.zeros((256, 256, 3), dtype=np.float32)
        img[16:240, 16:240] = 1.0  # exactly the expected central region
        out = eval_transform(img, resize_to=256, crop_size=224)
        assert out.shape == (224, 224, 3)
        assert out.min() == 1.0

    def test_constant_image_normalizes_per_channel(self):
        img = np.full((224, 224, 3), 0.5, dtype=np.float32)
        mean = np.array([0.4, 0.5, 0.6], dtype=np.float32)
        std = np.array([0.2, 0.25, 0.3], dtype=np.float32)
        out = eval_transform(img, resize_to=224, crop_size=224, mean=mean, std=std)
        expect = (0.5 - mean) / std
        for c in range(3):
            np.testing.assert_allclose(out[..., c], expect[c], atol=1e-6)

    def test_deterministic(self):
        img = (np.random.default_rng(5).random((300, 400, 3)) * 255).astype(np.uint8)
        a = eval_transform(img)
        b = eval_transform(img)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (224, 224, 3)

    def test_tiny_image_rejected(self):
        with pytest.raises(InputError):
            eval_transform(np.zeros((16, 16, 3), dtype=np.float32))

    def test_uint8_scaled_to_unit_interval(self):
        img = np.full((64, 64, 3), 255, dtype=np.uint8)
        out = eval_transform(img, resize_to=64, crop_size=64)
        assert out.max() == 1.0


def test_normalize_batch_broadcasts():
    batch = np.full((2, 4, 4, 3), 0.5, dtype=np.float32)
    out = normalize(batch, np.array([0.5, 0.5, 0.5]), np.array([0.5, 0.5, 0.5]))
    np.testing.assert_allclose(out, 0.0)
