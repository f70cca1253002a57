"""Jigsaw transform and permutation-pool tests."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jigsawssl.errors import CapacityError, DivisibilityError, ShapeError
from jigsawssl.jigsaw import (
    PermutationPool,
    PermutationSpec,
    assemble_patches,
    build_permutation_pool,
    identity_spec,
    max_pool_size,
    sample_puzzle,
    shuffle,
    split_patches,
    unshuffle,
)


def random_image(rng, h=8, w=8, c=3):
    return rng.random((h, w, c)).astype(np.float32)


def patch_id_image(n, ph=2, pw=2, c=1):
    """Image whose patch (i, j) is constant with value i*n + j."""
    img = np.zeros((n * ph, n * pw, c), dtype=np.float32)
    for i in range(n):
        for j in range(n):
            img[i * ph : (i + 1) * ph, j * pw : (j + 1) * pw] = i * n + j
    return img


class TestPermutationSpec:
    def test_rejects_non_bijection(self):
        with pytest.raises(ValueError):
            PermutationSpec(2, (0, 0, 1, 2))

    def test_granularity_one_is_identity_only(self):
        assert identity_spec(1).permutation == (0,)
        with pytest.raises(ValueError):
            PermutationSpec(1, (1,))

    def test_inverse_composes_to_identity(self):
        spec = PermutationSpec(2, (2, 0, 3, 1))
        inv = spec.inverse()
        composed = tuple(spec.permutation[inv.permutation[k]] for k in range(4))
        assert composed == (0, 1, 2, 3)


class TestSplitAssemble:
    def test_2x2_split_row_major(self):
        img = patch_id_image(2, ph=4, pw=4)
        patches = split_patches(img, 2)
        assert len(patches) == 4
        assert all(p.shape == (4, 4, 1) for p in patches)
        assert [float(p[0, 0, 0]) for p in patches] == [0.0, 1.0, 2.0, 3.0]

    def test_n1_is_identity(self):
        img = random_image(np.random.default_rng(0))
        patches = split_patches(img, 1)
        assert len(patches) == 1
        np.testing.assert_array_equal(patches[0], img)

    def test_224_n8_patch_count_and_size(self):
        img = np.zeros((224, 224, 3), dtype=np.float32)
        patches = split_patches(img, 8)
        assert len(patches) == 64
        assert patches[0].shape == (28, 28, 3)

    def test_round_trip_exact(self):
        img = random_image(np.random.default_rng(1), 12, 12)
        for n in (1, 2, 3, 4, 6):
            np.testing.assert_array_equal(assemble_patches(split_patches(img, n), n), img)

    def test_reordered_assembly_matches_shuffle(self):
        img = random_image(np.random.default_rng(2), 8, 8)
        spec = PermutationSpec(2, (3, 2, 1, 0))
        patches = split_patches(img, 2)
        manual = assemble_patches([patches[k] for k in spec.permutation], 2)
        np.testing.assert_array_equal(manual, shuffle(img, spec))

    def test_wrong_patch_count_raises(self):
        img = random_image(np.random.default_rng(3), 8, 8)
        patches = split_patches(img, 2)[:-1]
        with pytest.raises(ShapeError):
            assemble_patches(patches, 2)

    def test_ragged_patches_raise(self):
        p = np.zeros((2, 2, 1), dtype=np.float32)
        q = np.zeros((2, 3, 1), dtype=np.float32)
        with pytest.raises(ShapeError):
            assemble_patches([p, p, p, q], 2)

    def test_non_divisible_raises_with_context(self):
        img = np.zeros((9, 8, 3), dtype=np.float32)
        with pytest.raises(DivisibilityError) as exc:
            split_patches(img, 2)
        msg = str(exc.value)
        assert "9" in msg and "8" in msg and "2" in msg


class TestShuffle:
    def test_identity_permutation_is_noop(self):
        img = random_image(np.random.default_rng(4))
        np.testing.assert_array_equal(shuffle(img, identity_spec(2)), img)

    def test_left_right_swap(self):
        img = patch_id_image(2)
        out = shuffle(img, PermutationSpec(2, (1, 0, 3, 2)))
        expect = patch_id_image(2)
        expect[:2, :2], expect[:2, 2:] = 1.0, 0.0
        expect[2:, :2], expect[2:, 2:] = 3.0, 2.0
        np.testing.assert_array_equal(out, expect)

    def test_shuffle_then_inverse_restores(self):
        rng = np.random.default_rng(5)
        img = random_image(rng, 16, 16)
        perm = tuple(int(v) for v in rng.permutation(16))
        spec = PermutationSpec(4, perm)
        np.testing.assert_array_equal(shuffle(shuffle(img, spec), spec.inverse()), img)

    @settings(max_examples=40, deadline=None)
    @given(
        n=st.sampled_from([1, 2, 4]),
        seed=st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_roundtrip_and_histogram_property(self, n, seed):
        rng = np.random.default_rng(seed)
        img = random_image(rng, 8, 8)
        perm = tuple(int(v) for v in rng.permutation(n * n))
        spec = PermutationSpec(n, perm)
        out = shuffle(img, spec)
        np.testing.assert_array_equal(unshuffle(out, spec), img)
        # patch-level bijection preserves the multiset of pixels exactly
        assert sorted(out.ravel().tolist()) == sorted(img.ravel().tolist())


class TestPermutationPool:
    def test_n2_pool24_is_all_of_s4(self):
        pool = build_permutation_pool(2, 24, seed=0)
        got = {spec.permutation for spec in pool.permutations}
        expect = set(itertools.permutations(range(4)))
        assert got == expect
        assert pool[0].permutation == (0, 1, 2, 3)

    @pytest.mark.parametrize("seed", [0, 1, 17])
    def test_n2_pool2_second_entry_is_max_min_hamming(self, seed):
        # brute-force oracle: the farthest permutation from identity in S4
        def hamming(p, q):
            return sum(a != b for a, b in zip(p, q))

        best = max(hamming(p, range(4)) for p in itertools.permutations(range(4)))
        assert best == 4  # derangements of 4 elements
        pool = build_permutation_pool(2, 2, seed=seed)
        assert hamming(pool[1].permutation, range(4)) == 4

    def test_n1_pool1_is_identity(self):
        pool = build_permutation_pool(1, 1, seed=3)
        assert len(pool) == 1 and pool[0].permutation == (0,)

    def test_deterministic_regeneration(self):
        a = build_permutation_pool(4, 16, seed=9)
        b = build_permutation_pool(4, 16, seed=9)
        assert [s.permutation for s in a.permutations] == [s.permutation for s in b.permutations]

    def test_entries_distinct_identity_first(self):
        pool = build_permutation_pool(2, 24, seed=5)
        perms = [s.permutation for s in pool.permutations]
        assert len(set(perms)) == len(perms)
        assert perms[0] == tuple(range(4))
        assert [s.pool_index for s in pool.permutations] == list(range(24))

    def test_capacity_errors(self):
        with pytest.raises(CapacityError):
            build_permutation_pool(1, 2, seed=0)
        with pytest.raises(CapacityError):
            build_permutation_pool(2, 25, seed=0)
        with pytest.raises(CapacityError):
            build_permutation_pool(2, 0, seed=0)
        assert max_pool_size(2) == 24


class TestSamplePuzzle:
    def test_singleton_pool_returns_original(self):
        pool = build_permutation_pool(1, 1, seed=0)
        img = random_image(np.random.default_rng(6))
        out, label = sample_puzzle(img, pool, np.random.default_rng(0))
        assert label == 0
        np.testing.assert_array_equal(out, img)

    def test_fixed_rng_is_reproducible(self):
        pool = build_permutation_pool(2, 8, seed=0)
        img = random_image(np.random.default_rng(7))
        out1, l1 = sample_puzzle(img, pool, np.random.default_rng(42))
        out2, l2 = sample_puzzle(img, pool, np.random.default_rng(42))
        assert l1 == l2
        np.testing.assert_array_equal(out1, out2)

    def test_label_frequencies_within_3_sigma(self):
        # binomial bound: p = 1/8, N = 10^4 draws
        pool = build_permutation_pool(2, 8, seed=0)
        img = np.zeros((4, 4, 1), dtype=np.float32)
        rng = np.random.default_rng(123)
        n_draws = 10_000
        counts = np.zeros(8, dtype=int)
        for _ in range(n_draws):
            _, label = sample_puzzle(img, pool, rng)
            counts[label] += 1
        p = 1 / 8
        sigma = np.sqrt(p * (1 - p) / n_draws)
        freqs = counts / n_draws
        assert np.all(np.abs(freqs - p) <= 3 * sigma)
