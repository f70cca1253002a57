"""Multi-granularity jigsaw puzzles and their permutation pools.

Images are H x W x C float arrays in [0, 1].  A puzzle at granularity ``n``
cuts the image into an ``n x n`` grid of equal patches (row-major order) and
rearranges them by a permutation of ``{0 .. n*n - 1}``.  Pools of
permutations are fixed, seed-deterministic sets whose index doubles as the
classification label for order prediction.

All operations are pure given an explicit ``numpy.random.Generator``; there
is no module-level random state.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DivisibilityError, ShapeError

# Candidates drawn per greedy round when growing a pool.  Part of the pool
# definition: changing it changes every pool built from a given seed.
CANDIDATES_PER_ROUND = 100
_MAX_RESAMPLE_ROUNDS = 10


@dataclass(frozen=True)
class PermutationSpec:
    """One jigsaw shuffling order at a fixed granularity.

    Args:
        granularity: Grid size ``n``; the image is cut into ``n x n`` patches.
        permutation: Bijection on ``{0 .. n*n - 1}``; output slot ``k``
            receives input patch ``permutation[k]``.
        pool_index: Label of this permutation inside its pool, or ``None``
            for ad-hoc permutations.
    """

    granularity: int
    permutation: tuple[int, ...]
    pool_index: int | None = None

    def __post_init__(self):
        n = self.granularity
        if n < 1:
            raise ValueError(f"granularity must be >= 1, got {n}")
        perm = tuple(int(p) for p in self.permutation)
        object.__setattr__(self, "permutation", perm)
        if sorted(perm) != list(range(n * n)):
            raise ValueError(f"permutation {perm} is not a bijection on 0..{n * n - 1}")
        if n == 1 and perm != (0,):
            raise ValueError("granularity 1 admits only the identity permutation")

    @property
    def is_identity(self) -> bool:
        return self.permutation == tuple(range(self.granularity**2))

    def inverse(self) -> "PermutationSpec":
        """Permutation that undoes this one (shuffle then inverse-shuffle is identity)."""
        inv = [0] * len(self.permutation)
        for slot, src in enumerate(self.permutation):
            inv[src] = slot
        return PermutationSpec(self.granularity, tuple(inv), pool_index=None)


def identity_spec(n: int) -> PermutationSpec:
    return PermutationSpec(n, tuple(range(n * n)), pool_index=0)


@dataclass(frozen=True)
class PermutationPool:
    """Ordered, seed-deterministic set of permutations at one granularity.

    Entry 0 is always the identity; entries are pairwise distinct.  The entry
    index is the jigsaw-order classification label.
    """

    granularity: int
    permutations: tuple[PermutationSpec, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.permutations)

    def __getitem__(self, idx: int) -> PermutationSpec:
        return self.permutations[idx]


def _check_divisible(img: np.ndarray, n: int) -> None:
    if img.ndim != 3:
        raise ShapeError(f"expected H x W x C image, got shape {img.shape}")
    h, w = img.shape[0], img.shape[1]
    if h % n != 0 or w % n != 0:
        raise DivisibilityError(
            f"image of size {h}x{w} is not divisible into a {n}x{n} patch grid"
        )


def split_patches(img: np.ndarray, n: int) -> list[np.ndarray]:
    """Cut ``img`` into ``n*n`` equal patches in row-major order.

    Concatenating the returned patches back on the grid reproduces ``img``
    exactly; see :func:`assemble_patches`.
    """
    _check_divisible(img, n)
    if n == 1:
        return [img.copy()]
    h, w, c = img.shape
    ph, pw = h // n, w // n
    grid = img.reshape(n, ph, n, pw, c).transpose(0, 2, 1, 3, 4)
    return [grid[i, j].copy() for i in range(n) for j in range(n)]


def assemble_patches(patches: list[np.ndarray], n: int) -> np.ndarray:
    """Inverse of :func:`split_patches`: lay ``n*n`` patches back on the grid."""
    if len(patches) != n * n:
        raise ShapeError(f"expected {n * n} patches for granularity {n}, got {len(patches)}")
    first = patches[0]
    if first.ndim != 3:
        raise ShapeError(f"patches must be 3-d arrays, got shape {first.shape}")
    for p in patches:
        if p.shape != first.shape:
            raise ShapeError(f"ragged patch shapes: {p.shape} vs {first.shape}")
    ph, pw, c = first.shape
    stacked = np.stack(patches).reshape(n, n, ph, pw, c)
    return stacked.transpose(0, 2, 1, 3, 4).reshape(n * ph, n * pw, c)


def shuffle(img: np.ndarray, spec: PermutationSpec) -> np.ndarray:
    """Rearrange the patch grid of ``img`` according to ``spec``.

    Output patch at slot ``k`` equals input patch ``spec.permutation[k]``.
    Applying the inverse spec afterwards restores ``img`` bitwise.
    """
    n = spec.granularity
    _check_divisible(img, n)
    if n == 1 or spec.is_identity:
        return img.copy()
    h, w, c = img.shape
    ph, pw = h // n, w // n
    grid = img.reshape(n, ph, n, pw, c).transpose(0, 2, 1, 3, 4).reshape(n * n, ph, pw, c)
    out = grid[np.asarray(spec.permutation)]
    return out.reshape(n, n, ph, pw, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)


def unshuffle(img: np.ndarray, spec: PermutationSpec) -> np.ndarray:
    """Undo :func:`shuffle` with the same spec."""
    return shuffle(img, spec.inverse())


def max_pool_size(n: int) -> int:
    """Number of distinct permutations at granularity ``n`` (= (n*n)!)."""
    return math.factorial(n * n)


def _hamming_to_pool(candidates: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """Min Hamming distance of each candidate row to any pool row."""
    # (K, 1, L) != (1, P, L) -> (K, P) distances
    dists = (candidates[:, None, :] != pool[None, :, :]).sum(axis=2)
    return dists.min(axis=1)


def _first_unused_permutation(n_items: int, used: set[tuple[int, ...]]) -> tuple[int, ...]:
    # Deterministic fallback for near-exhausted tiny permutation spaces.
    for perm in itertools.permutations(range(n_items)):
        if perm not in used:
            return perm
    raise CapacityError(f"no unused permutations of {n_items} elements remain")


def build_permutation_pool(n: int, pool_size: int, seed: int) -> PermutationPool:
    """Build a pool by greedy max-min-Hamming selection.

    Starting from the identity, each round draws ``CANDIDATES_PER_ROUND``
    permutations from ``numpy.random.default_rng(seed)`` (via
    ``rng.permutation``), discards ones already in the pool, and keeps the
    candidate whose minimum Hamming distance to the current pool is largest
    (first such candidate on ties).  Rounds where every candidate is a
    duplicate redraw, then fall back to the lexicographically first unused
    permutation, so the construction is deterministic given
    ``(n, pool_size, seed)``.
    """
    if pool_size < 1:
        raise CapacityError(f"pool_size must be >= 1, got {pool_size}")
    cap = max_pool_size(n)
    if pool_size > cap:
        raise CapacityError(
            f"pool_size {pool_size} exceeds the {cap} distinct permutations at granularity {n}"
        )
    length = n * n
    rng = np.random.default_rng(seed)
    rows = [np.arange(length)]
    used = {tuple(range(length))}
    while len(rows) < pool_size:
        pool_arr = np.stack(rows)
        best = None
        for _ in range(_MAX_RESAMPLE_ROUNDS):
            cands = np.stack([rng.permutation(length) for _ in range(CANDIDATES_PER_ROUND)])
            fresh = np.array([tuple(c) not in used for c in cands])
            if not fresh.any():
                continue
            cands = cands[fresh]
            dmin = _hamming_to_pool(cands, pool_arr)
            best = cands[int(np.argmax(dmin))]
            break
        if best is None:
            best = np.array(_first_unused_permutation(length, used))
        rows.append(best)
        used.add(tuple(int(v) for v in best))
    specs = tuple(
        PermutationSpec(n, tuple(int(v) for v in row), pool_index=i)
        for i, row in enumerate(rows)
    )
    return PermutationPool(granularity=n, permutations=specs, seed=seed)


def sample_puzzle(
    img: np.ndarray, pool: PermutationPool, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Draw a pool index uniformly, shuffle ``img`` by it, return (image, label)."""
    if len(pool) == 0:
        raise CapacityError("cannot sample from an empty pool")
    idx = int(rng.integers(len(pool)))
    return shuffle(img, pool[idx]), idx
