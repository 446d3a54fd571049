"""Tile permutation sets selected by greedy maximal Hamming distance.

A permutation ``order`` maps destination slots to source tiles: slot ``i``
of the shuffled grid receives source tile ``order[i]``.
"""
from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Above this tile count the symmetric group is sampled instead of enumerated.
EXHAUSTIVE_MAX_TILES = 9
SAMPLED_POOL_SIZE = 100_000


class PermutationSetFormatError(ValueError):
    """Raised when a permutation-set file is malformed or violates invariants."""


def hamming(a: Sequence[int], b: Sequence[int]) -> int:
    """Number of positions at which two permutations differ."""
    if len(a) != len(b):
        raise ValueError(f"permutation lengths differ: {len(a)} != {len(b)}")
    return sum(x != y for x, y in zip(a, b))


def _is_bijection(order: Sequence[int], tile_count: int) -> bool:
    return len(order) == tile_count and sorted(order) == list(range(tile_count))


def min_pairwise_hamming(permutations: Sequence[Sequence[int]]) -> int:
    arr = np.asarray(permutations)
    if len(arr) < 2:
        return 0
    dists = (arr[:, None, :] != arr[None, :, :]).sum(-1)
    iu = np.triu_indices(len(arr), k=1)
    return int(dists[iu].min())


@dataclass(frozen=True)
class PermutationSet:
    permutations: tuple[tuple[int, ...], ...]
    tile_count: int
    generation_seed: int
    min_pairwise_hamming: int = field(default=-1)

    def __post_init__(self):
        perms = tuple(tuple(int(v) for v in p) for p in self.permutations)
        object.__setattr__(self, "permutations", perms)
        for i, p in enumerate(perms):
            if not _is_bijection(p, self.tile_count):
                raise ValueError(f"permutation {i} is not a bijection on range({self.tile_count}): {p}")
        if len(set(perms)) != len(perms):
            raise ValueError("permutations are not distinct")
        if len(perms) > math.factorial(self.tile_count):
            raise ValueError("more permutations than tile_count!")
        actual = min_pairwise_hamming(perms)
        if self.min_pairwise_hamming == -1:
            object.__setattr__(self, "min_pairwise_hamming", actual)
        elif self.min_pairwise_hamming != actual:
            raise ValueError(
                f"cached min_pairwise_hamming={self.min_pairwise_hamming} but recomputed {actual}"
            )

    def __len__(self) -> int:
        return len(self.permutations)

    @property
    def k(self) -> int:
        return len(self.permutations)

    def as_array(self) -> np.ndarray:
        """K x T integer array of orders."""
        return np.asarray(self.permutations, dtype=np.int64)

    def inverse_array(self) -> np.ndarray:
        return np.argsort(self.as_array(), axis=1)


def _candidate_pool(tile_count: int, seed: int) -> np.ndarray:
    """Lexicographically sorted candidate orders, identity included."""
    if tile_count <= EXHAUSTIVE_MAX_TILES:
        # itertools yields permutations in lexicographic order.
        pool = np.fromiter(
            itertools.chain.from_iterable(itertools.permutations(range(tile_count))),
            dtype=np.int8 if tile_count <= 127 else np.int64,
        )
        return pool.reshape(-1, tile_count)
    rng = np.random.default_rng(seed)
    sampled = rng.permuted(np.tile(np.arange(tile_count), (SAMPLED_POOL_SIZE, 1)), axis=1)
    sampled = np.vstack([np.arange(tile_count)[None, :], sampled])
    return np.unique(sampled, axis=0)


def generate_set(tile_count: int = 9, k: int = 30, seed: int = 0) -> PermutationSet:
    """Greedily select ``k`` permutations maximizing the minimum pairwise Hamming distance.

    The set starts from the identity. Each following member is the candidate
    whose minimum distance to everything already chosen is largest, ties going
    to the lexicographically smallest order. For ``tile_count <= 9`` all of
    ``tile_count!`` orders are candidates and ``seed`` has no effect; above
    that a pool of random orders drawn with ``seed`` is searched instead.
    """
    if tile_count < 2:
        raise ValueError(f"tile_count must be >= 2, got {tile_count}")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if tile_count <= 20 and k > math.factorial(tile_count):
        raise ValueError(f"cannot select {k} distinct permutations of {tile_count} tiles")

    pool = _candidate_pool(tile_count, seed)
    if k > len(pool):
        raise ValueError(f"candidate pool has only {len(pool)} permutations, k={k}")

    identity = np.arange(tile_count, dtype=pool.dtype)
    chosen = [identity]
    # Selected candidates end at distance 0 and can never win again.
    min_dist = (pool != identity).sum(axis=1).astype(np.int64)
    for _ in range(k - 1):
        j = int(np.argmax(min_dist))
        chosen.append(pool[j])
        np.minimum(min_dist, (pool != pool[j]).sum(axis=1), out=min_dist)

    return PermutationSet(
        permutations=tuple(tuple(int(v) for v in p) for p in chosen),
        tile_count=tile_count,
        generation_seed=seed,
    )


def save_set(pset: PermutationSet, path: str | os.PathLike) -> None:
    lines = [
        f"tiles={pset.tile_count} k={pset.k} seed={pset.generation_seed} "
        f"minham={pset.min_pairwise_hamming}"
    ]
    lines += [" ".join(str(v) for v in p) for p in pset.permutations]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _parse_header(line: str) -> dict[str, int]:
    fields = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise PermutationSetFormatError(f"line 1: malformed header token {token!r}")
        try:
            fields[key] = int(value)
        except ValueError:
            raise PermutationSetFormatError(f"line 1: non-integer value in {token!r}") from None
    expected = {"tiles", "k", "seed", "minham"}
    if set(fields) != expected:
        raise PermutationSetFormatError(
            f"line 1: header must have exactly the keys {sorted(expected)}, got {sorted(fields)}"
        )
    return fields


def load_set(path: str | os.PathLike) -> PermutationSet:
    with open(path, encoding="utf-8") as f:
        raw = f.read().split("\n")
    if raw and raw[-1] == "":
        raw.pop()
    if not raw:
        raise PermutationSetFormatError("line 1: empty file")
    header = _parse_header(raw[0])
    tiles, k = header["tiles"], header["k"]

    perms = []
    seen = {}
    for lineno, line in enumerate(raw[1:], start=2):
        try:
            order = tuple(int(v) for v in line.split())
        except ValueError:
            raise PermutationSetFormatError(f"line {lineno}: non-integer entry in {line!r}") from None
        if not _is_bijection(order, tiles):
            raise PermutationSetFormatError(
                f"line {lineno}: {line!r} is not a permutation of range({tiles})"
            )
        if order in seen:
            raise PermutationSetFormatError(f"line {lineno}: duplicates line {seen[order]}")
        seen[order] = lineno
        perms.append(order)

    if len(perms) != k:
        raise PermutationSetFormatError(
            f"line {len(raw) + 1}: header declares k={k} but file has {len(perms)} permutation rows"
        )
    actual = min_pairwise_hamming(perms)
    if actual != header["minham"]:
        raise PermutationSetFormatError(
            f"line 1: header minham={header['minham']} but recomputed minimum is {actual}"
        )
    return PermutationSet(tuple(perms), tiles, header["seed"], actual)
