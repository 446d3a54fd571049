"""3x3 jigsaw shuffling of image batches.

Images are center-cropped to the largest size divisible by 3, split into a
row-major 3x3 grid, rearranged so that destination slot ``i`` receives source
tile ``order[i]``, then zero-padded back to the input size. Every output pixel
is a copy of one input pixel or zero, so gradients pass straight through.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import torch
import torch.nn.functional as F

from .permset import PermutationSet

GRID = 3
TILES = GRID * GRID


@dataclass(frozen=True)
class ShuffleGeometry:
    height: int
    width: int
    cropped_h: int
    cropped_w: int
    pad_top: int
    pad_left: int
    pad_bottom: int
    pad_right: int

    @property
    def tile_h(self) -> int:
        return self.cropped_h // GRID

    @property
    def tile_w(self) -> int:
        return self.cropped_w // GRID

    @property
    def pads(self) -> tuple[int, int, int, int]:
        """(top, left, bottom, right)."""
        return self.pad_top, self.pad_left, self.pad_bottom, self.pad_right


class ShuffleResult(NamedTuple):
    shuffled: torch.Tensor
    labels: torch.Tensor
    geometry: ShuffleGeometry


def compute_geometry(h: int, w: int) -> ShuffleGeometry:
    if h < GRID or w < GRID:
        raise ValueError(f"image must be at least {GRID}x{GRID}, got {h}x{w}")
    ch, cw = GRID * (h // GRID), GRID * (w // GRID)
    top, left = (h - ch) // 2, (w - cw) // 2
    return ShuffleGeometry(h, w, ch, cw, top, left, h - ch - top, w - cw - left)


def _check_batch(batch: torch.Tensor) -> None:
    if batch.dim() != 4:
        raise ValueError(f"expected an N x C x H x W batch, got shape {tuple(batch.shape)}")
    n, c, h, w = batch.shape
    if n < 1 or c < 1 or h < GRID or w < GRID:
        raise ValueError(f"invalid batch shape {tuple(batch.shape)}")


def _to_tiles(x: torch.Tensor, g: ShuffleGeometry) -> torch.Tensor:
    """N x C x H x W -> N x 9 x C x th x tw, cropping per ``g``."""
    n, c = x.shape[:2]
    x = x[:, :, g.pad_top:g.pad_top + g.cropped_h, g.pad_left:g.pad_left + g.cropped_w]
    x = x.reshape(n, c, GRID, g.tile_h, GRID, g.tile_w)
    return x.permute(0, 2, 4, 1, 3, 5).reshape(n, TILES, c, g.tile_h, g.tile_w)


def _from_tiles(tiles: torch.Tensor, g: ShuffleGeometry) -> torch.Tensor:
    n, _, c = tiles.shape[:3]
    x = tiles.reshape(n, GRID, GRID, c, g.tile_h, g.tile_w).permute(0, 3, 1, 4, 2, 5)
    x = x.reshape(n, c, g.cropped_h, g.cropped_w)
    return F.pad(x, (g.pad_left, g.pad_right, g.pad_top, g.pad_bottom))


def _rearrange(x: torch.Tensor, orders: torch.Tensor, g: ShuffleGeometry) -> torch.Tensor:
    tiles = _to_tiles(x, g)
    index = orders.to(device=x.device, dtype=torch.long)[:, :, None, None, None]
    return _from_tiles(torch.gather(tiles, 1, index.expand_as(tiles)), g)


def _check_set(pset: PermutationSet) -> None:
    if pset.tile_count != TILES:
        raise ValueError(f"shuffling supports a {GRID}x{GRID} grid only, set has {pset.tile_count} tiles")


def _check_labels(labels: torch.Tensor, n: int, k: int) -> None:
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {tuple(labels.shape)}")
    if n and (int(labels.min()) < 0 or int(labels.max()) >= k):
        raise ValueError(f"labels must lie in [0, {k})")


def shuffle_with_labels(batch: torch.Tensor, labels, pset: PermutationSet) -> ShuffleResult:
    """Shuffle each sample by the permutation its label indexes."""
    _check_batch(batch)
    _check_set(pset)
    labels = torch.as_tensor(labels, dtype=torch.long)
    _check_labels(labels, batch.shape[0], pset.k)
    g = compute_geometry(batch.shape[2], batch.shape[3])
    orders = torch.from_numpy(pset.as_array())[labels]
    return ShuffleResult(_rearrange(batch, orders, g), labels, g)


def shuffle(batch: torch.Tensor, pset: PermutationSet, rng: torch.Generator) -> ShuffleResult:
    """Shuffle each sample by a permutation drawn uniformly from ``pset`` using ``rng``."""
    labels = torch.randint(pset.k, (batch.shape[0],), generator=rng)
    return shuffle_with_labels(batch, labels, pset)


def deshuffle(
    shuffled: torch.Tensor,
    labels: Sequence[int] | torch.Tensor,
    pset: PermutationSet,
    geometry: ShuffleGeometry | None = None,
) -> torch.Tensor:
    """Undo :func:`shuffle` for known labels; the pad ring comes back as zeros."""
    _check_batch(shuffled)
    _check_set(pset)
    labels = torch.as_tensor(labels, dtype=torch.long)
    _check_labels(labels, shuffled.shape[0], pset.k)
    g = geometry or compute_geometry(shuffled.shape[2], shuffled.shape[3])
    if (g.height, g.width) != tuple(shuffled.shape[2:]):
        raise ValueError(f"geometry is for {g.height}x{g.width}, batch is {tuple(shuffled.shape[2:])}")
    inverse = torch.from_numpy(pset.inverse_array())[labels]
    return _rearrange(shuffled, inverse, g)


def crop_and_pad(batch: torch.Tensor) -> torch.Tensor:
    """The identity shuffle: center crop then zero pad."""
    g = compute_geometry(batch.shape[2], batch.shape[3])
    return _from_tiles(_to_tiles(batch, g), g)

