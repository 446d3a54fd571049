"""Image datasets and a cyclic, seeded batch stream."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
PREPROCESSING = "rgb|resize-shorter-bicubic|center-crop|scale[-1,1]"


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "synthetic_structured"
    root: str | None = None
    image_size: int = 48
    shuffle_seed: int = 1
    n_samples: int = 2000
    synthetic_seed: int = 1

    def __post_init__(self):
        if self.source not in ("image_folder", "synthetic_structured"):
            raise ValueError(f"unknown dataset source {self.source!r}")
        if self.image_size < 9:
            raise ValueError(f"image_size must be >= 9, got {self.image_size}")
        if self.source == "image_folder" and not self.root:
            raise ValueError("image_folder datasets need a root path")
        if self.source == "synthetic_structured" and self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


class ImageDataset:
    """Random-access set of preprocessed images, each 3 x S x S in [-1, 1]."""

    image_size: int
    shuffle_seed: int = 0

    def __len__(self) -> int:
        raise NotImplementedError

    def get(self, indices) -> torch.Tensor:
        raise NotImplementedError

    def fingerprint(self) -> dict:
        raise NotImplementedError

    def stream(self, batch_size: int) -> "BatchStream":
        return BatchStream(self, batch_size, self.shuffle_seed)

    def head(self, n: int) -> torch.Tensor:
        """First ``n`` images in index order (wrapping if the set is smaller)."""
        return self.get(np.arange(n) % len(self))


def load_image(path: str | os.PathLike, size: int) -> np.ndarray:
    """Decode, resize the shorter side to ``size``, center crop, scale to [-1, 1]."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        scale = size / min(w, h)
        nw, nh = max(size, round(w * scale)), max(size, round(h * scale))
        if (nw, nh) != (w, h):
            img = img.resize((nw, nh), Image.BICUBIC)
        left, top = (nw - size) // 2, (nh - size) // 2
        img = img.crop((left, top, left + size, top + size))
        arr = np.asarray(img, dtype=np.float32)
    return (arr.transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32)


class ImageFolderDataset(ImageDataset):
    def __init__(self, root: str | os.PathLike, image_size: int, shuffle_seed: int = 0):
        root = Path(root)
        self.shuffle_seed = shuffle_seed
        if not root.is_dir():
            raise FileNotFoundError(f"dataset folder {root} does not exist")
        self.root = root
        self.image_size = image_size
        candidates = sorted(p for p in root.rglob("*") if p.is_file())
        self.paths = []
        for p in candidates:
            if p.suffix.lower() not in IMAGE_SUFFIXES:
                log.warning("skipping %s: only PNG and JPEG images are supported", p)
                continue
            try:
                with Image.open(p) as img:
                    img.verify()
            except (UnidentifiedImageError, OSError) as exc:
                log.warning("skipping undecodable image %s: %s", p, exc)
                continue
            self.paths.append(p)
        if not self.paths:
            raise ValueError(f"no decodable PNG/JPEG images under {root}")

    def __len__(self) -> int:
        return len(self.paths)

    def get(self, indices) -> torch.Tensor:
        return torch.from_numpy(np.stack([load_image(self.paths[int(i)], self.image_size) for i in indices]))

    def fingerprint(self) -> dict:
        return {
            "source": "image_folder",
            "root": str(self.root),
            "count": len(self),
            "image_size": self.image_size,
            "shuffle_seed": self.shuffle_seed,
            "preprocessing": PREPROCESSING,
        }


def render_structured(n: int, size: int, seed: int) -> np.ndarray:
    """Procedural images with a fixed global layout.

    The background ramps red top-to-bottom and green left-to-right; a pale
    ellipse sits near the center with a dark dot in its upper-left quadrant.
    Pose, radii and colors are jittered per image, layout is not.
    """
    if size < 9 or n < 1:
        raise ValueError("need size >= 9 and n >= 1")
    rng = np.random.default_rng(seed)
    coords = (np.arange(size, dtype=np.float64) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    def u(lo, hi, shape=(n,)):
        return rng.uniform(lo, hi, size=shape)[:, None, None]

    red = u(-0.9, -0.5) + u(1.0, 1.4) * (yy + 1) / 2
    green = u(-0.9, -0.5) + u(1.0, 1.4) * (xx + 1) / 2
    blue = u(-0.6, 0.2) + 0 * yy
    img = np.stack([red, green, blue], axis=1)

    cy, cx = u(-0.08, 0.08), u(-0.08, 0.08)
    ry, rx = u(0.38, 0.5), u(0.3, 0.45)
    theta = u(-0.3, 0.3)
    dy, dx = yy - cy, xx - cx
    ey = dy * np.cos(theta) - dx * np.sin(theta)
    ex = dy * np.sin(theta) + dx * np.cos(theta)
    body = (ey / ry) ** 2 + (ex / rx) ** 2 <= 1.0
    dot = (ey + 0.45 * ry) ** 2 + (ex + 0.4 * rx) ** 2 <= (0.28 * rx) ** 2

    body_color = rng.uniform(0.6, 1.0, size=(n, 3))[:, :, None, None]
    img = np.where(body[:, None], body_color, img)
    img = np.where(dot[:, None], -1.0, img)
    return np.clip(img, -1.0, 1.0).astype(np.float32)


class SyntheticStructuredDataset(ImageDataset):
    def __init__(self, n: int, size: int, seed: int, shuffle_seed: int = 0):
        self.n, self.image_size, self.seed = n, size, seed
        self.shuffle_seed = shuffle_seed
        self.images = torch.from_numpy(render_structured(n, size, seed))

    def __len__(self) -> int:
        return self.n

    def get(self, indices) -> torch.Tensor:
        return self.images[torch.as_tensor(np.asarray(indices), dtype=torch.long)]

    def fingerprint(self) -> dict:
        return {
            "source": "synthetic_structured",
            "count": self.n,
            "image_size": self.image_size,
            "seed": self.seed,
            "shuffle_seed": self.shuffle_seed,
            "preprocessing": "procedural",
        }


def synthetic_structured(n: int, size: int, seed: int, shuffle_seed: int = 0) -> SyntheticStructuredDataset:
    return SyntheticStructuredDataset(n, size, seed, shuffle_seed)


class BatchStream:
    """Cyclic batches over a dataset, reshuffled every epoch.

    Epoch ``e`` visits ``rng([seed, e]).permutation(len)`` in consecutive
    batches; the last batch of an epoch is topped up from the start of the
    same epoch's order, so every batch is full and an epoch spans
    ``ceil(len / batch_size)`` batches. The position is two integers, which is
    what checkpoints store.
    """

    def __init__(self, dataset: ImageDataset, batch_size: int, seed: int, epoch: int = 0, cursor: int = 0):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = epoch
        self.cursor = cursor
        self._order_epoch = None
        self._order = None

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.dataset) / self.batch_size)

    def _epoch_order(self) -> np.ndarray:
        if self._order_epoch != self.epoch:
            self._order = np.random.default_rng([self.seed, self.epoch]).permutation(len(self.dataset))
            self._order_epoch = self.epoch
        return self._order

    def next_batch(self) -> torch.Tensor:
        order = self._epoch_order()
        start = self.cursor * self.batch_size
        idx = np.arange(start, start + self.batch_size) % len(order)
        batch = self.dataset.get(order[idx])
        self.cursor += 1
        if self.cursor >= self.batches_per_epoch:
            self.epoch, self.cursor = self.epoch + 1, 0
        return batch

    def __iter__(self):
        while True:
            yield self.next_batch()

    def state_dict(self) -> dict:
        return {"epoch": self.epoch, "cursor": self.cursor, "seed": self.seed, "batch_size": self.batch_size}

    def load_state_dict(self, state: dict) -> None:
        if state["seed"] != self.seed or state["batch_size"] != self.batch_size:
            raise ValueError("batch stream state was saved with a different seed or batch size")
        self.epoch, self.cursor = state["epoch"], state["cursor"]


def open_dataset(spec: DatasetSpec) -> ImageDataset:
    if spec.source == "image_folder":
        return ImageFolderDataset(spec.root, spec.image_size, spec.shuffle_seed)
    return SyntheticStructuredDataset(spec.n_samples, spec.image_size, spec.synthetic_seed, spec.shuffle_seed)
