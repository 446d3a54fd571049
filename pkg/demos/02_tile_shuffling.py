"""Cut synthetic images into a 3x3 grid, shuffle the tiles, then put them back.

Writes demo_shuffle.png (top row originals, bottom row shuffled).
Run: python3 demos/02_tile_shuffling.py
"""
import torch

from deshufflegan.dataio import synthetic_structured
from deshufflegan.permset import generate_set
from deshufflegan.shuffler import compute_geometry, deshuffle, shuffle
from deshufflegan.trainer import save_grid

images = synthetic_structured(6, 48, seed=0).images
pset = generate_set(9, 30, seed=1)
result = shuffle(images, pset, torch.Generator().manual_seed(0))

geo = result.geometry
# Sizes that are not a multiple of 3 lose a thin border that is zero-padded back.
print("128x128 input ->", compute_geometry(128, 128))
print(f"48x48 input -> {geo.cropped_h}x{geo.cropped_w} crop of {geo.tile_h}px tiles, pads {geo.pads}")
for label in result.labels.tolist():
    print(f"  label {label:2d} -> order {pset.permutations[label]}")

restored = deshuffle(result.shuffled, result.labels, pset, geo)
print("exact inverse on the cropped region:", torch.equal(restored, torch.nn.functional.pad(
    images[..., geo.pad_top:48 - geo.pad_bottom, geo.pad_left:48 - geo.pad_right], geo.pads)))

save_grid(torch.cat([images, result.shuffled]), "demo_shuffle.png", nrow=6)
print("wrote demo_shuffle.png")
