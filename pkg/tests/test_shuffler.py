import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from deshufflegan.permset import PermutationSet, generate_set
from deshufflegan.shuffler import (
    compute_geometry,
    crop_and_pad,
    deshuffle,
    shuffle,
    shuffle_with_labels,
)

PSET = generate_set(9, 30, seed=1)
IDENTITY_ONLY = PermutationSet((tuple(range(9)), (1, 0, 2, 3, 4, 5, 6, 7, 8)), 9, 0)


def reference_crop_pad(x):
    """Slicing-based crop/pad, independent of the tile reshapes."""
    h, w = x.shape[-2:]
    ch, cw = 3 * (h // 3), 3 * (w // 3)
    top, left = (h - ch) // 2, (w - cw) // 2
    out = torch.zeros_like(x)
    out[..., top:top + ch, left:left + cw] = x[..., top:top + ch, left:left + cw]
    return out


def reference_shuffle(x, order):
    """Loop over slots: slot i (row-major) gets source tile order[i]."""
    h, w = x.shape[-2:]
    ch, cw = 3 * (h // 3), 3 * (w // 3)
    top, left = (h - ch) // 2, (w - cw) // 2
    th, tw = ch // 3, cw // 3
    out = torch.zeros_like(x)
    for slot, src in enumerate(order):
        dr, dc = divmod(slot, 3)
        sr, sc = divmod(int(src), 3)
        out[..., top + dr * th:top + (dr + 1) * th, left + dc * tw:left + (dc + 1) * tw] = \
            x[..., top + sr * th:top + (sr + 1) * th, left + sc * tw:left + (sc + 1) * tw]
    return out


@pytest.mark.parametrize(
    "h, w, cropped, tile, pads",
    [
        (128, 128, (126, 126), (42, 42), (1, 1, 1, 1)),
        (126, 126, (126, 126), (42, 42), (0, 0, 0, 0)),
        (9, 12, (9, 12), (3, 4), (0, 0, 0, 0)),
        (10, 11, (9, 9), (3, 3), (0, 1, 1, 1)),
    ],
)
def test_geometry(h, w, cropped, tile, pads):
    g = compute_geometry(h, w)
    assert (g.cropped_h, g.cropped_w) == cropped
    assert (g.tile_h, g.tile_w) == tile
    assert g.pads == pads
    assert g.pad_top + g.cropped_h + g.pad_bottom == h
    assert g.pad_left + g.cropped_w + g.pad_right == w


@pytest.mark.parametrize("h, w", [(2, 9), (9, 2)])
def test_geometry_rejects_tiny(h, w):
    with pytest.raises(ValueError):
        compute_geometry(h, w)


def test_pixel_tiles_example():
    pset = PermutationSet((tuple(range(9)), (1, 2, 0, 4, 5, 3, 7, 8, 6)), 9, 0)
    x = torch.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    out = shuffle_with_labels(x, [1], pset).shuffled
    assert out.tolist() == [[[[2, 3, 1], [5, 6, 4], [8, 9, 7]]]]


def test_identity_permutation_is_crop_pad():
    x = torch.randn(4, 3, 20, 20)
    res = shuffle_with_labels(x, [0, 0, 0, 0], IDENTITY_ONLY)
    assert torch.equal(res.shuffled, reference_crop_pad(x))
    assert torch.equal(crop_and_pad(x), reference_crop_pad(x))


def test_identity_only_set_gives_zero_labels():
    single = PermutationSet((tuple(range(9)),), 9, 0)
    x = torch.randn(5, 1, 9, 9)
    res = shuffle(x, single, torch.Generator().manual_seed(0))
    assert res.labels.tolist() == [0] * 5
    assert torch.equal(res.shuffled, x)


def test_matches_reference_on_every_permutation():
    x = torch.randn(30, 2, 17, 14)
    labels = torch.arange(30)
    out = shuffle_with_labels(x, labels, PSET).shuffled
    for n in range(30):
        assert torch.equal(out[n], reference_shuffle(x[n], PSET.permutations[n]))


def test_determinism_and_shape():
    x = torch.randn(8, 3, 50, 50)
    a = shuffle(x, PSET, torch.Generator().manual_seed(7))
    b = shuffle(x, PSET, torch.Generator().manual_seed(7))
    assert torch.equal(a.shuffled, b.shuffled) and torch.equal(a.labels, b.labels)
    assert a.shuffled.shape == x.shape
    assert a.labels.shape == (8,)


def test_round_trip_divisible():
    x = torch.randn(2, 3, 126, 126)
    res = shuffle(x, PSET, torch.Generator().manual_seed(1))
    assert torch.equal(deshuffle(res.shuffled, res.labels, PSET, res.geometry), x)


def test_round_trip_with_pad_ring():
    x = torch.randn(1, 1, 128, 128)
    res = shuffle(x, PSET, torch.Generator().manual_seed(2))
    back = deshuffle(res.shuffled, res.labels, PSET, res.geometry)
    assert torch.equal(back[..., 1:127, 1:127], x[..., 1:127, 1:127])
    ring = torch.ones(128, 128, dtype=torch.bool)
    ring[1:127, 1:127] = False
    assert (back[..., ring] == 0).all()
    assert torch.equal(back, reference_crop_pad(x))


def test_deshuffle_identity_labels():
    x = torch.randn(3, 3, 12, 12)
    assert torch.equal(deshuffle(x, [0, 0, 0], PSET), x)


def test_inverse_for_every_permutation():
    grid = torch.arange(9.0).reshape(1, 1, 3, 3).repeat(30, 1, 1, 1)
    labels = torch.arange(30)
    shuffled = shuffle_with_labels(grid, labels, PSET).shuffled
    assert torch.equal(deshuffle(shuffled, labels, PSET), grid)


def test_rejects_bad_inputs():
    x = torch.randn(2, 3, 12, 12)
    with pytest.raises(ValueError):
        deshuffle(x, [0, 30], PSET)
    with pytest.raises(ValueError):
        shuffle_with_labels(x, [0, -1], PSET)
    with pytest.raises(ValueError):
        shuffle(x, generate_set(4, 3), torch.Generator())
    with pytest.raises(ValueError):
        shuffle(torch.randn(3, 12, 12), PSET, torch.Generator())


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(3, 20), st.integers(3, 20), st.integers(0, 2**31))
def test_pixel_conservation(n, c, h, w, seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(n, c, h, w, generator=g)
    res = shuffle(x, PSET, g)
    geo = res.geometry
    crop = (slice(None), slice(None), slice(geo.pad_top, geo.pad_top + geo.cropped_h),
            slice(geo.pad_left, geo.pad_left + geo.cropped_w))
    for i in range(n):
        assert torch.equal(res.shuffled[i][crop[1:]].flatten().sort().values, x[i][crop[1:]].flatten().sort().values)
    assert res.shuffled.shape == x.shape


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_linearity(a, b, seed):
    g = torch.Generator().manual_seed(seed)
    x, y = torch.randn(3, 2, 10, 13, generator=g, dtype=torch.float64), torch.randn(3, 2, 10, 13, generator=g, dtype=torch.float64)
    labels = torch.randint(30, (3,), generator=g)
    lhs = shuffle_with_labels(a * x + b * y, labels, PSET).shuffled
    rhs = a * shuffle_with_labels(x, labels, PSET).shuffled + b * shuffle_with_labels(y, labels, PSET).shuffled
    assert torch.allclose(lhs, rhs, atol=1e-12)


def test_jacobian_is_fixed_selection_matrix():
    x = torch.randn(2, 1, 7, 8, dtype=torch.float64)
    labels = torch.tensor([5, 17])

    def f(inp):
        return shuffle_with_labels(inp, labels, PSET).shuffled.flatten()

    eps = 1e-4
    flat = x.flatten()
    fd = torch.zeros(flat.numel(), flat.numel(), dtype=torch.float64)
    for j in range(flat.numel()):
        e = torch.zeros_like(flat)
        e[j] = eps
        fd[:, j] = (f((flat + e).view_as(x)) - f((flat - e).view_as(x))) / (2 * eps)
    auto = torch.autograd.functional.jacobian(f, x).reshape(flat.numel(), flat.numel())
    assert torch.allclose(fd, auto, atol=1e-8)
    rounded = fd.round()
    assert torch.allclose(fd, rounded, atol=1e-8)
    assert set(rounded.unique().tolist()) <= {0.0, 1.0}
    assert (rounded.sum(dim=1) <= 1).all()
    assert (rounded.sum(dim=0) <= 1).all()


def test_label_distribution_uniform():
    g = torch.Generator().manual_seed(11)
    x = torch.zeros(3000, 1, 3, 3)
    counts = np.zeros(30)
    for _ in range(10):
        counts += np.bincount(shuffle(x, PSET, g).labels.numpy(), minlength=30)
    assert stats.chisquare(counts).pvalue > 1e-3
