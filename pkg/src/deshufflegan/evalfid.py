"""Fréchet distance between Gaussian fits of image features."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

EIGEN_TOLERANCE = 1e-6


class NumericalError(ArithmeticError):
    pass


@dataclass
class FeatureSet:
    features: np.ndarray
    extractor_id: str = "unknown"


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray


class FeatureExtractor(Protocol):
    extractor_id: str

    def __call__(self, images: torch.Tensor) -> np.ndarray: ...


class ToyExtractor:
    """Seeded random features: average-pool to a small grid, project, tanh.

    Cheap and deterministic; stands in for a pretrained network in tests.
    """

    def __init__(self, dim: int = 32, grid: int = 8, channels: int = 3, seed: int = 0, gain: float = 2.0):
        self.dim, self.grid, self.seed = dim, grid, seed
        rng = np.random.default_rng(seed)
        fan_in = channels * grid * grid
        self.weight = rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, dim))
        self.bias = rng.normal(0.0, 0.1, size=dim)
        self.extractor_id = f"toy-d{dim}-g{grid}-s{seed}"

    def __call__(self, images: torch.Tensor) -> np.ndarray:
        pooled = F.adaptive_avg_pool2d(images.detach().double(), self.grid).flatten(1).numpy()
        return np.tanh(pooled @ self.weight + self.bias)


class ModuleExtractor:
    """Adapter for any torch feature network (e.g. a pretrained Inception pool layer).

    Images arrive in [-1, 1]; ``preprocess`` can map them into whatever
    range and size the network expects.
    """

    def __init__(self, module: nn.Module, extractor_id: str, preprocess=None, batch_size: int = 64):
        self.module = module.eval()
        self.extractor_id = extractor_id
        self.preprocess = preprocess
        self.batch_size = batch_size

    @torch.no_grad()
    def __call__(self, images: torch.Tensor) -> np.ndarray:
        out = []
        for chunk in images.split(self.batch_size):
            if self.preprocess is not None:
                chunk = self.preprocess(chunk)
            out.append(self.module(chunk).flatten(1).double().cpu().numpy())
        return np.concatenate(out)


def fit_gaussian(f: FeatureSet | np.ndarray) -> GaussianStats:
    x = np.asarray(f.features if isinstance(f, FeatureSet) else f, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need an N x D feature matrix with N >= 2, got shape {x.shape}")
    sigma = np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    return GaussianStats(x.mean(axis=0), (sigma + sigma.T) / 2)


def _psd_eigvals(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh((m + m.T) / 2)
    tol = EIGEN_TOLERANCE * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.size and w.min() < -tol:
        raise NumericalError(f"{what} has eigenvalue {w.min():.3e} below -{tol:.1e}; not positive semidefinite")
    return np.clip(w, 0.0, None), v


def trace_sqrt_product(sigma1: np.ndarray, sigma2: np.ndarray) -> float:
    """Tr((sigma1 sigma2)^(1/2)) for symmetric PSD inputs.

    Uses Tr((A B)^(1/2)) = Tr((A^(1/2) B A^(1/2))^(1/2)); the inner matrix is
    symmetric, so two symmetric eigendecompositions suffice.
    """
    w1, v1 = _psd_eigvals(sigma1, "sigma1")
    root1 = (v1 * np.sqrt(w1)) @ v1.T
    w, _ = _psd_eigvals(root1 @ sigma2 @ root1, "sigma1^1/2 sigma2 sigma1^1/2")
    return float(np.sqrt(w).sum())


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    mu1, mu2 = np.asarray(a.mu, dtype=np.float64), np.asarray(b.mu, dtype=np.float64)
    s1, s2 = np.atleast_2d(a.sigma).astype(np.float64), np.atleast_2d(b.sigma).astype(np.float64)
    if mu1.shape != mu2.shape or s1.shape != s2.shape or s1.shape != (mu1.size, mu1.size):
        raise ValueError(f"dimension mismatch: mu {mu1.shape} vs {mu2.shape}, sigma {s1.shape} vs {s2.shape}")
    diff = mu1 - mu2
    value = diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * trace_sqrt_product(s1, s2)
    if not np.isfinite(value):
        raise NumericalError(
            f"non-finite Fréchet distance (|dmu|^2={diff @ diff}, tr1={np.trace(s1)}, tr2={np.trace(s2)})"
        )
    return max(float(value), 0.0)


def features_of(images: torch.Tensor, extractor: FeatureExtractor, batch_size: int = 256) -> FeatureSet:
    try:
        feats = np.concatenate([np.asarray(extractor(chunk)) for chunk in images.split(batch_size)])
    except Exception as exc:
        raise RuntimeError(f"feature extractor {getattr(extractor, 'extractor_id', extractor)!r} failed") from exc
    return FeatureSet(feats, getattr(extractor, "extractor_id", "unknown"))


def fid_between(images_a: torch.Tensor, images_b: torch.Tensor, extractor: FeatureExtractor) -> float:
    return frechet_distance(
        fit_gaussian(features_of(images_a, extractor)),
        fit_gaussian(features_of(images_b, extractor)),
    )


@torch.no_grad()
def generate_images(generator: nn.Module, n: int, seed: int, batch_size: int = 256) -> torch.Tensor:
    """``n`` images from z ~ N(0, I) drawn with its own seeded generator."""
    z_dim = generator.spec.z_dim
    z = torch.randn(n, z_dim, generator=torch.Generator().manual_seed(seed))
    was_training = generator.training
    generator.eval()
    try:
        return torch.cat([generator(chunk) for chunk in z.split(batch_size)])
    finally:
        generator.train(was_training)


def evaluate(generator: nn.Module, real_data, extractor: FeatureExtractor, n_samples: int = 10_000, seed: int = 0) -> float:
    """FID-style score of ``n_samples`` generated images against the first ``n_samples`` real ones."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    fake = generate_images(generator, n_samples, seed)
    real = real_data.head(n_samples)
    return fid_between(real, fake, extractor)


def report_record(checkpoint_id: str, extractor_id: str, n_samples: int, seed: int, fid: float) -> str:
    return json.dumps(
        {"checkpoint_id": checkpoint_id, "extractor_id": extractor_id, "n_samples": n_samples, "seed": seed, "fid": fid}
    )
