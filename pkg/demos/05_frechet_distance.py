"""Fréchet distance between feature Gaussians, from toy numbers to image sets.

Run: python3 demos/05_frechet_distance.py
"""
import numpy as np
import torch

from deshufflegan.dataio import synthetic_structured
from deshufflegan.evalfid import GaussianStats, ToyExtractor, fid_between, frechet_distance

# Diagonal covariances have a closed form: |mu1 - mu2|^2 + sum (sqrt(v1) - sqrt(v2))^2.
a = GaussianStats(np.zeros(2), np.diag([1.0, 4.0]))
b = GaussianStats(np.array([1.0, 0.0]), np.diag([4.0, 1.0]))
print("closed form:", 1.0 + (1 - 2) ** 2 + (2 - 1) ** 2, " computed:", frechet_distance(a, b))

# On images: two halves of one distribution score low, a degraded copy scores high.
images = synthetic_structured(2000, 48, seed=2).images
real, other = images[:1000], images[1000:]
extractor = ToyExtractor()
print("same distribution :", fid_between(real, other, extractor))
print("washed-out copy   :", fid_between(real, other * 0.5, extractor))
noise = torch.rand(other.shape, generator=torch.Generator().manual_seed(0)) * 2 - 1
print("pure noise        :", fid_between(real, noise, extractor))
