"""Adversarial and deshuffling losses.

All functions take raw (pre-sigmoid / pre-softmax) scores. Log-probabilities
go through softplus and log-softmax so saturated critics stay finite.
Every reduction is a batch mean.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import torch
import torch.nn.functional as F

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.2


@dataclass(frozen=True)
class LossTerms:
    d_adv: float
    g_adv: float
    v_disc: float | None
    v_gen: float | None
    d_total: float
    g_total: float

    def as_dict(self) -> dict:
        return asdict(self)


def _check_finite(name: str, t: torch.Tensor) -> None:
    if not torch.isfinite(t).all():
        raise ValueError(f"{name} contains non-finite values")


def _check_scores(c_real: torch.Tensor, c_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    c_real, c_fake = c_real.reshape(-1), c_fake.reshape(-1)
    if c_real.numel() == 0 or c_fake.numel() == 0:
        raise ValueError("critic score batches must be nonempty")
    _check_finite("c_real", c_real)
    _check_finite("c_fake", c_fake)
    return c_real, c_fake


def _relativistic(c_real, c_fake):
    c_real, c_fake = _check_scores(c_real, c_fake)
    return c_real - c_fake.mean(), c_fake - c_real.mean()


# -log(sigmoid(x)) == softplus(-x); -log(1 - sigmoid(x)) == softplus(x)

def standard_gan_losses(c_real: torch.Tensor, c_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Non-saturating sigmoid cross-entropy GAN losses."""
    c_real, c_fake = _check_scores(c_real, c_fake)
    d_adv = F.softplus(-c_real).mean() + F.softplus(c_fake).mean()
    g_adv = F.softplus(-c_fake).mean()
    return d_adv, g_adv


def ras_losses(c_real: torch.Tensor, c_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Relativistic average sigmoid losses."""
    r, f = _relativistic(c_real, c_fake)
    d_adv = F.softplus(-r).mean() + F.softplus(f).mean()
    g_adv = F.softplus(-f).mean() + F.softplus(r).mean()
    return d_adv, g_adv


def rals_losses(c_real: torch.Tensor, c_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Relativistic average least-squares losses."""
    r, f = _relativistic(c_real, c_fake)
    d_adv = ((r - 1) ** 2).mean() + ((f + 1) ** 2).mean()
    g_adv = ((f - 1) ** 2).mean() + ((r + 1) ** 2).mean()
    return d_adv, g_adv


def rahinge_losses(c_real: torch.Tensor, c_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Relativistic average hinge losses."""
    r, f = _relativistic(c_real, c_fake)
    d_adv = F.relu(1 - r).mean() + F.relu(1 + f).mean()
    g_adv = F.relu(1 - f).mean() + F.relu(1 + r).mean()
    return d_adv, g_adv


ADVERSARIAL_LOSSES: dict[str, Callable[[torch.Tensor, torch.Tensor], tuple[torch.Tensor, torch.Tensor]]] = {
    "standard": standard_gan_losses,
    "ras": ras_losses,
    "rals": rals_losses,
    "rahinge": rahinge_losses,
}

RELATIVISTIC = frozenset({"ras", "rals", "rahinge"})


def adversarial_losses(variant: str, c_real: torch.Tensor, c_fake: torch.Tensor):
    try:
        fn = ADVERSARIAL_LOSSES[variant]
    except KeyError:
        raise ValueError(f"unknown loss variant {variant!r}; choose from {sorted(ADVERSARIAL_LOSSES)}") from None
    return fn(c_real, c_fake)


def deshuffle_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy between softmax(logits) and one-hot permutation labels."""
    if logits.dim() != 2:
        raise ValueError(f"logits must be N x K, got shape {tuple(logits.shape)}")
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device).reshape(-1)
    n, k = logits.shape
    if labels.numel() != n:
        raise ValueError(f"{n} logit rows but {labels.numel()} labels")
    if n and (int(labels.min()) < 0 or int(labels.max()) >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    _check_finite("logits", logits)
    log_probs = F.log_softmax(logits, dim=1)
    return -log_probs.gather(1, labels[:, None]).mean()


def weighted_totals(d_adv, g_adv, v_disc, v_gen, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA):
    """Weighted totals ``d_adv + alpha * v_disc`` and ``g_adv + beta * v_gen``.

    A zero weight drops its term entirely, so ``alpha = beta = 0`` returns
    the adversarial losses themselves. Works on floats and tensors alike.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be nonnegative")
    for name, value in (("d_adv", d_adv), ("g_adv", g_adv), ("v_disc", v_disc), ("v_gen", v_gen)):
        if value is not None and not bool(torch.isfinite(torch.as_tensor(value)).all()):
            raise ValueError(f"{name} is not finite")
    d_total = d_adv if (alpha == 0 or v_disc is None) else d_adv + alpha * v_disc
    g_total = g_adv if (beta == 0 or v_gen is None) else g_adv + beta * v_gen
    return d_total, g_total


def combine(d_adv, g_adv, v_disc, v_gen, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA) -> LossTerms:
    """Scalar :class:`LossTerms` record; see :func:`weighted_totals`."""
    d_total, g_total = weighted_totals(d_adv, g_adv, v_disc, v_gen, alpha, beta)

    def f(x):
        return None if x is None else float(x)

    return LossTerms(f(d_adv), f(g_adv), f(v_disc), f(v_gen), f(d_total), f(g_total))
