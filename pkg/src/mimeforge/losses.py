"""Loss terms and the KL-weight annealing schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from . import ops
from .errors import ConfigError, NumericalError
from .model import BioMimeModel, LatentStats

SCHEDULES = ("constant", "linear", "logistic")


@dataclass(frozen=True)
class LossWeights:
    """Objective weights: total = l1 * adversarial + l2 * KL + l3 * cycle.

    The KL weight anneals from 0 to `lambda2_max`: linearly over `anneal_n`
    iterations, or logistically in epochs with midpoint `anneal_x0` and
    steepness `anneal_k`.
    """

    lambda1: float = 10.0
    lambda2_max: float = 0.05
    lambda3: float = 0.5
    schedule: str = "linear"
    anneal_k: float = 1.0
    anneal_x0: float = 6.0
    anneal_n: int = 30000

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if min(self.lambda1, self.lambda2_max, self.lambda3) < 0:
            raise ConfigError("loss weights must be non-negative")


def kl_anneal_weight(iteration: int, epoch: int, w: LossWeights) -> float:
    """Current KL weight lambda2 = lambda2_max * base(schedule)."""
    if w.schedule == "constant":
        base = 1.0
    elif w.schedule == "linear":
        base = min(max(iteration / w.anneal_n, 0.0), 1.0)
    else:
        base = 1.0 / (1.0 + math.exp(-w.anneal_k * (epoch - w.anneal_x0)))
    return w.lambda2_max * base


def kl_loss(stats: LatentStats) -> torch.Tensor:
    """Mean over batch and latent dims of -(1 + logvar - mu^2 - exp(logvar)) / 2."""
    return (-(1.0 + stats.logvar - stats.mu**2 - torch.exp(stats.logvar)) / 2.0).mean()


def d_loss(rho_r: torch.Tensor, rho_f1: torch.Tensor, rho_f2: torch.Tensor) -> torch.Tensor:
    """0.1 * ((1 - rho_r)^2 + (rho_f1^2 + rho_f2^2) / 2), batch-averaged."""
    return 0.1 * (((1.0 - rho_r) ** 2).mean() + ((rho_f1**2).mean() + (rho_f2**2).mean()) / 2.0)


@dataclass
class GeneratorLosses:
    gan: torch.Tensor
    kl: torch.Tensor
    cyclic: torch.Tensor
    total: torch.Tensor


def g_losses(
    x0: torch.Tensor,
    c0: torch.Tensor,
    cs: torch.Tensor,
    model: BioMimeModel,
    lambda2: float,
    w: LossWeights,
    noise_gen: torch.Generator,
) -> GeneratorLosses:
    """Generator objective for one batch.

    x_tilde = decode(reparam(encode(x0)), cs) is scored against the
    discriminator at cs; x_hat = decode(reparam(encode(x_tilde)), c0) closes
    the cycle back to x0.
    """
    stats = model.encode(x0)
    z = ops.reparameterize(stats.mu, stats.logvar, _noise_like(stats.mu, noise_gen))
    x_tilde = model.decode(z, cs)
    stats2 = model.encode(x_tilde)
    z2 = ops.reparameterize(stats2.mu, stats2.logvar, _noise_like(stats2.mu, noise_gen))
    x_hat = model.decode(z2, c0)

    rho = model.discriminate(x_tilde, cs)
    l_gan = ((1.0 - rho) ** 2).mean()
    l_kl = kl_loss(stats)
    l_cyc = ((x0 - x_hat) ** 2).mean()
    total = w.lambda1 * l_gan + lambda2 * l_kl + w.lambda3 * l_cyc
    if not torch.isfinite(total):
        raise NumericalError(
            f"non-finite generator loss: gan={l_gan.item()}, kl={l_kl.item()}, cyclic={l_cyc.item()}"
        )
    return GeneratorLosses(l_gan, l_kl, l_cyc, total)


def _noise_like(t: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    return torch.randn(t.shape, generator=gen, dtype=t.dtype)
