"""Adversarial training loop: one discriminator and one generator update per
iteration, in that order, with RMSprop and per-epoch checkpoints."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .dataset import DatasetFile
from .errors import ConfigError, NumericalError, ShapeMismatchError
from .losses import GeneratorLosses, LossWeights, d_loss, g_losses, kl_anneal_weight
from .model import BioMimeModel, muap_to_tensor

METRIC_COLUMNS = ("iteration", "epoch", "L_D", "L_GAN", "L_KL", "L_cyclic", "L_G", "lambda2", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    rms_decay: float = 0.99
    rms_epsilon: float = 1e-8
    checkpoint_every: int = 1  # epochs; first and last are always written
    max_iterations: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class TrainResult:
    iterations: int
    metrics_path: Path
    checkpoint_paths: list[Path]
    model: BioMimeModel


class _BatchSampler:
    """Seed-determined batch order plus same-MU condition pairing."""

    def __init__(self, data: DatasetFile, mu_ids: list[int], seed: int):
        self.data = data
        self.indices = np.concatenate([data.indices_for_mu(m) for m in mu_ids])
        if self.indices.size == 0:
            raise ConfigError("train split is empty")
        self.by_mu = {int(m): data.indices_for_mu(m) for m in mu_ids}
        self.rng = np.random.default_rng(seed)

    def epoch_batches(self, batch_size: int):
        perm = self.rng.permutation(self.indices.size)
        for start in range(0, perm.size, batch_size):
            yield self.indices[perm[start : start + batch_size]]

    def partner_conditions(self, batch: np.ndarray) -> np.ndarray:
        """Conditions of another randomly chosen record of the same MU."""
        out = np.empty((batch.size, 6), dtype=np.float64)
        for j, idx in enumerate(batch):
            peers = self.by_mu[int(self.data.mu_ids[idx])]
            if peers.size == 1:
                out[j] = self.data.conditions[idx]
                continue
            pick = int(peers[self.rng.integers(peers.size)])
            while pick == idx:
                pick = int(peers[self.rng.integers(peers.size)])
            out[j] = self.data.conditions[pick]
        return out

    def random_conditions(self, n: int) -> np.ndarray:
        return self.rng.uniform(0.5, 1.0, size=(n, 6))


def train(
    data: DatasetFile,
    train_mu_ids: list[int],
    model: BioMimeModel,
    cfg: TrainConfig,
    weights: LossWeights,
    out_dir,
) -> TrainResult:
    """Run the full loop; returns the trained model plus metric/checkpoint paths."""
    if (data.rows, data.cols, data.time_samples) != (
        model.cfg.rows,
        model.cfg.cols,
        model.cfg.time_samples,
    ):
        raise ShapeMismatchError(
            f"dataset grid {data.rows}x{data.cols}x{data.time_samples} does not match model "
            f"{model.cfg.rows}x{model.cfg.cols}x{model.cfg.time_samples}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sampler = _BatchSampler(data, train_mu_ids, cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed + 1)
    dtype = model.cfg.torch_dtype

    opt_d = torch.optim.RMSprop(
        model.discriminator_parameters(), lr=cfg.learning_rate, alpha=cfg.rms_decay, eps=cfg.rms_epsilon
    )
    opt_g = torch.optim.RMSprop(
        model.generator_parameters(), lr=cfg.learning_rate, alpha=cfg.rms_decay, eps=cfg.rms_epsilon
    )

    metrics_path = out_dir / "metrics.csv"
    checkpoints: list[Path] = []
    iteration = 0
    stop = False
    with open(metrics_path, "w", newline="") as mf:
        writer = csv.writer(mf)
        writer.writerow(METRIC_COLUMNS)
        for epoch in range(1, cfg.epochs + 1):
            epoch_t0 = time.perf_counter()
            for batch in sampler.epoch_batches(cfg.batch_size):
                iteration += 1
                x0 = muap_to_tensor(data.muaps[batch], dtype)
                c0 = torch.from_numpy(data.conditions[batch]).to(dtype)
                cs = torch.from_numpy(sampler.partner_conditions(batch)).to(dtype)
                cr = torch.from_numpy(sampler.random_conditions(batch.size)).to(dtype)

                # Discriminator update: real+true, fake+target, real+random.
                with torch.no_grad():
                    stats = model.encode(x0)
                    noise = torch.randn(stats.mu.shape, generator=noise_gen, dtype=dtype)
                    z = stats.mu + torch.exp(0.5 * stats.logvar) * noise
                    fake = model.decode(z, cs)
                rho_r = model.discriminate(x0, c0)
                rho_f1 = model.discriminate(fake, cs)
                rho_f2 = model.discriminate(x0, cr)
                l_d = d_loss(rho_r, rho_f1, rho_f2)
                if not torch.isfinite(l_d):
                    raise NumericalError(f"non-finite discriminator loss at iteration {iteration}")
                opt_d.zero_grad(set_to_none=True)
                l_d.backward()
                opt_d.step()

                # Generator update.
                lambda2 = kl_anneal_weight(iteration, epoch, weights)
                try:
                    gl: GeneratorLosses = g_losses(x0, c0, cs, model, lambda2, weights, noise_gen)
                except NumericalError as exc:
                    raise NumericalError(f"iteration {iteration}: {exc}") from None
                opt_g.zero_grad(set_to_none=True)
                gl.total.backward()
                opt_g.step()

                writer.writerow(
                    [
                        iteration,
                        epoch,
                        f"{l_d.item():.10g}",
                        f"{gl.gan.item():.10g}",
                        f"{gl.kl.item():.10g}",
                        f"{gl.cyclic.item():.10g}",
                        f"{gl.total.item():.10g}",
                        f"{lambda2:.10g}",
                        f"{time.perf_counter() - epoch_t0:.3f}",
                    ]
                )
                if cfg.max_iterations is not None and iteration >= cfg.max_iterations:
                    stop = True
                    break
            if epoch == 1 or epoch == cfg.epochs or epoch % cfg.checkpoint_every == 0 or stop:
                path = out_dir / f"checkpoint_ep{epoch:05d}.bmck"
                save_checkpoint(model, path, iteration)
                checkpoints.append(path)
            if stop:
                break
    return TrainResult(iteration, metrics_path, checkpoints, model)
