"""Generation-accuracy metrics: normalized RMSE and latent informativeness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .conditions import CONDITION_NAMES
from .errors import ConfigError, DegenerateInputError, ShapeMismatchError

THRESHOLDS = np.arange(1, 11) * 0.01  # relative-error levels 0.01 .. 0.10


def nrmse(x: np.ndarray, x_tilde: np.ndarray) -> float:
    """Root-mean-square error normalized by the ground truth's range, in %.

    The denominator comes from the first argument (the ground truth), so the
    metric is deliberately asymmetric in its normalization.
    """
    x = np.asarray(x, dtype=np.float64)
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if x.shape != x_tilde.shape:
        raise ShapeMismatchError(f"nrmse shapes differ: {x.shape} vs {x_tilde.shape}")
    rng = float(x.max() - x.min())
    if rng == 0.0:
        raise DegenerateInputError("nrmse is undefined for a constant ground-truth sample")
    return float(np.sqrt(np.mean((x - x_tilde) ** 2)) / rng * 100.0)


@dataclass(frozen=True)
class RegressorConfig:
    """Probe MLP used to predict each condition from the latent mean."""

    hidden_layers: int = 2
    hidden_dim: int = 256
    epochs: int = 400
    learning_rate: float = 1e-3
    weight_decay: float = 3e-3  # pulls the probe toward simple fits; the
    # interpolation regime otherwise buries the signal in overfit wiggle
    train_frac: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.hidden_layers <= 6:
            raise ConfigError(f"hidden_layers must be in 2..6, got {self.hidden_layers}")


@dataclass
class InformativenessReport:
    scores: np.ndarray  # (6,) percent accuracy per condition
    median: float
    chance_scores: np.ndarray | None = None  # permuted-label baseline, if computed
    chance_median: float | None = None

    def as_rows(self) -> list[dict]:
        rows = []
        for i, name in enumerate(CONDITION_NAMES):
            row = {"condition": name, "score_percent": float(self.scores[i])}
            if self.chance_scores is not None:
                row["chance_percent"] = float(self.chance_scores[i])
            rows.append(row)
        return rows


def _fit_regressor(x: torch.Tensor, y: torch.Tensor, rc: RegressorConfig, gen: torch.Generator) -> nn.Module:
    layers: list[nn.Module] = []
    dims = [x.shape[1]] + [rc.hidden_dim] * rc.hidden_layers + [1]
    for i in range(len(dims) - 1):
        lin = nn.Linear(dims[i], dims[i + 1]).double()
        bound = 1.0 / dims[i] ** 0.5
        with torch.no_grad():
            lin.weight.copy_((torch.rand(lin.weight.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)
            lin.bias.copy_((torch.rand(lin.bias.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)
        layers.append(lin)
        if i < len(dims) - 2:
            layers.append(nn.ReLU())
    net = nn.Sequential(*layers)
    opt = torch.optim.Adam(net.parameters(), lr=rc.learning_rate, weight_decay=rc.weight_decay)
    for _ in range(rc.epochs):
        opt.zero_grad(set_to_none=True)
        loss = ((net(x).squeeze(-1) - y) ** 2).mean()
        loss.backward()
        opt.step()
    return net


def _accuracy(pred: np.ndarray, true: np.ndarray) -> float:
    rel = np.abs(pred - true) / np.abs(true)
    return float(np.mean([(rel <= tau).mean() for tau in THRESHOLDS]) * 100.0)


def informativeness(
    latents: np.ndarray,
    conditions: np.ndarray,
    rc: RegressorConfig | None = None,
    with_chance: bool = False,
) -> InformativenessReport:
    """Regress each condition from the latent means; score = mean accuracy
    over the ten relative-error thresholds, per condition, plus the median.

    `with_chance` additionally trains on permuted labels to estimate the
    empirical chance level.
    """
    rc = rc or RegressorConfig()
    latents = np.asarray(latents, dtype=np.float64)
    conditions = np.asarray(conditions, dtype=np.float64)
    if latents.ndim != 2 or conditions.ndim != 2 or conditions.shape[1] != 6:
        raise ShapeMismatchError(
            f"expected (n, latent) and (n, 6) arrays, got {latents.shape} and {conditions.shape}"
        )
    n = latents.shape[0]
    if n < 100:
        raise ConfigError(f"informativeness needs >= 100 paired examples, got {n}")
    if np.any(np.abs(conditions) < 1e-9):
        raise DegenerateInputError("relative-error accuracy is undefined for near-zero conditions")

    rng = np.random.default_rng(rc.seed)
    perm = rng.permutation(n)
    n_train = int(round(rc.train_frac * n))
    tr, te = perm[:n_train], perm[n_train:]

    mu = latents[tr].mean(axis=0)
    sd = latents[tr].std(axis=0) + 1e-12
    xs = (latents - mu) / sd
    x_tr = torch.from_numpy(xs[tr])
    x_te = torch.from_numpy(xs[te])

    def run(cond_matrix: np.ndarray, seed_offset: int) -> np.ndarray:
        scores = np.zeros(6)
        for i in range(6):
            col = cond_matrix[:, i]
            if np.ptp(col) == 0.0:
                raise DegenerateInputError(f"condition '{CONDITION_NAMES[i]}' is constant")
            gen = torch.Generator().manual_seed(rc.seed + seed_offset + i)
            net = _fit_regressor(x_tr, torch.from_numpy(col[tr]), rc, gen)
            with torch.no_grad():
                pred = net(x_te).squeeze(-1).numpy()
            scores[i] = _accuracy(pred, col[te])
        return scores

    scores = run(conditions, seed_offset=0)
    report = InformativenessReport(scores, float(np.median(scores)))
    if with_chance:
        shuffled = conditions[rng.permutation(n)]
        chance = run(shuffled, seed_offset=1000)
        report.chance_scores = chance
        report.chance_median = float(np.median(chance))
    return report
