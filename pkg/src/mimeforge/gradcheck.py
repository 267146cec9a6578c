"""Finite-difference verification of analytic gradients.

The checker is deliberately independent of the autodiff backend: it re-runs
the forward computation with coordinate-wise central perturbations and
compares against whatever `backward` produced. Coordinates are subsampled
(seeded) so whole-model checks stay fast while failures remain reproducible.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping

import numpy as np
import torch

from .errors import NumericalError

DEFAULT_EPS = {torch.float64: 1e-4, torch.float32: 1e-2}


def grad_check(
    computation: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    eps: float | None = None,
    min_coords: int = 64,
    seed: int = 0,
) -> float:
    """Return the worst relative error between analytic and numeric gradients.

    `computation` must return a scalar loss built from `params` (leaf tensors
    with requires_grad). At least `min_coords` coordinates per parameter are
    probed (all of them for small parameters).

    Piecewise-linear activations (PReLU/LeakyReLU) make central differences
    unreliable when a perturbation crosses a kink: the averaged slope differs
    from both one-sided slopes. When the central difference disagrees, the
    coordinate is re-judged against the [backward, forward] one-sided bracket;
    a correct gradient is one of the adjoining piece slopes and falls inside,
    while a wrong gradient stays outside on the (vast majority of) smooth
    coordinates.
    """
    loss = computation()
    if loss.dim() != 0:
        raise ValueError("grad_check requires a scalar-valued computation")
    if not torch.isfinite(loss):
        raise NumericalError("grad_check: non-finite loss")
    for p in params.values():
        if p.grad is not None:
            p.grad = None
    loss.backward()
    loss0 = loss.item()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        grad = p.grad
        analytic = torch.zeros_like(p) if grad is None else grad
        h = DEFAULT_EPS[p.dtype] if eps is None else eps
        n = p.numel()
        if n <= min_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=min_coords, replace=False)
        flat = p.data.view(-1)
        a_flat = analytic.view(-1)
        for idx in coords:
            idx = int(idx)
            orig = flat[idx].item()
            flat[idx] = orig + h
            with torch.no_grad():
                up = computation()
            flat[idx] = orig - h
            with torch.no_grad():
                down = computation()
            flat[idx] = orig
            if not (torch.isfinite(up) and torch.isfinite(down)):
                raise NumericalError(f"grad_check: non-finite loss while perturbing {name}[{idx}]")
            numeric = (up.item() - down.item()) / (2.0 * h)
            a = a_flat[idx].item()
            denom = max(abs(a), abs(numeric), 1e-8)
            rel = abs(a - numeric) / denom
            if rel > 1e-5:
                fwd = (up.item() - loss0) / h
                bwd = (loss0 - down.item()) / h
                pad = 1e-4 * max(1.0, abs(fwd), abs(bwd))
                if min(fwd, bwd) - pad <= a <= max(fwd, bwd) + pad:
                    rel = 0.0
            if rel > worst:
                worst = rel
    return worst


def run_layer_checks(seed: int = 0) -> dict[str, float]:
    """Finite-difference verification of every layer family used in the model.

    Runs in float64 on a shrunken architecture; returns the worst relative
    error per family. Inputs are nudged away from activation kinks so central
    differences stay on one linear piece.
    """
    from . import ops  # local imports keep this module usable standalone
    from .model import ModelConfig, TimeScale, build_model

    torch.manual_seed(seed)
    f64 = torch.float64
    results: dict[str, float] = {}

    def away_from_kink(shape):
        x = torch.randn(*shape, dtype=f64)
        return x + 0.2 * torch.sign(x)

    x = away_from_kink((2, 3, 8, 5, 6))
    k3 = torch.randn(4, 3, 3, 3, 3, dtype=f64, requires_grad=True)
    b3 = torch.randn(4, dtype=f64, requires_grad=True)
    results["conv3d"] = grad_check(
        lambda: (ops.conv3d(x, k3, b3, stride=(2, 1, 1)) ** 2).mean(), {"k": k3, "b": b3}, seed=seed
    )

    k1 = torch.randn(5, 3, 1, 1, 1, dtype=f64, requires_grad=True)
    b1 = torch.randn(5, dtype=f64, requires_grad=True)
    results["pointwise_conv"] = grad_check(
        lambda: (ops.pointwise_conv(x, k1, b1) ** 2).mean(), {"k": k1, "b": b1}, seed=seed
    )

    xin = torch.randn(4, 12, dtype=f64)
    w = torch.randn(7, 12, dtype=f64, requires_grad=True)
    b = torch.randn(7, dtype=f64, requires_grad=True)
    results["linear"] = grad_check(
        lambda: ((ops.linear(xin, w, b) - 1.0) ** 2).mean(), {"w": w, "b": b}, seed=seed
    )

    xp = away_from_kink((3, 40)).requires_grad_(True)
    slope = torch.tensor([0.21], dtype=f64, requires_grad=True)
    results["prelu"] = grad_check(
        lambda: (ops.prelu(xp, slope) ** 2).mean(), {"x": xp, "slope": slope}, seed=seed
    )

    xl = away_from_kink((3, 40)).requires_grad_(True)
    results["leaky_relu"] = grad_check(
        lambda: (ops.leaky_relu(xl, 0.03) ** 2).mean(), {"x": xl}, seed=seed
    )

    cfg_small = ModelConfig(
        rows=6, cols=8, time_samples=16, latent_dim=4, condition_embed_dim=8,
        base_channels=2, n_experts=4, gate_hidden_dim=8, dtype="float64",
    )
    gate_model = TimeScale(cfg_small).double()
    cond = (torch.rand(3, 6, dtype=f64) * 0.5 + 0.5).requires_grad_(True)
    gate_params = {f"gate.{n}": p for n, p in gate_model.gate.named_parameters()}
    results["softmax_gate"] = grad_check(
        lambda: (gate_model.gate(cond) ** 2).sum(), {"cond": cond, **gate_params}, seed=seed
    )

    xr = torch.randn(1, 2, 12, 3, 4, dtype=f64, requires_grad=True)
    results["temporal_resample"] = grad_check(
        lambda: (ops.temporal_resample(xr, 0.75) ** 2).sum(), {"x": xr}, seed=seed
    )

    xt = torch.randn(2, 2, 10, 3, 4, dtype=f64, requires_grad=True)
    cond2 = cond.detach()[:2]
    ts_params = {f"ts.{n}": p for n, p in gate_model.named_parameters()}
    results["time_scale"] = grad_check(
        lambda: (gate_model(xt, cond2, 14) ** 2).mean(), {"x": xt, **ts_params}, seed=seed
    )

    mu = torch.randn(4, 6, dtype=f64, requires_grad=True)
    logvar = torch.randn(4, 6, dtype=f64, requires_grad=True)
    noise = torch.randn(4, 6, dtype=f64)
    results["reparameterize"] = grad_check(
        lambda: (ops.reparameterize(mu, logvar, noise) ** 2).mean(), {"mu": mu, "logvar": logvar}, seed=seed
    )

    model = build_model(cfg_small, seed=seed)
    z = torch.randn(2, cfg_small.latent_dim, dtype=f64, requires_grad=True)
    cdec = (torch.rand(2, 6, dtype=f64) * 0.5 + 0.5).requires_grad_(True)
    dec_params = {f"dec.{n}": p for n, p in model.decoder.named_parameters()}
    dec_params.update({f"proj.{n}": p for n, p in model.cond_proj.named_parameters()})
    results["decode_path"] = grad_check(
        lambda: (model.decode(z, cdec) ** 2).mean(), {"z": z, "c": cdec, **dec_params}, seed=seed
    )
    return results
