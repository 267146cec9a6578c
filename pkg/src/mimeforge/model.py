"""Conditional generative network: encoder, condition projection, time-scaling
expert decoder, and conditional discriminator.

Tensors are (N, channels, time, rows, cols). The encoder halves time/rows/cols
over three strided stages, strides time only in stage four, and keeps shape in
stage five; the decoder mirrors that chain in reverse with trilinear resizes
and finishes with two upscaling blocks built around gated temporal-resampling
expert banks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import ops
from .errors import ConfigError, ShapeMismatchError

ENCODER_STRIDES = ((2, 2, 2), (2, 2, 2), (2, 2, 2), (2, 1, 1), (1, 1, 1))
CHANNEL_MULTS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class ModelConfig:
    rows: int = 10
    cols: int = 32
    time_samples: int = 96
    latent_dim: int = 16
    condition_dim: int = 6
    condition_embed_dim: int = 64
    base_channels: int = 16
    n_experts: int = 8
    expert_min_scale: float = 0.25
    expert_max_scale: float = 2.0
    gate_hidden_dim: int = 64
    leaky_slope: float = 0.03
    logvar_clamp: float = 30.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.n_experts < 1:
            raise ConfigError(f"need at least one expert, got {self.n_experts}")
        if not 0.25 <= self.expert_min_scale < self.expert_max_scale <= 2.0:
            raise ConfigError(
                f"expert scales must satisfy 0.25 <= min < max <= 2.0, got "
                f"({self.expert_min_scale}, {self.expert_max_scale})"
            )
        self.encoder_shapes()  # validates the shape algebra at construction

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def expert_factors(self) -> list[float]:
        if self.n_experts == 1:
            return [1.0]
        return list(np.linspace(self.expert_min_scale, self.expert_max_scale, self.n_experts))

    def encoder_shapes(self) -> list[tuple[int, int, int, int]]:
        """(channels, time, rows, cols) after each encoder stage."""
        t, r, c = self.time_samples, self.rows, self.cols
        shapes = []
        for mult, stride in zip(CHANNEL_MULTS, ENCODER_STRIDES):
            dims = []
            for axis_name, n, s in zip(("time", "rows", "cols"), (t, r, c), stride):
                n_out = ops.conv_output_extent(n, 3, s, 1)
                if n_out < 1:
                    raise ConfigError(
                        f"grid too small: encoder axis '{axis_name}' collapses to {n_out} "
                        f"(input {self.time_samples}x{self.rows}x{self.cols})"
                    )
                dims.append(n_out)
            t, r, c = dims
            shapes.append((self.base_channels * mult, t, r, c))
        return shapes

    @property
    def flatten_dim(self) -> int:
        ch, t, r, c = self.encoder_shapes()[-1]
        return ch * t * r * c

    def config_hash(self) -> bytes:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


@dataclass
class LatentStats:
    """Mean and log-variance of the approximate posterior (N, latent_dim)."""

    mu: torch.Tensor
    logvar: torch.Tensor


class ConvStage(nn.Module):
    """k=3 conv (+PReLU), then pointwise conv with skip connection (+PReLU)."""

    def __init__(self, c_in: int, c_out: int, stride: tuple[int, int, int]):
        super().__init__()
        self.conv = nn.Conv3d(c_in, c_out, 3, stride=stride, padding=1)
        self.point = nn.Conv3d(c_out, c_out, 1)
        self.act1 = nn.PReLU()
        self.act2 = nn.PReLU()

    def forward(self, x):
        h = self.act1(self.conv(x))
        return self.act2(self.point(h) + h)


class TimeScaleGate(nn.Module):
    """Conditions (N, 6) -> expert weights (N, K) on the simplex."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h = cfg.gate_hidden_dim
        self.fc1 = nn.Linear(cfg.condition_dim, h)
        self.fc2 = nn.Linear(h, h)
        self.fc3 = nn.Linear(h, cfg.n_experts)
        self.act1 = nn.PReLU()
        self.act2 = nn.PReLU()

    def forward(self, cond):
        h = self.act1(self.fc1(cond))
        h = self.act2(self.fc2(h))
        return ops.softmax(self.fc3(h))


class TimeScale(nn.Module):
    """Gated bank of temporal-resampling experts.

    Expert k resamples time by its fixed factor, center-crops or zero-pads to
    target_t, and the gate mixes the experts: y = sum_k pi_k(cond) e_k(x).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.factors = cfg.expert_factors()
        self.gate = TimeScaleGate(cfg)

    def forward(self, x, cond, target_t: int, gate_override: torch.Tensor | None = None):
        pi = self.gate(cond) if gate_override is None else gate_override
        y = None
        for k, f in enumerate(self.factors):
            e = ops.center_fit_time(ops.temporal_resample(x, f), target_t)
            w = pi[:, k].view(-1, 1, 1, 1, 1)
            y = w * e if y is None else y + w * e
        return y


def _resize(x: torch.Tensor, size: tuple[int, int, int]) -> torch.Tensor:
    if tuple(x.shape[2:]) == size:
        return x
    return nn.functional.interpolate(x, size=size, mode="trilinear", align_corners=True)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        chans = [1] + [s[0] for s in cfg.encoder_shapes()]
        self.stages = nn.ModuleList(
            ConvStage(chans[i], chans[i + 1], ENCODER_STRIDES[i]) for i in range(5)
        )
        self.mu_head = nn.Linear(cfg.flatten_dim, cfg.latent_dim)
        self.logvar_head = nn.Linear(cfg.flatten_dim, cfg.latent_dim)

    def forward(self, x) -> LatentStats:
        for i, stage in enumerate(self.stages):
            x = ops.assert_finite(stage(x), f"encoder stage {i + 1}")
        flat = x.flatten(1)
        mu = self.mu_head(flat)
        logvar = self.logvar_head(flat).clamp(-self.cfg.logvar_clamp, self.cfg.logvar_clamp)
        return LatentStats(ops.assert_finite(mu, "mu"), ops.assert_finite(logvar, "logvar"))


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder_shapes()
        self.seed_shape = enc[-1]
        self.fc = nn.Linear(cfg.latent_dim + cfg.condition_embed_dim, cfg.flatten_dim)
        # Reverse the encoder: channels of stage i with the spatial extents of
        # the next-shallower stage; the last conv stage keeps stage-1 extents.
        spatial = [enc[2][1:], enc[1][1:], enc[0][1:], enc[0][1:]]
        chans = [enc[4][0], enc[3][0], enc[2][0], enc[1][0], enc[0][0]]
        self.stage_targets = spatial
        self.stages = nn.ModuleList(
            ConvStage(chans[i], chans[i + 1], (1, 1, 1)) for i in range(4)
        )
        b = cfg.base_channels
        self.scale1 = TimeScale(cfg)
        self.scale2 = TimeScale(cfg)
        self.up1 = ConvStage(b, b, (1, 1, 1))
        self.up2 = ConvStage(b, b, (1, 1, 1))
        self.head = nn.Conv3d(b, 1, 1)

    def forward(self, z, cond_embed, cond):
        h = self.fc(torch.cat([z, cond_embed], dim=1))
        ch, t, r, c = self.seed_shape
        h = h.view(-1, ch, t, r, c)
        for i, stage in enumerate(self.stages):
            h = _resize(h, self.stage_targets[i])
            h = ops.assert_finite(stage(h), f"decoder stage {i + 1}")
        full = (self.cfg.time_samples, self.cfg.rows, self.cfg.cols)
        h = self.scale1(h, cond, full[0])
        h = _resize(h, full)
        h = ops.assert_finite(self.up1(h), "decoder upscale block 1")
        h = self.scale2(h, cond, full[0])
        h = ops.assert_finite(self.up2(h), "decoder upscale block 2")
        return ops.assert_finite(self.head(h), "decoder output")


class Discriminator(nn.Module):
    """Conditional real/fake score. Conditions are broadcast as six constant
    feature maps concatenated after the first conv."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        chans = [s[0] for s in cfg.encoder_shapes()]
        self.conv1 = nn.Conv3d(1, chans[0], 3, stride=ENCODER_STRIDES[0], padding=1)
        self.convs = nn.ModuleList()
        in_ch = chans[0] + cfg.condition_dim
        for i in range(1, 5):
            self.convs.append(nn.Conv3d(in_ch, chans[i], 3, stride=ENCODER_STRIDES[i], padding=1))
            in_ch = chans[i]
        self.head = nn.Conv3d(chans[-1], 1, 1)

    def forward(self, x, cond):
        slope = self.cfg.leaky_slope
        h = ops.leaky_relu(self.conv1(x), slope)
        cmap = cond.view(cond.shape[0], -1, 1, 1, 1).expand(-1, -1, *h.shape[2:])
        h = torch.cat([h, cmap], dim=1)
        for i, conv in enumerate(self.convs):
            h = ops.assert_finite(ops.leaky_relu(conv(h), slope), f"discriminator stage {i + 2}")
        pooled = h.mean(dim=(2, 3, 4), keepdim=True)
        return ops.sigmoid(self.head(pooled)).view(-1)


class BioMimeModel(nn.Module):
    """Generator (encoder + condition projection + decoder) and discriminator.

    encode/decode call counters are plain attributes used by tests to observe
    latent reuse and decoder-cache contracts.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.cond_proj = nn.Linear(cfg.condition_dim, cfg.condition_embed_dim)
        self.decoder = Decoder(cfg)
        self.discriminator = Discriminator(cfg)
        self.encode_calls = 0
        self.decode_calls = 0

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        want = (1, self.cfg.time_samples, self.cfg.rows, self.cfg.cols)
        if x.dim() == 4:
            x = x.unsqueeze(0)
        if x.dim() != 5 or tuple(x.shape[1:]) != want:
            raise ShapeMismatchError(
                f"expected input shaped (N, {', '.join(map(str, want))}), got {tuple(x.shape)}"
            )
        return x.to(self.cfg.torch_dtype)

    def _cond(self, c) -> torch.Tensor:
        if isinstance(c, np.ndarray):
            c = torch.from_numpy(np.ascontiguousarray(c))
        c = c.to(self.cfg.torch_dtype)
        if c.dim() == 1:
            c = c.unsqueeze(0)
        if c.shape[-1] != self.cfg.condition_dim:
            raise ShapeMismatchError(
                f"expected {self.cfg.condition_dim} conditions, got {c.shape[-1]}"
            )
        return c

    def encode(self, x) -> LatentStats:
        self.encode_calls += 1
        return self.encoder(self._check_input(x))

    def project_conditions(self, c) -> torch.Tensor:
        return self.cond_proj(self._cond(c))

    def decode(self, z: torch.Tensor, c) -> torch.Tensor:
        self.decode_calls += 1
        cond = self._cond(c)
        if z.dim() == 1:
            z = z.unsqueeze(0)
        z = z.to(self.cfg.torch_dtype)
        if z.shape[-1] != self.cfg.latent_dim:
            raise ShapeMismatchError(f"expected latent size {self.cfg.latent_dim}, got {z.shape[-1]}")
        if cond.shape[0] != z.shape[0]:
            cond = cond.expand(z.shape[0], -1)
        return self.decoder(z, self.cond_proj(cond), cond)

    def discriminate(self, x, c) -> torch.Tensor:
        xb = self._check_input(x)
        cond = self._cond(c)
        if cond.shape[0] != xb.shape[0]:
            cond = cond.expand(xb.shape[0], -1)
        return self.discriminator(xb, cond)

    def generator_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("discriminator.")]

    def discriminator_parameters(self):
        return [p for n, p in self.named_parameters() if n.startswith("discriminator.")]


def init_parameters(model: nn.Module, seed: int) -> None:
    """Deterministically re-initialize all parameters from one seeded stream.

    Weights get fan-in-scaled normal draws, biases zero, PReLU slopes 0.25.
    Parameters are visited in sorted name order so initialization does not
    depend on module construction order.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in sorted(model.named_parameters()):
            if p.dim() >= 2:
                fan_in = p[0].numel()
                std = (2.0 / fan_in) ** 0.5
                draw = torch.randn(p.shape, generator=gen, dtype=torch.float64) * std
                p.copy_(draw.to(p.dtype))
            elif "bias" in name:
                p.zero_()
            else:  # PReLU slopes
                p.fill_(0.25)


def build_model(cfg: ModelConfig, seed: int = 0) -> BioMimeModel:
    model = BioMimeModel(cfg)
    model.to(cfg.torch_dtype)
    init_parameters(model, seed)
    return model


def muap_to_tensor(muap: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(rows, cols, T) or (N, rows, cols, T) numpy -> (N, 1, T, rows, cols) torch."""
    a = np.asarray(muap)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4:
        raise ShapeMismatchError(f"expected 3-D or 4-D MUAP array, got {a.ndim}-D")
    t = torch.from_numpy(np.ascontiguousarray(a)).to(dtype)
    return t.permute(0, 3, 1, 2).unsqueeze(1)


def tensor_to_muap(x: torch.Tensor) -> np.ndarray:
    """(N, 1, T, rows, cols) torch -> (N, rows, cols, T) float32 numpy."""
    if x.dim() == 4:
        x = x.unsqueeze(0)
    return x.squeeze(1).permute(0, 2, 3, 1).detach().cpu().numpy().astype(np.float32)
