"""Differentiable tensor primitives shared by the generator and discriminator.

Sample tensors use the layout (channels, time, rows, cols); batched variants
prepend a leading batch axis. All ops are thin torch wrappers that enforce the
shape/validity contracts used across the model, and every one of them is
covered by the finite-difference checks in `gradcheck`.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ConfigError, NumericalError

AXIS_NAMES = ("channels", "time", "rows", "cols")


def assert_finite(t: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericalError(f"non-finite values in {what}")
    return t


def _as_batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 4:
        return x.unsqueeze(0), True
    if x.dim() == 5:
        return x, False
    raise ConfigError(f"expected a 4-D (C,T,R,Co) or batched 5-D tensor, got {x.dim()}-D")


def conv3d(
    x: torch.Tensor,
    kernel: torch.Tensor,
    bias: torch.Tensor | None,
    stride: tuple[int, int, int] | int = 1,
    pad: int = 1,
) -> torch.Tensor:
    """3-D convolution over (time, rows, cols).

    Kernel is (out_ch, in_ch, k, k, k) with k = 3 (pad 1) or k = 1 pointwise
    (pad 0). Output extent per axis is floor((n + 2*pad - k)/stride) + 1.
    """
    xb, squeeze = _as_batched(x)
    if kernel.dim() != 5:
        raise ConfigError(f"conv3d kernel must be 5-D, got {kernel.dim()}-D")
    k = kernel.shape[2]
    if kernel.shape[2:] != (k, k, k) or k not in (1, 3):
        raise ConfigError(f"conv3d kernel size must be 1 or 3 on all axes, got {tuple(kernel.shape[2:])}")
    if pad not in (0, 1):
        raise ConfigError(f"conv3d pad must be 0 or 1, got {pad}")
    if xb.shape[1] != kernel.shape[1]:
        raise ConfigError(
            f"conv3d input has {xb.shape[1]} channels but kernel expects "
            f"{kernel.shape[1]} (axis 'channels')"
        )
    st = (stride, stride, stride) if isinstance(stride, int) else tuple(stride)
    for axis, (n, s) in enumerate(zip(xb.shape[2:], st)):
        if (n + 2 * pad - k) // s + 1 < 1:
            raise ConfigError(
                f"conv3d output extent < 1 on axis '{AXIS_NAMES[axis + 1]}' "
                f"(input {n}, kernel {k}, stride {s}, pad {pad})"
            )
    y = F.conv3d(xb, kernel, bias, stride=st, padding=pad)
    return y.squeeze(0) if squeeze else y


def pointwise_conv(x: torch.Tensor, kernel: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
    """1x1x1 channel-mixing convolution (stride 1, no padding)."""
    return conv3d(x, kernel, bias, stride=1, pad=0)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
    """y = W x + b on the last axis."""
    if x.shape[-1] != weight.shape[1]:
        raise ConfigError(
            f"linear input length {x.shape[-1]} does not match weight columns {weight.shape[1]}"
        )
    return F.linear(x, weight, bias)


def prelu(x: torch.Tensor, slope: torch.Tensor) -> torch.Tensor:
    return F.prelu(x, slope)


def leaky_relu(x: torch.Tensor, slope: float = 0.03) -> torch.Tensor:
    return F.leaky_relu(x, negative_slope=slope)


def softmax(v: torch.Tensor) -> torch.Tensor:
    return F.softmax(v, dim=-1)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def temporal_resample(x: torch.Tensor, factor: float) -> torch.Tensor:
    """Resample the time axis (dim -3) to round(factor * T) by linear interpolation.

    Endpoints are preserved: output index i samples input position
    i * (T - 1) / (T_out - 1). factor = 1.0 returns the input unchanged.
    """
    if not 0.25 <= factor <= 2.0:
        raise ConfigError(f"temporal_resample factor must be in [0.25, 2.0], got {factor}")
    t_in = x.shape[-3]
    t_out = int(round(factor * t_in))
    if t_out == t_in:
        return x
    if t_out < 1:
        raise ConfigError(f"temporal_resample output length {t_out} < 1 (T={t_in})")
    xm = x.movedim(-3, -1)
    if t_out == 1:
        pos = torch.zeros(1, dtype=x.dtype)
    else:
        pos = torch.arange(t_out, dtype=x.dtype) * ((t_in - 1) / (t_out - 1))
    lo = pos.floor().long().clamp(0, t_in - 1)
    hi = (lo + 1).clamp(max=t_in - 1)
    w = (pos - lo.to(x.dtype)).to(x.dtype)
    y = xm[..., lo] * (1.0 - w) + xm[..., hi] * w
    return y.movedim(-1, -3)


def center_fit_time(x: torch.Tensor, target_t: int) -> torch.Tensor:
    """Center-crop or zero-pad the time axis (dim -3) to target_t samples."""
    t_in = x.shape[-3]
    if t_in == target_t:
        return x
    if t_in > target_t:
        start = (t_in - target_t) // 2
        return x.narrow(-3, start, target_t)
    left = (target_t - t_in) // 2
    right = target_t - t_in - left
    # F.pad pads from the last dim backwards; time sits two dims in.
    return F.pad(x, (0, 0, 0, 0, left, right))


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """z = mu + exp(logvar / 2) * noise; gradients flow to mu/logvar only."""
    if mu.shape != logvar.shape or mu.shape != noise.shape:
        raise ConfigError(
            f"reparameterize shapes differ: mu {tuple(mu.shape)}, "
            f"logvar {tuple(logvar.shape)}, noise {tuple(noise.shape)}"
        )
    return mu + torch.exp(0.5 * logvar) * noise.detach()


def conv_output_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1
