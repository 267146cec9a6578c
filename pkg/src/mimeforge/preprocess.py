"""Raw-MUAP conditioning: downsample, energy-centre, fixed-length window."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .teacher import RawMuap

TARGET_RATE_HZ = 2000.0
WINDOW_SAMPLES = 96


def energy_median_index(x: np.ndarray) -> int:
    """First time index where cumulative energy reaches half the total.

    Energy is summed over the electrode grid per sample. An all-zero signal
    centres at index 0.
    """
    e = np.sum(x.astype(np.float64) ** 2, axis=(0, 1))
    total = e.sum()
    if total == 0.0:
        return 0
    return int(np.searchsorted(np.cumsum(e), 0.5 * total))


def preprocess(raw: RawMuap, window: int = WINDOW_SAMPLES) -> np.ndarray:
    """RawMuap -> (rows, cols, window) float32 at 2000 Hz.

    Downsampling applies a 2-tap mean anti-alias filter, then picks the
    nearest filtered sample for each 2000 Hz tick. The window places the
    energy-median sample at index window//2 (48 for the default 96), zero-
    padding where it overruns the raw extent. Inputs already at 2000 Hz skip
    the rate conversion, which makes the operation idempotent up to a
    one-sample recentering shift.
    """
    x = raw.potentials
    fs = raw.sample_rate_hz
    if fs < TARGET_RATE_HZ:
        raise ConfigError(f"raw sample rate {fs} Hz is below the 2000 Hz target")
    if fs != TARGET_RATE_HZ:
        filt = np.empty_like(x, dtype=np.float64)
        filt[:, :, :-1] = 0.5 * (x[:, :, :-1] + x[:, :, 1:])
        filt[:, :, -1] = x[:, :, -1]
        n_out = int(np.floor((x.shape[2] - 1) * TARGET_RATE_HZ / fs)) + 1
        idx = np.round(np.arange(n_out) * (fs / TARGET_RATE_HZ)).astype(np.int64)
        x = filt[:, :, np.minimum(idx, x.shape[2] - 1)]

    t_c = energy_median_index(x)
    out = np.zeros((x.shape[0], x.shape[1], window), dtype=np.float32)
    src_lo = t_c - window // 2
    lo = max(src_lo, 0)
    hi = min(src_lo + window, x.shape[2])
    if hi > lo:
        out[:, :, lo - src_lo : hi - src_lo] = x[:, :, lo:hi].astype(np.float32)
    return out
