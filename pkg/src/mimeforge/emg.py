"""Surface-EMG synthesis: a size-principle motor-neuron pool drives MUAP
trains, summed per electrode, with optional dynamic re-decoding of the MUAP
library along a condition path.

EMG record binary layout (little-endian), magic "BMEG", version 1:

    4s magic | u32 version | u32 rows | u32 cols | u64 samples | f64 fs_hz
    | u8 has_noise | f64 noise_variance | rows*cols*samples x f32 data
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, CorruptFileError, MissingInputError, ShapeMismatchError
from .generate import ConditionPath
from .model import BioMimeModel, tensor_to_muap

MAGIC = b"BMEG"
VERSION = 1


@dataclass(frozen=True)
class PoolConfig:
    """Recruitment/rate-coding organization of the motor-neuron pool."""

    n_units: int
    recruitment_range: float = 30.0
    rate_gain: float = 2.0  # rate headroom fraction per unit excitation above threshold
    min_rate_hz: float = 8.0
    peak_rate_hz: float = 35.0
    isi_cov: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_units < 1:
            raise ConfigError(f"pool needs n_units >= 1, got {self.n_units}")
        if self.min_rate_hz <= 0 or self.peak_rate_hz <= self.min_rate_hz:
            raise ConfigError(
                f"rates must satisfy 0 < min < peak, got ({self.min_rate_hz}, {self.peak_rate_hz})"
            )
        if self.recruitment_range <= 1:
            raise ConfigError("recruitment_range must be > 1")

    def thresholds(self) -> np.ndarray:
        """Ascending recruitment thresholds RTE_i = exp(ln(RR) i / n) / RR, capped at 1."""
        i = np.arange(1, self.n_units + 1, dtype=np.float64)
        rte = np.exp(np.log(self.recruitment_range) * i / self.n_units) / self.recruitment_range
        return np.minimum(rte, 1.0)

    def rate_hz(self, excitation: float, threshold: float) -> float:
        """Firing rate of one unit at the given excitation; 0 below threshold."""
        if excitation < threshold:
            return 0.0
        gain = self.rate_gain * (excitation - threshold) * (self.peak_rate_hz - self.min_rate_hz)
        return min(self.min_rate_hz + gain / (1.0 - threshold + 1e-9), self.peak_rate_hz)


@dataclass(frozen=True)
class ExcitationProfile:
    """Piecewise-linear excitation e(t) in [0, 1] over a fixed duration."""

    knots: tuple[tuple[float, float], ...]  # (time_s, level)
    duration_s: float
    sample_rate_hz: float = 2000.0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError(f"duration must be > 0, got {self.duration_s}")
        if len(self.knots) < 1:
            raise ConfigError("excitation profile needs at least one knot")
        times = [k[0] for k in self.knots]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("excitation knot times must strictly increase")
        for _, level in self.knots:
            if not 0.0 <= level <= 1.0:
                raise ConfigError(f"excitation level {level} outside [0, 1]")

    def at(self, t: float) -> float:
        ts = [k[0] for k in self.knots]
        if t <= ts[0]:
            return self.knots[0][1]
        if t >= ts[-1]:
            return self.knots[-1][1]
        j = int(np.searchsorted(ts, t, side="right")) - 1
        t0, v0 = self.knots[j]
        t1, v1 = self.knots[j + 1]
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * v0 + w * v1

    def to_json_obj(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "sample_rate_hz": self.sample_rate_hz,
            "knots": [{"t": t, "level": v} for t, v in self.knots],
        }

    @classmethod
    def from_json_obj(cls, obj) -> "ExcitationProfile":
        try:
            return cls(
                tuple((float(k["t"]), float(k["level"])) for k in obj["knots"]),
                float(obj["duration_s"]),
                float(obj.get("sample_rate_hz", 2000.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed excitation profile: {exc}") from None


@dataclass
class SpikeTrainSet:
    """Per-MU sorted discharge times in seconds."""

    trains: list[np.ndarray]
    duration_s: float

    def __post_init__(self):
        for i, tr in enumerate(self.trains):
            if tr.size == 0:
                continue
            if np.any(np.diff(tr) <= 0):
                raise ConfigError(f"spike train {i} is not strictly increasing")
            bad = tr[(tr < 0) | (tr > self.duration_s)]
            if bad.size:
                raise ConfigError(
                    f"spike train {i} has spikes beyond [0, {self.duration_s}]: {bad[:5].tolist()}"
                )

    def total_spikes(self) -> int:
        return int(sum(tr.size for tr in self.trains))


def generate_spike_trains(pool: PoolConfig, exc: ExcitationProfile) -> SpikeTrainSet:
    """Renewal-process discharges: unit i fires while e(t) >= threshold_i at
    its excitation-dependent rate, with Gaussian ISI jitter (CoV, truncated at
    3.9 sigma). Deterministic per pool seed; each unit has its own substream.
    """
    thresholds = pool.thresholds()
    n_grid = int(round(exc.duration_s * exc.sample_rate_hz))
    t_grid = np.arange(n_grid) / exc.sample_rate_hz
    e_grid = np.array([exc.at(t) for t in t_grid])

    trains = []
    for i in range(pool.n_units):
        rng = np.random.default_rng([pool.seed, i])
        rte = thresholds[i]
        active = np.nonzero(e_grid >= rte)[0]
        spikes: list[float] = []
        if active.size:
            k = 0
            t = t_grid[active[0]]
            while True:
                rate = pool.rate_hz(exc.at(t), rte)
                if rate <= 0.0:
                    # drive dropped below threshold: jump to the next active sample
                    nxt = active[np.searchsorted(t_grid[active], t, side="right") :]
                    if nxt.size == 0:
                        break
                    t = t_grid[nxt[0]]
                    continue
                if not spikes or t - spikes[-1] > 0:
                    spikes.append(t)
                g = rng.standard_normal()
                while abs(g) > 3.9:
                    g = rng.standard_normal()
                t = t + (1.0 + pool.isi_cov * g) / rate
                if t > exc.duration_s:
                    break
                k += 1
                if k > n_grid * 40:  # defensive bound; cannot trigger with sane rates
                    break
        trains.append(np.array(spikes, dtype=np.float64))
    return SpikeTrainSet(trains, exc.duration_s)


def write_spike_trains_json(s: SpikeTrainSet, path) -> None:
    with open(path, "w") as f:
        json.dump({"duration_s": s.duration_s, "trains": [list(map(float, tr)) for tr in s.trains]}, f)


def read_spike_trains_json(path) -> SpikeTrainSet:
    try:
        obj = json.load(open(path))
    except FileNotFoundError:
        raise MissingInputError(f"spike train file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"malformed spike train JSON: {exc}") from None
    return SpikeTrainSet([np.array(tr, dtype=np.float64) for tr in obj["trains"]], float(obj["duration_s"]))


@dataclass
class EmgRecord:
    """rows x cols x samples surface EMG (mV)."""

    signal: np.ndarray
    sample_rate_hz: float
    noise_variance: float | None = None


def synthesize_static(
    muaps: np.ndarray,
    spikes: SpikeTrainSet,
    sample_rate_hz: float = 2000.0,
    noise_variance: float | None = None,
    noise_seed: int = 0,
) -> EmgRecord:
    """Sum each MU's MUAP at its discharge times (centre sample aligned).

    Accumulation is float64 in ascending (MU, spike) order, so EMG over a
    union of per-MU spike sets equals the sum of the separate syntheses.
    """
    muaps = np.asarray(muaps)
    if muaps.ndim != 4:
        raise ShapeMismatchError(f"expected (n_mu, rows, cols, T) MUAP stack, got {muaps.shape}")
    if len(spikes.trains) != muaps.shape[0]:
        raise ShapeMismatchError(
            f"{len(spikes.trains)} spike trains but {muaps.shape[0]} MUAP templates"
        )
    n_samples = int(round(spikes.duration_s * sample_rate_hz))
    centre = muaps.shape[3] // 2
    bad = [
        (mu, float(t))
        for mu, tr in enumerate(spikes.trains)
        for t in tr
        if int(round(t * sample_rate_hz)) >= n_samples + centre
    ]
    if bad:
        raise ConfigError(f"spikes beyond the record duration: {bad[:5]}")

    rows, cols, t_len = muaps.shape[1:]
    rec = np.zeros((rows, cols, n_samples), dtype=np.float64)
    for mu in range(muaps.shape[0]):
        template = muaps[mu]
        for t_spk in spikes.trains[mu]:
            _add_template(rec, template, int(round(t_spk * sample_rate_hz)), t_len, centre)
    if noise_variance is not None and noise_variance > 0:
        rng = np.random.default_rng(noise_seed)
        rec = rec + rng.normal(0.0, np.sqrt(noise_variance), size=rec.shape)
    return EmgRecord(rec, sample_rate_hz, noise_variance)


def _add_template(rec: np.ndarray, template: np.ndarray, centre_sample: int, t_len: int, centre: int) -> None:
    start = centre_sample - centre
    lo = max(start, 0)
    hi = min(start + t_len, rec.shape[2])
    if hi > lo:
        rec[:, :, lo:hi] += template[:, :, lo - start : hi - start]


def synthesize_dynamic(
    model: BioMimeModel,
    latents,
    path: ConditionPath,
    spikes: SpikeTrainSet,
    sample_rate_hz: float = 2000.0,
    noise_variance: float | None = None,
    noise_seed: int = 0,
    quantization_levels: int = 256,
) -> EmgRecord:
    """Like `synthesize_static` but every inserted MUAP is re-decoded at the
    path conditions of its spike time.

    Spike-time fractions are quantized to `quantization_levels` values and the
    decode per (MU, level) is cached, bounding decoder invocations per MU by
    min(#spikes, levels). A constant path therefore reduces bit-exactly to
    static synthesis with the morphed library.
    """
    if quantization_levels < 1:
        raise ConfigError("quantization_levels must be >= 1")
    z = torch.as_tensor(latents, dtype=model.cfg.torch_dtype)
    if z.dim() != 2:
        raise ShapeMismatchError(f"expected (n_mu, latent) latents, got {tuple(z.shape)}")
    if z.shape[0] != len(spikes.trains):
        raise ShapeMismatchError(f"{len(spikes.trains)} spike trains but {z.shape[0]} latents")

    n_samples = int(round(spikes.duration_s * sample_rate_hz))
    rows, cols = model.cfg.rows, model.cfg.cols
    t_len = model.cfg.time_samples
    rec = np.zeros((rows, cols, n_samples), dtype=np.float64)
    with torch.no_grad():
        for mu in range(z.shape[0]):
            cache: dict[float, np.ndarray] = {}
            for t_spk in spikes.trains[mu]:
                u = t_spk / spikes.duration_s
                if quantization_levels > 1:
                    u = round(u * (quantization_levels - 1)) / (quantization_levels - 1)
                if u not in cache:
                    cond = path.at(u)
                    cache[u] = tensor_to_muap(model.decode(z[mu : mu + 1], cond))[0].astype(np.float64)
                _add_template(rec, cache[u], int(round(t_spk * sample_rate_hz)), t_len, t_len // 2)
    if noise_variance is not None and noise_variance > 0:
        rng = np.random.default_rng(noise_seed)
        rec = rec + rng.normal(0.0, np.sqrt(noise_variance), size=rec.shape)
    return EmgRecord(rec, sample_rate_hz, noise_variance)


def write_emg(rec: EmgRecord, path) -> None:
    rows, cols, n = rec.signal.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<3I", VERSION, rows, cols))
        f.write(struct.pack("<Q", n))
        f.write(struct.pack("<d", rec.sample_rate_hz))
        has_noise = rec.noise_variance is not None
        f.write(struct.pack("<Bd", int(has_noise), rec.noise_variance or 0.0))
        f.write(rec.signal.astype("<f4").tobytes())


def read_emg(path) -> EmgRecord:
    try:
        blob = open(path, "rb").read()
    except FileNotFoundError:
        raise MissingInputError(f"EMG file not found: {path}") from None
    if len(blob) < 41 or blob[:4] != MAGIC:
        raise CorruptFileError(f"not an EMG file (bad magic) at {path}")
    version, rows, cols = struct.unpack_from("<3I", blob, 4)
    if version != VERSION:
        raise CorruptFileError(f"unsupported EMG version {version}")
    (n,) = struct.unpack_from("<Q", blob, 16)
    (fs,) = struct.unpack_from("<d", blob, 24)
    has_noise, noise_var = struct.unpack_from("<Bd", blob, 32)
    expected = 41 + rows * cols * n * 4
    if len(blob) != expected:
        raise CorruptFileError(f"EMG file truncated: expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", count=rows * cols * n, offset=41).reshape(rows, cols, n)
    return EmgRecord(data.astype(np.float64), fs, noise_var if has_noise else None)


def export_emg_csv(rec: EmgRecord, path) -> None:
    """Per-channel CSV: one column per electrode, one row per sample."""
    rows, cols, n = rec.signal.shape
    header = ["time_s"] + [f"r{r}c{c}" for r in range(rows) for c in range(cols)]
    flat = rec.signal.reshape(rows * cols, n)
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for k in range(n):
            f.write(f"{k / rec.sample_rate_hz:.6f}," + ",".join(f"{v:.8g}" for v in flat[:, k]) + "\n")
