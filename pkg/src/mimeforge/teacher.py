"""Clamped-tripole MUAP simulator in an anisotropic cylindrical volume conductor.

Each muscle fibre carries two wavefronts that leave the neuromuscular junction
at t = 0 and travel in opposite directions along z at the conduction velocity.
A wavefront is a tripole of point currents (+1, -2, +1) * I0 at longitudinal
lags (0, b, 2b) behind the leading pole; pole positions clamp to the fibre's
z-interval, which produces the end-of-fibre non-propagating component and,
once all three poles coincide at an endpoint, exact extinction.

A point charge q at cylindrical position (rho_s, theta_s, z_s) observed by a
surface electrode at (R_a, theta_e, z_e) contributes

    V = q / (4 pi sigma_z sqrt((z_e - z_s)^2 + D_perp^2 / K_an))
    D_perp^2 = rho_s^2 + R_a^2 - 2 rho_s R_a cos(theta_e - theta_s)

i.e. an unbounded homogeneous medium with radial/longitudinal conductivity
anisotropy K_an folded into the transverse distance.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .conditions import CONDITION_NAMES, ConditionRanges, PhysioConditions
from .errors import ConfigError


@dataclass(frozen=True)
class CylinderConfig:
    """Volume conductor, electrode grid, and source parameters."""

    skin_radius_mm: float = 25.0
    anisotropy_ratio: float = 0.2  # sigma_r / sigma_z
    sigma_z: float = 1.0
    rows: int = 10  # longitudinal electrode rows
    cols: int = 32  # angular electrode columns covering the circumference
    row_spacing_mm: float = 4.0
    raw_sample_rate_hz: float = 4096.0
    raw_duration_s: float = 0.064
    territory_radius_mm: float = 2.5
    base_fibre_length_mm: float = 100.0
    pole_spacing_mm: float = 2.0
    nmj_jitter: float = 0.01
    z_jitter_mm: float = 2.0
    # Global source current scale. 10.8 makes the default motor unit
    # (200 fibres, 5 mm deep, seed 7) peak at ~1 mV on its best electrode.
    source_gain_mv: float = 10.8
    surface_margin_mm: float = 0.5

    def __post_init__(self):
        if self.skin_radius_mm <= 0:
            raise ConfigError(f"skin radius must be > 0, got {self.skin_radius_mm}")
        if not 0.0 < self.anisotropy_ratio <= 1.0:
            raise ConfigError(f"anisotropy ratio must be in (0, 1], got {self.anisotropy_ratio}")
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"electrode grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.raw_sample_rate_hz < 2000.0:
            raise ConfigError("raw sample rate must be >= 2000 Hz")

    @property
    def raw_samples(self) -> int:
        return int(round(self.raw_duration_s * self.raw_sample_rate_hz))

    def electrode_z_mm(self) -> np.ndarray:
        return (np.arange(self.rows) - (self.rows - 1) / 2.0) * self.row_spacing_mm

    def electrode_theta(self) -> np.ndarray:
        return np.arange(self.cols) * (2.0 * np.pi / self.cols)


@dataclass(frozen=True)
class MotorUnitGeometry:
    """Per-fibre source geometry for one motor unit (all lengths in mm)."""

    seed: int
    rho: np.ndarray  # radial position of each fibre
    theta: np.ndarray  # angular position of each fibre
    z_start: np.ndarray
    z_end: np.ndarray
    nmj_z: np.ndarray
    centre_depth_mm: float
    medial_lateral: float

    @property
    def fibre_count(self) -> int:
        return int(self.rho.size)


@dataclass
class RawMuap:
    """rows x cols x T surface potentials (mV) at the raw sample rate."""

    potentials: np.ndarray
    sample_rate_hz: float


def build_motor_unit(
    cfg: CylinderConfig,
    cond: PhysioConditions,
    seed: int,
    ranges: ConditionRanges | None = None,
) -> MotorUnitGeometry:
    """Place the fibres of one motor unit inside the cylinder.

    Fibre cross-sections are uniform over a territory disk centred at polar
    (R_a - depth, 2*pi*medial_lateral). The neuromuscular junction of fibre i
    sits at its longitudinal jitter offset, so the electrode grid (centred on
    z = 0) is centred on the nominal mean NMJ. Identical (cfg, cond, seed)
    always yields an identical fibre table, and for a fixed seed the first N
    fibres are shared between any two fibre counts >= N.
    """
    (ranges or ConditionRanges()).validate(cond)
    rho_c = cfg.skin_radius_mm - cond.depth_mm
    if rho_c >= cfg.skin_radius_mm:
        raise ConfigError(f"depth must be > 0 mm, got {cond.depth_mm}")
    if rho_c - cfg.territory_radius_mm <= 0.0:
        raise ConfigError(
            f"territory exits the cylinder: depth {cond.depth_mm} mm leaves centre radius "
            f"{rho_c:.2f} mm <= territory radius {cfg.territory_radius_mm} mm"
        )
    theta_c = 2.0 * np.pi * cond.medial_lateral
    n = int(cond.fibre_count)

    u = np.random.default_rng(seed).random((n, 4))
    disk_r = cfg.territory_radius_mm * np.sqrt(u[:, 0])
    disk_th = 2.0 * np.pi * u[:, 1]
    x = rho_c * np.cos(theta_c) + disk_r * np.cos(disk_th)
    y = rho_c * np.sin(theta_c) + disk_r * np.sin(disk_th)
    rho = np.hypot(x, y)
    theta = np.arctan2(y, x)

    rho_max = cfg.skin_radius_mm - cfg.surface_margin_mm
    if np.any(rho > rho_max):
        warnings.warn(
            f"{int(np.sum(rho > rho_max))} fibre(s) clamped to {rho_max:.2f} mm "
            "to stay inside the cylinder",
            stacklevel=2,
        )
        rho = np.minimum(rho, rho_max)

    alpha = cond.nmj_fraction + (2.0 * u[:, 2] - 1.0) * cfg.nmj_jitter
    zeta = (2.0 * u[:, 3] - 1.0) * cfg.z_jitter_mm
    fibre_len = cfg.base_fibre_length_mm * cond.length_ratio
    z_start = zeta - alpha * fibre_len
    z_end = z_start + fibre_len
    nmj_z = z_start + alpha * fibre_len

    return MotorUnitGeometry(
        seed=seed,
        rho=rho,
        theta=theta,
        z_start=z_start,
        z_end=z_end,
        nmj_z=nmj_z,
        centre_depth_mm=cond.depth_mm,
        medial_lateral=cond.medial_lateral,
    )


@njit(parallel=True, cache=True)
def _field_kernel(d2eff, z_start, z_end, nmj_z, elec_z, v_mm_ms, b, gain, t_ms, out):
    """Sum clamped-tripole potentials into out[row, col, t].

    Parallel over electrodes; the fibre/pole accumulation order inside each
    output element is fixed, so results are bit-deterministic. The tripole
    weights are (q, -2q, q) with q = gain, so each fibre's contribution is
    final-scaled before accumulation and the field is bit-exactly additive
    over fibres.
    """
    n_rows, n_cols, n_t = out.shape
    n_fib = z_start.size
    for e in prange(n_rows * n_cols):
        r = e // n_cols
        c = e % n_cols
        ze = elec_z[r]
        for f in range(n_fib):
            d2 = d2eff[f, c]
            zs = z_start[f]
            zf = z_end[f]
            zn = nmj_z[f]
            ext_pos = (zf - zn) + 2.0 * b
            ext_neg = (zn - zs) + 2.0 * b
            for k in range(n_t):
                travel = v_mm_ms * t_ms[k]
                s = 0.0
                if travel < ext_pos:
                    lead = zn + travel
                    for j in range(3):
                        zp = lead - b * j
                        if zp < zs:
                            zp = zs
                        elif zp > zf:
                            zp = zf
                        dz = ze - zp
                        q = gain if j != 1 else -2.0 * gain
                        s += q / np.sqrt(dz * dz + d2)
                if travel < ext_neg:
                    lead = zn - travel
                    for j in range(3):
                        zp = lead + b * j
                        if zp < zs:
                            zp = zs
                        elif zp > zf:
                            zp = zf
                        dz = ze - zp
                        q = gain if j != 1 else -2.0 * gain
                        s += q / np.sqrt(dz * dz + d2)
                out[r, c, k] += s


def simulate_muap(geom: MotorUnitGeometry, cond: PhysioConditions, cfg: CylinderConfig) -> RawMuap:
    """Simulate the surface potential of one motor unit discharge."""
    n_t = cfg.raw_samples
    out = np.zeros((cfg.rows, cfg.cols, n_t), dtype=np.float64)
    if geom.fibre_count == 0:
        return RawMuap(out, cfg.raw_sample_rate_hz)

    theta_e = cfg.electrode_theta()
    ra = cfg.skin_radius_mm
    d_perp2 = (
        geom.rho[:, None] ** 2
        + ra**2
        - 2.0 * geom.rho[:, None] * ra * np.cos(theta_e[None, :] - geom.theta[:, None])
    )
    d2eff = d_perp2 / cfg.anisotropy_ratio
    t_ms = np.arange(n_t, dtype=np.float64) / cfg.raw_sample_rate_hz * 1e3
    v_mm_ms = cond.velocity_mps  # m/s == mm/ms

    gain = cfg.source_gain_mv / (4.0 * np.pi * cfg.sigma_z)
    _field_kernel(
        d2eff,
        geom.z_start,
        geom.z_end,
        geom.nmj_z,
        cfg.electrode_z_mm(),
        v_mm_ms,
        cfg.pole_spacing_mm,
        gain,
        t_ms,
        out,
    )
    return RawMuap(out, cfg.raw_sample_rate_hz)


def peak_time_ms(signal: np.ndarray, sample_rate_hz: float) -> float:
    """Time of the absolute peak with parabolic sub-sample refinement."""
    mag = np.abs(signal)
    k = int(np.argmax(mag))
    pos = float(k)
    if 0 < k < mag.size - 1:
        y0, y1, y2 = mag[k - 1], mag[k], mag[k + 1]
        den = y0 - 2.0 * y1 + y2
        if den != 0.0:
            pos = k + 0.5 * (y0 - y2) / den
    return pos / sample_rate_hz * 1e3


def best_electrode(potentials: np.ndarray) -> tuple[int, int]:
    """(row, col) of the electrode with the largest peak-to-peak amplitude."""
    p2p = potentials.max(axis=2) - potentials.min(axis=2)
    r, c = np.unravel_index(int(np.argmax(p2p)), p2p.shape)
    return int(r), int(c)


def muap_summary(raw: RawMuap) -> dict:
    """Peak-to-peak, 1%-of-peak duration, circular column centroid, peak time.

    The centroid is the first angular moment of the per-column peak-to-peak
    profile mapped back to column units; a plain per-index mean is wrong on an
    angular grid that wraps the full circumference.
    """
    x = raw.potentials
    p2p_grid = x.max(axis=2) - x.min(axis=2)
    r, c = best_electrode(x)
    trace = x[r, c]
    mag = np.abs(trace)
    peak = mag.max()
    if peak == 0.0:
        return {"p2p_mv": 0.0, "duration_ms": 0.0, "centroid_col": 0.0, "t_peak_ms": 0.0}
    above = np.nonzero(mag >= 0.01 * peak)[0]
    duration_ms = (above[-1] - above[0] + 1) / raw.sample_rate_hz * 1e3

    col_w = p2p_grid.max(axis=0)
    n_cols = col_w.size
    th = np.arange(n_cols) * (2.0 * np.pi / n_cols)
    ang = np.arctan2((col_w * np.sin(th)).sum(), (col_w * np.cos(th)).sum()) % (2.0 * np.pi)
    centroid_col = ang * n_cols / (2.0 * np.pi)

    return {
        "p2p_mv": float(p2p_grid.max()),
        "duration_ms": float(duration_ms),
        "centroid_col": float(centroid_col),
        "t_peak_ms": peak_time_ms(trace, raw.sample_rate_hz),
    }


def condition_effect_report(
    cfg: CylinderConfig,
    base: PhysioConditions,
    axis: str,
    n_steps: int = 8,
    seed: int = 7,
    ranges: ConditionRanges | None = None,
) -> list[dict]:
    """Sweep one condition over its physical range and summarize each MUAP.

    The motor unit seed is fixed across the sweep so fibre tables are nested
    (fibre-count sweeps) or identical (all other axes).
    """
    if axis not in CONDITION_NAMES:
        raise ConfigError(f"unknown condition axis '{axis}'; expected one of {CONDITION_NAMES}")
    ranges = ranges or ConditionRanges()
    lo, hi = getattr(ranges, axis)
    field = {
        "fibre_count": "fibre_count",
        "depth": "depth_mm",
        "medial_lateral": "medial_lateral",
        "nmj": "nmj_fraction",
        "velocity": "velocity_mps",
        "length_ratio": "length_ratio",
    }[axis]

    rows = []
    for value in np.linspace(lo, hi, n_steps):
        value = float(value) if axis != "fibre_count" else int(round(value))
        cond = PhysioConditions(**{**base.__dict__, field: value})
        geom = build_motor_unit(cfg, cond, seed, ranges)
        raw = simulate_muap(geom, cond, cfg)
        rows.append({"axis_value": float(value), **muap_summary(raw)})
    return rows


def write_effect_report_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["axis_value", "p2p_mv", "duration_ms", "centroid_col", "t_peak_ms"])
        w.writeheader()
        w.writerows(rows)
