"""The six physiological conditions and their normalization.

Condition order everywhere: (fibre_count, depth, medial_lateral, nmj,
velocity, length_ratio). Raw physical values are linearly mapped to
[0.5, 1.0] over their configured ranges; the inverse map is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError

CONDITION_NAMES = ("fibre_count", "depth", "medial_lateral", "nmj", "velocity", "length_ratio")


@dataclass(frozen=True)
class PhysioConditions:
    """Physical condition values for one simulated motor unit."""

    fibre_count: int = 200
    depth_mm: float = 5.0
    medial_lateral: float = 0.25
    nmj_fraction: float = 0.5
    velocity_mps: float = 4.0
    length_ratio: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                float(self.fibre_count),
                self.depth_mm,
                self.medial_lateral,
                self.nmj_fraction,
                self.velocity_mps,
                self.length_ratio,
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, a) -> "PhysioConditions":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (6,):
            raise ConfigError(f"expected 6 condition values, got shape {a.shape}")
        return cls(int(round(a[0])), a[1], a[2], a[3], a[4], a[5])


@dataclass(frozen=True)
class ConditionRanges:
    """Physical (min, max) per condition; the normalization anchors."""

    fibre_count: tuple[float, float] = (120.0, 400.0)
    depth: tuple[float, float] = (2.0, 12.0)
    medial_lateral: tuple[float, float] = (0.05, 0.45)
    nmj: tuple[float, float] = (0.4, 0.6)
    velocity: tuple[float, float] = (3.0, 4.5)
    length_ratio: tuple[float, float] = (0.85, 1.15)

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if not hi > lo:
                raise ConfigError(f"condition range {f.name} must have max > min, got ({lo}, {hi})")

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([getattr(self, f.name)[0] for f in fields(self)], dtype=np.float64)
        hi = np.array([getattr(self, f.name)[1] for f in fields(self)], dtype=np.float64)
        return lo, hi

    def validate(self, p: PhysioConditions, allow_empty_mu: bool = True) -> None:
        """Raise unless every value sits inside its range.

        fibre_count == 0 (an empty motor unit) is permitted when
        `allow_empty_mu`; it is a legal degenerate geometry but never a
        dataset condition.
        """
        vals = p.as_array()
        lo, hi = self.as_arrays()
        for i, name in enumerate(CONDITION_NAMES):
            if name == "fibre_count" and allow_empty_mu and vals[i] == 0:
                continue
            if not lo[i] <= vals[i] <= hi[i]:
                raise ConfigError(
                    f"condition '{name}' = {vals[i]} outside physical range [{lo[i]}, {hi[i]}]"
                )


def normalize_conditions(
    p: PhysioConditions | np.ndarray,
    ranges: ConditionRanges,
    allow_extrapolation: bool = False,
) -> np.ndarray:
    """Map physical values to [0.5, 1]: c = 0.5 + 0.5 * (p - min) / (max - min)."""
    vals = p.as_array() if isinstance(p, PhysioConditions) else np.asarray(p, dtype=np.float64)
    lo, hi = ranges.as_arrays()
    c = 0.5 + 0.5 * (vals - lo) / (hi - lo)
    if not allow_extrapolation:
        for i, name in enumerate(CONDITION_NAMES):
            if not 0.5 - 1e-12 <= c[i] <= 1.0 + 1e-12:
                raise ConfigError(
                    f"condition '{name}' = {vals[i]} outside range [{lo[i]}, {hi[i]}] "
                    "(pass allow_extrapolation to permit)"
                )
    return c


def denormalize_conditions(c: np.ndarray, ranges: ConditionRanges) -> np.ndarray:
    """Exact inverse of `normalize_conditions`."""
    c = np.asarray(c, dtype=np.float64)
    lo, hi = ranges.as_arrays()
    return lo + (c - 0.5) * 2.0 * (hi - lo)


def default_condition_grid(points_per_axis: tuple[int, int, int, int] = (4, 4, 4, 4)) -> dict[str, list[float]]:
    """Default per-axis value lists for the dataset grid.

    The grid covers (fibre_count, nmj, velocity, length_ratio); depth and
    medial-lateral are per-MU properties. Four points per axis reproduces the
    256-condition grid; velocity/nmj/length use the canonical four values.
    """
    ranges = ConditionRanges()
    n_count, n_nmj, n_vel, n_len = points_per_axis
    grid = {
        "fibre_count": [float(round(v)) for v in np.linspace(*ranges.fibre_count, n_count)],
        "nmj": list(np.linspace(*ranges.nmj, n_nmj)) if n_nmj != 4 else [0.4, 0.46, 0.53, 0.6],
        "velocity": list(np.linspace(*ranges.velocity, n_vel)),
        "length_ratio": list(np.linspace(*ranges.length_ratio, n_len)),
    }
    return grid
