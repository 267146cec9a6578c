"""Dataset generation, binary persistence, and the by-MU train/test split.

Binary layout (little-endian), magic "BMDS", version 1:

    header: 4s magic | u32 version | u32 rows | u32 cols | u32 T
            | u32 sample_count | u32 mu_count | 6 x (f64 min, f64 max)
    record: u32 mu_id | u32 muscle_label | 6 x f64 normalized conditions
            | rows*cols*T x f32 potentials

Record order is MU-major with lexicographic grid order over
(fibre_count, nmj, velocity, length_ratio), so identical inputs always
produce byte-identical files.
"""

from __future__ import annotations

import csv
import itertools
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .conditions import ConditionRanges, PhysioConditions, normalize_conditions
from .errors import ConfigError, CorruptFileError, MissingInputError
from .preprocess import WINDOW_SAMPLES, preprocess
from .teacher import CylinderConfig, build_motor_unit, simulate_muap

MAGIC = b"BMDS"
VERSION = 1
GRID_AXES = ("fibre_count", "nmj", "velocity", "length_ratio")


@dataclass
class DatasetFile:
    rows: int
    cols: int
    time_samples: int
    ranges: ConditionRanges
    mu_ids: np.ndarray  # (n,) uint32
    muscle_labels: np.ndarray  # (n,) uint32
    conditions: np.ndarray  # (n, 6) float64, normalized to [0.5, 1]
    muaps: np.ndarray  # (n, rows, cols, T) float32

    @property
    def sample_count(self) -> int:
        return int(self.mu_ids.size)

    @property
    def unique_mu_ids(self) -> np.ndarray:
        return np.unique(self.mu_ids)

    def mu_label_map(self) -> dict[int, int]:
        return {int(m): int(l) for m, l in zip(self.mu_ids, self.muscle_labels)}

    def indices_for_mu(self, mu_id: int) -> np.ndarray:
        return np.nonzero(self.mu_ids == mu_id)[0]


@dataclass(frozen=True)
class MotorUnitSpec:
    """Identity and fixed per-MU anatomy for dataset generation."""

    mu_id: int
    muscle_label: int
    seed: int
    depth_mm: float
    medial_lateral: float


def make_motor_units(
    count: int,
    seed: int,
    ranges: ConditionRanges | None = None,
    muscle_labels: list[int] | None = None,
) -> list[MotorUnitSpec]:
    """Draw per-MU depth/medial-lateral anatomy and per-MU geometry seeds."""
    ranges = ranges or ConditionRanges()
    ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    children = ss.spawn(count)
    labels = muscle_labels or [0]
    mus = []
    for i in range(count):
        depth = rng.uniform(*ranges.depth)
        ml = rng.uniform(*ranges.medial_lateral)
        mu_seed = int(children[i].generate_state(1)[0])
        mus.append(MotorUnitSpec(i, labels[i % len(labels)], mu_seed, depth, ml))
    return mus


def _grid_points(grid: dict[str, list[float]]) -> list[tuple[float, float, float, float]]:
    unknown = set(grid) - set(GRID_AXES)
    if unknown:
        raise ConfigError(f"unknown grid axes {sorted(unknown)}; expected {GRID_AXES}")
    missing = set(GRID_AXES) - set(grid)
    if missing:
        raise ConfigError(f"grid is missing axes {sorted(missing)}")
    return list(itertools.product(*(list(grid[a]) for a in GRID_AXES)))


def build_dataset(
    cfg: CylinderConfig,
    mus: list[MotorUnitSpec],
    grid: dict[str, list[float]],
    ranges: ConditionRanges | None = None,
    threads: int = 1,
    window: int = WINDOW_SAMPLES,
) -> DatasetFile:
    """One record per (MU, grid point); teacher-simulated and preprocessed."""
    ranges = ranges or ConditionRanges()
    ids = [m.mu_id for m in mus]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate MU ids in motor unit list")
    points = _grid_points(grid)
    n = len(mus) * len(points)

    mu_ids = np.zeros(n, dtype=np.uint32)
    labels = np.zeros(n, dtype=np.uint32)
    conds = np.zeros((n, 6), dtype=np.float64)
    muaps = np.zeros((n, cfg.rows, cfg.cols, window), dtype=np.float32)

    jobs = []
    for mi, mu in enumerate(mus):
        for gi, (count, nmj, vel, lr) in enumerate(points):
            cond = PhysioConditions(
                fibre_count=int(round(count)),
                depth_mm=mu.depth_mm,
                medial_lateral=mu.medial_lateral,
                nmj_fraction=float(nmj),
                velocity_mps=float(vel),
                length_ratio=float(lr),
            )
            jobs.append((mi * len(points) + gi, mu, cond))

    def run(job):
        idx, mu, cond = job
        geom = build_motor_unit(cfg, cond, mu.seed, ranges)
        raw = simulate_muap(geom, cond, cfg)
        mu_ids[idx] = mu.mu_id
        labels[idx] = mu.muscle_label
        conds[idx] = normalize_conditions(cond, ranges)
        muaps[idx] = preprocess(raw, window)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)

    return DatasetFile(cfg.rows, cfg.cols, window, ranges, mu_ids, labels, conds, muaps)


def split(d: DatasetFile, train_frac: float = 0.75, seed: int = 0) -> tuple[list[int], list[int]]:
    """Split by motor unit, stratified per muscle label; never by sample."""
    label_map = d.mu_label_map()
    if len(label_map) < 2:
        raise ConfigError("need at least 2 motor units to split")
    by_label: dict[int, list[int]] = {}
    for mu, lab in sorted(label_map.items()):
        by_label.setdefault(lab, []).append(mu)
    rng = np.random.default_rng(seed)
    train: list[int] = []
    test: list[int] = []
    for lab in sorted(by_label):
        mus = by_label[lab]
        perm = rng.permutation(len(mus))
        n_train = int(round(train_frac * len(mus)))
        for j, p in enumerate(perm):
            (train if j < n_train else test).append(mus[p])
    if not test or not train:
        raise ConfigError(
            f"split produced an empty side (train {len(train)}, test {len(test)}); "
            "add motor units or adjust train_frac"
        )
    return sorted(train), sorted(test)


def write_dataset(d: DatasetFile, path) -> None:
    lo, hi = d.ranges.as_arrays()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(
            struct.pack(
                "<6I", VERSION, d.rows, d.cols, d.time_samples, d.sample_count, d.unique_mu_ids.size
            )
        )
        f.write(np.stack([lo, hi], axis=1).astype("<f8").tobytes())
        for i in range(d.sample_count):
            f.write(struct.pack("<2I", int(d.mu_ids[i]), int(d.muscle_labels[i])))
            f.write(d.conditions[i].astype("<f8").tobytes())
            f.write(d.muaps[i].astype("<f4").tobytes())


def read_dataset(path) -> DatasetFile:
    try:
        blob = open(path, "rb").read()
    except FileNotFoundError:
        raise MissingInputError(f"dataset file not found: {path}") from None
    if len(blob) < 4 + 24 + 96 or blob[:4] != MAGIC:
        raise CorruptFileError(f"not a dataset file (bad magic) at {path}")
    version, rows, cols, t, n, mu_count = struct.unpack_from("<6I", blob, 4)
    if version != VERSION:
        raise CorruptFileError(f"unsupported dataset version {version}")
    off = 4 + 24
    rng_arr = np.frombuffer(blob, dtype="<f8", count=12, offset=off).reshape(6, 2)
    off += 96
    rec_size = 8 + 48 + rows * cols * t * 4
    if len(blob) != off + n * rec_size:
        raise CorruptFileError(
            f"dataset truncated or padded: expected {off + n * rec_size} bytes, got {len(blob)}"
        )
    names = [f.name for f in fields(ConditionRanges)]
    ranges = ConditionRanges(**{name: (float(rng_arr[i, 0]), float(rng_arr[i, 1])) for i, name in enumerate(names)})

    mu_ids = np.zeros(n, dtype=np.uint32)
    labels = np.zeros(n, dtype=np.uint32)
    conds = np.zeros((n, 6), dtype=np.float64)
    muaps = np.zeros((n, rows, cols, t), dtype=np.float32)
    for i in range(n):
        base = off + i * rec_size
        mu_ids[i], labels[i] = struct.unpack_from("<2I", blob, base)
        conds[i] = np.frombuffer(blob, dtype="<f8", count=6, offset=base + 8)
        muaps[i] = np.frombuffer(blob, dtype="<f4", count=rows * cols * t, offset=base + 56).reshape(
            rows, cols, t
        )
    d = DatasetFile(rows, cols, t, ranges, mu_ids, labels, conds, muaps)
    if d.unique_mu_ids.size != mu_count:
        raise CorruptFileError(f"MU count mismatch: header {mu_count}, records {d.unique_mu_ids.size}")
    return d


def export_conditions_csv(d: DatasetFile, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "mu_id", "muscle_label", "c_count", "c_depth", "c_ml", "c_nmj", "c_vel", "c_len"])
        for i in range(d.sample_count):
            w.writerow([i, int(d.mu_ids[i]), int(d.muscle_labels[i]), *(f"{v:.12g}" for v in d.conditions[i])])
