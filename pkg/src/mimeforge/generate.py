"""Inference-time generation: morphing, ab initio sampling, condition sweeps,
traversal and extrapolation experiments."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch

from .conditions import CONDITION_NAMES
from .dataset import DatasetFile
from .errors import ConfigError
from .metrics import nrmse
from .model import BioMimeModel, muap_to_tensor, tensor_to_muap

# Condition-vector indices of the four dataset grid axes.
GRID_AXIS_INDEX = {"fibre_count": 0, "nmj": 3, "velocity": 4, "length_ratio": 5}


@dataclass(frozen=True)
class ConditionPath:
    """Piecewise-linear path through normalized condition space.

    Knots are (time fraction, 6-vector); fractions strictly increase from 0
    to 1.
    """

    knots: tuple[tuple[float, np.ndarray], ...]

    def __post_init__(self):
        if len(self.knots) < 2:
            raise ConfigError("a condition path needs at least 2 knots")
        fracs = [k[0] for k in self.knots]
        if fracs[0] != 0.0 or fracs[-1] != 1.0:
            raise ConfigError(f"path must span [0, 1], got [{fracs[0]}, {fracs[-1]}]")
        if any(b <= a for a, b in zip(fracs, fracs[1:])):
            raise ConfigError(f"path time fractions must strictly increase, got {fracs}")
        for _, c in self.knots:
            if np.asarray(c).shape != (6,):
                raise ConfigError("each path knot needs a 6-component condition vector")

    @classmethod
    def from_knots(cls, knots) -> "ConditionPath":
        return cls(tuple((float(t), np.asarray(c, dtype=np.float64)) for t, c in knots))

    @classmethod
    def constant(cls, conditions) -> "ConditionPath":
        c = np.asarray(conditions, dtype=np.float64)
        return cls.from_knots([(0.0, c), (1.0, c)])

    def at(self, u: float) -> np.ndarray:
        u = min(max(float(u), 0.0), 1.0)
        for (t0, c0), (t1, c1) in zip(self.knots, self.knots[1:]):
            if u <= t1:
                w = (u - t0) / (t1 - t0)
                return (1.0 - w) * c0 + w * c1
        return self.knots[-1][1].copy()

    def to_json_obj(self) -> list[dict]:
        return [{"t": t, "conditions": list(map(float, c))} for t, c in self.knots]

    @classmethod
    def from_json_obj(cls, obj) -> "ConditionPath":
        try:
            return cls.from_knots([(k["t"], k["conditions"]) for k in obj])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed condition path: {exc}") from None


def morph(x: np.ndarray, cs, model: BioMimeModel) -> np.ndarray:
    """Re-decode `x` under conditions `cs` with the latent fixed at the
    posterior mean. Deterministic."""
    with torch.no_grad():
        z = model.encode(muap_to_tensor(x, model.cfg.torch_dtype)).mu
        out = model.decode(z, _cond_array(cs))
    return tensor_to_muap(out)[0]


def sample(cs, seed: int, model: BioMimeModel) -> np.ndarray:
    """Decode a standard-normal latent (seeded) under conditions `cs`."""
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(1, model.cfg.latent_dim, generator=gen, dtype=model.cfg.torch_dtype)
    with torch.no_grad():
        out = model.decode(z, _cond_array(cs))
    return tensor_to_muap(out)[0]


@dataclass
class SweepResult:
    fractions: np.ndarray  # (steps,)
    conditions: np.ndarray  # (steps, 6)
    muaps: np.ndarray  # (steps, rows, cols, T)
    distances: np.ndarray  # (steps,) euclidean distance from the path start


def sweep(
    model: BioMimeModel,
    path: ConditionPath,
    steps: int,
    muap: np.ndarray | None = None,
    latent: np.ndarray | torch.Tensor | None = None,
) -> SweepResult:
    """Decode one fixed latent at `steps` evenly spaced path positions.

    The latent comes from encoding `muap` (computed once) or from `latent`
    directly; exactly one must be given. No randomness is involved.
    """
    if steps < 2:
        raise ConfigError(f"sweep needs steps >= 2, got {steps}")
    if (muap is None) == (latent is None):
        raise ConfigError("pass exactly one of muap= or latent= as the sweep origin")
    with torch.no_grad():
        if muap is not None:
            z = model.encode(muap_to_tensor(muap, model.cfg.torch_dtype)).mu
        else:
            z = torch.as_tensor(latent, dtype=model.cfg.torch_dtype).reshape(1, -1)
        us = np.linspace(0.0, 1.0, steps)
        conds = np.stack([path.at(u) for u in us])
        outs = []
        for i in range(steps):
            outs.append(tensor_to_muap(model.decode(z, conds[i]))[0])
    dists = np.linalg.norm(conds - conds[0], axis=1)
    return SweepResult(us, conds, np.stack(outs), dists)


@dataclass
class TraversalResult:
    """Per-step mean error over all traversed test MUs."""

    fractions: np.ndarray  # (steps,)
    mean_nrmse: np.ndarray  # (steps,) NaN where no ground truth exists
    gt_steps: list[int]  # indices of the 3 ground-truth intersections
    per_mu_rows: list[dict]  # per (mu, step) metadata for CSV export
    muaps: np.ndarray  # (n_mu * steps, rows, cols, T) decoded tensors
    record_mu_ids: np.ndarray
    record_steps: np.ndarray
    record_conditions: np.ndarray


def traversal_experiment(
    data: DatasetFile,
    test_mu_ids: list[int],
    model: BioMimeModel,
    axis: str = "velocity",
    steps: int = 9,
) -> TraversalResult:
    """Encode each test MU at grid point A and sweep linearly A -> B -> C.

    A, B, C are the first three grid values of `axis` (collinear and equally
    spaced in normalized condition space), with the other grid axes pinned at
    their first value. nRMSE is recorded wherever the swept conditions
    intersect a teacher record.
    """
    if axis not in GRID_AXIS_INDEX:
        raise ConfigError(f"traversal axis must be one of {sorted(GRID_AXIS_INDEX)}, got '{axis}'")
    if steps < 3 or steps % 2 == 0:
        raise ConfigError(f"steps must be odd and >= 3 so the middle ground truth is hit, got {steps}")
    ai = GRID_AXIS_INDEX[axis]
    us = np.linspace(0.0, 1.0, steps)
    gt_steps = [0, steps // 2, steps - 1]

    sums = np.zeros(steps)
    counts = np.zeros(steps, dtype=int)
    rows: list[dict] = []
    tensors = []
    rec_mu, rec_step, rec_cond = [], [], []
    for mu in test_mu_ids:
        recs = data.indices_for_mu(mu)
        if recs.size == 0:
            raise ConfigError(f"MU {mu} has no records in the dataset")
        conds = data.conditions[recs]
        vals = np.unique(conds[:, ai])
        if vals.size < 3:
            raise ConfigError(
                f"axis '{axis}' has only {vals.size} grid value(s); traversal needs >= 3"
            )
        v3 = vals[:3]
        # Pin the other grid axes at their first grid value.
        pin = {j: np.unique(conds[:, j])[0] for j in GRID_AXIS_INDEX.values() if j != ai}

        def record_at(v):
            mask = np.isclose(conds[:, ai], v)
            for j, pv in pin.items():
                mask &= np.isclose(conds[:, j], pv)
            hits = np.nonzero(mask)[0]
            if hits.size != 1:
                raise ConfigError(
                    f"expected exactly one record for MU {mu} at {axis}={v:.4g}, found {hits.size}"
                )
            return int(recs[hits[0]])

        gt_records = [record_at(v) for v in v3]
        c_a = data.conditions[gt_records[0]].copy()
        c_c = c_a.copy()
        c_c[ai] = v3[2]
        path = ConditionPath.from_knots([(0.0, c_a), (1.0, c_c)])
        res = sweep(model, path, steps, muap=data.muaps[gt_records[0]])

        for s in range(steps):
            err = None
            if s in gt_steps:
                gt = data.muaps[gt_records[gt_steps.index(s)]]
                err = nrmse(gt, res.muaps[s])
                sums[s] += err
                counts[s] += 1
            rows.append(
                {
                    "mu_id": mu,
                    "step": s,
                    "fraction": float(us[s]),
                    **{f"c_{CONDITION_NAMES[i]}": float(res.conditions[s, i]) for i in range(6)},
                    "distance": float(res.distances[s]),
                    "nrmse_percent": "" if err is None else f"{err:.6g}",
                }
            )
            tensors.append(res.muaps[s])
            rec_mu.append(mu)
            rec_step.append(s)
            rec_cond.append(res.conditions[s])

    mean = np.full(steps, np.nan)
    mean[counts > 0] = sums[counts > 0] / counts[counts > 0]
    return TraversalResult(
        us,
        mean,
        gt_steps,
        rows,
        np.stack(tensors),
        np.array(rec_mu, dtype=np.uint32),
        np.array(rec_step, dtype=np.uint32),
        np.stack(rec_cond),
    )


@dataclass
class ExtrapolationRecord:
    conditions: np.ndarray
    distance: float
    muap: np.ndarray


def extrapolation_set(
    model: BioMimeModel,
    base_conditions: np.ndarray | None,
    max_rel_distance: float,
    n: int,
    seed: int = 0,
) -> list[ExtrapolationRecord]:
    """Generate `n` ab initio samples at conditions pushed beyond [0.5, 1].

    A record at relative distance r scales the deviation from the range
    midpoint by (1 + 2r), i.e. the worst component overshoots the range by
    r * (range width). r runs evenly from 0 to `max_rel_distance`; each record
    carries its distance tag for downstream embedding.
    """
    if n < 1:
        raise ConfigError("extrapolation set needs n >= 1")
    rng = np.random.default_rng(seed)
    if base_conditions is None:
        bases = rng.uniform(0.5, 1.0, size=(n, 6))
    else:
        bases = np.atleast_2d(np.asarray(base_conditions, dtype=np.float64))
    gen = torch.Generator().manual_seed(seed)
    out = []
    with torch.no_grad():
        for i in range(n):
            r = max_rel_distance * (i / (n - 1)) if n > 1 else max_rel_distance
            base = bases[i % bases.shape[0]]
            cond = 0.75 + (base - 0.75) * (1.0 + 2.0 * r)
            z = torch.randn(1, model.cfg.latent_dim, generator=gen, dtype=model.cfg.torch_dtype)
            muap = tensor_to_muap(model.decode(z, cond))[0]
            out.append(ExtrapolationRecord(cond, float(r), muap))
    return out


def validation_nrmse(
    data: DatasetFile,
    mu_ids: list[int],
    model: BioMimeModel,
    seed: int = 0,
    pairs_per_mu: int = 16,
    batch_size: int = 32,
) -> float:
    """Mean morph error over same-MU record pairs.

    For each sampled pair (a, b) of one MU, record a is morphed to record b's
    conditions and compared against record b. This is the held-out validation
    protocol; on the train split it doubles as the overfit metric.
    """
    rng = np.random.default_rng(seed)
    src, tgt = [], []
    for mu in mu_ids:
        recs = data.indices_for_mu(mu)
        if recs.size < 2:
            continue
        for _ in range(min(pairs_per_mu, recs.size)):
            a, b = rng.choice(recs.size, size=2, replace=False)
            src.append(int(recs[a]))
            tgt.append(int(recs[b]))
    if not src:
        raise ConfigError("no morph pairs available (each MU needs >= 2 records)")

    errs = []
    dtype = model.cfg.torch_dtype
    with torch.no_grad():
        for start in range(0, len(src), batch_size):
            s = src[start : start + batch_size]
            t = tgt[start : start + batch_size]
            z = model.encode(muap_to_tensor(data.muaps[s], dtype)).mu
            out = tensor_to_muap(model.decode(z, torch.from_numpy(data.conditions[t]).to(dtype)))
            for j, ti in enumerate(t):
                errs.append(nrmse(data.muaps[ti], out[j]))
    return float(np.mean(errs))


def write_step_metadata_csv(rows: list[dict], path) -> None:
    if not rows:
        raise ConfigError("no metadata rows to write")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)


def _cond_array(cs) -> np.ndarray:
    a = np.asarray(cs, dtype=np.float64)
    if a.shape != (6,):
        raise ConfigError(f"expected 6 condition components, got shape {a.shape}")
    return a
