"""Run configuration: one strict JSON document drives every CLI command.

Unknown keys are rejected so typos in experiment sweeps fail fast. Every
command writes the fully-resolved config plus a manifest (tool version,
input-file hashes) next to its outputs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .conditions import ConditionRanges, default_condition_grid
from .errors import ConfigError, MissingInputError
from .losses import LossWeights
from .model import ModelConfig
from .teacher import CylinderConfig
from .trainer import TrainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CylinderSection(_Section):
    skin_radius_mm: float = 25.0
    anisotropy_ratio: float = 0.2
    rows: int = 10
    cols: int = 32
    row_spacing_mm: float = 4.0
    raw_sample_rate_hz: float = 4096.0
    raw_duration_s: float = 0.064
    territory_radius_mm: float = 2.5
    base_fibre_length_mm: float = 100.0
    source_gain_mv: float = 10.8


class DatasetSection(_Section):
    mu_count: int = 8
    muscle_labels: list[int] = Field(default_factory=lambda: [0])
    mu_seed: int = 11
    grid: dict[str, list[float]] = Field(default_factory=default_condition_grid)
    window: int = 96
    train_frac: float = 0.75
    split_seed: int = 0
    ranges: dict[str, tuple[float, float]] | None = None


class ModelSection(_Section):
    rows: int | None = None  # default: cylinder grid
    cols: int | None = None
    time_samples: int | None = None  # default: dataset window
    latent_dim: int = 16
    condition_embed_dim: int = 64
    base_channels: int = 16
    expert_count: int = 8
    expert_min_scale: float = 0.25
    expert_max_scale: float = 2.0
    gate_hidden_dim: int = 64
    schedule: str = "linear"  # KL anneal schedule kind
    dtype: str = "float32"
    init_seed: int = 0


class TrainSection(_Section):
    learning_rate: float = 1e-5
    batch_size: int = 32
    epochs: int = 45
    seed: int = 0
    lambda1: float = 10.0
    lambda2_max: float = 0.05
    lambda3: float = 0.5
    anneal_k: float = 1.0
    anneal_x0: float = 6.0
    anneal_n: int = 30000
    rms_decay: float = 0.99
    rms_epsilon: float = 1e-8
    checkpoint_every: int = 1
    max_iterations: int | None = None


class PathsSection(_Section):
    out_dir: str = "runs/out"
    dataset: str | None = None
    checkpoint: str | None = None


class RunConfig(_Section):
    cylinder: CylinderSection = Field(default_factory=CylinderSection)
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    paths: PathsSection = Field(default_factory=PathsSection)

    def cylinder_config(self) -> CylinderConfig:
        c = self.cylinder
        return CylinderConfig(
            skin_radius_mm=c.skin_radius_mm,
            anisotropy_ratio=c.anisotropy_ratio,
            rows=c.rows,
            cols=c.cols,
            row_spacing_mm=c.row_spacing_mm,
            raw_sample_rate_hz=c.raw_sample_rate_hz,
            raw_duration_s=c.raw_duration_s,
            territory_radius_mm=c.territory_radius_mm,
            base_fibre_length_mm=c.base_fibre_length_mm,
            source_gain_mv=c.source_gain_mv,
        )

    def condition_ranges(self) -> ConditionRanges:
        if self.dataset.ranges is None:
            return ConditionRanges()
        try:
            return ConditionRanges(**self.dataset.ranges)
        except TypeError as exc:
            raise ConfigError(f"bad condition ranges: {exc}") from None

    def model_config_resolved(self) -> ModelConfig:
        m = self.model
        return ModelConfig(
            rows=m.rows if m.rows is not None else self.cylinder.rows,
            cols=m.cols if m.cols is not None else self.cylinder.cols,
            time_samples=m.time_samples if m.time_samples is not None else self.dataset.window,
            latent_dim=m.latent_dim,
            condition_embed_dim=m.condition_embed_dim,
            base_channels=m.base_channels,
            n_experts=m.expert_count,
            expert_min_scale=m.expert_min_scale,
            expert_max_scale=m.expert_max_scale,
            gate_hidden_dim=m.gate_hidden_dim,
            dtype=m.dtype,
        )

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            epochs=t.epochs,
            seed=t.seed,
            rms_decay=t.rms_decay,
            rms_epsilon=t.rms_epsilon,
            checkpoint_every=t.checkpoint_every,
            max_iterations=t.max_iterations,
        )

    def loss_weights(self) -> LossWeights:
        t = self.train
        return LossWeights(
            lambda1=t.lambda1,
            lambda2_max=t.lambda2_max,
            lambda3=t.lambda3,
            schedule=self.model.schedule,
            anneal_k=t.anneal_k,
            anneal_x0=t.anneal_x0,
            anneal_n=t.anneal_n,
        )


def load_run_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config JSON: {exc}") from None
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(x) for x in first["loc"])
        raise ConfigError(f"invalid config at '{loc}': {first['msg']}") from None


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir, rc: RunConfig, inputs: dict[str, str | Path]) -> None:
    """Drop resolved_config.json and run_manifest.json into `out_dir`.

    Together they pin everything needed to reproduce the run bit-exactly:
    the fully-resolved config, the tool version, and content hashes of every
    input file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(rc.model_dump_json(indent=2) + "\n")
    manifest = {
        "tool_version": __version__,
        "input_hashes": {name: sha256_file(p) for name, p in sorted(inputs.items())},
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
