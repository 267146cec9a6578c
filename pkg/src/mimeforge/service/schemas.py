"""Request/response models for the generation service."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, Field

from ..errors import ShapeMismatchError


class MuapPayload(BaseModel):
    """One rows x cols x time grid, flattened row-major."""

    rows: int
    cols: int
    time_samples: int
    data: list[float]

    @classmethod
    def from_array(cls, a: np.ndarray) -> "MuapPayload":
        r, c, t = a.shape
        return cls(rows=r, cols=c, time_samples=t, data=[float(v) for v in a.reshape(-1)])

    def to_array(self) -> np.ndarray:
        n = self.rows * self.cols * self.time_samples
        if len(self.data) != n:
            raise ShapeMismatchError(
                f"payload has {len(self.data)} values but dims say {self.rows}x{self.cols}x{self.time_samples}"
            )
        return np.array(self.data, dtype=np.float32).reshape(self.rows, self.cols, self.time_samples)


class HealthResponse(BaseModel):
    status: str
    version: str
    checkpoint_loaded: bool
    iteration: int | None = None


class LoadCheckpointRequest(BaseModel):
    checkpoint_path: str


class CheckpointInfo(BaseModel):
    iteration: int
    rows: int
    cols: int
    time_samples: int
    latent_dim: int


class MorphRequest(BaseModel):
    muap: MuapPayload
    conditions: list[float] = Field(min_length=6, max_length=6)


class MuapResponse(BaseModel):
    muap: MuapPayload


class SampleRequest(BaseModel):
    conditions: list[float] = Field(min_length=6, max_length=6)
    seed: int = 0


class PathKnot(BaseModel):
    t: float
    conditions: list[float] = Field(min_length=6, max_length=6)


class SweepRequest(BaseModel):
    knots: list[PathKnot] = Field(min_length=2)
    steps: int = 9
    muap: MuapPayload | None = None
    latent: list[float] | None = None


class SweepResponse(BaseModel):
    fractions: list[float]
    conditions: list[list[float]]
    distances: list[float]
    muaps: list[MuapPayload]


class NrmseRequest(BaseModel):
    reference: MuapPayload
    candidate: MuapPayload


class NrmseResponse(BaseModel):
    nrmse_percent: float


class SimulateRequest(BaseModel):
    """One-shot teacher simulation under physical conditions."""

    fibre_count: int = 200
    depth_mm: float = 5.0
    medial_lateral: float = 0.25
    nmj_fraction: float = 0.5
    velocity_mps: float = 4.0
    length_ratio: float = 1.0
    seed: int = 7
    preprocessed: bool = True


class ExcitationModel(BaseModel):
    duration_s: float
    sample_rate_hz: float = 2000.0
    knots: list[dict]


class PoolModel(BaseModel):
    n_units: int
    recruitment_range: float = 30.0
    rate_gain: float = 2.0
    min_rate_hz: float = 8.0
    peak_rate_hz: float = 35.0
    isi_cov: float = 0.2
    seed: int = 0


class SpikeTrainRequest(BaseModel):
    pool: PoolModel
    excitation: ExcitationModel


class SpikeTrainResponse(BaseModel):
    duration_s: float
    trains: list[list[float]]
