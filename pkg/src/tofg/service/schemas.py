"""Request and response bodies for the HTTP service.

Scenario, graph, and checkpoint documents travel as free-form JSON
objects; their shape is owned by the core serializers, so the schemas
here only pin the envelope. Config sections are override mappings
validated server-side against the dataclass defaults.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str
    count: int = Field(default=1, ge=0)
    seed: int = 0


class GenerateResponse(BaseModel):
    scenarios: list[dict]


class BuildGraphRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: dict
    frames: list[int] | None = None
    graph: dict = Field(default_factory=dict)


class BuildGraphResponse(BaseModel):
    graph: dict
    counts: dict[str, int]


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    scenarios: list[dict]
    graph: dict = Field(default_factory=dict)
    model: dict = Field(default_factory=dict)
    train: dict = Field(default_factory=dict)


class TrainResponse(BaseModel):
    checkpoint: dict
    history: list[float]
    n_samples: int


class PredictRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    scenario: dict
    checkpoint: dict | None = None
    frames: list[int] | None = None
    graph: dict = Field(default_factory=dict)
    model: dict = Field(default_factory=dict)


class AttentionDoc(BaseModel):
    header: list[str]
    rows: list[list[int | float]]


class PredictResponse(BaseModel):
    scenario_id: str
    frames: list[int]
    waypoints: list[list[float]]
    waypoints_ego: list[list[float]]
    attention: AttentionDoc


class SimulateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    scenario: dict
    planner: str = "model"
    checkpoint: dict | None = None
    graph: dict = Field(default_factory=dict)
    model: dict = Field(default_factory=dict)
    sim: dict = Field(default_factory=dict)


class SimulateResponse(BaseModel):
    trace: dict
    report: dict[str, float]


class BatchSimulateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    scenarios: list[dict]
    planner: str = "model"
    checkpoint: dict | None = None
    jobs: int = Field(default=1, ge=1)
    graph: dict = Field(default_factory=dict)
    model: dict = Field(default_factory=dict)
    sim: dict = Field(default_factory=dict)


class BatchRow(BaseModel):
    scenario_id: str
    report: dict[str, float]


class BatchFailure(BaseModel):
    scenario_id: str
    error: str


class BatchSimulateResponse(BaseModel):
    rows: list[BatchRow]
    mean: dict[str, float]
    failures: list[BatchFailure]
