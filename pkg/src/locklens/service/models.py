"""Request/response schemas for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..engine import POLICIES


class SimulateRequest(BaseModel):
    workload: str
    seed: int = 0
    params: dict[str, int] = Field(default_factory=dict)


class SimulateResponse(BaseModel):
    trace: str
    makespan: int
    threads: int
    events: int
    locks: list[str]
    final_memory: dict[str, int]


class DetectRequest(BaseModel):
    trace: str


class DetectResponse(BaseModel):
    ulcp_count: int
    categories: dict[str, int]
    pairs: list[dict]
    warnings: list[str]


class TransformRequest(BaseModel):
    trace: str


class TransformResponse(BaseModel):
    trace: str
    topology: dict
    locksets: dict
    removed: list[int]


class ReplayRequest(BaseModel):
    trace: str
    policy: str = "elsc"
    seed: int = 0
    runs: int = 1
    dynamic: bool = True

    def policy_ok(self) -> bool:
        return self.policy in POLICIES


class ReplayResponse(BaseModel):
    results: list[dict]
    makespans: list[int]
    identical: bool


class ReportRequest(BaseModel):
    workload: str | None = None
    trace: str | None = None
    seed: int = 0
    params: dict[str, int] = Field(default_factory=dict)
    policy: str = "elsc"
    dynamic: bool = True
    name: str | None = None


class ReportResponse(BaseModel):
    report: dict
    text: str


class SweepRequest(BaseModel):
    workload: str
    param: str = "T"
    values: list[int]
    seed: int = 0
    name: str | None = None


class SweepResponse(BaseModel):
    rows: list[dict]
    csv: str


class CorpusEntry(BaseModel):
    name: str
    seed: int = 0
    params: dict[str, int] = Field(default_factory=dict)
    notes: str = ""


class CorpusListResponse(BaseModel):
    workloads: list[CorpusEntry]


class CorpusRunRequest(BaseModel):
    seed: int | None = None
    params: dict[str, int] = Field(default_factory=dict)


class HealthResponse(BaseModel):
    ok: bool
    version: str
