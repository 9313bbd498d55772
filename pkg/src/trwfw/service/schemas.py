"""Request and response models for the inference service."""

from typing import Literal, Optional

from pydantic import BaseModel, Field

from ..bench import SCHEMA_VERSION


class EngineOptions(BaseModel):
    """Solver settings shared by infer and bench requests."""

    oracle: Literal["exact", "icm", "portfolio"] = "exact"
    mode: Literal["adaptive", "fixed"] = "adaptive"
    delta_init: float = Field(default=0.01, gt=0.0, le=0.25)
    delta_fixed: float = Field(default=1e-4, gt=0.0, le=0.25)
    eps: float = Field(default=0.5, gt=0.0)
    max_inner_iters: int = Field(default=200, ge=1)
    correction: bool = True
    local_search: bool = False
    local_search_iters: int = Field(default=5, ge=0)
    rho_iters: int = Field(default=10, ge=0)
    rho_step: Literal["literal", "standard"] = "literal"


class GenRequest(BaseModel):
    family: Literal["clique", "grid"]
    n: Optional[int] = None
    rows: Optional[int] = None
    cols: Optional[int] = None
    theta: float = 1.0
    seed: int = 0


class GenResponse(BaseModel):
    uai: str
    family: str
    num_vars: int
    num_edges: int
    seed: int


class InferRequest(BaseModel):
    uai: str
    options: EngineOptions = Field(default_factory=EngineOptions)
    include_edge_marginals: bool = False
    include_trace: bool = False


class RhoIterationSummary(BaseModel):
    rho_iteration: int
    primal: float
    fw_gap: float
    logz_bound: float
    map_calls: int
    icm_calls: int


class EdgeMarginal(BaseModel):
    edge: tuple[int, int]
    table: list[list[float]]


class InferResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    num_vars: int
    node_marginals: list[list[float]]
    edge_marginals: Optional[list[EdgeMarginal]] = None
    logz_upper_bound: float
    primal: float
    fw_gap: float
    rho: list[float]
    map_calls: int
    icm_calls: int
    per_rho_iteration: list[RhoIterationSummary]
    trace: Optional[list[dict]] = None


class BenchRequest(BaseModel):
    family: Literal["clique", "grid", "uai-file"]
    trials: int = Field(default=1, ge=1)
    seed: int = 0
    n: Optional[int] = None
    rows: Optional[int] = None
    cols: Optional[int] = None
    theta: float = 1.0
    uai: Optional[str] = None
    options: EngineOptions = Field(default_factory=EngineOptions)


class ErrorRecord(BaseModel):
    """Machine-readable failure payload."""

    error: str
    message: str
