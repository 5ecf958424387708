"""
Scenario file schema. Unknown fields are rejected; missing blocks are filled
from frozen default blocks before validation so that the resolved scenario
written into every artifact is complete.
"""

import copy
import dataclasses
import json
from enum import Enum
from typing import Any, Dict, List, Optional

import frozendict
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..errors import ScenarioError
from ..grid import SCHEMA_VERSION
from ..market_params import (
    DEFAULT_FACE_VALUE,
    DEFAULT_GRID_POINTS,
    DEFAULT_MC_PARTITION,
    DEFAULT_MC_SAMPLES,
    DEFAULT_QUADRATURE,
    DEFAULT_SEED,
    DEFAULT_SUBORDINATION,
    EMPIRICAL_MARKET_PARAMETERS,
)
from ..model import (
    MarketBlock,
    MarketParams,
    MultiMarketParams,
    OverlapSpec,
    SubordinationSpec,
)
from ..oracle.estimate import McConfig
from ..quadrature import QuadratureSpec


class Mode(str, Enum):
    SUBORDINATED = "subordinated"
    NOSUB = "nosub"
    NOSUB_MULTIMARKET = "nosub-multimarket"
    LIMIT_SUBORDINATED = "limit-subordinated"
    LIMIT_EQUAL = "limit-equal"
    LIMIT_FINITE_VS_INFINITE = "limit-finite-vs-infinite"
    LIMIT_TWO_MARKETS = "limit-two-markets"
    NO_DEFAULT = "no-default"
    CORRELATION_SWEEP = "correlation-sweep"
    CALIBRATE = "calibrate"
    MC_VALIDATE = "mc-validate"


ANALYTIC_TARGETS = (Mode.SUBORDINATED, Mode.NOSUB, Mode.NOSUB_MULTIMARKET)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MarketModel(StrictModel):
    mu: float
    rho: float
    c: float
    n_fluct: float
    t_mat: float
    v0: float

    def to_params(self) -> MarketParams:
        return MarketParams(**self.model_dump())


class BlockModel(StrictModel):
    size: int
    market: Optional[Dict[str, float]] = None


class SubordinationModel(StrictModel):
    f_senior: float
    f_junior: float


class OverlapModel(StrictModel):
    r1: float
    r12: float
    gamma: float
    f0: float


class QuadratureModel(StrictModel):
    z_nodes: int
    u_nodes: int
    mode: str
    rel_tol: float


class McModel(StrictModel):
    n_samples: int
    seed: int
    sampler: str
    antithetic: bool
    bins: int
    partition_size: int
    tail_thresholds: List[float]


class GridModel(StrictModel):
    points: int
    integration_points: int
    marginals: bool


class SweepModel(StrictModel):
    c_values: List[float]
    mu_values: Optional[List[float]] = None
    method: str


class SyntheticModel(StrictModel):
    k_dim: int
    m_observations: int
    n_fluct: float
    c: float
    rho: float


class CalibrationModel(StrictModel):
    returns_csv: Optional[str] = None
    synthetic: SyntheticModel
    n_grid: Optional[List[float]] = None


class LimitModel(StrictModel):
    r1: int
    l_values: Optional[List[float]] = None


class ValidationModel(StrictModel):
    target: Mode
    density_threshold: float
    z_bound: float
    boundary_width: float


class OutputModel(StrictModel):
    directory: str
    prefix: Optional[str] = None
    stamp_time: bool


class ScenarioFile(StrictModel):
    schema_version: str = SCHEMA_VERSION
    name: Optional[str] = None
    description: Optional[str] = None
    mode: Mode
    k_obligors: List[int] = Field(min_length=1)
    market: MarketModel
    blocks: Optional[List[BlockModel]] = None
    subordination: SubordinationModel
    overlap: OverlapModel
    faces: Optional[List[List[float]]] = None
    quadrature: QuadratureModel
    mc: McModel
    grid: GridModel
    sweep: SweepModel
    calibration: CalibrationModel
    limit: LimitModel
    validate_against: ValidationModel
    output: OutputModel

    def market_params(self) -> MarketParams:
        return self.market.to_params()

    def multimarket(self) -> MultiMarketParams:
        if not self.blocks:
            raise ScenarioError("mode needs market blocks", ["/blocks"])
        base = self.market.model_dump()
        return MultiMarketParams(
            tuple(
                MarketBlock(MarketParams(**(base | (b.market or {}))), b.size)
                for b in self.blocks
            )
        )

    def subordination_spec(self) -> SubordinationSpec:
        return SubordinationSpec(**self.subordination.model_dump())

    def overlap_spec(self) -> OverlapSpec:
        return OverlapSpec(**self.overlap.model_dump())

    def quadrature_spec(self) -> QuadratureSpec:
        return QuadratureSpec(**self.quadrature.model_dump())

    def mc_config(self, workers: int = 1) -> McConfig:
        d = self.mc.model_dump()
        d["tail_thresholds"] = tuple(d["tail_thresholds"])
        return McConfig(**d, workers=workers)


DEFAULT_BLOCKS = frozendict.frozendict(
    {
        "market": frozendict.frozendict(dataclasses.asdict(EMPIRICAL_MARKET_PARAMETERS)),
        "subordination": frozendict.frozendict(dataclasses.asdict(DEFAULT_SUBORDINATION)),
        "overlap": frozendict.frozendict(r1=0.5, r12=0.0, gamma=0.5, f0=DEFAULT_FACE_VALUE),
        "quadrature": frozendict.frozendict(DEFAULT_QUADRATURE.as_dict()),
        "mc": frozendict.frozendict(
            n_samples=DEFAULT_MC_SAMPLES,
            seed=DEFAULT_SEED,
            sampler="compound",
            antithetic=False,
            bins=50,
            partition_size=DEFAULT_MC_PARTITION,
            tail_thresholds=(0.1, 0.3, 0.5),
        ),
        "grid": frozendict.frozendict(
            points=DEFAULT_GRID_POINTS, integration_points=201, marginals=False
        ),
        "sweep": frozendict.frozendict(
            c_values=tuple(round(0.1 * i, 1) for i in range(10)), method="mc"
        ),
        "calibration": frozendict.frozendict(
            synthetic=frozendict.frozendict(
                k_dim=20, m_observations=5000, n_fluct=6.0, c=0.28, rho=0.35
            )
        ),
        "limit": frozendict.frozendict(r1=10),
        "validate_against": frozendict.frozendict(
            target="subordinated",
            density_threshold=1e-3,
            z_bound=3.0,
            boundary_width=0.02,
        ),
        "output": frozendict.frozendict(directory="out", stamp_time=False),
    }
)

DEFAULT_K_OBLIGORS = (100,)


def _thaw(value):
    if isinstance(value, (dict, frozendict.frozendict)):
        return {k: _thaw(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_thaw(v) for v in value]
    return value


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(document: dict, overrides: List[str]) -> dict:
    """Apply dotted.path=value overrides; values parse as JSON or stay strings."""
    document = copy.deepcopy(document)
    for override in overrides:
        path, sep, raw = override.partition("=")
        if not sep or not path:
            raise ScenarioError(f"override {override!r} is not of the form a.b=value")
        keys = path.split(".")
        node = document
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ScenarioError(
                    f"override {override!r} descends into a non object", ["/" + "/".join(keys)]
                )
        node[keys[-1]] = _parse_value(raw)
    return document


def _merge(defaults, given):
    if not isinstance(given, dict):
        return given
    merged = _thaw(defaults)
    for key, value in given.items():
        if key in merged and isinstance(merged[key], dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def resolve(document: dict, overrides: Optional[List[str]] = None) -> ScenarioFile:
    """Fill default blocks, apply overrides and validate against the schema."""
    document = apply_overrides(document, overrides or [])
    resolved = dict(document)
    for key, defaults in DEFAULT_BLOCKS.items():
        resolved[key] = _merge(defaults, document.get(key, {}))
    resolved.setdefault("k_obligors", list(DEFAULT_K_OBLIGORS))
    if isinstance(resolved["k_obligors"], int):
        resolved["k_obligors"] = [resolved["k_obligors"]]
    try:
        return ScenarioFile.model_validate(resolved)
    except ValidationError as e:
        pointers = ["/" + "/".join(str(p) for p in err["loc"]) for err in e.errors()]
        messages = "; ".join(err["msg"] for err in e.errors())
        raise ScenarioError(f"scenario does not match the schema: {messages}", pointers)
