"""JSON configuration schema shared by the experiments and the CLI.

Every document carries ``"version": 1``; unknown keys are rejected.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .graph import Graph, complete_graph, connected_rgg, from_edge_list, generate_rgg
from .models import (
    UpdateMatrixSet,
    broadcast_gossip_set,
    bwgossip_failure_set,
    bwgossip_set,
    pushsum_kempe_set,
    random_gossip_set,
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RggSpec(_Strict):
    type: Literal["rgg"] = "rgg"
    n: int = Field(ge=2)
    r0: float = Field(gt=0)
    seed: int = 0
    # redraw with seed+1, seed+2, ... until connected
    ensure_connected: bool = True


class EdgesSpec(_Strict):
    type: Literal["edges"] = "edges"
    n: int = Field(ge=2)
    edges: List[Tuple[int, int]]


class CompleteSpec(_Strict):
    type: Literal["complete"] = "complete"
    n: int = Field(ge=2)


GraphSpec = Annotated[Union[RggSpec, EdgesSpec, CompleteSpec], Field(discriminator="type")]


class VectorX0(_Strict):
    type: Literal["vector"] = "vector"
    values: List[float]


class NormalX0(_Strict):
    type: Literal["normal"] = "normal"
    seed: int = 0


X0Spec = Annotated[Union[VectorX0, NormalX0], Field(discriminator="type")]

Algorithm = Literal["bwgossip", "random_gossip", "pushsum", "broadcast_gossip"]


class StudySpec(_Strict):
    n_values: List[int] = [4, 8, 12, 16]
    r0: float = 4.0
    p_e_values: List[float] = [0.0, 0.1, 0.2, 0.3]
    alphas: List[float] = [1.0, 0.5, 0.0]
    # fixed horizon; when unset each point runs ceil(horizon_factor / kappa) ticks
    ticks: Optional[int] = Field(default=None, ge=1)
    horizon_factor: float = Field(default=25.0, gt=0)
    workers: int = Field(default=1, ge=1)


class ExperimentConfig(_Strict):
    version: Literal[1]
    graph: Optional[GraphSpec] = None
    algorithm: Algorithm = "bwgossip"
    family_path: Optional[str] = None
    gamma: float = Field(default=0.5, gt=0, lt=1)
    p_e: Optional[float] = Field(default=None, ge=0, lt=1)
    replicas: int = Field(default=1, ge=1)
    ticks: int = Field(default=1000, ge=0)
    alpha: float = Field(default=1.0, ge=0, le=1)
    x0: X0Spec = NormalX0()
    mode: Literal["average", "sum", "single_variate"] = "average"
    trigger: Optional[int] = None
    diagnostics: bool = False
    seed: int = 0
    output_dir: str = "out"
    study: StudySpec = StudySpec()

    @model_validator(mode="after")
    def _needs_graph(self):
        if self.graph is None and self.family_path is None:
            raise ValueError("config needs a 'graph' (or a 'family_path')")
        if self.mode == "sum" and self.trigger is None:
            raise ValueError("sum mode needs a 'trigger' node")
        return self


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.model_validate(json.loads(Path(path).read_text()))


def build_graph(spec) -> tuple[Graph, int]:
    """Graph for a spec plus the number of rejected (disconnected) RGG draws."""
    if isinstance(spec, RggSpec):
        if spec.ensure_connected:
            return connected_rgg(spec.n, spec.r0, spec.seed)
        return generate_rgg(spec.n, spec.r0, spec.seed), 0
    if isinstance(spec, EdgesSpec):
        return from_edge_list(spec.n, spec.edges), 0
    return complete_graph(spec.n), 0


def build_family(cfg: ExperimentConfig, g: Optional[Graph]) -> UpdateMatrixSet:
    if cfg.family_path is not None:
        return UpdateMatrixSet.from_json(Path(cfg.family_path).read_text())
    if cfg.algorithm == "pushsum":
        return pushsum_kempe_set(g.n)
    if cfg.algorithm == "random_gossip":
        return random_gossip_set(g)
    if cfg.algorithm == "broadcast_gossip":
        return broadcast_gossip_set(g, cfg.gamma)
    if cfg.p_e is not None:
        return bwgossip_failure_set(g, cfg.p_e, seed=cfg.seed)
    return bwgossip_set(g)


def build_x0(spec, n: int) -> np.ndarray:
    if isinstance(spec, VectorX0):
        x0 = np.array(spec.values, dtype=float)
        if len(x0) != n:
            raise ValueError(f"x0 has {len(x0)} values, graph has {n} nodes")
        return x0
    return np.random.default_rng(spec.seed).standard_normal(n)
