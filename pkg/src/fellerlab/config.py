"""Experiment configuration schema.

Configs are YAML (or JSON) documents validated before any computation::

    experiment_id: slide-modulus
    seed: 1234
    n_samples: 1000
    model: {kind: slide, metric: rho}
    observable: {kind: coordinate}
    modulus:
      definition: e
      center: {x: 0.5}
      radii: [0.3, 0.1, 0.01]
      t_grid: {geom: [0.01, 2.0, 20]}
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import observables as obs
from .core import ChainState, Interval, Spectral, Tail, TestFunction, Unit
from .models import (
    FiniteChainModel,
    HeatModel,
    PowerLawNoise,
    RotationTailModel,
    SlideModel,
    harmonic_phi,
)

EXPERIMENT_KINDS = ("dual", "modulus", "decompose", "cesaro", "stability", "report-bundle")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# -- models ------------------------------------------------------------------


class HeatSpec(_Strict):
    kind: Literal["heat"]
    N: int = Field(256, ge=1)
    noise_c: float = Field(1.0, ge=0)
    noise_p: float = Field(1.0, gt=0.5)

    def build(self):
        return HeatModel(self.N, PowerLawNoise(self.noise_c, self.noise_p))


class RotationSpec(_Strict):
    kind: Literal["rotation_tail"]
    gamma: float = Field(-1.0 / math.sqrt(2.0), gt=-1, lt=0)
    n_max: int = Field(10_000, ge=10_000)

    def build(self):
        return RotationTailModel(self.gamma, self.n_max)


class SlideSpec(_Strict):
    kind: Literal["slide"]
    metric: Literal["rho", "d"] = "rho"

    def build(self):
        return SlideModel(self.metric)


class ChainSpec(_Strict):
    kind: Literal["finite_chain"]
    P: list[list[float]]
    positions: Optional[list[float]] = None
    exact_duals: bool = False

    @field_validator("P")
    @classmethod
    def _stochastic(cls, P):
        arr = np.asarray(P, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("P must be square")
        if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=1) - 1) > 1e-12):
            raise ValueError("P must be row-stochastic")
        return P

    def build(self):
        return FiniteChainModel(self.P, self.positions, self.exact_duals)


ModelSpec = Annotated[Union[HeatSpec, RotationSpec, SlideSpec, ChainSpec], Field(discriminator="kind")]


# -- points and observables ----------------------------------------------------


class PointSpec(_Strict):
    """Exactly one of the fields selects the state."""

    x: Optional[float] = None          # slide
    interval: Optional[float] = None   # rotation, Interval(u)
    tail: Optional[int] = None         # rotation, Tail(n)
    i: Optional[int] = None            # chain
    modes: Optional[dict[int, float]] = None  # heat, sparse coefficients
    harmonic: Optional[bool] = None    # heat, phi_k = 1/|k|
    zero: Optional[bool] = None        # heat, zero function

    @model_validator(mode="after")
    def _one(self):
        set_fields = [k for k, v in self.__dict__.items() if v is not None]
        if len(set_fields) != 1:
            raise ValueError(f"a point needs exactly one selector, got {set_fields}")
        return self

    def build(self, model):
        if self.x is not None:
            return Unit(self.x)
        if self.interval is not None:
            return Interval(self.interval)
        if self.tail is not None:
            return Tail(self.tail)
        if self.i is not None:
            return ChainState(self.i)
        N = getattr(model, "N", None)
        if N is None:
            raise ValueError("spectral point needs a heat model")
        if self.harmonic:
            return harmonic_phi(N)
        if self.zero:
            return Spectral.zero(N)
        return Spectral.from_modes(self.modes or {}, N)


class ObservableSpec(_Strict):
    kind: Literal["coordinate", "min_distance", "indicator_one", "sin_coordinate", "vector",
                  "mode", "sin_mode", "clipped_l2", "sin_h1"]
    center: float = 0.0
    scale: float = 1.0
    values: Optional[list[float]] = None
    mode: int = 1

    def build(self, model) -> TestFunction:
        k = self.kind
        if k == "coordinate":
            return obs.coordinate()
        if k == "min_distance":
            return obs.min_distance(self.center)
        if k == "indicator_one":
            return obs.indicator_of_one()
        if k == "sin_coordinate":
            return obs.sin_coordinate(self.scale)
        if k == "vector":
            if self.values is None:
                raise ValueError("vector observable needs 'values'")
            return TestFunction.from_vector(self.values)
        if not isinstance(model, HeatModel):
            raise ValueError(f"observable {k!r} needs the heat model")
        if k == "mode":
            return obs.mode_coefficient(model, self.mode)
        if k == "sin_mode":
            return obs.sin_mode(model, self.mode)
        if k == "clipped_l2":
            return obs.clipped_l2(model)
        return obs.sin_h1(model)


# -- grids ---------------------------------------------------------------------


class GridSpec(_Strict):
    """Explicit ``values`` or one generator: ``geom``/``linspace`` ``[a, b, n]``, ``range`` ``[a, b]``."""

    values: Optional[list[float]] = None
    geom: Optional[tuple[float, float, int]] = None
    linspace: Optional[tuple[float, float, int]] = None
    range: Optional[tuple[int, int]] = None

    @model_validator(mode="after")
    def _one(self):
        set_fields = [k for k, v in self.__dict__.items() if v is not None]
        if len(set_fields) != 1:
            raise ValueError(f"a grid needs exactly one of values/geom/linspace/range, got {set_fields}")
        if self.values is not None and not self.values:
            raise ValueError("grid must be non-empty")
        for g in (self.geom, self.linspace):
            if g is not None and g[2] < 1:
                raise ValueError("grid must be non-empty")
        if self.geom is not None and not (0 < self.geom[0] and 0 < self.geom[1]):
            raise ValueError("geometric grid needs positive endpoints")
        if self.range is not None and self.range[1] < self.range[0]:
            raise ValueError("grid must be non-empty")
        return self

    def build(self) -> list:
        if self.values is not None:
            return list(self.values)
        if self.geom is not None:
            a, b, n = self.geom
            return [float(v) for v in np.geomspace(a, b, n)]
        if self.linspace is not None:
            a, b, n = self.linspace
            return [float(v) for v in np.linspace(a, b, n)]
        a, b = self.range
        return list(range(a, b + 1))


def _grid(v):
    return GridSpec(values=v) if isinstance(v, list) else v


GridLike = Union[GridSpec, list[float]]


class DualSpec(_Strict):
    x: PointSpec
    t_grid: GridLike


class ModulusSpec(_Strict):
    definition: Literal["e", "eventual_e", "eventual_continuity"] = "e"
    center: PointSpec
    radii: list[float] = Field(min_length=1)
    probes_per_radius: int = Field(10, ge=1)
    t_grid: Optional[GridLike] = None
    t_min: Optional[list[float]] = None
    windows: Optional[list[tuple[float, float]]] = None
    window_points: int = Field(20, ge=1)
    threshold: float = Field(0.05, gt=0)

    @model_validator(mode="after")
    def _needs(self):
        if self.definition == "eventual_continuity":
            if not self.windows:
                raise ValueError("eventual_continuity needs non-empty 'windows'")
        elif self.t_grid is None:
            raise ValueError(f"definition {self.definition!r} needs 't_grid'")
        if self.definition == "eventual_e" and not self.t_min:
            raise ValueError("eventual_e needs 't_min'")
        return self


class DecomposeSpec(_Strict):
    x0: int = Field(ge=0)
    B: list[int] = Field(min_length=1)
    alpha: float = Field(gt=0, lt=1)
    k: int = Field(ge=1)
    t_max: int = Field(10_000, ge=1)


class CesaroSpec(_Strict):
    x: PointSpec
    t_grid: GridLike


class StabilitySpec(_Strict):
    x: PointSpec
    y: PointSpec
    t_grid: GridLike
    project_mode: Optional[int] = None


class ExperimentConfig(_Strict):
    experiment_id: str = "experiment"
    kind: Optional[Literal["dual", "modulus", "decompose", "cesaro", "stability", "report-bundle"]] = None
    seed: int = Field(ge=0, lt=2**64)
    n_samples: int = Field(1000, ge=2)
    output: Optional[str] = None
    model: Optional[ModelSpec] = None
    observable: Optional[ObservableSpec] = None
    dual: Optional[DualSpec] = None
    modulus: Optional[ModulusSpec] = None
    decompose: Optional[DecomposeSpec] = None
    cesaro: Optional[CesaroSpec] = None
    stability: Optional[StabilitySpec] = None
    experiments: Optional[list[dict[str, Any]]] = None

    @model_validator(mode="after")
    def _sections(self):
        k = self.kind
        if k is None:
            return self
        if k == "report-bundle":
            if not self.experiments:
                raise ValueError("report-bundle needs a non-empty 'experiments' list")
            return self
        section = {"dual": self.dual, "modulus": self.modulus, "decompose": self.decompose,
                   "cesaro": self.cesaro, "stability": self.stability}[k]
        if section is None:
            raise ValueError(f"experiment kind {k!r} needs a '{k}' section")
        if self.model is None:
            raise ValueError("a 'model' section is required")
        if k in ("dual", "modulus") and self.observable is None:
            raise ValueError(f"experiment kind {k!r} needs an 'observable' section")
        if k == "decompose" and not isinstance(self.model, ChainSpec):
            raise ValueError("decompose runs on finite_chain models only")
        return self


def grid_values(g) -> list:
    return _grid(g).build()


def load_config_data(path: str | Path) -> dict:
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError("config must be a mapping at the top level")
    return data


def parse_config(data: dict, kind: str | None = None, seed: int | None = None) -> ExperimentConfig:
    data = dict(data)
    if seed is not None:
        data["seed"] = seed
    if kind is not None:
        if data.get("kind") not in (None, kind):
            raise ValueError(f"config kind {data['kind']!r} does not match subcommand {kind!r}")
        data["kind"] = kind
    cfg = ExperimentConfig.model_validate(data)
    if cfg.kind is None:
        raise ValueError("experiment kind missing (set 'kind' or use a subcommand)")
    if cfg.kind == "report-bundle":
        for i, sub in enumerate(cfg.experiments):
            sub = dict(sub)
            sub.setdefault("seed", cfg.seed)
            sub.setdefault("experiment_id", f"{cfg.experiment_id}.{i}")
            if sub.get("kind") in (None, "report-bundle"):
                raise ValueError("bundle entries need a non-bundle 'kind'")
            parse_config(sub)
    return cfg
