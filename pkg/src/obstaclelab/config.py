"""JSON run configuration shared by the command-line tools."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .blowup import Thresholds, default_radii
from .elliptic import DEFAULT_OMEGA, optimal_omega
from .expr import Expression
from .grid import Grid

__all__ = ["RunConfig", "load_config"]

_THRESHOLD_KEYS = {"rho_reg", "rho_sing", "rho_drift", "eps_ker", "delta"}


@dataclass
class RunConfig:
    dim: int
    box: list
    h: float
    boundary: str
    g: float = 1.0
    tau: float | None = None
    T: float | None = None
    radii: list | None = None
    thresholds: dict = field(default_factory=dict)
    omega: float | str = DEFAULT_OMEGA
    tol: float = 1e-10
    maxit: int = 100_000
    seedless: bool = True
    # optional extras used by individual subcommands
    initial: str = "0"
    points: list | None = None
    p_matrix: list | None = None
    t_values: list | dict | None = None
    workers: int = 1
    max_points: int | None = None
    stride: int = 1
    m: int | None = None

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if len(self.box) != self.dim or any(len(b) != 2 for b in self.box):
            raise ValueError("box needs one [lo, hi] pair per axis")
        unknown = set(self.thresholds) - _THRESHOLD_KEYS
        if unknown:
            raise ValueError(f"unknown threshold keys {sorted(unknown)}")
        if not self.seedless:
            raise ValueError("only seedless (deterministic) runs are supported")
        # parse eagerly so a bad expression fails before any work
        self.boundary_expr
        Expression(self.initial)

    @property
    def boundary_expr(self) -> Expression:
        return Expression(self.boundary)

    def grid(self) -> Grid:
        lo = [b[0] for b in self.box]
        hi = [b[1] for b in self.box]
        return Grid.from_box(lo, hi, self.h)

    def threshold_obj(self) -> Thresholds:
        return Thresholds.from_dict(self.thresholds)

    def radii_list(self) -> list[float]:
        return list(self.radii) if self.radii else default_radii(self.h)

    def omega_for(self, grid: Grid, shift: float = 0.0) -> float:
        if self.omega == "auto":
            return optimal_omega(grid, shift)
        return float(self.omega)

    def t_list(self) -> list[float]:
        tv = self.t_values
        if tv is None:
            raise ValueError("config has no t_values")
        if isinstance(tv, dict):
            return np.linspace(tv["start"], tv["stop"], int(tv["count"])).tolist()
        return [float(t) for t in tv]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text()))
