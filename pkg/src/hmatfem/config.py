"""Flat ``key = value`` experiment configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import numpy as np

from .fem import Coefficients
from .mesh import GradingSpec


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    domain: str = "lshape"
    alpha: float = 5.0
    H: float = 0.115
    gamma: str = "0.5,0.5"
    uniform_width: float = 0.0  # > 0 selects a uniform mesh
    coefficients: str = "paper_s4"
    a1: str = "1,0,0,1"
    a2: str = "0,0"
    a3: float = 0.0
    c_adm: float = 2.0
    c_small: int = 25
    r_min: int = 1
    r_max: int = 50
    dense_budget: int = 10_000
    seed: int = 0
    out: str = "out"
    c_card: float = 0.0  # 0 selects alpha for graded and 1 for uniform meshes
    sample_count: int = 50
    trials: int = 20
    # verification grid
    cacc_width: float = float(np.sqrt(2.0) / 64.0)
    cacc_levels: int = 2
    cacc_clusters: int = 5
    cutoff_width: float = 1.0 / 64.0
    # negative control: offset added to one dual coefficient
    perturb_dual: float = 0.0

    HIDDEN = ("perturb_dual",)

    def validate(self) -> None:
        if self.r_min < 1 or self.r_max < self.r_min:
            raise ConfigError(f"empty rank range {self.r_min}..{self.r_max}")
        if self.c_small < 1:
            raise ConfigError("c_small must be >= 1")
        if not self.c_adm > 0:
            raise ConfigError("c_adm must be > 0")
        if self.uniform_width < 0:
            raise ConfigError("uniform_width must be >= 0")
        if self.uniform_width == 0 and not (self.alpha >= 1 and self.H > 0):
            raise ConfigError("graded meshes need alpha >= 1 and H > 0")
        if self.coefficients not in ("paper_s4", "laplace", "custom"):
            raise ConfigError(f"unknown coefficient preset {self.coefficients!r}")
        self.coefficient_object()
        self.gamma_points()

    def gamma_points(self) -> np.ndarray:
        try:
            pts = [[float(t) for t in p.split(",")] for p in self.gamma.split(";") if p.strip()]
            arr = np.array(pts, dtype=float)
        except ValueError as exc:
            raise ConfigError(f"cannot parse gamma {self.gamma!r}") from exc
        if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) == 0:
            raise ConfigError(f"gamma must be 'x,y;x,y;...', got {self.gamma!r}")
        return arr

    def grading(self) -> GradingSpec | None:
        if self.uniform_width > 0:
            return None
        return GradingSpec(self.gamma_points(), self.alpha, self.H)

    def coefficient_object(self) -> Coefficients:
        if self.coefficients == "paper_s4":
            return Coefficients.paper_s4()
        if self.coefficients == "laplace":
            return Coefficients.laplace()
        try:
            a1 = [float(t) for t in self.a1.split(",")]
            a2 = [float(t) for t in self.a2.split(",")]
        except ValueError as exc:
            raise ConfigError("custom coefficients need numeric a1 (4 values) and a2 (2 values)") from exc
        if len(a1) != 4 or len(a2) != 2:
            raise ConfigError("custom coefficients need a1 with 4 values and a2 with 2 values")
        return Coefficients.constant(a1, a2, self.a3)

    def effective_c_card(self) -> float:
        if self.c_card > 0:
            return self.c_card
        return 1.0 if self.uniform_width > 0 else self.alpha

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _convert(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(ExperimentConfig)}[name]
    try:
        if ftype in ("int", int):
            return int(raw)
        if ftype in ("float", float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def field_names() -> list[str]:
    return [f.name for f in fields(ExperimentConfig)]


def parse_config_text(text: str) -> dict:
    out = {}
    names = set(field_names())
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, val)
    return out


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _convert(k, str(v))
    cfg = dataclasses.replace(ExperimentConfig(), **values)
    cfg.validate()
    return cfg
