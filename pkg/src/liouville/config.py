"""Run configuration: one JSON document, overridable from the command line."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

STRATEGIES = ("min", "minmax", "continue")
SHAPES = ("disk", "cylinder", "pair_of_pants")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


_NUM = r"(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PI_RE = re.compile(rf"^\s*([-+]?{_NUM})?\s*\*?\s*pi\s*(?:([-+])\s*({_NUM}))?\s*$")


def parse_real(value, key: str = "value") -> float:
    """Float, or a multiple of pi like ``4.8pi``, ``4.8*pi`` or ``4pi-0.1``."""
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a number", key)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI_RE.match(value)
        if m:
            x = (float(m.group(1)) if m.group(1) else 1.0) * np.pi
            if m.group(3):
                x += float(m.group(3)) if m.group(2) == "+" else -float(m.group(3))
            return x
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"{key}: cannot read {value!r} as a number", key)


@dataclass
class RunConfig:
    mesh_file: str | None = None
    shape: str = "cylinder"
    refinement: int = 3
    cones: list = field(default_factory=list)
    K: float = 1.0
    K_file: str | None = None
    lam: float | None = None
    lambda_path: list | None = None
    strategy: str = "min"
    tol: float | None = None
    k: int | None = None
    grid_sigmas: int = 8
    grid_lambdas: list = field(default_factory=lambda: [10.0, 100.0, 1000.0])
    green_mode: str = "split"
    pole: dict | None = None
    component: int = 1
    bubble_atoms: list | None = None
    bubble_lambdas: list = field(default_factory=lambda: [100.0, 1000.0, 10000.0])
    lam_max: float | None = None
    mass_radius: float | None = None
    field_file: str | None = None
    output: str = "out"
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        aliases = {"lambda": "lam", "lambda_over_pi": None}
        kw = {}
        for key, value in data.items():
            if key == "lambda_over_pi":
                kw["lam"] = parse_real(value, key) * np.pi
                continue
            name = aliases.get(key, key)
            if name not in known:
                raise ConfigError(f"unknown configuration key {key!r}", key)
            kw[name] = value
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc.msg} at line {exc.lineno}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.mesh_file is None and self.shape not in SHAPES:
            raise ConfigError(f"shape must be one of {SHAPES}", "shape")
        if not isinstance(self.refinement, int) or self.refinement < 0:
            raise ConfigError("refinement must be a non-negative integer", "refinement")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}", "strategy")
        if self.green_mode not in ("split", "discrete_delta"):
            raise ConfigError("green_mode must be split or discrete_delta", "green_mode")
        self.K = parse_real(self.K, "K")
        if self.K <= 0:
            raise ConfigError("K must be positive", "K")
        if self.lam is not None:
            self.lam = parse_real(self.lam, "lambda")
        if self.lam_max is not None:
            self.lam_max = parse_real(self.lam_max, "lam_max")
        if self.lambda_path is not None:
            if isinstance(self.lambda_path, str):
                self.lambda_path = self.lambda_path.split(":")
            if len(self.lambda_path) != 2:
                raise ConfigError("lambda_path needs two entries a:b", "lambda_path")
            self.lambda_path = [parse_real(x, "lambda_path") for x in self.lambda_path]
        if not isinstance(self.cones, list):
            raise ConfigError("cones must be a list", "cones")
        for c in self.cones:
            if not isinstance(c, dict) or "alpha" not in c or ("vertex" in c) == ("at" in c):
                raise ConfigError("each cone needs 'alpha' and exactly one of 'vertex' or 'at'", "cones")
            c["alpha"] = parse_real(c["alpha"], "cones.alpha")
            if c["alpha"] <= -1:
                raise ConfigError(f"cone order {c['alpha']} must exceed -1", "cones.alpha")
        if self.tol is not None:
            self.tol = float(self.tol)
            if not self.tol > 0:
                raise ConfigError("tol must be positive", "tol")
        self.grid_lambdas = [parse_real(x, "grid_lambdas") for x in self.grid_lambdas]
        self.bubble_lambdas = [parse_real(x, "bubble_lambdas") for x in self.bubble_lambdas]
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer", "seed")

    def to_dict(self) -> dict:
        return asdict(self)
