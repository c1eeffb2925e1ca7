"""Run configuration: a YAML key tree validated against a fixed schema.

Grammar (all sections optional except where a command needs them)::

    model:      {name: rotation, params: {omega: 1.0}}
                {name: polynomial, dim: 1, terms: [{component: 0, coeff: -1.0, powers: [1]}]}
    grid:       {dim: 2, n: 64, L: 8.0}
    initial:    {family: gaussian, mean: [1, 0], cov: 0.25, signs: {axis: 1, threshold: 0.0}}
                {family: mixture, weights: [...], means: [...], covs: [...]}
                {family: uniform} | {family: snapshot, path: file.qts}
    run:        {scheme: unitary_midpoint, step_size: 1e-3, num_steps: 1000,
                 monitors: [H2, L3], monitor_every: 1, snapshot_every: 0, seed: 0}
    spectrum:   {k: 20, generator: L3, snapshots: 4}
    automaton:  {permutation: [1, 2, 0]} or {num_states: 3, cycles: [[0, 1, 2]]},
                horizon, probabilities (floats or "p/q" strings), signs, random, corrupt
    extended:   {modulus: 4, horizon: 3, permutation: [...] | force: {model...}, epsilon, include_delta}
    output:     {directory: out, formats: [csv, json, snapshot]}
"""
from __future__ import annotations

import hashlib
from fractions import Fraction
from pathlib import Path
from typing import Any, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import QTransportError


class ConfigError(QTransportError):
    def __init__(self, message: str, line: int | None = None, path: str = ""):
        self.line, self.path = line, path
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TermCfg(_Strict):
    component: int
    coeff: float
    powers: list[int]


class ModelCfg(_Strict):
    name: str
    params: dict[str, float] = Field(default_factory=dict)
    dim: int | None = None
    terms: list[TermCfg] = Field(default_factory=list)
    time_reversal: list[list[float]] | None = None

    @model_validator(mode="after")
    def _poly(self):
        if self.name == "polynomial" and (self.dim is None or not self.terms):
            raise ValueError("polynomial models need 'dim' and a non-empty 'terms' list")
        return self


class GridCfg(_Strict):
    dim: int = Field(ge=1, le=3)
    n: int = Field(ge=2)
    L: float = Field(gt=0)

    @field_validator("n")
    @classmethod
    def _even(cls, v):
        if v % 2:
            raise ValueError("n must be even")
        return v


class SignCfg(_Strict):
    axis: int = Field(ge=1)
    threshold: float = 0.0


class InitialCfg(_Strict):
    family: Literal["uniform", "gaussian", "mixture", "snapshot"]
    mean: Union[float, list[float]] = 0.0
    cov: Union[float, list[float], list[list[float]]] = 1.0
    weights: list[float] = Field(default_factory=list)
    means: list[Union[float, list[float]]] = Field(default_factory=list)
    covs: list[Union[float, list[float], list[list[float]]]] = Field(default_factory=list)
    signs: SignCfg | None = None
    path: str | None = None

    @model_validator(mode="after")
    def _family(self):
        if self.family == "mixture":
            if not self.weights or not (len(self.weights) == len(self.means) == len(self.covs)):
                raise ValueError("mixture needs equally long 'weights', 'means' and 'covs'")
        if self.family == "snapshot" and not self.path:
            raise ValueError("snapshot initial state needs 'path'")
        return self


class RunCfg(_Strict):
    scheme: Literal["unitary_midpoint", "step_operator_sigma", "step_operator_gamma",
                    "symmetric_alternating", "rk4"] = "unitary_midpoint"
    step_size: float = Field(gt=0)
    num_steps: int = Field(ge=0)
    monitors: list[str] = Field(default_factory=list)
    conserved: list[str] = Field(default_factory=list)
    monitor_every: int = Field(default=1, ge=1)
    snapshot_every: int = Field(default=0, ge=0)
    renormalize: bool = False
    reverse: bool = False
    seed: int = 0


class SpectrumCfg(_Strict):
    k: int = Field(default=20, ge=1)
    generator: str | None = None
    snapshots: int = Field(default=0, ge=0)


class RandomAutomataCfg(_Strict):
    count: int = Field(default=50, ge=0)
    max_states: int = Field(default=12, ge=1)
    max_horizon: int = Field(default=20, ge=0)
    exact: bool = True


class AutomatonCfg(_Strict):
    permutation: list[int] | None = None
    num_states: int | None = None
    cycles: list[list[int]] | None = None
    horizon: int = Field(default=2, ge=0)
    probabilities: list[Union[str, float, int]] | None = None
    signs: list[int] | None = None
    random: RandomAutomataCfg | None = None
    corrupt: bool = False

    @model_validator(mode="after")
    def _spec(self):
        if self.permutation is None and (self.cycles is None or self.num_states is None):
            raise ValueError("automaton needs 'permutation' or 'num_states' with 'cycles'")
        return self

    def exact_probabilities(self):
        if self.probabilities is None:
            return None
        out = []
        for p in self.probabilities:
            out.append(Fraction(p) if isinstance(p, (str, int)) else p)
        return out


class ExtendedCfg(_Strict):
    modulus: int = Field(ge=2)
    horizon: int = Field(default=1, ge=0)
    epsilon: float = Field(default=1.0, gt=0)
    permutation: list[int] | None = None
    force: ModelCfg | None = None
    include_delta: bool = True
    q_in: list[float] | None = None
    check_equivalence: bool = True


class OutputCfg(_Strict):
    directory: str = "qtransport_out"
    formats: list[Literal["csv", "json", "snapshot"]] = Field(default_factory=lambda: ["csv", "json", "snapshot"])


class RunConfig(_Strict):
    model: ModelCfg | None = None
    grid: GridCfg | None = None
    initial: InitialCfg | None = None
    run: RunCfg | None = None
    spectrum: SpectrumCfg | None = None
    automaton: AutomatonCfg | None = None
    extended: ExtendedCfg | None = None
    output: OutputCfg = Field(default_factory=OutputCfg)


class LoadedConfig:
    def __init__(self, cfg: RunConfig, text: str, path: Path | None, root_node):
        self.cfg = cfg
        self.text = text
        self.path = path
        self.sha256 = hashlib.sha256(text.encode("utf-8")).hexdigest()
        self._root = root_node

    def line_of(self, *keys) -> int | None:
        return _locate(self._root, keys)

    def require(self, *sections: str):
        for s in sections:
            if getattr(self.cfg, s) is None:
                raise ConfigError(f"missing required section '{s}'", None, s)

    def resolve(self, relative: str) -> Path:
        p = Path(relative)
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p


def _locate(node, keys) -> int | None:
    """1-based line of the deepest node reachable along ``keys``."""
    line = node.start_mark.line + 1 if node is not None else None
    for k in keys:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for kn, vn in node.value:
                if kn.value == str(k):
                    nxt = vn
                    line = kn.start_mark.line + 1
                    break
            if nxt is None:
                return line
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(k, int) and k < len(node.value):
            node = node.value[k]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def parse_config(text: str, path: Path | None = None) -> LoadedConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level of the config must be a mapping", 1)
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(x for x in err["loc"] if not (isinstance(x, str) and ("[" in x or x.startswith("function"))))
        dotted = ".".join(str(x) for x in loc)
        msg = err["msg"]
        if err["type"] == "missing":
            msg = f"missing required key '{loc[-1]}'" + (f" in '{'.'.join(map(str, loc[:-1]))}'" if len(loc) > 1 else "")
        elif err["type"] == "extra_forbidden":
            msg = f"unknown key '{loc[-1]}'"
        else:
            msg = f"{dotted}: {msg}"
        line = _locate(root, loc if err["type"] != "missing" else loc[:-1])
        raise ConfigError(msg, line, dotted) from None
    return LoadedConfig(cfg, text, path, root)


def load_config(path) -> LoadedConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(encoding="utf-8"), path)


def to_plain(obj: Any):
    if isinstance(obj, BaseModel):
        return obj.model_dump()
    return obj
