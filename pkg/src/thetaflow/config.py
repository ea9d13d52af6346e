"""Flat ``key = value`` run configuration.

One pair per line, ``#`` starts a comment, blank lines are ignored.  Every key
has a default, unknown keys are rejected, and diagnostics carry line numbers.
:func:`dump_config` writes a canonical form that parses back to an equal
configuration (floats are written with ``repr``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from thetaflow.errors import ConfigurationError, ThetaflowError
from thetaflow.evolve import IntegratorConfig
from thetaflow.model import FluidParams
from thetaflow.spectral import Grid

KINDS = ("random-band", "taylor-green", "single-mode", "checkpoint", "slow-branch")


@dataclass(frozen=True)
class RunConfig:
    n: int = 2
    N: int = 128
    L: float = 4.0
    gamma: float = 1.4
    mu: float = 1.0
    lam: float = 0.0
    A: float = 1.0
    floor: float = 0.1
    j0: int = 1
    dt: float = 1e-3
    T: float = 10.0
    cfl_safety: float = 0.5
    scheme: str = "IFRK4"
    snapshot_interval: int = 10
    kind: str = "random-band"
    c0: float = 1e-2
    band_lo: int = -2
    band_hi: int = 2
    seed: int = 0
    checkpoint: str = ""
    output: str = "out"
    residual_stride: int = 50

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown initial-data kind {self.kind!r}; choose from {KINDS}")
        if not self.c0 >= 0:
            raise ConfigurationError(f"amplitude c0 must be >= 0, got {self.c0}")
        if self.band_lo > self.band_hi:
            raise ConfigurationError(f"empty band [{self.band_lo}, {self.band_hi}]")
        if self.kind == "checkpoint" and not self.checkpoint:
            raise ConfigurationError("kind=checkpoint needs a checkpoint path")
        if self.residual_stride < 0:
            raise ConfigurationError("residual_stride must be >= 0")
        # delegate the remaining invariants to the owning types
        self.grid()
        self.params()
        self.integrator()

    def grid(self) -> Grid:
        return Grid(self.n, self.N, self.L)

    def params(self) -> FluidParams:
        return FluidParams(mu=self.mu, lam=self.lam, gamma=self.gamma, A=self.A, n=self.n, floor=self.floor)

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(dt=self.dt, T=self.T, cfl_safety=self.cfl_safety, scheme=self.scheme,
                                snapshot_interval=self.snapshot_interval)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# "lambda" is the documented key; the attribute is ``lam``
ALIASES = {"lambda": "lam"}
_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(name: str, text: str):
    kind = _FIELDS[name].type
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        name = ALIASES.get(key, key)
        if name not in _FIELDS:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        if name in seen:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r} (first on line {seen[name]})")
        try:
            values[name] = _convert(name, value)
        except ValueError:
            raise ConfigurationError(f"{source}:{lineno}: bad value {value!r} for {key!r}") from None
        seen[name] = lineno
    try:
        return RunConfig(**values)
    except ThetaflowError as exc:
        where = ", ".join(f"{k} (line {v})" for k, v in seen.items())
        raise ConfigurationError(f"{source}: {exc}" + (f" [keys set: {where}]" if where else "")) from exc


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), str(p))


def dump_config(cfg: RunConfig) -> str:
    inverse = {v: k for k, v in ALIASES.items()}
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{inverse.get(f.name, f.name)} = {text}")
    return "\n".join(lines) + "\n"
