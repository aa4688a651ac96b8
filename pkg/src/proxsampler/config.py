"""Run configuration files.

A config is an INI file with a ``[run]`` section and, for sampling and
warm-start commands, a ``[target]`` section::

    [run]
    command = sample-uniform
    q = 2
    M = 1
    eps = 0.5
    seed = 7
    replicas = 100

    [target]
    kind = box
    half_widths = 1, 1

Lists are comma separated.  Keys are case-insensitive.  Unknown keys and
unknown sections are errors.  See the README for the full key table.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annealing import AnnealConstants
from .samplers import Constants
from .oracles import (
    Ball,
    BodyOracle,
    Box,
    Ellipsoid,
    Interval,
    NormPotential,
    Polytope,
    PotentialOracle,
    QuadraticPotential,
)

__all__ = ["COMMANDS", "ConfigError", "TargetSpec", "RunConfig", "load_config", "parse_config"]

COMMANDS = ("sample-uniform", "sample-logconcave", "warm-start-uniform",
            "warm-start-logconcave", "diagnose")

BODY_KINDS = ("box", "ball", "interval", "polytope", "ellipsoid")
POTENTIAL_KINDS = ("norm", "quadratic")

_RUN_KEYS = {
    "command", "q", "m", "eps", "r", "lambda", "seed", "replicas", "out", "start",
    "iterations", "handoff_eps", "suite", "n",
    "c_h", "c_tau", "c_n", "c_stop", "c_close", "c_step",
    "handoff_c_h", "handoff_c_tau", "handoff_c_n",
}
_TARGET_KEYS = {
    "kind", "dim", "half_widths", "radius", "translation", "a", "b", "matrix", "rows", "scale",
    "center",
}
_REQUIRED = {
    "sample-uniform": ("q", "m", "eps", "seed"),
    "sample-logconcave": ("q", "m", "eps", "lambda", "seed"),
    "warm-start-uniform": ("q", "seed"),
    "warm-start-logconcave": ("q", "r", "lambda", "seed"),
    "diagnose": ("seed",),
}
_STARTS = ("warm-start", "exact", "origin")


class ConfigError(ValueError):
    """The config file is malformed, incomplete, or names unknown keys."""


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    params: dict

    @property
    def is_body(self) -> bool:
        return self.kind in BODY_KINDS

    def build_body(self) -> BodyOracle:
        p, k = self.params, self.kind
        try:
            if k == "box":
                return Box(_floats(p["half_widths"]), _opt_floats(p.get("translation")))
            if k == "ball":
                return Ball(int(p["dim"]), float(p.get("radius", "1")), _opt_floats(p.get("translation")))
            if k == "interval":
                return Interval(float(p["a"]), float(p["b"]))
            if k == "polytope":
                b = _floats(p["b"])
                A = np.asarray(_floats(p["matrix"])).reshape(len(b), -1)
                return Polytope(A, b, _opt_floats(p.get("translation")))
            if k == "ellipsoid":
                dim = int(p["dim"])
                Q = np.asarray(_floats(p["matrix"])).reshape(dim, dim)
                return Ellipsoid(Q, float(p.get("radius", "1")), _opt_floats(p.get("translation")))
        except KeyError as exc:
            raise ConfigError(f"[target] kind={k} is missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(f"[target] kind={k}: {exc}") from None
        raise ConfigError(f"[target] kind={k} is not a body (expected one of {BODY_KINDS})")

    def build_potential(self) -> PotentialOracle:
        p, k = self.params, self.kind
        try:
            dim = int(p["dim"])
            scale = float(p.get("scale", "1"))
            center = _opt_floats(p.get("center"))
            if k == "norm":
                return NormPotential(dim, scale, center)
            if k == "quadratic":
                return QuadraticPotential(dim, scale, center)
        except KeyError as exc:
            raise ConfigError(f"[target] kind={k} is missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(f"[target] kind={k}: {exc}") from None
        raise ConfigError(f"[target] kind={k} is not a potential (expected one of {POTENTIAL_KINDS})")

    @property
    def dim(self) -> int:
        if self.kind == "box":
            return len(_floats(self.params["half_widths"]))
        if self.kind == "interval":
            return 1
        if self.kind == "polytope":
            return len(_floats(self.params["matrix"])) // len(_floats(self.params["b"]))
        return int(self.params["dim"])


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int
    replicas: int = 1
    q: float | None = None
    M: float | None = None
    eps: float | None = None
    R: float | None = None
    Lambda: float | None = None
    start: str = "warm-start"
    iterations: int | None = None
    handoff_eps: float | None = None
    suite: str = "quick"
    n: int | None = None
    out: str | None = None
    constants: AnnealConstants = field(default_factory=AnnealConstants)
    handoff_constants: Constants | None = None
    target: TargetSpec | None = None
    source: dict = field(default_factory=dict, compare=False)

    def echo(self) -> str:
        """Flat ``section.key=value`` record of the parsed file, in file order."""
        return "; ".join(f"{k}={v}" for k, v in self.source.items())


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _opt_floats(text):
    return None if text is None else _floats(text)


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse INI text into a :class:`RunConfig`; ``overrides`` replaces ``[run]`` values."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    extra_sections = set(cp.sections()) - {"run", "target"}
    if extra_sections:
        raise ConfigError(f"unknown sections: {sorted(extra_sections)}")
    if not cp.has_section("run"):
        raise ConfigError("missing [run] section")
    run = dict(cp["run"])
    for k, v in (overrides or {}).items():
        if v is not None:
            run[k.lower()] = str(v)
    target = dict(cp["target"]) if cp.has_section("target") else None

    unknown = sorted(set(run) - _RUN_KEYS)
    if target is not None:
        unknown += [f"target.{k}" for k in sorted(set(target) - _TARGET_KEYS)]
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")

    command = run.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {command!r}")
    missing = [k for k in _REQUIRED[command] if k not in run]
    if missing:
        raise ConfigError(f"missing required keys for {command}: {', '.join(missing)}")
    if command != "diagnose" and target is None:
        raise ConfigError(f"{command} needs a [target] section")

    def num(key, cast=float):
        if key not in run:
            return None
        try:
            return cast(run[key])
        except ValueError:
            raise ConfigError(f"key {key!r} must be a number, got {run[key]!r}") from None

    const_kw = {name: num(key) for key, name in
                (("c_h", "c_h"), ("c_tau", "c_tau"), ("c_n", "c_N"), ("c_stop", "c_stop"),
                 ("c_close", "c_close"), ("c_step", "c_step")) if key in run}
    hand_kw = {name: num(key) for key, name in
               (("handoff_c_h", "c_h"), ("handoff_c_tau", "c_tau"), ("handoff_c_n", "c_N"))
               if key in run}
    try:
        constants = AnnealConstants(**const_kw)
        handoff = Constants(**hand_kw) if hand_kw else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    spec = None
    if target is not None:
        kind = target.pop("kind", None)
        if kind not in BODY_KINDS + POTENTIAL_KINDS:
            raise ConfigError(f"[target] kind must be one of {BODY_KINDS + POTENTIAL_KINDS}, got {kind!r}")
        spec = TargetSpec(kind, target)
        wants_body = command in ("sample-uniform", "warm-start-uniform")
        if command != "diagnose" and wants_body != spec.is_body:
            raise ConfigError(f"{command} needs a {'body' if wants_body else 'potential'} target")

    start = run.get("start", "warm-start")
    if start not in _STARTS:
        raise ConfigError(f"start must be one of {_STARTS}")
    seed = num("seed", int)
    if seed is not None and not 0 <= seed <= 2 ** 64 - 1:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    replicas = num("replicas", int) or 1
    if replicas < 1:
        raise ConfigError("replicas must be positive")

    source = {f"run.{k}": v for k, v in run.items()}
    if spec is not None:
        source["target.kind"] = spec.kind
        source.update({f"target.{k}": v for k, v in spec.params.items()})
    return RunConfig(command=command, seed=seed, replicas=replicas, q=num("q"), M=num("m"),
                     eps=num("eps"), R=num("r"), Lambda=num("lambda"), start=start,
                     iterations=num("iterations", int), handoff_eps=num("handoff_eps"),
                     suite=run.get("suite", "quick"), n=num("n", int), out=run.get("out"),
                     constants=constants, handoff_constants=handoff, target=spec, source=source)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)
