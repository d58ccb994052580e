"""YAML run configuration.

A config file looks like::

    problem:
      objectives: ["(x1 - 1.0)^2", "(x2 + 2.0)^4"]
      constraints: ["x1^2 + x2^2 - 4"]
    x0: [0, 0]
    mu0: [0]
    rho: 0.01            # or "auto"
    epsilon: 0.3
    total_timesteps: 3000

Optional keys: ``n_agents`` (checked against the objectives), ``privacy``,
``seed``, ``convention``, ``reference_saddle: {x: [...], mu: [...]}``,
``solver: {rho, max_steps, fixed_point_tol}``,
``stepsize: {n_samples, safety_factor, clip_orthant}`` and
``output: {dir, trace, summary}``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .analysis import DEFAULT_CONVENTION, BallConvention
from .expr import ExpressionSyntaxError
from .problem import PrimalDualPoint, Problem

__all__ = ["ConfigError", "RunConfig", "load_config", "bundled_config_path"]

BUNDLED = {"six_agent": "six_agent.yaml"}
_TOP_KEYS = {
    "problem", "n_agents", "x0", "mu0", "rho", "epsilon", "total_timesteps",
    "privacy", "seed", "convention", "reference_saddle", "solver", "stepsize", "output",
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` and ``line`` locate the problem."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        loc = []
        if field:
            loc.append(f"field {field}")
        if line is not None:
            loc.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.reason = message


@dataclass(frozen=True)
class RunConfig:
    objectives: tuple
    constraints: tuple
    x0: tuple
    mu0: tuple
    rho: Optional[float]  # None means estimate it
    epsilon: float
    total_timesteps: int
    privacy: bool = False
    seed: int = 0
    convention: BallConvention = DEFAULT_CONVENTION
    reference_saddle: Optional[PrimalDualPoint] = None
    solver_rho: Optional[float] = None
    solver_max_steps: int = 20_000
    solver_tol: float = 1e-12
    n_samples: int = 1_000_000
    safety_factor: float = 0.85
    clip_orthant: bool = True
    output_dir: str = "out"
    trace_file: str = "trace.csv"
    summary_file: str = "summary.json"
    source: Optional[str] = None
    problem: Problem = field(default=None, compare=False, repr=False)

    @property
    def rho_auto(self) -> bool:
        return self.rho is None

    @property
    def n_agents(self) -> int:
        return len(self.objectives)

    @property
    def init(self) -> PrimalDualPoint:
        return PrimalDualPoint(np.array(self.x0), np.array(self.mu0))

    def with_overrides(self, **changes) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        if "convention" in changes:
            changes["convention"] = BallConvention(changes["convention"])
        return replace(self, **changes)


def bundled_config_path(name: str) -> Path:
    return Path(str(resources.files("cloudsaddle") / "configs" / BUNDLED[name]))


class _Lines:
    """Map dotted field paths to 1-based line numbers in the YAML source."""

    def __init__(self, text: str):
        self.lines = {}
        try:
            root = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError:
            root = None
        if root is not None:
            self._walk(root, "")

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self._walk(v, f"{path}.{k.value}" if path else str(k.value))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, f"{path}[{i}]")

    def __call__(self, path):
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path.rsplit(".", 1)[0] if "." in path else ""
        return None


def _real(v, name, lines, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", name, lines(name))
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError("value must be finite", name, lines(name))
    if positive and not v > 0:
        raise ConfigError(f"must be positive, got {v}", name, lines(name))
    if nonneg and v < 0:
        raise ConfigError(f"must be nonnegative, got {v}", name, lines(name))
    return v


def _integer(v, name, lines, minimum=0):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}", name, lines(name))
    if v < minimum:
        raise ConfigError(f"must be at least {minimum}, got {v}", name, lines(name))
    return v


def _vector(v, name, lines, length, nonneg=False):
    if not isinstance(v, list):
        raise ConfigError(f"expected a list, got {v!r}", name, lines(name))
    if len(v) != length:
        raise ConfigError(f"expected {length} entries, got {len(v)}", name, lines(name))
    return tuple(_real(e, f"{name}[{i}]", lines, nonneg=nonneg) for i, e in enumerate(v))


def _section(raw, key, lines, allowed):
    sec = raw.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError("expected a mapping", key, lines(key))
    extra = set(sec) - allowed
    if extra:
        k = sorted(extra)[0]
        raise ConfigError(f"unknown key {k!r}", f"{key}.{k}", lines(f"{key}.{k}"))
    return sec


def _bool(v, name, lines):
    if not isinstance(v, bool):
        raise ConfigError(f"expected true or false, got {v!r}", name, lines(name))
    return v


def parse_config(text: str, source: str | None = None) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML parse error: {getattr(exc, 'problem', exc)}",
                          None, mark.line + 1 if mark else None) from None
    lines = _Lines(text)
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", None, 1)
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        k = sorted(unknown)[0]
        raise ConfigError(f"unknown key {k!r}", k, lines(k))
    for key in ("problem", "x0", "epsilon", "total_timesteps", "rho"):
        if key not in raw:
            raise ConfigError("missing required key", key)

    prob = _section(raw, "problem", lines, {"objectives", "constraints", "variables"})
    objectives = prob.get("objectives")
    if not isinstance(objectives, list) or not objectives:
        raise ConfigError("need a nonempty list of expressions", "problem.objectives",
                          lines("problem.objectives"))
    constraints = prob.get("constraints") or []
    if not isinstance(constraints, list):
        raise ConfigError("expected a list", "problem.constraints", lines("problem.constraints"))
    for group, items in (("objectives", objectives), ("constraints", constraints)):
        for i, e in enumerate(items):
            if not isinstance(e, (str, int, float)) or isinstance(e, bool):
                name = f"problem.{group}[{i}]"
                raise ConfigError(f"expected an expression string, got {e!r}", name, lines(name))
    n = len(objectives)
    m = len(constraints)
    if "n_agents" in raw and _integer(raw["n_agents"], "n_agents", lines, 1) != n:
        raise ConfigError(f"n_agents={raw['n_agents']} but {n} objectives given",
                          "n_agents", lines("n_agents"))

    # build the problem here so a bad expression is reported against its field
    variables = prob.get("variables")
    try:
        problem = Problem(objectives, constraints, variables)
    except ExpressionSyntaxError as exc:
        name = _locate(str(exc.text), objectives, constraints)
        raise ConfigError(str(exc), name, lines(name)) from None
    except ValueError as exc:
        name = _field_from_message(str(exc))
        raise ConfigError(str(exc), name, lines(name) if name else lines("problem")) from None

    x0 = _vector(raw["x0"], "x0", lines, n)
    mu0 = _vector(raw.get("mu0", [0.0] * m), "mu0", lines, m, nonneg=True)
    rho = raw["rho"]
    if rho == "auto":
        rho = None
    else:
        rho = _real(rho, "rho", lines, positive=True)
    epsilon = _real(raw["epsilon"], "epsilon", lines, positive=True)
    total = _integer(raw["total_timesteps"], "total_timesteps", lines, 0)
    privacy = _bool(raw.get("privacy", False), "privacy", lines)
    seed = _integer(raw.get("seed", 0), "seed", lines, 0)
    try:
        convention = BallConvention(raw.get("convention", DEFAULT_CONVENTION.value))
    except ValueError:
        raise ConfigError("convention must be 'norm' or 'level'", "convention",
                          lines("convention")) from None

    reference = None
    if raw.get("reference_saddle") is not None:
        ref = _section(raw, "reference_saddle", lines, {"x", "mu"})
        rx = _vector(ref.get("x"), "reference_saddle.x", lines, n)
        rmu = _vector(ref.get("mu", [0.0] * m), "reference_saddle.mu", lines, m, nonneg=True)
        reference = PrimalDualPoint(np.array(rx), np.array(rmu))

    solver = _section(raw, "solver", lines, {"rho", "max_steps", "fixed_point_tol"})
    step = _section(raw, "stepsize", lines, {"n_samples", "safety_factor", "clip_orthant"})
    out = _section(raw, "output", lines, {"dir", "trace", "summary"})
    safety = _real(step.get("safety_factor", 0.85), "stepsize.safety_factor", lines, positive=True)
    if safety > 1:
        raise ConfigError("safety factor must not exceed 1", "stepsize.safety_factor",
                          lines("stepsize.safety_factor"))

    return RunConfig(
        objectives=tuple(str(e) for e in objectives),
        constraints=tuple(str(g) for g in constraints),
        x0=x0,
        mu0=mu0,
        rho=rho,
        epsilon=epsilon,
        total_timesteps=total,
        privacy=privacy,
        seed=seed,
        convention=convention,
        reference_saddle=reference,
        solver_rho=(_real(solver["rho"], "solver.rho", lines, positive=True)
                    if "rho" in solver else None),
        solver_max_steps=_integer(solver.get("max_steps", 20_000), "solver.max_steps", lines, 1),
        solver_tol=_real(solver.get("fixed_point_tol", 1e-12), "solver.fixed_point_tol", lines, nonneg=True),
        n_samples=_integer(step.get("n_samples", 1_000_000), "stepsize.n_samples", lines, 1),
        safety_factor=safety,
        clip_orthant=_bool(step.get("clip_orthant", True), "stepsize.clip_orthant", lines),
        output_dir=str(out.get("dir", "out")),
        trace_file=str(out.get("trace", "trace.csv")),
        summary_file=str(out.get("summary", "summary.json")),
        source=source,
        problem=problem,
    )


def _locate(text, objectives, constraints):
    for i, e in enumerate(objectives):
        if str(e) == text:
            return f"problem.objectives[{i}]"
    for j, e in enumerate(constraints):
        if str(e) == text:
            return f"problem.constraints[{j}]"
    return "problem"


def _field_from_message(msg):
    m = re.match(r"(objective|constraint) (\d+)", msg)
    if m:
        group = "objectives" if m.group(1) == "objective" else "constraints"
        return f"problem.{group}[{int(m.group(2)) - 1}]"
    return "problem"


def load_config(path) -> RunConfig:
    """Read and validate a config file; ``path`` may name a bundled config."""
    path = str(path)
    if path in BUNDLED:
        path = str(bundled_config_path(path))
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None) from None
    return parse_config(text, path)
