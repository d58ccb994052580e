"""Lyapunov instrumentation for primal-dual trajectories.

``V(x, mu) = ||x - x_hat||^2 + ||mu - mu_hat||^2`` is tracked over the
synchronized iterates, together with the region each step falls in and
whether the step respects the decrease conditions of the convergence
argument.

Ball conventions
----------------
The convergence argument speaks of balls ``B_r`` about the saddle while its
sets are written as ``V``-sublevel sets.  Both readings are supported:

``"norm"``
    ``B_r = {z : ||z - z_hat|| <= r}``, i.e. ``V <= r**2``.
``"level"``
    ``B_r = {z : V(z) <= r}``.

The outer region ``G = {V <= R}`` is a ``V``-sublevel set under both.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .problem import PrimalDualPoint, Problem, grad_x

__all__ = [
    "BallConvention",
    "DEFAULT_CONVENTION",
    "ball_level",
    "Region",
    "StepVerdict",
    "ConvergenceRecord",
    "ConvergenceTrace",
    "lyapunov",
    "radius_R",
    "classify_step",
    "convergence_trace",
    "detect_entry",
    "delta_v_closed_form",
]


class BallConvention(str, enum.Enum):
    NORM = "norm"
    LEVEL = "level"


DEFAULT_CONVENTION = BallConvention.NORM


def ball_level(radius: float, convention=DEFAULT_CONVENTION) -> float:
    """Value ``c`` such that ``B_radius = {V <= c}`` under ``convention``."""
    convention = BallConvention(convention)
    return radius * radius if convention is BallConvention.NORM else radius


def lyapunov(pt: PrimalDualPoint, saddle: PrimalDualPoint) -> float:
    """Squared distance of the stacked point ``(x, mu)`` from the saddle."""
    if pt.x.shape != saddle.x.shape or pt.mu.shape != saddle.mu.shape:
        raise ValueError(
            f"dimension mismatch: ({pt.x.size}, {pt.mu.size}) vs "
            f"({saddle.x.size}, {saddle.mu.size})"
        )
    dx = pt.x - saddle.x
    dm = pt.mu - saddle.mu
    return float(dx @ dx + dm @ dm)


def radius_R(epsilon: float, init: PrimalDualPoint, saddle: PrimalDualPoint) -> float:
    """``R = max(epsilon, V(x(0), mu(0)))``."""
    return max(epsilon, lyapunov(init, saddle))


class Region(str, enum.Enum):
    HALF_BALL = "half_ball"
    ANNULUS = "annulus"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class StepVerdict:
    region: Region
    passed: bool
    delta: float


def classify_step(V_k: float, V_next: float, epsilon: float, R: float,
                  convention=DEFAULT_CONVENTION) -> StepVerdict:
    """Check one step of ``V`` against the decrease conditions.

    In the annulus (outside ``B_{eps/2}`` but ``V <= R``) the step must
    strictly decrease ``V``.  Inside ``B_{eps/2}`` the increase is bounded by
    ``eps/2``.  A point with ``V > R`` has left ``G`` and always fails.
    """
    delta = V_next - V_k
    if V_k > R:
        return StepVerdict(Region.OUTSIDE, False, delta)
    if V_k <= ball_level(epsilon / 2, convention):
        return StepVerdict(Region.HALF_BALL, delta <= epsilon / 2, delta)
    return StepVerdict(Region.ANNULUS, delta < 0, delta)


@dataclass(frozen=True)
class ConvergenceRecord:
    step: int
    timestep: int
    V: float
    delta_V: Optional[float]
    in_eps_ball: bool
    in_half_ball: bool
    verdict: Optional[StepVerdict]


@dataclass
class ConvergenceTrace:
    """Per-synchronized-step Lyapunov data.

    ``records[k].delta_V`` is ``V[k+1] - V[k]``; the last record has none.
    """

    records: list
    epsilon: float
    saddle: PrimalDualPoint
    R: float
    convention: BallConvention = DEFAULT_CONVENTION
    entry_step: Optional[int] = None
    entry_timestep: Optional[int] = None

    @property
    def values(self) -> np.ndarray:
        return np.array([r.V for r in self.records])

    @property
    def final_V(self) -> float:
        return self.records[-1].V

    @property
    def annulus_failures(self) -> list:
        return [r for r in self.records
                if r.verdict is not None and r.verdict.region is Region.ANNULUS and not r.verdict.passed]

    @property
    def half_ball_failures(self) -> list:
        return [r for r in self.records
                if r.verdict is not None and r.verdict.region is Region.HALF_BALL and not r.verdict.passed]

    @property
    def outside_steps(self) -> list:
        return [r for r in self.records if r.verdict is not None and r.verdict.region is Region.OUTSIDE]

    @property
    def exits_after_entry(self) -> list:
        """Records after entry that are outside the eps-ball."""
        if self.entry_step is None:
            return []
        return [r for r in self.records[self.entry_step:] if not r.in_eps_ball]

    def summary(self) -> dict:
        return {
            "convention": self.convention.value,
            "epsilon": self.epsilon,
            "R": self.R,
            "entry_step": self.entry_step,
            "entry_timestep": self.entry_timestep,
            "final_V": self.final_V,
            "synchronized_steps": len(self.records) - 1,
            "annulus_failures": len(self.annulus_failures),
            "half_ball_failures": len(self.half_ball_failures),
            "outside_steps": len(self.outside_steps),
            "exits_after_entry": len(self.exits_after_entry),
        }


def convergence_trace(points: Sequence[PrimalDualPoint], saddle: PrimalDualPoint,
                      epsilon: float, R: float | None = None,
                      convention=DEFAULT_CONVENTION,
                      timesteps: Sequence[int] | None = None) -> ConvergenceTrace:
    """Build a :class:`ConvergenceTrace` from synchronized iterates.

    ``points[k]`` is the iterate after ``k`` gradient steps; ``timesteps``
    defaults to ``3*k``, the simulator timestep at which that iterate is
    synchronized across the network.
    """
    if not points:
        raise ValueError("no iterates given")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    convention = BallConvention(convention)
    if R is None:
        R = radius_R(epsilon, points[0], saddle)
    if timesteps is None:
        timesteps = [3 * k for k in range(len(points))]
    Vs = [lyapunov(pt, saddle) for pt in points]
    eps_level = ball_level(epsilon, convention)
    half_level = ball_level(epsilon / 2, convention)
    records = []
    entry = None
    for k, V in enumerate(Vs):
        if k + 1 < len(Vs):
            verdict = classify_step(V, Vs[k + 1], epsilon, R, convention)
            dV = Vs[k + 1] - V
        else:
            verdict, dV = None, None
        inside = V <= eps_level
        if inside and entry is None:
            entry = k
        records.append(ConvergenceRecord(k, int(timesteps[k]), V, dV, inside, V <= half_level, verdict))
    trace = ConvergenceTrace(records, epsilon, saddle, R, convention)
    if entry is not None:
        trace.entry_step = entry
        trace.entry_timestep = records[entry].timestep
    return trace


def detect_entry(trace: ConvergenceTrace, epsilon: float | None = None,
                 convention=None) -> Optional[tuple]:
    """First ``(step, timestep)`` inside ``B_epsilon``, or ``None``."""
    if not trace.records:
        raise ValueError("empty trace")
    eps = trace.epsilon if epsilon is None else epsilon
    conv = trace.convention if convention is None else BallConvention(convention)
    level = ball_level(eps, conv)
    for r in trace.records:
        if r.V <= level:
            return r.step, r.timestep
    return None


def delta_v_closed_form(p: Problem, pt: PrimalDualPoint, next_pt: PrimalDualPoint,
                        saddle: PrimalDualPoint, rho: float, projected: bool = True) -> float:
    """``V(k+1) - V(k)`` from the gradients at ``pt``.

    Evaluates ``-rho * [2 * (-(x_hat - x).Lx + (mu_hat - mu).Lmu)
    - rho * (|Lx|^2 + |Lmu|^2)]``.  With ``projected=True`` the dual
    direction ``Lmu`` is the projected step ``(mu' - mu) / rho``, which equals
    ``g(x)`` except on components clipped at zero; only that choice makes the
    identity exact for the projected multiplier update.
    """
    Lx = grad_x(p, pt)
    if projected:
        Lmu = (next_pt.mu - pt.mu) / rho
    else:
        Lmu = p.constraint_values(pt.x)
    inner = -(saddle.x - pt.x) @ Lx + (saddle.mu - pt.mu) @ Lmu
    sq = Lx @ Lx + Lmu @ Lmu
    return float(-rho * (2.0 * inner - rho * sq))
