"""Problem instances: the six-agent example and a random convex generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import PrimalDualPoint, Problem

__all__ = [
    "SIX_AGENT_TARGETS",
    "SIX_AGENT_CONSTRAINTS",
    "SIX_AGENT_REFERENCE",
    "six_agent_problem",
    "RandomInstance",
    "random_convex_instance",
]

SIX_AGENT_TARGETS = (-3.0, 6.0, -5.0, 4.0, 2.0, -6.0)
SIX_AGENT_CONSTRAINTS = (
    "3*x1^2 + x4^4 - 50",
    "x3^6 + x6^4 - 100",
    "9*x2 + x5^6 - 100",
)
# Reference saddle for the six-agent example, rounded to 4-5 digits.
SIX_AGENT_REFERENCE = PrimalDualPoint(
    [-2.1278, 5.7178, -1.7745, 2.4566, 1.6395, -2.8798],
    [0.2462, 1.2718, 0.0],
)


def six_agent_problem() -> Problem:
    """``f_i = (x_i - t_i)^4`` with three coupling constraints."""
    objectives = [f"(x{i + 1} - {t!r})^4" for i, t in enumerate(SIX_AGENT_TARGETS)]
    return Problem(objectives, SIX_AGENT_CONSTRAINTS)


@dataclass(frozen=True)
class RandomInstance:
    problem: Problem
    x0: np.ndarray
    mu0: np.ndarray
    seed: int

    @property
    def init(self) -> PrimalDualPoint:
        return PrimalDualPoint(self.x0, self.mu0)


def _num(v: float) -> str:
    return repr(float(v))


def random_convex_instance(seed: int, max_agents: int = 5, max_constraints: int = 3) -> RandomInstance:
    """Random instance whose convexity holds by construction.

    Objectives are ``a (x - c)^2 + b (x - d)^4`` with ``a > 0``, so each is
    strongly convex.  Each constraint is a positively weighted sum of even
    powers of a random subset of the variables plus a linear term, minus a
    positive constant, so ``g(0) < 0`` and Slater's condition holds at the
    origin.  Targets ``c`` are spread wide enough that some constraints bind.
    """
    rng = np.random.default_rng([seed, 0x5EED])
    n = int(rng.integers(1, max_agents + 1))
    m = int(rng.integers(0, max_constraints + 1))
    names = [f"x{i + 1}" for i in range(n)]
    objectives = []
    for v in names:
        a = rng.uniform(0.5, 2.0)
        c = rng.uniform(-2.5, 2.5)
        terms = f"{_num(a)}*({v} - {_num(c)})^2"
        if rng.random() < 0.5:
            b = rng.uniform(0.01, 0.2)
            d = rng.uniform(-1.0, 1.0)
            terms += f" + {_num(b)}*({v} - {_num(d)})^4"
        objectives.append(terms)
    constraints = []
    for _ in range(m):
        k = int(rng.integers(1, n + 1))
        chosen = sorted(rng.choice(n, size=k, replace=False).tolist())
        parts = []
        for i in chosen:
            w = rng.uniform(0.2, 1.0)
            power = 2 if rng.random() < 0.7 else 4
            parts.append(f"{_num(w)}*{names[i]}^{power}")
            lin = rng.uniform(-0.5, 0.5)
            parts.append(f"{_num(lin)}*{names[i]}")
        r = rng.uniform(0.5, 3.0)
        constraints.append(" + ".join(parts) + f" - {_num(r)}")
    x0 = rng.uniform(-1.0, 1.0, size=n)
    mu0 = rng.uniform(0.0, 0.5, size=m)
    return RandomInstance(Problem(objectives, constraints), x0, mu0, seed)
