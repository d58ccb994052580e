"""Centralized Uzawa iteration (gradient descent in x, projected ascent in mu)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problem import PrimalDualPoint, Problem

__all__ = [
    "DivergenceError",
    "UzawaConfig",
    "SaddleResult",
    "project_nonneg",
    "uzawa_step",
    "solve_saddle",
    "kkt_residual",
    "refine_saddle",
]


class DivergenceError(ArithmeticError):
    """A non-finite iterate was produced.

    Attributes
    ----------
    step : int or None
        Iteration (or simulator timestep) at which it was detected.
    """

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class UzawaConfig:
    rho: float
    max_steps: int = 1_000_000
    fixed_point_tol: float = 1e-12

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if not self.fixed_point_tol >= 0:
            raise ValueError("fixed_point_tol must be nonnegative")


@dataclass(frozen=True)
class SaddleResult:
    point: PrimalDualPoint
    steps: int
    converged: bool
    displacement: float

    def __iter__(self):
        # allows ``point, steps, converged = solve_saddle(...)``
        return iter((self.point, self.steps, self.converged))


def project_nonneg(v) -> np.ndarray:
    """Componentwise ``max(0, v)``; negative zeros map to ``+0.0``."""
    v = np.asarray(v, dtype=float)
    return np.where(v > 0.0, v, 0.0)


def uzawa_step(p: Problem, pt: PrimalDualPoint, rho: float) -> PrimalDualPoint:
    """One simultaneous primal-dual step; both updates read the old point.

    ``x' = x - rho dL/dx(x, mu)`` and ``mu' = [mu + rho g(x)]_+``.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    x = p._check_x(pt.x)
    mu = p._check_mu(pt.mu)
    try:
        new_x, new_mu = p._step_kernel(*x.tolist(), *mu.tolist(), rho)
    except OverflowError:
        raise DivergenceError("overflow while stepping") from None
    if not all(map(math.isfinite, new_x + new_mu)):
        raise DivergenceError("non-finite iterate")
    return PrimalDualPoint(np.array(new_x), np.array(new_mu, dtype=float))


def solve_saddle(p: Problem, init: PrimalDualPoint, cfg: UzawaConfig) -> SaddleResult:
    """Iterate :func:`uzawa_step` until the step displacement is small.

    Stops when ``||z_{k+1} - z_k||_2 <= cfg.fixed_point_tol`` or after
    ``cfg.max_steps`` steps and returns the last iterate.

    Raises
    ------
    DivergenceError
        With the offending step index if an iterate becomes non-finite.
    """
    x = p._check_x(init.x).tolist()
    mu = p._check_mu(init.mu).tolist()
    kernel = p._step_kernel
    rho = cfg.rho
    tol2 = cfg.fixed_point_tol ** 2
    isfinite = math.isfinite
    d2 = math.inf
    step = 0
    while step < cfg.max_steps:
        try:
            new_x, new_mu = kernel(*x, *mu, rho)
        except OverflowError:
            raise DivergenceError("overflow while stepping", step + 1) from None
        step += 1
        d2 = 0.0
        for a, b in zip(new_x, x):
            d2 += (a - b) * (a - b)
        for a, b in zip(new_mu, mu):
            d2 += (a - b) * (a - b)
        if not isfinite(d2):
            raise DivergenceError("non-finite iterate", step)
        x, mu = new_x, new_mu
        if d2 <= tol2:
            break
    point = PrimalDualPoint(np.array(x, dtype=float), np.array(mu, dtype=float))
    return SaddleResult(point, step, d2 <= tol2, math.sqrt(d2))


def kkt_residual(p: Problem, pt: PrimalDualPoint) -> dict:
    """Residuals of the Kuhn-Tucker conditions at ``pt``.

    ``stationarity`` is ``max|dL/dx|``, ``feasibility`` is ``max(g, 0)``,
    ``complementarity`` is ``max|mu_j g_j|``.
    """
    gx = p.batch_grad_x(pt.x[None, :], pt.mu[None, :])[0]
    g = p.constraint_values(pt.x)
    return {
        "stationarity": float(np.abs(gx).max()),
        "feasibility": float(np.maximum(g, 0.0).max()) if g.size else 0.0,
        "complementarity": float(np.abs(pt.mu * g).max()) if g.size else 0.0,
        "dual_feasibility": float(np.maximum(-pt.mu, 0.0).max()) if g.size else 0.0,
    }


def refine_saddle(p: Problem, pt: PrimalDualPoint, tol: float = 1e-13,
                  max_iter: int = 50, active_tol: float = 1e-3) -> SaddleResult:
    """Polish an approximate saddle point with Newton's method.

    The active set is guessed from ``pt`` (positive multiplier or nearly
    binding constraint) and Newton iterations are run on the resulting
    square KKT system.  Constraints whose multiplier turns negative are
    released and violated ones are added until the point satisfies all
    Kuhn-Tucker conditions.  Intended for points already close to the saddle,
    e.g. the output of :func:`solve_saddle`.
    """
    n, m = p.n_agents, p.n_constraints
    hess = p.hessian_functions()
    x = p._check_x(pt.x).copy()
    mu = p._check_mu(pt.mu).copy()
    g = p.constraint_values(x)
    active = {j for j in range(m) if mu[j] > 0 or g[j] > -active_tol}
    total = 0
    for _ in range(2 * m + 1):
        act = sorted(active)
        mu_a = mu[act].copy()
        for _ in range(max_iter):
            total += 1
            full_mu = np.zeros(m)
            full_mu[act] = mu_a
            args = x.tolist()
            r_x = np.array(p._grad_kernel(*args, *full_mu.tolist()))
            r_g = np.array([p._g[j](*args) for j in act])
            J = np.array([[p._dg[j][i](*args) for i in range(n)] for j in act]).reshape(len(act), n)
            H = np.array([[hess[a][b](*args, *full_mu.tolist()) for b in range(n)] for a in range(n)])
            K = np.block([[H, J.T], [J, np.zeros((len(act), len(act)))]])
            rhs = -np.concatenate([r_x, r_g])
            try:
                step = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(K, rhs, rcond=None)[0]
            x = x + step[:n]
            mu_a = mu_a + step[n:]
            if not np.all(np.isfinite(x)):
                raise DivergenceError("Newton refinement diverged", total)
            if np.abs(step).max() <= tol * max(1.0, np.abs(x).max()):
                break
        mu = np.zeros(m)
        mu[act] = mu_a
        g = p.constraint_values(x)
        negative = [j for j in act if mu[j] < 0]
        violated = [j for j in range(m) if j not in active and g[j] > tol]
        if not negative and not violated:
            break
        if negative:
            active.discard(min(negative, key=lambda j: mu[j]))
        else:
            active.add(max(violated, key=lambda j: g[j]))
    mu = np.where(mu > 0.0, mu, 0.0)
    point = PrimalDualPoint(x, mu)
    res = kkt_residual(p, point)
    scale = max(1.0, float(np.abs(x).max()))
    ok = max(res.values()) <= 1e-9 * scale
    return SaddleResult(point, total, ok, max(res.values()))
