"""Constrained multi-agent program: objectives, constraints and the Lagrangian.

Every agent ``i`` owns one scalar variable (``x1`` ... ``xN`` by default) and a
private objective in that variable alone.  Constraints ``g_j(x) <= 0`` may
couple any subset of the variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import Expression, compile_lambda, parse_expr

__all__ = [
    "DimensionError",
    "Problem",
    "PrimalDualPoint",
    "lagrangian",
    "grad_x",
    "grad_mu",
    "convexity_diagnostic",
]


class DimensionError(ValueError):
    pass


def _as_expr(e, allowed) -> Expression:
    if isinstance(e, Expression):
        return e
    return parse_expr(str(e), allowed)


def _compile_def(name: str, args: Sequence[str], lines: Sequence[str]):
    src = f"def {name}({', '.join(args)}):\n" + "".join(f"    {ln}\n" for ln in lines)
    namespace: dict = {"__builtins__": {}}
    exec(src, namespace)  # noqa: S102 - source is generated from expression trees
    return namespace[name]


@dataclass(frozen=True)
class PrimalDualPoint:
    """A pair ``(x, mu)`` with ``mu`` in the nonnegative orthant."""

    x: np.ndarray
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if np.any(mu < 0):
            raise ValueError(f"multipliers must be nonnegative, got {mu}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "mu", mu)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x, self.mu])


class Problem:
    """Minimize ``sum_i f_i(x_i)`` subject to ``g(x) <= 0``.

    Parameters
    ----------
    objectives : sequence of str or Expression
        ``objectives[i]`` may reference only ``variables[i]``.
    constraints : sequence of str or Expression, optional
        Constraint functions ``g_j``; ``m = 0`` gives a decoupled problem.
    variables : sequence of str, optional
        Variable names, ``x1 .. xN`` by default.

    Notes
    -----
    Convexity of the objectives and constraints, and regularity of the
    minimizer, are preconditions and are not verified.  See
    :func:`convexity_diagnostic` for a sampled sanity check.
    """

    def __init__(self, objectives, constraints=(), variables=None):
        n = len(objectives)
        if n < 1:
            raise ValueError("at least one agent is required")
        if variables is None:
            variables = [f"x{i + 1}" for i in range(n)]
        variables = [str(v) for v in variables]
        if len(variables) != n:
            raise DimensionError(f"{n} objectives but {len(variables)} variables")
        if len(set(variables)) != n:
            raise ValueError(f"duplicate variable names in {variables}")
        for v in variables:
            if v.startswith("_") or not v.isidentifier():
                raise ValueError(f"invalid variable name {v!r}")
        self.variables = tuple(variables)

        objs = []
        for i, f in enumerate(objectives):
            # parse against all variables first so a foreign name is reported
            # as such rather than as an unknown token
            e = _as_expr(f, self.variables)
            foreign = e.free_vars() - {variables[i]}
            if foreign:
                raise ValueError(
                    f"objective {i + 1} must depend only on {variables[i]}, "
                    f"but references {sorted(foreign)}"
                )
            objs.append(e)
        cons = []
        for j, g in enumerate(constraints):
            e = _as_expr(g, self.variables)
            unknown = e.free_vars() - set(variables)
            if unknown:
                raise ValueError(f"constraint {j + 1} references unknown {sorted(unknown)}")
            cons.append(e)
        self.objectives = tuple(objs)
        self.constraints = tuple(cons)

        # Partials are fixed at construction: these are the functions the
        # cloud hands out to the agents before the first timestep.
        self.objective_grads = tuple(f.diff(v) for f, v in zip(objs, variables))
        self.constraint_partials = tuple(
            tuple(g.diff(v) for v in variables) for g in cons
        )
        self._compile()

    @property
    def n_agents(self) -> int:
        return len(self.objectives)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def partials_for_agent(self, i: int) -> tuple:
        """``(dg_1/dx_i, ..., dg_m/dx_i)`` for zero-based agent index ``i``."""
        return tuple(row[i] for row in self.constraint_partials)

    def _compile(self):
        vs = self.variables
        self._f = [f.compile((v,)) for f, v in zip(self.objectives, vs)]
        self._df = [d.compile((v,)) for d, v in zip(self.objective_grads, vs)]
        self._g = [g.compile(vs) for g in self.constraints]
        self._dg = [[d.compile(vs) for d in row] for row in self.constraint_partials]

        # Fused Uzawa step.  The arithmetic is ordered exactly as an agent
        # evaluates its own component (df + mu_1*dg_1 + mu_2*dg_2 + ...), so
        # centralized and distributed iterates agree bit for bit.
        mus = [f"_mu{j}" for j in range(self.n_constraints)]
        lines = []
        for i, v in enumerate(vs):
            expr = self.objective_grads[i].to_python()
            for j in range(self.n_constraints):
                expr += f" + {mus[j]} * {self.constraint_partials[j][i].to_python()}"
            lines.append(f"_gx{i} = {expr}")
        for j, g in enumerate(self.constraints):
            lines.append(f"_t{j} = {mus[j]} + _rho * {g.to_python()}")
        new_x = ", ".join(f"{v} - _rho * _gx{i}" for i, v in enumerate(vs))
        new_mu = ", ".join(f"(_t{j} if _t{j} > 0.0 else 0.0)" for j in range(self.n_constraints))
        lines.append(f"return ({new_x},), ({new_mu}{',' if mus else ''})")
        self._step_kernel = _compile_def("_uzawa_step", list(vs) + mus + ["_rho"], lines)

        grads = [f"_gx{i}" for i in range(self.n_agents)]
        self._grad_kernel = _compile_def(
            "_grad_x", list(vs) + mus, lines[: self.n_agents] + [f"return ({', '.join(grads)},)"]
        )
        self._batch_g = [compile_lambda(vs, g.to_python()) for g in self.constraints]

    def hessian_functions(self):
        """Compiled ``d2L/dx_a dx_b`` as functions of ``(x..., mu...)``."""
        if getattr(self, "_hess", None) is None:
            vs = self.variables
            mus = [f"_mu{j}" for j in range(self.n_constraints)]
            rows = []
            for a, va in enumerate(vs):
                row = []
                for b, vb in enumerate(vs):
                    src = self.objective_grads[a].diff(vb).to_python() if a == b else "0.0"
                    for j in range(self.n_constraints):
                        src += f" + {mus[j]} * {self.constraint_partials[j][a].diff(vb).to_python()}"
                    row.append(compile_lambda(list(vs) + mus, src))
                rows.append(row)
            self._hess = rows
        return self._hess

    # -- evaluation ---------------------------------------------------------

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.n_agents:
            raise DimensionError(f"expected x of length {self.n_agents}, got {x.shape[0]}")
        return x

    def _check_mu(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float).reshape(-1)
        if mu.shape[0] != self.n_constraints:
            raise DimensionError(f"expected mu of length {self.n_constraints}, got {mu.shape[0]}")
        return mu

    def objective(self, x) -> float:
        x = self._check_x(x)
        return float(sum(f(xi) for f, xi in zip(self._f, x.tolist())))

    def constraint_values(self, x) -> np.ndarray:
        args = self._check_x(x).tolist()
        return np.array([g(*args) for g in self._g], dtype=float)

    def batch_grad_x(self, X: np.ndarray, MU: np.ndarray) -> np.ndarray:
        """Row-wise ``dL/dx`` for arrays of shape ``(n, N)`` and ``(n, m)``."""
        cols = self._grad_kernel(*X.T, *MU.T)
        return np.stack([np.broadcast_to(c, X.shape[:1]) for c in cols], axis=1)

    def batch_constraints(self, X: np.ndarray) -> np.ndarray:
        if not self._batch_g:
            return np.zeros((X.shape[0], 0))
        cols = [g(*X.T) for g in self._batch_g]
        return np.stack([np.broadcast_to(c, X.shape[:1]) for c in cols], axis=1)

    def __repr__(self):
        objs = ", ".join(repr(str(f)) for f in self.objectives)
        cons = ", ".join(repr(str(g)) for g in self.constraints)
        return f"Problem(objectives=[{objs}], constraints=[{cons}])"


def _split(p: Problem, pt: PrimalDualPoint):
    return p._check_x(pt.x), p._check_mu(pt.mu)


def lagrangian(p: Problem, pt: PrimalDualPoint) -> float:
    """``F(x) + mu . g(x)``."""
    x, mu = _split(p, pt)
    g = p.constraint_values(x)
    return p.objective(x) + float(mu @ g) if g.size else p.objective(x)


def grad_x(p: Problem, pt: PrimalDualPoint) -> np.ndarray:
    """``dL/dx``: component ``i`` is ``f_i'(x_i) + sum_j mu_j dg_j/dx_i(x)``."""
    x, mu = _split(p, pt)
    return np.array(p._grad_kernel(*x.tolist(), *mu.tolist()), dtype=float)


def grad_mu(p: Problem, x) -> np.ndarray:
    """``dL/dmu = g(x)``."""
    return p.constraint_values(x)


def convexity_diagnostic(p: Problem, n_points: int = 200, scale: float = 5.0, seed: int = 0):
    """Sample Hessians of ``F`` and each ``g_j`` looking for negative curvature.

    This is a heuristic: an empty result is not a convexity proof.

    Returns
    -------
    list of (str, ndarray, float)
        ``(function label, point, smallest eigenvalue)`` for every sampled
        point with an eigenvalue below ``-1e-9``.
    """
    rng = np.random.default_rng(seed)
    vs = p.variables
    labelled = [("F", None)] + [(f"g{j + 1}", g) for j, g in enumerate(p.constraints)]
    hessians = {}
    for label, g in labelled:
        if g is None:
            rows = [[(p.objective_grads[a].diff(vs[b]) if a == b else None) for b in range(len(vs))]
                    for a in range(len(vs))]
        else:
            rows = [[g.diff(va).diff(vb) for vb in vs] for va in vs]
        hessians[label] = [[None if e is None else e.compile(vs) for e in row] for row in rows]
    findings = []
    for _ in range(n_points):
        x = rng.uniform(-scale, scale, size=len(vs)).tolist()
        for label, rows in hessians.items():
            H = np.array([[0.0 if h is None else h(*x) for h in row] for row in rows])
            lam = float(np.linalg.eigvalsh(H).min())
            if lam < -1e-9:
                findings.append((label, np.array(x), lam))
    return findings
