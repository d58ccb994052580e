"""Monte Carlo estimates of the stepsize bounds ``gamma1``, ``gamma2``.

``gamma1`` is the minimum of ``sqrt((eps/2) / (|Lx|^2 + |Lmu|^2))`` over the
ball ``B_{eps/2}`` about the saddle, and ``gamma2`` the minimum of

    (-(x_hat - x).Lx + (mu_hat - mu).Lmu) / (|Lx|^2 + |Lmu|^2)

over the annulus between ``B_{eps/2}`` and ``{V <= R}``.  Both minima are
estimated by uniform sampling, so they over-estimate the true infima and
the recommended stepsize carries a safety factor.

Samples are drawn in fixed-size chunks, each from its own seed substream
``(seed, region, chunk)``.  Results therefore do not depend on how chunks
are scheduled, and a run with more samples sees a superset of the points of
a run with fewer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .analysis import DEFAULT_CONVENTION, BallConvention, ball_level, radius_R
from .problem import PrimalDualPoint, Problem

__all__ = [
    "PreconditionError",
    "StepsizeReport",
    "sample_annulus",
    "estimate_gamma1",
    "estimate_gamma2",
    "recommend_rho",
    "estimate_stepsize",
]

CHUNK = 1 << 16
SAFETY_FACTOR = 0.85
_GAMMA1_STREAM, _GAMMA2_STREAM = 1, 2


class PreconditionError(ValueError):
    """A sampled ratio was nonpositive: the problem is not convex-concave
    around the supplied point, or the point is not its saddle."""

    def __init__(self, message, point=None, value=None):
        super().__init__(message)
        self.point = point
        self.value = value


@dataclass(frozen=True)
class StepsizeReport:
    gamma1: float
    gamma2: float
    rho_max: float
    rho_recommended: float
    samples_used: int
    R: float
    epsilon: float
    safety_factor: float = SAFETY_FACTOR
    convention: str = DEFAULT_CONVENTION.value

    def to_dict(self) -> dict:
        return asdict(self)


def sample_annulus(rng: np.random.Generator, n: int, dim: int,
                   r_inner: float, r_outer: float) -> np.ndarray:
    """``n`` points uniform in ``{r_inner <= |u| <= r_outer}`` of ``R^dim``."""
    u = rng.standard_normal((n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    # radius by inverse CDF, written to avoid overflow of r**dim
    t = (r_inner / r_outer) ** dim if r_outer > 0 else 0.0
    r = r_outer * (t + (1.0 - t) * rng.random(n)) ** (1.0 / dim)
    return u * r[:, None]


def _radii(epsilon, R, convention):
    half = math.sqrt(ball_level(epsilon / 2, convention))
    return half, math.sqrt(R)


def _stream_min(p, saddle, r_inner, r_outer, n_samples, seed, stream, clip_orthant, fn):
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    center = saddle.stacked()
    n, dim = p.n_agents, center.size
    best = math.inf
    used = 0
    chunk = 0
    empty_chunks = 0
    while used < n_samples:
        rng = np.random.default_rng(np.random.SeedSequence([seed, stream, chunk]))
        chunk += 1
        Z = center + sample_annulus(rng, CHUNK, dim, r_inner, r_outer)
        if clip_orthant and dim > n:
            Z = Z[(Z[:, n:] >= 0).all(axis=1)]
        if not len(Z):
            empty_chunks += 1
            if empty_chunks > 64:
                raise RuntimeError("no admissible samples: the orthant slice is too small")
            continue
        Z = Z[: n_samples - used]
        used += len(Z)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            values = fn(Z[:, :n], Z[:, n:])
        if not np.all(np.isfinite(values) | np.isposinf(values)):
            raise FloatingPointError("non-finite value while sampling")
        best = min(best, float(values.min()))
    return best, used


def _gradients(p: Problem, X, MU):
    Lx = p.batch_grad_x(X, MU)
    Lmu = p.batch_constraints(X)
    return Lx, Lmu, (Lx * Lx).sum(axis=1) + (Lmu * Lmu).sum(axis=1)


def estimate_gamma1(p: Problem, saddle: PrimalDualPoint, epsilon: float,
                    n_samples: int = 1_000_000, seed: int = 0,
                    convention=DEFAULT_CONVENTION, clip_orthant: bool = True,
                    return_count: bool = False):
    """Sampled minimum of ``sqrt((eps/2) / |grad L|^2)`` over ``B_{eps/2}``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    r_in, _ = _radii(epsilon, epsilon, convention)

    def fn(X, MU):
        _, _, den = _gradients(p, X, MU)
        return np.sqrt((epsilon / 2) / den)

    value, used = _stream_min(p, saddle, 0.0, r_in, n_samples, seed, _GAMMA1_STREAM, clip_orthant, fn)
    return (value, used) if return_count else value


def estimate_gamma2(p: Problem, saddle: PrimalDualPoint, epsilon: float, R: float,
                    n_samples: int = 1_000_000, seed: int = 0,
                    convention=DEFAULT_CONVENTION, clip_orthant: bool = True,
                    return_count: bool = False):
    """Sampled minimum of the descent ratio over the annulus.

    Raises
    ------
    PreconditionError
        If any sampled ratio is nonpositive.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not R >= epsilon:
        raise ValueError(f"R must be at least epsilon, got R={R}")
    r_in, r_out = _radii(epsilon, R, convention)
    x_hat, mu_hat = saddle.x, saddle.mu

    def fn(X, MU):
        Lx, Lmu, den = _gradients(p, X, MU)
        num = -((x_hat - X) * Lx).sum(axis=1) + ((mu_hat - MU) * Lmu).sum(axis=1)
        ratio = num / den
        bad = ~(ratio > 0)
        if bad.any():
            k = int(np.argmax(bad))
            raise PreconditionError(
                f"nonpositive descent ratio {ratio[k]:.3g}; the problem is not "
                "convex-concave here or the given point is not its saddle",
                point=(X[k].copy(), MU[k].copy()), value=float(ratio[k]),
            )
        return ratio

    value, used = _stream_min(p, saddle, r_in, r_out, n_samples, seed, _GAMMA2_STREAM, clip_orthant, fn)
    return (value, used) if return_count else value


def recommend_rho(gamma1: float, gamma2: float, *, epsilon: float, R: float,
                  samples_used: int = 0, safety_factor: float = SAFETY_FACTOR,
                  convention=DEFAULT_CONVENTION) -> StepsizeReport:
    if not (gamma1 > 0 and gamma2 > 0):
        raise ValueError(f"gamma estimates must be positive, got {gamma1}, {gamma2}")
    rho_max = min(gamma1, gamma2)
    return StepsizeReport(
        gamma1=float(gamma1),
        gamma2=float(gamma2),
        rho_max=float(rho_max),
        rho_recommended=float(safety_factor * rho_max),
        samples_used=int(samples_used),
        R=float(R),
        epsilon=float(epsilon),
        safety_factor=float(safety_factor),
        convention=BallConvention(convention).value,
    )


def estimate_stepsize(p: Problem, saddle: PrimalDualPoint, epsilon: float,
                      init: PrimalDualPoint, n_samples: int = 1_000_000, seed: int = 0,
                      convention=DEFAULT_CONVENTION, clip_orthant: bool = True,
                      safety_factor: float = SAFETY_FACTOR) -> StepsizeReport:
    """Estimate both bounds with ``R = max(eps, V(init))`` and assemble a report."""
    R = radius_R(epsilon, init, saddle)
    g1, n1 = estimate_gamma1(p, saddle, epsilon, n_samples, seed, convention, clip_orthant, True)
    g2, n2 = estimate_gamma2(p, saddle, epsilon, R, n_samples, seed, convention, clip_orthant, True)
    return recommend_rho(g1, g2, epsilon=epsilon, R=R, samples_used=n1 + n2,
                         safety_factor=safety_factor, convention=convention)
