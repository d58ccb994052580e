import numpy as np
import pytest

from cloudsaddle.instances import random_convex_instance, six_agent_problem
from cloudsaddle.problem import (
    DimensionError,
    PrimalDualPoint,
    Problem,
    convexity_diagnostic,
    grad_mu,
    grad_x,
    lagrangian,
)


def test_foreign_variable_in_objective_rejected():
    with pytest.raises(ValueError, match="objective 2"):
        Problem(["x1^2", "x3^2", "x3^4"])


def test_unknown_variable_in_constraint_rejected():
    with pytest.raises(ValueError):
        Problem(["x1^2"], ["x1 + y"])


def test_negative_multiplier_rejected():
    with pytest.raises(ValueError):
        PrimalDualPoint([0.0], [-1.0])


def test_dimension_checks():
    p = six_agent_problem()
    with pytest.raises(DimensionError):
        grad_x(p, PrimalDualPoint(np.zeros(5), np.zeros(3)))
    with pytest.raises(DimensionError):
        lagrangian(p, PrimalDualPoint(np.zeros(6), np.zeros(2)))


def test_lagrangian_and_gradients_at_origin():
    p = six_agent_problem()
    pt = PrimalDualPoint(np.zeros(6), [1.0, 2.0, 0.5])
    targets = np.array([-3.0, 6.0, -5.0, 4.0, 2.0, -6.0])
    F = float(np.sum(targets ** 4))
    assert lagrangian(p, pt) == pytest.approx(F + 1.0 * -50 + 2.0 * -100 + 0.5 * -100)
    assert np.allclose(grad_x(p, pt), -4 * targets ** 3 + np.array([0, 0.5 * 9, 0, 0, 0, 0]))
    assert np.allclose(grad_mu(p, np.zeros(6)), [-50.0, -100.0, -100.0])


def test_batch_evaluation_matches_pointwise():
    p = six_agent_problem()
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 6))
    MU = rng.uniform(0, 1, size=(20, 3))
    G = p.batch_grad_x(X, MU)
    C = p.batch_constraints(X)
    for k in range(20):
        pt = PrimalDualPoint(X[k], MU[k])
        assert np.allclose(G[k], grad_x(p, pt), rtol=1e-13, atol=0)
        # numpy and Python float powers may round differently in the last ulp
        assert np.allclose(C[k], grad_mu(p, X[k]), rtol=1e-13, atol=0)


def test_unconstrained_batch_shapes():
    p = Problem(["x1^2", "(x2 - 1)^2"])
    assert p.batch_constraints(np.zeros((4, 2))).shape == (4, 0)
    assert p.batch_grad_x(np.zeros((4, 2)), np.zeros((4, 0))).shape == (4, 2)


def test_partials_for_agent():
    p = six_agent_problem()
    parts = p.partials_for_agent(1)
    assert [str(d) for d in parts] == ["0.0", "0.0", "9.0"]


def test_convexity_diagnostic():
    assert convexity_diagnostic(six_agent_problem(), 100) == []
    assert convexity_diagnostic(random_convex_instance(3).problem, 100) == []
    bad = Problem(["x1^2"], ["-(x1^2) + 1"])
    assert any(label == "g1" for label, _, _ in convexity_diagnostic(bad, 20))
