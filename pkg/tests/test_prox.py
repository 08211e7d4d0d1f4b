import numpy as np
import pytest

from qnsplit.linops import DenseOperator, ShapeError, identity
from qnsplit.prox import (InvalidBoxError, box_operator, grad_quadratic,
                          group_l21_operator, l1_shrinkage_operator,
                          pairwise_ball_operator, project_pairwise_l2_ball,
                          prox_box, prox_group_l21, quadratic_gradient_map,
                          soft_shrink, zero_operator)


def test_prox_box_examples():
    assert np.array_equal(prox_box([-5.0, 100.0, 300.0], 0, 255), [0, 100, 255])
    z = np.array([10.0, 20.0])
    assert np.array_equal(prox_box(z, 0, 255), z)
    assert np.array_equal(prox_box([256.0, -1.0], 0, 255), [255.0, 0.0])
    with pytest.raises(InvalidBoxError):
        prox_box([0.0], 1.0, -1.0)


def test_project_pairwise_ball_examples():
    assert np.allclose(project_pairwise_l2_ball([3.0, 4.0], 2.0), [1.2, 1.6])
    assert np.array_equal(project_pairwise_l2_ball([0.1, 0.0], 1.0), [0.1, 0.0])
    assert np.array_equal(project_pairwise_l2_ball([0.0, 0.0], 0.5), [0.0, 0.0])
    with pytest.raises(ShapeError):
        project_pairwise_l2_ball([1.0, 2.0, 3.0], 1.0)


def test_prox_group_l21_examples():
    assert np.allclose(prox_group_l21([3.0, 4.0], 5.0), [0.0, 0.0])
    assert np.allclose(prox_group_l21([6.0, 8.0], 5.0), [3.0, 4.0])
    v = np.array([1.0, -2.0, 0.3, 0.4])
    assert np.allclose(prox_group_l21(v, 0.0), v)


def test_grad_quadratic_examples():
    assert np.allclose(grad_quadratic(identity(2), [0.0, 0.0], np.array([1.0, 2.0])),
                       [1.0, 2.0])
    A = DenseOperator([[2.0]])
    assert np.allclose(grad_quadratic(A, [2.0], np.array([3.0])), [8.0])
    # at A x = b the gradient vanishes
    assert np.allclose(grad_quadratic(A, [2.0], np.array([1.0])), [0.0])
    with pytest.raises(ShapeError):
        grad_quadratic(A, [1.0, 2.0], np.array([3.0]))


def test_projection_idempotency(rng):
    z = 300.0 * rng.standard_normal(40)
    p1 = prox_box(z, 0, 255)
    assert np.array_equal(prox_box(p1, 0, 255), p1)
    q1 = project_pairwise_l2_ball(z, 1.3)
    assert np.array_equal(project_pairwise_l2_ball(q1, 1.3), q1)


def test_moreau_complementarity_per_pair(rng):
    # z = project_ball(z, mu) + shrink(z, lam) when mu == lam
    for mu in (0.3, 1.0, 2.5):
        z = 3.0 * rng.standard_normal(24)
        rebuilt = project_pairwise_l2_ball(z, mu) + prox_group_l21(z, mu)
        assert np.max(np.abs(rebuilt - z)) <= 1e-12


def test_firm_nonexpansiveness_of_catalog(rng):
    ops = [box_operator(-1.0, 2.0), pairwise_ball_operator(0.7),
           l1_shrinkage_operator(0.4), group_l21_operator(0.5), zero_operator()]
    for T in ops:
        for _ in range(100):
            z1 = 3.0 * rng.standard_normal(8)
            z2 = 3.0 * rng.standard_normal(8)
            j1 = T.resolvent(z1, 0.8)
            j2 = T.resolvent(z2, 0.8)
            lhs = float((j1 - j2) @ (j1 - j2))
            rhs = float((j1 - j2) @ (z1 - z2))
            assert lhs <= rhs + 1e-12


def test_resolvent_jacobians_match_finite_differences(rng):
    ops = [box_operator(-1.0, 2.0), pairwise_ball_operator(0.7),
           l1_shrinkage_operator(0.4), group_l21_operator(0.5)]
    tau = 0.8
    h = 1e-7
    for T in ops:
        for _ in range(20):
            w = 2.0 * rng.standard_normal(8)
            v = rng.standard_normal(8)
            fd = (T.resolvent(w + h * v, tau) - T.resolvent(w - h * v, tau)) / (2 * h)
            exact = T.jacobian_apply(w, tau, v)
            # away from kinks the generalized derivative is the derivative
            assert np.max(np.abs(fd - exact)) <= 1e-5


def test_soft_shrink():
    assert np.allclose(soft_shrink([2.0, -0.1, -3.0], 1.0), [1.0, 0.0, -2.0])


def test_cocoercivity_of_quadratic_gradient(rng):
    A = DenseOperator(rng.standard_normal((6, 4)))
    B = quadratic_gradient_map(A, rng.standard_normal(6))
    for _ in range(100):
        x = rng.standard_normal(4)
        y = rng.standard_normal(4)
        d = B.apply(x) - B.apply(y)
        assert float((x - y) @ d) >= B.beta * float(d @ d) - 1e-10


def test_step_size_independence_of_projections(rng):
    T = box_operator(0.0, 1.0)
    z = rng.standard_normal(6)
    assert np.array_equal(T.resolvent(z, 0.1), T.resolvent(z, 10.0))
    P = pairwise_ball_operator(0.9)
    assert np.array_equal(P.resolvent(z, 0.1), P.resolvent(z, 10.0))
