import numpy as np
import pytest

from conftest import oracle_resolvent, random_calculus_instance, random_spd
from qnsplit.metrics import DenseMetric, ScaledIdentityMetric
from qnsplit.prox import CocoerciveMap, box_operator, zero_operator
from qnsplit.resolvent import (RootBracketError, RootConfig, RootContext,
                               bisection_root, certified_bracket, eval_root_l,
                               fb_step_perturbed, hybrid_root,
                               inclusion_residual, newton_root,
                               resolve_perturbed)

ORTHANT = box_operator(0.0, np.inf)
EYE2 = ScaledIdentityMetric(1.0, 2)
U11 = np.array([1.0, 1.0])
Z_ORTHANT = np.array([1.0, -1.0])


def orthant_context():
    return RootContext(ORTHANT, EYE2, "plus", U11, Z_ORTHANT)


def test_eval_root_l_orthant_values():
    ctx = orthant_context()
    assert eval_root_l(ctx, [0.0])[0] == pytest.approx(-1.0, abs=1e-14)
    assert eval_root_l(ctx, [0.5])[0] == pytest.approx(0.0, abs=1e-14)


def test_eval_root_l_zero_operator(rng):
    # J_T the identity collapses l to alpha (1 + |u|^2)
    u = rng.standard_normal(4)
    ctx = RootContext(zero_operator(), ScaledIdentityMetric(1.0, 4), "plus",
                      u, rng.standard_normal(4))
    for a in (-2.0, 0.0, 0.7):
        val = eval_root_l(ctx, [a])[0]
        assert val == pytest.approx(a * (1.0 + u @ u), rel=1e-12, abs=1e-12)


def test_resolve_perturbed_unperturbed_reduction(rng):
    T = box_operator(-1.0, 1.0)
    M = ScaledIdentityMetric(2.0, 5)
    z = rng.standard_normal(5)
    x, rep = resolve_perturbed(T, M, "plus", None, z)
    assert np.array_equal(x, T.resolvent(z, 0.5))
    assert rep.method == "direct" and rep.total_iters == 0


def test_resolve_perturbed_orthant_kkt_point():
    x, rep = resolve_perturbed(ORTHANT, EYE2, "plus", U11, Z_ORTHANT)
    assert np.allclose(x, [0.5, 0.0], atol=1e-9)
    assert rep.residual <= 1e-9


def test_resolve_perturbed_fixed_point_at_zero_of_T():
    # an interior point of the orthant is a zero of its normal cone
    z = np.array([2.0, 3.0])
    x, _ = resolve_perturbed(ORTHANT, EYE2, "plus", U11, z)
    assert np.allclose(x, z, atol=1e-10)


def test_resolve_perturbed_defining_inclusion(rng):
    # V(z - x*) in T(x*) for both signs, via the prox-optimality residual
    for trial in range(40):
        T, M, sign, U, z, V = random_calculus_instance(rng, trial)
        x, _ = resolve_perturbed(T, M, sign, U, z)
        res = inclusion_residual(T, lambda v: V @ v, z, x)
        assert res <= 1e-8


def test_fb_step_reductions(rng):
    T = box_operator(-1.0, 1.0)
    M = ScaledIdentityMetric(2.0, 4)
    z = rng.standard_normal(4)
    u = 0.3 * rng.standard_normal(4)
    # B absent: identical to the plain perturbed resolvent
    x1, _ = fb_step_perturbed(T, None, M, "plus", u, z)
    x2, _ = resolve_perturbed(T, M, "plus", u, z)
    assert np.array_equal(x1, x2)
    # U empty: classical forward-backward step
    B = CocoerciveMap(lambda v: 0.5 * v, beta=2.0)
    x3, _ = fb_step_perturbed(T, B, M, "plus", None, z)
    assert np.array_equal(x3, T.resolvent(z - 0.5 * (0.5 * z), 0.5))


def test_fb_step_matches_dense_inverse_oracle():
    # fb step equals J^V_T at z - V^{-1} B z, with V^{-1} formed densely
    B = CocoerciveMap(lambda v: 0.1 * v, beta=10.0)
    x1, _ = fb_step_perturbed(ORTHANT, B, EYE2, "plus", U11, Z_ORTHANT)
    V = np.eye(2) + np.outer(U11, U11)
    z_breve = Z_ORTHANT - np.linalg.solve(V, 0.1 * Z_ORTHANT)
    x2, _ = resolve_perturbed(ORTHANT, EYE2, "plus", U11, z_breve)
    assert np.allclose(x1, x2, atol=1e-9)
    # and satisfies the forward-backward inclusion V(z - x) - Bz in T(x)
    res = inclusion_residual(ORTHANT, lambda v: V @ v, Z_ORTHANT, x1,
                             forward=0.1 * Z_ORTHANT)
    assert res <= 1e-8


# ---------------------------------------------------------------------------
# scalar root solvers


def test_bisection_orthant_example():
    ctx = orthant_context()
    rep = bisection_root(ctx.scalar_l(), zeta=4.0, tol=1e-12)
    assert rep.alpha_star[0] == pytest.approx(0.5, abs=1e-10)
    assert rep.converged


def test_bisection_iteration_count_law():
    # |alpha_k - alpha_{k-1}| = 2 zeta / 2^k, so ceil(log2(2 zeta / eps)) steps
    calls = [0]

    def l(a):
        calls[0] += 1
        return a

    zeta, eps = 1.0, 1e-6
    rep = bisection_root(l, zeta, tol=eps)
    expected = int(np.ceil(np.log2(2 * zeta / eps)))
    assert rep.bisect_iters == expected
    assert abs(rep.alpha_star[0]) <= eps


def test_bisection_linear_function():
    rep = bisection_root(lambda a: a, zeta=1.0, tol=1e-10)
    assert abs(rep.alpha_star[0]) <= 1e-9


def test_bisection_bound_violation():
    with pytest.raises(RootBracketError):
        bisection_root(lambda a: a + 10.0, zeta=1.0)


def test_newton_orthant_one_step_from_zero():
    # active set {1} gives Clarke slope 2; one exact step lands on 0.5
    ctx = orthant_context()
    l = ctx.scalar_l()
    jac = lambda a: ctx.jacobian(np.array([a]))
    rep = newton_root(l, jac, np.array([0.0]), tol=1e-12)
    assert rep.newton_iters == 1
    assert rep.alpha_star[0] == pytest.approx(0.5, abs=1e-12)


def test_newton_linear_one_step():
    gain = 1.0 + 2.0   # l(a) = a (1 + |u|^2) with |u|^2 = 2
    rep = newton_root(lambda a: gain * a, lambda a: np.array([[gain]]),
                      np.array([7.0]), tol=1e-12)
    assert rep.newton_iters == 1
    assert abs(rep.alpha_star[0]) <= 1e-12


def test_newton_zero_iterations_at_root():
    rep = newton_root(lambda a: a, None, np.array([0.0]), tol=1e-12)
    assert rep.newton_iters == 0 and rep.converged


def test_newton_multidimensional_fd(rng):
    A = random_spd(rng, 3, lo=1.0, hi=2.0)
    b = rng.standard_normal(3)
    rep = newton_root(lambda a: A @ a - b, None, np.zeros(3), tol=1e-9)
    assert rep.converged
    assert np.linalg.norm(A @ rep.alpha_star - b) <= 1e-9


def test_newton_singular_jacobian_flagged():
    rep = newton_root(lambda a: np.array([0.0 * a[0] + 1.0]),
                      lambda a: np.array([[0.0]]), np.array([1.0]), tol=1e-12)
    assert not rep.converged and rep.method == "newton-singular"


def test_newton_inexact_solve_honors_eta_budget():
    gain = 3.0
    etas = []

    def sloppy_solve(G, rhs):
        step = np.linalg.solve(G, rhs)
        e = 1e-3 * np.linalg.norm(G, 2) * np.ones_like(step)
        etas.append(np.linalg.norm(e) / np.linalg.norm(G, 2))
        return step + np.linalg.solve(G, e)

    rep = newton_root(lambda a: gain * a, lambda a: np.array([[gain]]),
                      np.array([5.0]), tol=1e-10, linear_solve=sloppy_solve)
    assert rep.converged
    assert all(e <= 1e-3 + 1e-12 for e in etas)


def test_hybrid_orthant_switch_width():
    # bracket [-4, 4] halves to width 0.5 in 4 steps, then Newton finishes
    ctx = orthant_context()
    cfg = RootConfig(switch_width=0.5)
    rep = hybrid_root(ctx.scalar_l(), 4.0, cfg,
                      jacobian=lambda a: ctx.jacobian(np.array([a])), tol=1e-10)
    assert rep.converged
    assert rep.alpha_star[0] == pytest.approx(0.5, abs=1e-10)
    assert rep.bisect_iters <= 4
    # Newton phase: the midpoint evaluation plus at most one corrective step
    assert rep.newton_iters <= 2


def test_hybrid_tight_bracket_pure_newton():
    ctx = orthant_context()
    cfg = RootConfig(switch_width=10.0)
    rep = hybrid_root(ctx.scalar_l(), 0.6, cfg,
                      jacobian=lambda a: ctx.jacobian(np.array([a])), tol=1e-10)
    assert rep.converged and rep.bisect_iters == 0


def test_hybrid_flat_region_forces_fallback():
    # zero slope left of the kink starves Newton; bisection must resume
    def l(a):
        return -0.5 if a < 3.0 else 10.0 * (a - 3.0) - 0.5

    rep = hybrid_root(l, 4.0, RootConfig(switch_width=6.0), tol=1e-10)
    assert rep.converged
    assert rep.fallbacks >= 1
    assert rep.alpha_star[0] == pytest.approx(3.05, abs=1e-9)


def test_certified_bracket_doubles_until_sign_change():
    calls = []

    def l(a):
        calls.append(a)
        return a - 5.0

    zeta, f_lo, f_hi, evals = certified_bracket(l, 0.5, 0.0, RootConfig())
    assert f_lo < 0 < f_hi
    assert zeta >= 5.0
    with pytest.raises(RootBracketError):
        certified_bracket(lambda a: 1.0 + 0.0 * a, 1.0, 0.0, RootConfig())


# ---------------------------------------------------------------------------
# laws of the root function


def test_root_function_strict_monotonicity(rng):
    for trial in range(50):
        T, M, sign, U, z, V = random_calculus_instance(rng, trial, r_max=1)
        ctx = RootContext(T, M, sign, U, z)
        l = ctx.scalar_l()
        for _ in range(4):
            a, b = np.sort(rng.uniform(-3, 3, 2))
            if b - a < 1e-9:
                continue
            assert l(a) < l(b)


def test_root_function_lipschitz_constant(rng):
    # |l(a) - l(b)| <= (1 + |M^{-1/2} U|^2) |a - b|
    for trial in range(50):
        T, M, sign, U, z, V = random_calculus_instance(rng, trial, r_max=1)
        ctx = RootContext(T, M, sign, U, z)
        l = ctx.scalar_l()
        w, vecs = np.linalg.eigh(M.matrix)
        Msqrt_inv = vecs @ np.diag(w ** -0.5) @ vecs.T
        L = 1.0 + np.linalg.norm(Msqrt_inv @ U, 2) ** 2
        for _ in range(4):
            a, b = rng.uniform(-3, 3, 2)
            assert abs(l(a) - l(b)) <= L * abs(a - b) * (1 + 1e-9) + 1e-12


def test_conjugation_identity_dense_metric(rng):
    # J^M_T(z) = M^{-1/2} J_{M^{-1/2} T M^{-1/2}} (M^{1/2} z), the conjugated
    # resolvent evaluated through a nested brute-force oracle
    for _ in range(5):
        n = 6
        M = DenseMetric(random_spd(rng, n, lo=0.8, hi=2.0))
        T = box_operator(-0.5, 0.7)
        z = rng.standard_normal(n)
        lhs = M.resolvent(T, z)

        w, vecs = np.linalg.eigh(M.matrix)
        Msqrt = vecs @ np.diag(np.sqrt(w)) @ vecs.T
        Minv_sqrt = vecs @ np.diag(w ** -0.5) @ vecs.T

        def conjugated_resolvent(v, s=1.0):
            # J_{s T'}(v) with T' = M^{-1/2} T M^{-1/2}, via the x-space
            # inclusion 0 in M x - M^{1/2} v + s T(x)
            x = Minv_sqrt @ v
            step = 1.0 / (2.0 * M.norm_bound)
            target = Msqrt @ v
            for _ in range(200000):
                x_new = T.resolvent(x - step * (M.matrix @ x - target), step * s)
                if np.linalg.norm(x_new - x) <= 1e-13 * (1 + np.linalg.norm(v)):
                    break
                x = x_new
            return Msqrt @ x_new

        rhs = Minv_sqrt @ conjugated_resolvent(Msqrt @ z)
        assert np.linalg.norm(lhs - rhs) <= 1e-8


def test_resolvent_nonexpansive_in_metric_norm(rng):
    for _ in range(10):
        n = 6
        M = DenseMetric(random_spd(rng, n))
        T = box_operator(-0.3, 1.1)
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        jx, jy = M.resolvent(T, x), M.resolvent(T, y)
        m_norm = lambda v: np.sqrt(v @ M.apply(v))
        assert m_norm(jx - jy) <= m_norm(x - y) * (1 + 1e-9) + 1e-12


def test_prop_bound_contains_root(rng):
    # alpha* in [-zeta, zeta] with zeta = |u| (2|z| + |J^V_T(0)|)
    for trial in range(30):
        T, M, sign, U, z, V = random_calculus_instance(rng, trial, r_max=1)
        x, rep = resolve_perturbed(T, M, sign, U, z)
        JV0 = oracle_resolvent(T, V, np.zeros_like(z))
        zeta = np.linalg.norm(U) * (2 * np.linalg.norm(z) + np.linalg.norm(JV0))
        assert abs(rep.alpha_star[0]) <= zeta + 1e-9


def test_root_context_validation(rng):
    with pytest.raises(ValueError):
        RootContext(ORTHANT, EYE2, "sideways", U11, Z_ORTHANT)
    U_dep = np.stack([U11, U11], axis=1)   # linearly dependent columns
    with pytest.raises(ValueError):
        RootContext(ORTHANT, EYE2, "plus", U_dep, Z_ORTHANT)


def test_minus_sign_substitution_consistency(rng):
    # the returned point solves V(z - x) in T(x) with V = M - U U^T
    M = DenseMetric(random_spd(rng, 4, lo=1.5, hi=2.5))
    u = rng.standard_normal(4)
    u *= 0.5 * np.sqrt(M.rho_min) / np.linalg.norm(u)
    T = box_operator(-0.6, 0.6)
    z = rng.standard_normal(4) * 2
    V = M.matrix - np.outer(u, u)
    x, _ = resolve_perturbed(T, M, "minus", u, z)
    assert np.linalg.norm(x - oracle_resolvent(T, V, z)) <= 1e-8
    assert inclusion_residual(T, lambda v: V @ v, z, x) <= 1e-8
