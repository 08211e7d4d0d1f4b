import numpy as np
import pytest

from conftest import random_spd
from qnsplit.metrics import (DenseMetric, DiagonalMetric,
                             MetricAssumptionError, MetricScheduleState,
                             QuasiNewtonMetric, ScaledIdentityMetric,
                             assumption_report, build_metric,
                             default_eta_schedule, metric_apply,
                             osr1_direction, safeguard_gamma_minus,
                             safeguard_gamma_summable, secant_gamma)
from qnsplit.prox import box_operator


def _bases(rng, n=6):
    return [ScaledIdentityMetric(1.3, n),
            DiagonalMetric(rng.uniform(0.5, 2.0, n)),
            DenseMetric(random_spd(rng, n))]


def test_base_metric_inverse_and_symmetry(rng):
    for M in _bases(rng):
        for _ in range(20):
            x = rng.standard_normal(M.dim)
            y = rng.standard_normal(M.dim)
            back = M.apply_inverse(M.apply(x))
            assert np.linalg.norm(back - x) <= 1e-10 * (1 + np.linalg.norm(x))
            assert abs(M.apply(x) @ y - x @ M.apply(y)) <= 1e-10 * (
                1 + np.linalg.norm(x) * np.linalg.norm(y))


def test_scaled_identity_from_step_is_exact():
    M = ScaledIdentityMetric.from_step(0.09, 4)
    assert M.inv_scale == 0.09
    x = np.array([1.0, -2.0, 3.0, 0.5])
    assert np.array_equal(M.apply_inverse(x), 0.09 * x)


def test_osr1_direction_examples():
    M0 = ScaledIdentityMetric(1.0, 2)
    d = osr1_direction(M0, np.array([1.0, 0.0]), np.array([2.0, 0.0]))
    assert d.sign == "plus"
    assert np.allclose(d.u, [1.0, 0.0])

    # y = M0 s means zero curvature: no update
    assert osr1_direction(M0, np.array([1.0, 0.0]), np.array([1.0, 0.0])) is None
    assert osr1_direction(M0, np.zeros(2), np.array([1.0, 0.0])) is None

    d = osr1_direction(M0, np.array([1.0, 0.0]), np.array([0.5, 0.0]))
    assert d.sign == "minus"
    assert np.allclose(d.u, [-0.70710678, 0.0])


def test_secant_condition_with_unit_gamma(rng):
    # V s = y to 1e-10 relative whenever the curvature is non-degenerate
    for M0 in _bases(rng):
        n = M0.dim
        done = 0
        while done < 30:
            s = rng.standard_normal(n)
            y = rng.standard_normal(n)
            d = y - M0.apply(s)
            if abs(d @ s) <= 1e-6:
                continue
            res = osr1_direction(M0, s, y)
            V = QuasiNewtonMetric(M0, res.sign, secant_gamma(), res.u.reshape(-1, 1))
            assert np.linalg.norm(V.apply(s) - y) <= 1e-10 * (1 + np.linalg.norm(y))
            done += 1


def test_secant_examples_direct():
    M0 = ScaledIdentityMetric(1.0, 2)
    s = np.array([1.0, 0.0])
    for y in (np.array([2.0, 0.0]), np.array([0.5, 0.0])):
        d = osr1_direction(M0, s, y)
        V = QuasiNewtonMetric(M0, d.sign, 1.0, d.u.reshape(-1, 1))
        assert np.allclose(V.apply(s), y, atol=1e-14)
    # no-update case: V s = M0 s = y
    V = QuasiNewtonMetric(M0)
    assert np.allclose(V.apply(s), s)


def test_safeguard_gamma_minus_examples():
    M0 = ScaledIdentityMetric(2.0, 2)
    u = np.array([1.0, 0.0])
    assert safeguard_gamma_minus(M0, u, beta=1.0, c=0.5) == pytest.approx(0.5)
    assert safeguard_gamma_minus(M0, 2 * u, beta=1.0, c=0.5) == pytest.approx(0.125)
    assert safeguard_gamma_minus(M0, u, beta=1.0, c=0.5, gamma_requested=0.0) == 0.0
    with pytest.raises(MetricAssumptionError):
        safeguard_gamma_minus(ScaledIdentityMetric(0.9, 2), u, beta=1.0, c=0.5)


def test_safeguard_gamma_summable_examples():
    M0 = ScaledIdentityMetric(2.0, 2)
    u = np.array([1.0, 0.0])
    sched = default_eta_schedule(1.0)
    assert safeguard_gamma_summable(2, u, sched, M0, beta=1.0) == pytest.approx(0.25)
    assert safeguard_gamma_summable(1000, u, sched, M0, beta=1.0) < 1e-5
    assert safeguard_gamma_summable(3, np.zeros(2), sched, M0, beta=1.0) == 0.0


def test_safeguarded_minus_metric_margin(rng):
    # x^T (V - I/beta) x >= (1-c) rho_min(M0 - I/beta) |x|^2
    beta, c = 1.0, 0.5
    for _ in range(100):
        n = int(rng.integers(2, 33))
        M0 = DenseMetric(random_spd(rng, n, lo=1.5, hi=3.0))
        u = rng.standard_normal(n)
        gamma = safeguard_gamma_minus(M0, u, beta, c, gamma_requested=np.inf)
        V = QuasiNewtonMetric(M0, "minus", gamma, u.reshape(-1, 1))
        margin = M0.rho_min - 1.0 / beta
        evals = np.linalg.eigvalsh(V.to_dense() - np.eye(n) / beta)
        assert evals[0] >= (1 - c) * margin * (1 - 1e-12)


def test_metric_apply_examples(rng):
    M0 = ScaledIdentityMetric(1.0, 2)
    V = QuasiNewtonMetric(M0)
    x = np.array([3.0, -4.0])
    assert np.array_equal(metric_apply(V, x), x)

    V = QuasiNewtonMetric(M0, "plus", 1.0, np.array([[1.0], [0.0]]))
    assert np.allclose(metric_apply(V, np.array([1.0, 1.0])), [2.0, 1.0])
    # x orthogonal to u leaves the base action untouched
    assert np.allclose(metric_apply(V, np.array([0.0, 5.0])), [0.0, 5.0])
    with pytest.raises(ValueError):
        metric_apply(V, np.ones(3))


def test_metric_apply_matches_dense_assembly(rng):
    for _ in range(30):
        n = int(rng.integers(2, 33))
        r = int(rng.integers(1, 4))
        M0 = DenseMetric(random_spd(rng, n))
        U = rng.standard_normal((n, r))
        sign = "plus" if rng.random() < 0.5 else "minus"
        gamma = float(rng.uniform(0.0, 0.3))
        V = QuasiNewtonMetric(M0, sign, gamma, U)
        x = rng.standard_normal(n)
        dense = V.to_dense() @ x
        assert np.max(np.abs(V.apply(x) - dense)) <= 1e-12 * (1 + np.max(np.abs(dense)))


def test_build_metric_modes(rng):
    M0 = ScaledIdentityMetric(2.0, 4)
    s = rng.standard_normal(4)
    y = rng.standard_normal(4)
    off = build_metric("off", M0, s, y, beta=1.0, k=3)
    assert off.sign == "none"
    sec = build_metric("secant", M0, s, y, beta=1.0, k=3)
    if sec.is_perturbed:
        assert sec.gamma == 1.0
    fixed = build_metric("fixed", M0, s, y, beta=1.0, k=3, gamma_hat=5.0)
    if fixed.is_perturbed:
        u = fixed.directions[:, 0]
        assert fixed.gamma * (u @ u) == pytest.approx(5.0)
    a1 = build_metric("safeguard-a1", M0, s, y, beta=1.0, k=2)
    if a1.is_perturbed:
        assert a1.gamma <= 0.25 / float(a1.directions[:, 0] @ a1.directions[:, 0]) + 1e-12
    with pytest.raises(ValueError):
        build_metric("bogus", M0, s, y, beta=1.0, k=1)


def test_assumption_report_constant_sequence(rng):
    M0 = DenseMetric(random_spd(rng, 8, lo=2.0, hi=3.0))
    metrics = [QuasiNewtonMetric(M0) for _ in range(6)]
    rep = assumption_report(metrics, beta=1.0)
    assert rep.a1_summable
    assert np.max(rep.eta_chain) <= 1e-12
    assert np.all(rep.a2_ok)


def test_assumption_report_flags_fixed_gamma_rotation(rng):
    # gamma_k = 5/|u|^2 with rotating directions admits no summable eta chain
    n = 8
    M0 = DenseMetric(random_spd(rng, n, lo=2.0, hi=3.0))
    metrics = []
    for k in range(24):
        u = np.zeros(n)
        u[k % n] = 1.0
        u[(k + 3) % n] = 0.7
        metrics.append(QuasiNewtonMetric(M0, "plus", 5.0 / float(u @ u),
                                         u.reshape(-1, 1)))
    rep = assumption_report(metrics, beta=1.0)
    assert not rep.a1_summable


def test_assumption_report_flags_a2_breach(rng):
    n = 8
    M0 = DenseMetric(random_spd(rng, n, lo=1.5, hi=2.0))
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    # deliberately breach the minus safeguard: gamma beyond the margin
    gamma = (M0.rho_min - 1.0) + 1.0
    bad = QuasiNewtonMetric(M0, "minus", gamma, u.reshape(-1, 1))
    rep = assumption_report([QuasiNewtonMetric(M0), bad], beta=1.0)
    assert not rep.a2_ok[1]
    assert "violated" in rep.summary() or rep.a1_summable


def test_assumption_report_requires_history():
    with pytest.raises(ValueError):
        assumption_report([], beta=1.0)


def test_metric_schedule_state():
    st = MetricScheduleState()
    M0 = ScaledIdentityMetric(1.0, 3)
    st.observe(QuasiNewtonMetric(M0), eta_k=0.5)
    st.observe(QuasiNewtonMetric(M0), eta_k=0.25)
    sums = st.eta_partial_sums
    assert np.all(np.diff(sums) >= 0)
    assert st.norm_sup >= 1.0


def test_dense_metric_resolvent_solves_inclusion(rng):
    # V(w - p) in T(p) for the catalog operator
    M = DenseMetric(random_spd(rng, 6))
    T = box_operator(-0.4, 0.9)
    w = rng.standard_normal(6)
    p = M.resolvent(T, w)
    q = M.apply(w - p)
    assert np.linalg.norm(p - T.resolvent(p + q, 1.0)) <= 1e-8
