"""Quasi-Newton primal-dual hybrid gradient for saddle-point problems.

For ``min_x max_y <Kx, y> + g(x) + G(x) - f(y) - F(y)`` the optimality
system is ``0 in T(z) + B(z)`` with the skew-coupled set-valued part
``T(z) = (dg(x) + K^T y, -Kx + df(y))`` and the forward part
``B(z) = (grad G(x), grad F(y))``.  Plain PDHG is the proximal point step
in the block metric ``M = [[T^-1, -K^T], [-K, S^-1]]``; here the metric is
perturbed per iteration by a rank-one 0SR1 term and the update is carried
out without ever applying ``M^{-1}``: the low-rank correction enters the
two prox arguments directly and a scalar root problem pins its magnitude.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np

from .linops import LinearOperator
from .metrics import MetricAssumptionError, QuasiNewtonMetric, SpdBase, build_metric
from .prox import MonotoneOperator
from .resolvent import (RootBracketError, RootConfig, RootConvergenceError,
                        RootSolveReport, certified_bracket, hybrid_root,
                        newton_root, _noise_floor)
from .solvers import IterateRecord, SolveResult, SolverConfig, _hash_vec, \
    _root_tol, alpha_schedule, inertial_step


def _step_max(t) -> float:
    return float(np.max(np.asarray(t, dtype=float)))


def _step_min(t) -> float:
    return float(np.min(np.asarray(t, dtype=float)))


class PdhgBlockMetric(SpdBase):
    """The PDHG block metric ``[[T^-1, -K^T], [-K, S^-1]]`` as an SpdBase.

    ``tau`` and ``sigma`` may be positive scalars or per-component arrays.
    ``apply_inverse`` exists for diagnostics and oracles only; solver paths
    never use it.
    """

    kind = "pdhg-block"

    def __init__(self, tau, sigma, K: LinearOperator):
        tau_max, sigma_max = _step_max(tau), _step_max(sigma)
        tau_min, sigma_min = _step_min(tau), _step_min(sigma)
        if tau_min <= 0 or sigma_min <= 0:
            raise MetricAssumptionError("primal/dual steps must be positive")
        gap = 1.0 - np.sqrt(tau_max * sigma_max) * K.norm_bound
        if gap <= 0:
            raise MetricAssumptionError(
                f"block metric not positive definite: tau*sigma*|K|^2 = "
                f"{tau_max * sigma_max * K.norm_bound ** 2:g} >= 1")
        self.tau = tau if np.ndim(tau) else float(tau)
        self.sigma = sigma if np.ndim(sigma) else float(sigma)
        self.K = K
        self.dim_x = K.in_dim
        self.dim_y = K.out_dim
        self.dim = K.in_dim + K.out_dim
        self.norm_bound = max(1.0 / tau_min, 1.0 / sigma_min) + K.norm_bound
        self.rho_min = gap * min(1.0 / tau_max, 1.0 / sigma_max)

    def split(self, z):
        z = np.asarray(z, dtype=float).reshape(-1)
        return z[:self.dim_x], z[self.dim_x:]

    def apply(self, z):
        x, y = self.split(z)
        return np.concatenate([x / self.tau - self.K.adjoint(y),
                               -self.K.apply(x) + y / self.sigma])

    def apply_inverse(self, v):
        # block elimination: (S^-1 - K T K^T) y = v_y + K T v_x, x = T(v_x + K^T y)
        vx, vy = self.split(v)
        rhs = vy + self.K.apply(self.tau * vx)

        def schur(y):
            return y / self.sigma - self.K.apply(self.tau * self.K.adjoint(y))

        if self.dim_y <= 600:
            S = np.stack([schur(e) for e in np.eye(self.dim_y)], axis=1)
            y = np.linalg.solve(S, rhs)
        else:
            from scipy.sparse.linalg import LinearOperator as ScipyOp, cg
            op = ScipyOp((self.dim_y, self.dim_y), matvec=schur)
            y, info = cg(op, rhs, rtol=1e-12, atol=1e-14, maxiter=10 * self.dim_y)
            if info != 0:
                raise RuntimeError(f"CG failed to invert the block metric (info={info})")
        x = self.tau * (vx + self.K.adjoint(y))
        return np.concatenate([x, y])

    def resolvent(self, T, w):
        raise NotImplementedError(
            "the block-metric resolvent is evaluated through the PDHG prox "
            "cascade; use pdhg_fb_step")


def build_pdhg_metric(tau, sigma, K: LinearOperator) -> PdhgBlockMetric:
    """Validated block metric; raises when ``tau sigma |K|^2 >= 1``."""
    return PdhgBlockMetric(tau, sigma, K)


@dataclass(frozen=True)
class SaddleProblem:
    """Problem data of the saddle-point instantiation.

    ``grad_G``/``grad_F`` may be ``None`` (zero block).  ``beta`` is the
    cocoercivity constant of the stacked forward map; ``gamma_primal`` /
    ``gamma_dual`` are the strong-convexity moduli of G and F used for
    rate reporting.
    """

    K: LinearOperator
    prox_g: MonotoneOperator
    prox_f: MonotoneOperator
    grad_G: Optional[Callable] = None
    grad_F: Optional[Callable] = None
    beta: float = 1.0
    gamma_primal: float = 0.0
    gamma_dual: float = 0.0

    @property
    def dim_x(self) -> int:
        return self.K.in_dim

    @property
    def dim_y(self) -> int:
        return self.K.out_dim

    @property
    def dim(self) -> int:
        return self.K.in_dim + self.K.out_dim

    @property
    def gamma_b(self) -> float:
        # strong monotonicity of the stacked forward map
        gp = self.gamma_primal if self.grad_G is not None else 0.0
        gd = self.gamma_dual if self.grad_F is not None else 0.0
        return min(gp, gd)

    def split(self, z):
        z = np.asarray(z, dtype=float).reshape(-1)
        return z[:self.dim_x], z[self.dim_x:]

    def forward(self, z) -> np.ndarray:
        """Stacked forward map ``B z = (grad G(x), grad F(y))``."""
        x, y = self.split(z)
        gx = self.grad_G(x) if self.grad_G is not None else np.zeros_like(x)
        gy = self.grad_F(y) if self.grad_F is not None else np.zeros_like(y)
        return np.concatenate([gx, gy])


def pdhg_fb_step(sp: SaddleProblem, m: PdhgBlockMetric, sign: str,
                 U: Optional[np.ndarray], z_bar,
                 cfg: Optional[RootConfig] = None):
    """One quasi-Newton PDHG update from ``z_bar = (x_bar, y_bar)``.

    With the rank-r perturbation ``+/- U U^T`` of the block metric the
    update is

        x+ = prox_g^T(x_bar - T grad G - T K^T y_bar -/+ T U_x xi*)
        y+ = prox_f^S(y_bar - S grad F + S K (2 x+ - x_bar) -/+ S U_y xi*)

    where ``xi*`` zeros the strictly increasing root function
    ``xi + U_x^T(x_bar - x+(xi)) + U_y^T(y_bar - y+(xi))``.  With ``U``
    empty this is exactly one classical PDHG step (no tolerance involved).
    Returns ``((x+, y+), report)``.
    """
    cfg = cfg or RootConfig()
    xb, yb = sp.split(z_bar)
    tau, sigma = m.tau, m.sigma
    kty = sp.K.adjoint(yb)
    if sp.grad_G is not None:
        cx = xb - tau * sp.grad_G(xb) - tau * kty
    else:
        cx = xb - tau * kty
    cy = yb if sp.grad_F is None else yb - sigma * sp.grad_F(yb)

    def step_at(xi_term_x=None, xi_term_y=None):
        ax = cx if xi_term_x is None else cx - xi_term_x
        x_new = sp.prox_g.resolvent(ax, tau)
        ay = cy + sigma * sp.K.apply(2.0 * x_new - xb)
        if xi_term_y is not None:
            ay = ay - xi_term_y
        return x_new, sp.prox_f.resolvent(ay, sigma)

    if U is None or np.size(U) == 0:
        x_new, y_new = step_at()
        return (x_new, y_new), RootSolveReport(np.zeros(0), 0.0, method="direct",
                                               converged=True)

    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, 1)
    r = U.shape[1]
    Ux, Uy = U[:sp.dim_x], U[sp.dim_x:]
    sgn = 1.0 if sign == "plus" else -1.0

    def l(xi):
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        x_new, y_new = step_at(sgn * (tau * (Ux @ xi)), sgn * (sigma * (Uy @ xi)))
        return xi + Ux.T @ (xb - x_new) + Uy.T @ (yb - y_new)

    z_norm = float(np.linalg.norm(z_bar))
    U_norm = float(np.linalg.norm(U, 2))
    tol_eff = max(cfg.tol, _noise_floor(U_norm * (z_norm + 1.0)))
    if r == 1:
        x0, y0 = step_at()
        J0 = np.sqrt(float(x0 @ x0) + float(y0 @ y0))
        base = U_norm * (z_norm + J0)
        kappa = np.sqrt(m.norm_bound / m.rho_min)
        gain = U_norm * kappa * (U_norm / m.rho_min)
        scalar_l = lambda a: float(l(np.array([a]))[0])
        zeta, f_lo, f_hi, _ = certified_bracket(scalar_l, base, gain, cfg)
        report = hybrid_root(scalar_l, zeta, cfg, tol=tol_eff, f_lo=f_lo, f_hi=f_hi)
    else:
        report = newton_root(l, None, np.zeros(r), tol=tol_eff, cfg=cfg)
    if not report.converged or report.residual > tol_eff:
        raise RootConvergenceError(
            f"PDHG root solve stalled at residual {report.residual:g} "
            f"(tolerance {tol_eff:g})", report)
    xi = report.alpha_star
    x_new, y_new = step_at(sgn * (tau * (Ux @ xi)), sgn * (sigma * (Uy @ xi)))
    return (x_new, y_new), report


def run_plain_pdhg(sp: SaddleProblem, tau, sigma, z0=None, iters: int = 100,
                   callback: Optional[Callable] = None) -> np.ndarray:
    """Classical PDHG loop (reference runs, no metric, no inertia)."""
    m = build_pdhg_metric(tau, sigma, sp.K)
    z = np.zeros(sp.dim) if z0 is None else np.asarray(z0, dtype=float).copy()
    for k in range(iters):
        (x, y), _ = pdhg_fb_step(sp, m, "plus", None, z)
        z = np.concatenate([x, y])
        if callback is not None:
            callback(k, z)
    return z


def _pdhg_metric_for_iter(cfg: SolverConfig, m: PdhgBlockMetric, sp: SaddleProblem,
                          k: int, z, z_prev, Bz, Bz_prev) -> QuasiNewtonMetric:
    if cfg.metric_mode == "off" or k == 0:
        return QuasiNewtonMetric(m)
    return build_metric(cfg.metric_mode, m, z - z_prev, Bz - Bz_prev, sp.beta, k,
                        gamma_hat=cfg.gamma_hat, c=cfg.safeguard_c,
                        eta_schedule=(lambda i: cfg.eta0 / i ** 2))


def run_iqn_pdhg(sp: SaddleProblem, config: SolverConfig, tau=None, sigma=None,
                 z0=None, callback: Optional[Callable] = None) -> SolveResult:
    """Inertial quasi-Newton PDHG (metric off + alpha zero = classical PDHG).

    ``tau``/``sigma`` default to ``config.tau`` and 1.0.  ``callback`` is
    invoked once per iteration, in order, with ``(k, z, record)``.
    """
    cfg = config
    tau = cfg.tau if tau is None else tau
    sigma = cfg.sigma if sigma is None else sigma
    m = build_pdhg_metric(tau, sigma, sp.K)
    z = np.zeros(sp.dim) if z0 is None else np.asarray(z0, dtype=float).copy()
    z_prev = z.copy()
    Bz_prev = sp.forward(z_prev)
    records: List[IterateRecord] = []
    metrics: List[QuasiNewtonMetric] = []
    converged = False
    reason = "max_iter"
    for k in range(cfg.max_iter):
        t0 = time.perf_counter()
        Bz = sp.forward(z) if k > 0 else Bz_prev
        metric = _pdhg_metric_for_iter(cfg, m, sp, k, z, z_prev, Bz, Bz_prev)
        metrics.append(metric)
        diff = float(np.linalg.norm(z - z_prev))
        if k == 0 or cfg.alpha_kind == "zero":
            alpha_k = 0.0
        else:
            alpha_k = alpha_schedule(cfg.alpha_kind, k, diff, a0=cfg.alpha0,
                                     cap=cfg.alpha_cap, const=cfg.alpha_const)
        z_bar = inertial_step(z, z_prev, alpha_k)
        root_cfg = replace(cfg.root, tol=max(_root_tol(cfg, k + 1), cfg.root.tol))
        try:
            (x_new, y_new), report = pdhg_fb_step(
                sp, m, metric.sign if metric.is_perturbed else "plus",
                metric.scaled_directions(), z_bar, cfg=root_cfg)
        except (RootBracketError, RootConvergenceError) as exc:
            raise RuntimeError(f"PDHG step failed at iteration {k}: {exc}") from exc
        z_new = np.concatenate([x_new, y_new])
        residual = float(np.linalg.norm(z_bar - z_new)) / (1.0 + float(np.linalg.norm(z)))
        rec = IterateRecord(k=k, z_hash=_hash_vec(z_new), diff_norm=diff,
                            step_param=alpha_k, root_iters=report.total_iters,
                            root_residual=report.residual, residual=residual,
                            metric_sign=metric.sign,
                            time_ms=(time.perf_counter() - t0) * 1e3)
        records.append(rec)
        z_prev, Bz_prev = z, Bz
        z = z_new
        if callback is not None:
            callback(k, z, rec)
        if residual <= cfg.stop_tol:
            converged = True
            reason = "residual"
            break
    return SolveResult(z, records, len(records), converged, reason, metrics)


def run_rqn_pdhg(sp: SaddleProblem, config: SolverConfig, tau=None, sigma=None,
                 z0=None, callback: Optional[Callable] = None) -> SolveResult:
    """Quasi-Newton PDHG with the relaxation (correction) step."""
    cfg = config
    tau = cfg.tau if tau is None else tau
    sigma = cfg.sigma if sigma is None else sigma
    m = build_pdhg_metric(tau, sigma, sp.K)
    z = np.zeros(sp.dim) if z0 is None else np.asarray(z0, dtype=float).copy()
    z_prev = z.copy()
    Bz_prev = sp.forward(z_prev)
    records: List[IterateRecord] = []
    metrics: List[QuasiNewtonMetric] = []
    converged = False
    reason = "max_iter"
    for k in range(cfg.max_iter):
        t0 = time.perf_counter()
        Bz = sp.forward(z) if k > 0 else Bz_prev
        metric = _pdhg_metric_for_iter(cfg, m, sp, k, z, z_prev, Bz, Bz_prev)
        metrics.append(metric)
        diff = float(np.linalg.norm(z - z_prev))
        root_cfg = replace(cfg.root, tol=max(_root_tol(cfg, k + 1), cfg.root.tol))
        try:
            (x_t, y_t), report = pdhg_fb_step(
                sp, m, metric.sign if metric.is_perturbed else "plus",
                metric.scaled_directions(), z, cfg=root_cfg)
        except (RootBracketError, RootConvergenceError) as exc:
            raise RuntimeError(f"PDHG step failed at iteration {k}: {exc}") from exc
        z_tilde = np.concatenate([x_t, y_t])
        d = z - z_tilde
        d_norm = float(np.linalg.norm(d))
        residual = d_norm / (1.0 + float(np.linalg.norm(z)))
        if residual <= cfg.stop_tol:
            rec = IterateRecord(k=k, z_hash=_hash_vec(z_tilde), diff_norm=diff,
                                step_param=0.0, root_iters=report.total_iters,
                                root_residual=report.residual, residual=residual,
                                metric_sign=metric.sign,
                                time_ms=(time.perf_counter() - t0) * 1e3)
            records.append(rec)
            z_prev, z = z, z_tilde
            if callback is not None:
                callback(k, z, rec)
            converged = True
            reason = "residual"
            break
        # v_k = M_k(z - z_tilde) + B z_tilde - B z, correction along v_k
        v = metric.apply(d) + (sp.forward(z_tilde) - Bz)
        denom = 2.0 * float(v @ v)
        if denom == 0.0:
            converged = True
            reason = "solved"
            z = z_tilde
            break
        t_k = float(d @ v) / denom
        z_new = z - t_k * v
        rec = IterateRecord(k=k, z_hash=_hash_vec(z_new), diff_norm=diff,
                            step_param=t_k, root_iters=report.total_iters,
                            root_residual=report.residual, residual=residual,
                            metric_sign=metric.sign,
                            time_ms=(time.perf_counter() - t0) * 1e3)
        records.append(rec)
        z_prev, Bz_prev = z, Bz
        z = z_new
        if callback is not None:
            callback(k, z, rec)
    return SolveResult(z, records, len(records), converged, reason, metrics)
