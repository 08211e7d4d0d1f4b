"""Variable-metric forward-backward splitting for ``0 in A x + B x``.

Two convergent variants share the quasi-Newton forward-backward step:

* inertial: extrapolate ``z_bar = z_k + alpha_k (z_k - z_{k-1})`` and step
  ``z_{k+1} = J^{M_k}_A(z_bar - M_k^{-1} B z_bar)``;
* relaxed: step from ``z_k`` to ``z_tilde``, then correct along
  ``v = M_k (z_k - z_tilde) + B z_tilde - B z_k`` with the closed-form
  coefficient ``t_k = <z_k - z_tilde, v> / (2 |v|^2)``.

The metric ``M_k = M_0 +/- gamma_k u_k u_k^T`` is rebuilt each iteration
from the secant pair ``(z_k - z_{k-1}, B z_k - B z_{k-1})``.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .metrics import QuasiNewtonMetric, ScaledIdentityMetric, SpdBase, build_metric
from .prox import CocoerciveMap, MonotoneOperator
from .resolvent import RootConfig, resolve_perturbed


class SolvedSignal(Exception):
    """The relaxation denominator vanished: the current point solves the
    inclusion (or the metric margin is violated)."""


@dataclass(frozen=True)
class InclusionProblem:
    """``0 in A x + B x`` with a set-valued A and a cocoercive B."""

    A: MonotoneOperator
    B: CocoerciveMap
    dim: int

    def __post_init__(self):
        if self.B.beta <= 0:
            raise ValueError("cocoercivity constant beta must be positive")


@dataclass
class SolverConfig:
    """Algorithm selection and schedules for the splitting solvers."""

    variant: str = "inertial"         # 'inertial' | 'relaxed'
    tau: float = 1.0                  # base metric M0 = (1/tau) I
    sigma: float = 1.0                # dual step (PDHG block metric only)
    m0: Optional[SpdBase] = None      # overrides tau when given
    metric_mode: str = "off"          # off|secant|safeguard-a2|safeguard-a1|fixed
    gamma_hat: float = 1.0
    safeguard_c: float = 0.5
    eta0: float = 1.0
    alpha_kind: str = "zero"          # zero|constant|fig1|fig2|fig2-min|fig3
    alpha0: float = 10.0
    alpha_const: float = 0.0
    alpha_cap: float = 10.0           # Lambda
    max_iter: int = 1000
    stop_tol: float = 1e-9
    root: RootConfig = field(default_factory=RootConfig)
    eps_tol0: float = 1e-10           # root tolerance schedule tol0 / k^2
    eps_floor: float = 1e-14


@dataclass
class IterateRecord:
    """One row of the per-iteration log stream."""

    k: int
    z_hash: str
    diff_norm: float
    step_param: float        # alpha_k (inertial) or t_k (relaxed)
    root_iters: int
    root_residual: float
    residual: float
    metric_sign: str
    time_ms: float


@dataclass
class SolveResult:
    z: np.ndarray
    records: List[IterateRecord]
    iterations: int
    converged: bool
    stop_reason: str
    metrics: List[QuasiNewtonMetric] = field(default_factory=list)


def _hash_vec(z: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(z).tobytes()).hexdigest()[:16]


def inertial_step(z_k, z_km1, alpha_k: float) -> np.ndarray:
    """Extrapolation ``z_k + alpha_k (z_k - z_{k-1})``."""
    z_k = np.asarray(z_k, dtype=float)
    if alpha_k == 0.0:
        return z_k
    return z_k + alpha_k * (z_k - np.asarray(z_km1, dtype=float))


def alpha_schedule(kind: str, k: int, diff_norm: float, a0: float = 10.0,
                   cap: float = 10.0, const: float = 0.0) -> float:
    """Extrapolation-parameter schedules, clamped to ``(0, cap]``.

    ``fig1``: ``a0 / (k^1.1 max(d, d^2))``; ``fig3``: ``a0 / max(k^2, k^2 d^2)``;
    ``fig2`` is the verbatim ``max(fig1, 1)`` variant (not summable; kept for
    reproduction, with a ``fig2-min`` companion using ``min``).
    """
    if k < 1:
        raise ValueError("schedule index must be >= 1")
    if diff_norm < 0:
        raise ValueError("diff_norm must be nonnegative")
    d = diff_norm
    if kind == "zero":
        return 0.0
    if kind == "constant":
        return min(const, cap)
    if kind in ("fig1", "fig2", "fig2-min"):
        denom = k ** 1.1 * max(d, d * d)
        bare = a0 / denom if denom > 0 else a0 / k ** 1.1
        if kind == "fig2":
            bare = max(bare, 1.0)
        elif kind == "fig2-min":
            bare = min(bare, 1.0)
        return min(bare, cap)
    if kind == "fig3":
        denom = max(float(k) ** 2, float(k) ** 2 * d * d)
        bare = a0 / denom if denom > 0 else a0 / float(k) ** 2
        return min(bare, cap)
    raise ValueError(f"unknown alpha schedule kind {kind!r}")


def relaxation_coefficient(Mk: QuasiNewtonMetric, B: Optional[CocoerciveMap],
                           z, z_tilde):
    """Closed-form relaxation ``t = <d, v> / (2 |v|^2)`` along
    ``v = M_k d + B z_tilde - B z`` with ``d = z - z_tilde``.

    Raises :class:`SolvedSignal` on a vanishing denominator.  Returns
    ``(t, v)`` so the caller reuses the direction.
    """
    z = np.asarray(z, dtype=float)
    z_tilde = np.asarray(z_tilde, dtype=float)
    d = z - z_tilde
    v = Mk.apply(d)
    if B is not None:
        v = v - (np.asarray(B.apply(z)) - np.asarray(B.apply(z_tilde)))
    denom = 2.0 * float(v @ v)
    if denom == 0.0:
        raise SolvedSignal("relaxation direction vanished; iterate solves the inclusion")
    return float(d @ v) / denom, v


def _root_tol(cfg: SolverConfig, k: int) -> float:
    return max(cfg.eps_tol0 / max(k, 1) ** 2, cfg.eps_floor)


def _base_metric(cfg: SolverConfig, dim: int) -> SpdBase:
    if cfg.m0 is not None:
        return cfg.m0
    return ScaledIdentityMetric.from_step(cfg.tau, dim)


def _iteration_metric(cfg: SolverConfig, M0: SpdBase, beta: float, k: int,
                      z, z_prev, Bz, Bz_prev) -> QuasiNewtonMetric:
    if cfg.metric_mode == "off" or k == 0:
        return QuasiNewtonMetric(M0)
    return build_metric(cfg.metric_mode, M0, z - z_prev, Bz - Bz_prev, beta, k,
                        gamma_hat=cfg.gamma_hat, c=cfg.safeguard_c,
                        eta_schedule=(lambda i: cfg.eta0 / i ** 2))


def run_inertial_qnfbs(problem: InclusionProblem, config: SolverConfig,
                       z0=None, callback: Optional[Callable] = None) -> SolveResult:
    """Inertial quasi-Newton forward-backward splitting.

    ``callback(k, z, record)`` is invoked exactly once per iteration, in
    order, with the new iterate.
    """
    cfg = config
    M0 = _base_metric(cfg, problem.dim)
    z = np.zeros(problem.dim) if z0 is None else np.asarray(z0, dtype=float).copy()
    z_prev = z.copy()           # z_{-1} := z_0, so the first inertial step is null
    Bz_prev = np.asarray(problem.B.apply(z_prev), dtype=float)
    records: List[IterateRecord] = []
    metrics: List[QuasiNewtonMetric] = []
    converged = False
    reason = "max_iter"
    k = 0
    for k in range(cfg.max_iter):
        t0 = time.perf_counter()
        Bz = np.asarray(problem.B.apply(z), dtype=float) if k > 0 else Bz_prev
        metric = _iteration_metric(cfg, M0, problem.B.beta, k, z, z_prev, Bz, Bz_prev)
        metrics.append(metric)
        diff = float(np.linalg.norm(z - z_prev))
        if k == 0 or cfg.alpha_kind == "zero":
            alpha_k = 0.0
        else:
            alpha_k = alpha_schedule(cfg.alpha_kind, k, diff, a0=cfg.alpha0,
                                     cap=cfg.alpha_cap, const=cfg.alpha_const)
        z_bar = inertial_step(z, z_prev, alpha_k)
        B_bar = Bz if alpha_k == 0.0 else np.asarray(problem.B.apply(z_bar), dtype=float)
        shift = M0.apply_inverse(B_bar)
        root_cfg = replace(cfg.root, tol=max(_root_tol(cfg, k + 1), cfg.root.tol))
        z_new, report = resolve_perturbed(problem.A, M0, metric.sign
                                          if metric.is_perturbed else "plus",
                                          metric.scaled_directions(), z_bar,
                                          cfg=root_cfg, shift=shift)
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


def run_relaxed_qnfbs(problem: InclusionProblem, config: SolverConfig,
                      z0=None, callback: Optional[Callable] = None) -> SolveResult:
    """Quasi-Newton forward-backward splitting with the relaxation step."""
    cfg = config
    M0 = _base_metric(cfg, problem.dim)
    z = np.zeros(problem.dim) if z0 is None else np.asarray(z0, dtype=float).copy()
    z_prev = z.copy()
    Bz_prev = np.asarray(problem.B.apply(z_prev), dtype=float)
    records: List[IterateRecord] = []
    metrics: List[QuasiNewtonMetric] = []
    converged = False
    reason = "max_iter"
    for k in range(cfg.max_iter):
        t0 = time.perf_counter()
        Bz = np.asarray(problem.B.apply(z), dtype=float) if k > 0 else Bz_prev
        metric = _iteration_metric(cfg, M0, problem.B.beta, k, z, z_prev, Bz, Bz_prev)
        metrics.append(metric)
        diff = float(np.linalg.norm(z - z_prev))
        shift = M0.apply_inverse(Bz)
        root_cfg = replace(cfg.root, tol=max(_root_tol(cfg, k + 1), cfg.root.tol))
        z_tilde, report = resolve_perturbed(problem.A, M0, metric.sign
                                            if metric.is_perturbed else "plus",
                                            metric.scaled_directions(), z,
                                            cfg=root_cfg, shift=shift)
        d_norm = float(np.linalg.norm(z - z_tilde))
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
        # relaxation direction with the cached forward value B z
        d = z - z_tilde
        v = metric.apply(d) - (Bz - np.asarray(problem.B.apply(z_tilde), dtype=float))
        denom = 2.0 * float(v @ v)
        if denom == 0.0:
            rec = IterateRecord(k=k, z_hash=_hash_vec(z_tilde), diff_norm=diff,
                                step_param=0.0, root_iters=report.total_iters,
                                root_residual=report.residual, residual=residual,
                                metric_sign=metric.sign,
                                time_ms=(time.perf_counter() - t0) * 1e3)
            records.append(rec)
            z = z_tilde
            if callback is not None:
                callback(k, z, rec)
            converged = True
            reason = "solved"
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


def run_solver(problem: InclusionProblem, config: SolverConfig, z0=None,
               callback=None) -> SolveResult:
    """Dispatch on ``config.variant``."""
    if config.variant == "inertial":
        return run_inertial_qnfbs(problem, config, z0=z0, callback=callback)
    if config.variant == "relaxed":
        return run_relaxed_qnfbs(problem, config, z0=z0, callback=callback)
    raise ValueError(f"unknown solver variant {config.variant!r}")
