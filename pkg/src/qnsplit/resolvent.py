"""Resolvent calculus for low-rank perturbed metrics ``V = M +/- U U^T``.

Evaluating ``J^V_T(z)`` reduces to one base resolvent ``J^M_T`` at a shifted
point plus an r-dimensional strictly monotone root problem

    l(alpha) = alpha + U^T (z - J^M_T(z - b -/+ M^{-1} U alpha)),

where ``b`` is an optional forward shift (``M^{-1} B z`` for a
forward-backward step).  For the minus sign the substitution
``alpha -> -alpha`` is baked into the resolvent argument, so ``l`` is
strictly increasing and Lipschitz with constant ``1 + |M^{-1/2} U|^2`` in
both cases, and the returned point always satisfies ``V(z - x*) in T(x*)``.

The root is located by bisection (r = 1), an inexact semi-smooth Newton
method, or a hybrid of the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .metrics import SpdBase
from .prox import CocoerciveMap, MonotoneOperator

_EPS = np.finfo(float).eps


class RootBracketError(RuntimeError):
    """The root function has the same sign at both bracket ends."""


class RootConvergenceError(RuntimeError):
    """Root solver exhausted its iteration budget."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class RootConfig:
    """Tolerances and caps for the root solvers.

    ``tol`` is the residual target ``|l(alpha*)| <= tol`` (widened by a
    cancellation-aware floating point floor); ``bisect_tol_frac * zeta`` is
    the bracket-width stopping tolerance of the bisection method.
    """

    tol: float = 1e-10
    bisect_tol_frac: float = 1e-12
    newton_max: int = 50
    bisect_max: int = 200
    switch_width: Optional[float] = None     # absolute; default frac * 2 zeta
    switch_width_frac: float = 0.125
    fd_step: float = 1e-6
    max_zeta_doublings: int = 8


@dataclass
class RootSolveReport:
    """Outcome of one root solve (counters split by method)."""

    alpha_star: np.ndarray
    residual: float
    bisect_iters: int = 0
    newton_iters: int = 0
    bracket_evals: int = 0
    fallbacks: int = 0
    method: str = "direct"
    converged: bool = True

    @property
    def total_iters(self) -> int:
        return self.bisect_iters + self.newton_iters


def _noise_floor(scale: float) -> float:
    # forgives cancellation noise when z and U are large
    return 64.0 * _EPS * (1.0 + abs(scale))


class RootContext:
    """Bound data of one perturbed-resolvent evaluation.

    Precomputes the r base-inverse solves ``M^{-1} U``; every call of
    ``l`` afterwards costs a single base resolvent evaluation.
    """

    def __init__(self, T: MonotoneOperator, M: SpdBase, sign: str, U,
                 z, shift=None):
        if sign not in ("plus", "minus"):
            raise ValueError(f"sign must be 'plus' or 'minus', got {sign!r}")
        z = np.asarray(z, dtype=float).reshape(-1)
        U = np.asarray(U, dtype=float)
        if U.ndim == 1:
            U = U.reshape(-1, 1)
        if U.shape[0] != z.shape[0]:
            raise ValueError(f"directions live in dim {U.shape[0]}, point in dim {z.shape[0]}")
        self.r = U.shape[1]
        gram = U.T @ U
        if self.r >= 1:
            dg = np.prod(np.diag(gram))
            if dg <= 0 or np.linalg.det(gram) <= 1e-12 * dg:
                raise ValueError("perturbation directions are (numerically) linearly dependent")
        self.T = T
        self.M = M
        self.sign = sign
        self.sgn = 1.0 if sign == "plus" else -1.0
        self.U = U
        self.z = z
        self.shift = None if shift is None else np.asarray(shift, dtype=float).reshape(-1)
        self._base_point = z if self.shift is None else z - self.shift
        self.MinvU = np.stack([M.apply_inverse(U[:, j]) for j in range(self.r)], axis=1)
        self.evals = 0

    def resolvent_arg(self, alpha) -> np.ndarray:
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        return self._base_point - self.sgn * (self.MinvU @ alpha)

    def resolve_at(self, alpha) -> np.ndarray:
        self.evals += 1
        return self.M.resolvent(self.T, self.resolvent_arg(alpha))

    def l(self, alpha) -> np.ndarray:
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        return alpha + self.U.T @ (self.z - self.resolve_at(alpha))

    def scalar_l(self) -> Callable[[float], float]:
        if self.r != 1:
            raise ValueError("scalar root function requires r = 1")
        return lambda a: float(self.l(np.array([a]))[0])

    def jacobian(self, alpha) -> Optional[np.ndarray]:
        """Exact Clarke-Jacobian element ``I + sgn U^T DJ(w) M^{-1}U`` when
        the catalog supplies a resolvent derivative; ``None`` otherwise."""
        jac_apply = getattr(self.M, "resolvent_jacobian_apply", None)
        if jac_apply is None or self.T.jacobian_apply is None:
            return None
        w = self.resolvent_arg(alpha)
        G = np.eye(self.r)
        for j in range(self.r):
            col = jac_apply(self.T, w, self.MinvU[:, j])
            if col is None:
                return None
            G[:, j] += self.sgn * (self.U.T @ col)
        return G

    def noise_scale(self) -> float:
        return float(np.linalg.norm(self.U, 2) * (np.linalg.norm(self.z) + 1.0))


def eval_root_l(ctx: RootContext, alpha) -> np.ndarray:
    """The root function ``l(alpha)``; one base resolvent per call."""
    return ctx.l(alpha)


# ---------------------------------------------------------------------------
# scalar solvers (r = 1)


def bisection_root(l: Callable[[float], float], zeta: float,
                   tol: Optional[float] = None, max_iter: int = 200,
                   cfg: Optional[RootConfig] = None) -> RootSolveReport:
    """Bisection on ``[-zeta, zeta]`` for strictly increasing scalar ``l``.

    Stops when successive midpoints are closer than ``tol`` (default
    ``1e-12 * zeta``).  Raises :class:`RootBracketError` if the bracket does
    not contain a sign change, which indicates a broken context.
    """
    cfg = cfg or RootConfig()
    if tol is None:
        tol = cfg.bisect_tol_frac * zeta
    lo, hi = -zeta, zeta
    f_lo, f_hi = l(lo), l(hi)
    if np.sign(f_lo) == np.sign(f_hi) and f_lo != 0.0 and f_hi != 0.0:
        raise RootBracketError(
            f"no sign change on [-zeta, zeta] with zeta={zeta:g}: "
            f"l(-zeta)={f_lo:g}, l(zeta)={f_hi:g}")
    prev = None
    alpha, f = lo, f_lo
    iters = 0
    for _ in range(max_iter):
        alpha = 0.5 * (lo + hi)
        f = l(alpha)
        iters += 1
        if f > 0:
            hi = alpha
        else:
            lo = alpha
        if f == 0.0 or (prev is not None and abs(alpha - prev) < tol):
            return RootSolveReport(np.array([alpha]), abs(f), bisect_iters=iters,
                                   bracket_evals=2, method="bisection", converged=True)
        prev = alpha
    return RootSolveReport(np.array([alpha]), abs(f), bisect_iters=iters,
                           bracket_evals=2, method="bisection", converged=False)


def newton_root(l: Callable, jacobian: Optional[Callable], alpha0,
                tol: float = 1e-10, cfg: Optional[RootConfig] = None,
                linear_solve: Optional[Callable] = None) -> RootSolveReport:
    """Inexact semi-smooth Newton for the r-dimensional root problem.

    ``jacobian(alpha)`` must return one Clarke-Jacobian element; when
    ``None`` a central finite-difference matrix with step
    ``fd_step * (1 + |alpha_j|)`` is used.  ``linear_solve(G, rhs)`` allows
    an inexact inner solve; the default is the exact r x r solve (error
    ``e_k = 0``, trivially within any ``eta_k |G_k|`` budget).
    """
    cfg = cfg or RootConfig()
    alpha = np.atleast_1d(np.asarray(alpha0, dtype=float)).copy()
    r = alpha.shape[0]
    solve = linear_solve or (lambda G, rhs: np.linalg.solve(G, rhs))

    def fd_jacobian(a):
        G = np.empty((r, r))
        for j in range(r):
            h = cfg.fd_step * (1.0 + abs(a[j]))
            e = np.zeros(r)
            e[j] = h
            G[:, j] = (np.atleast_1d(l(a + e)) - np.atleast_1d(l(a - e))) / (2.0 * h)
        return G

    f = np.atleast_1d(l(alpha))
    res = float(np.linalg.norm(f))
    iters = 0
    for _ in range(cfg.newton_max):
        if res <= tol:
            return RootSolveReport(alpha, res, newton_iters=iters, method="newton",
                                   converged=True)
        G = jacobian(alpha) if jacobian is not None else None
        if G is None:
            G = fd_jacobian(alpha)
        G = np.atleast_2d(np.asarray(G, dtype=float))
        if not np.all(np.isfinite(G)) or abs(np.linalg.det(G)) <= 1e-14 * max(1.0, np.abs(G).max() ** r):
            return RootSolveReport(alpha, res, newton_iters=iters,
                                   method="newton-singular", converged=False)
        try:
            step = solve(G, -f)
        except np.linalg.LinAlgError:
            return RootSolveReport(alpha, res, newton_iters=iters,
                                   method="newton-singular", converged=False)
        alpha = alpha + np.atleast_1d(step)
        f = np.atleast_1d(l(alpha))
        res = float(np.linalg.norm(f))
        iters += 1
    converged = res <= tol
    return RootSolveReport(alpha, res, newton_iters=iters, method="newton",
                           converged=converged)


def hybrid_root(l: Callable[[float], float], zeta: float,
                cfg: Optional[RootConfig] = None,
                jacobian: Optional[Callable[[float], float]] = None,
                tol: Optional[float] = None,
                f_lo: Optional[float] = None,
                f_hi: Optional[float] = None) -> RootSolveReport:
    """Bisection-narrowed semi-smooth Newton for scalar root problems.

    Bisection shrinks ``[-zeta, zeta]`` to ``switch_width``; Newton then
    iterates from the midpoint.  A Newton step that leaves the bracket or
    stagnates (no residual decrease over three steps) falls back to three
    more bisection steps before Newton resumes.  Every evaluation updates
    the bracket, so progress is monotone.
    """
    cfg = cfg or RootConfig()
    tol = cfg.tol if tol is None else tol
    lo, hi = -zeta, zeta
    bracket_evals = 0
    if f_lo is None:
        f_lo = l(lo)
        bracket_evals += 1
    if f_hi is None:
        f_hi = l(hi)
        bracket_evals += 1
    if np.sign(f_lo) == np.sign(f_hi) and f_lo != 0.0 and f_hi != 0.0:
        raise RootBracketError(
            f"no sign change on [-zeta, zeta] with zeta={zeta:g}: "
            f"l(-zeta)={f_lo:g}, l(zeta)={f_hi:g}")
    switch = cfg.switch_width if cfg.switch_width is not None \
        else cfg.switch_width_frac * 2.0 * zeta
    width_tol = cfg.bisect_tol_frac * max(zeta, np.finfo(float).tiny)

    best_alpha, best_res = (lo, abs(f_lo)) if abs(f_lo) <= abs(f_hi) else (hi, abs(f_hi))
    bisect_iters = newton_iters = fallbacks = 0

    def record(a, f):
        nonlocal lo, hi, best_alpha, best_res
        if f > 0:
            hi = a
        elif f < 0:
            lo = a
        if abs(f) < best_res:
            best_alpha, best_res = a, abs(f)

    def done():
        # success is residual-based; bracket width only limits bisection
        return best_res <= tol

    def report(converged):
        return RootSolveReport(np.array([best_alpha]), best_res,
                               bisect_iters=bisect_iters, newton_iters=newton_iters,
                               bracket_evals=bracket_evals, fallbacks=fallbacks,
                               method="hybrid", converged=converged)

    def bisect_until(target_width):
        nonlocal bisect_iters
        while hi - lo > max(target_width, width_tol) and bisect_iters < cfg.bisect_max:
            a = 0.5 * (lo + hi)
            f = l(a)
            bisect_iters += 1
            record(a, f)
            if done():
                return True
        return done()

    if bisect_until(switch):
        return report(True)

    edge_frac = 1e-3   # clamp out-of-bracket Newton candidates just inside
    while newton_iters < cfg.newton_max and bisect_iters < cfg.bisect_max:
        alpha = 0.5 * (lo + hi)
        f = l(alpha)
        newton_iters += 1
        record(alpha, f)
        if done():
            return report(True)
        history = [abs(f)]
        stalled = False
        while newton_iters < cfg.newton_max:
            g = jacobian(alpha) if jacobian is not None else None
            if g is not None:
                g = float(np.asarray(g).reshape(-1)[0])
            else:
                h = cfg.fd_step * (1.0 + abs(alpha))
                g = (l(alpha + h) - l(alpha - h)) / (2.0 * h)
            if not np.isfinite(g) or abs(g) <= 1e-14 * (1.0 + abs(f)):
                stalled = True
                break
            alpha_new = alpha - f / g
            if not (lo < alpha_new < hi):
                # a root hugging a bracket edge makes Newton overshoot by
                # rounding; land just inside instead of giving up
                pad = edge_frac * (hi - lo)
                alpha_new = min(max(alpha_new, lo + pad), hi - pad)
            if alpha_new == alpha:
                stalled = True
                break
            alpha = alpha_new
            f = l(alpha)
            newton_iters += 1
            record(alpha, f)
            if done():
                return report(True)
            history.append(abs(f))
            if len(history) >= 3 and history[-1] >= history[-2] >= history[-3]:
                stalled = True
                break
        if stalled:
            fallbacks += 1
            if bisect_until(0.25 * (hi - lo)):
                return report(True)
            if hi - lo <= width_tol:
                break   # bracket cannot shrink further; residual floor reached
        else:
            break
    return report(done())


# ---------------------------------------------------------------------------
# perturbed resolvent and forward-backward step


def certified_bracket(l: Callable[[float], float], base_bound: float,
                      gain: float, cfg: RootConfig):
    """Validated bracket half-width ``zeta`` for a strictly increasing ``l``.

    ``base_bound`` bounds ``|u| (|z| + |J_hat|)`` and ``gain`` the
    self-referential travel term ``|u| kappa |M^{-1}u|``; the fixed-point
    refinement ``zeta = base / (1 - gain)`` is validated by a sign check and
    doubled a bounded number of times if needed.  Returns
    ``(zeta, l(-zeta), l(zeta), evals)``.
    """
    if gain < 0.9:
        zeta = (base_bound + _noise_floor(base_bound)) / (1.0 - gain) + 1e-12
    else:
        zeta = 2.0 * base_bound + 1.0
    evals = 0
    for _ in range(cfg.max_zeta_doublings + 1):
        f_lo, f_hi = l(-zeta), l(zeta)
        evals += 2
        if np.sign(f_lo) != np.sign(f_hi) or f_lo == 0.0 or f_hi == 0.0:
            return zeta, f_lo, f_hi, evals
        zeta *= 2.0
    raise RootBracketError(
        f"could not bracket the root after {cfg.max_zeta_doublings} doublings "
        f"(zeta={zeta:g}); the perturbed metric is likely not positive definite")


def _bracket_zeta(ctx: RootContext, cfg: RootConfig):
    """Bracket for the r = 1 root of a :class:`RootContext`.

    Uses the computable surrogate for ``|J^V_T(0)|``: the base resolvent at
    the shifted query plus the metric-distorted perturbation travel.
    """
    u = ctx.U[:, 0]
    nu = float(np.linalg.norm(u))
    J_hat = ctx.resolve_at(np.zeros(1))
    base = nu * (np.linalg.norm(ctx.z) + np.linalg.norm(J_hat))
    kappa = np.sqrt(max(ctx.M.norm_bound, _EPS) / max(ctx.M.rho_min, _EPS))
    gain = nu * kappa * float(np.linalg.norm(ctx.MinvU[:, 0]))
    zeta, f_lo, f_hi, evals = certified_bracket(ctx.scalar_l(), base, gain, cfg)
    return zeta, f_lo, f_hi, evals + 1  # + the J_hat evaluation


def resolve_perturbed(T: MonotoneOperator, M: SpdBase, sign: str, U, z,
                      cfg: Optional[RootConfig] = None, shift=None):
    """Evaluate ``J^V_T`` for ``V = M +/- U U^T`` at ``z`` (optionally with a
    forward shift subtracted inside the base resolvent argument).

    Returns ``(x_star, report)`` with
    ``x_star = J^M_T(z - shift -/+ M^{-1} U alpha*)``.  Raises
    :class:`RootConvergenceError` when the root residual cannot be brought
    below the tolerance.
    """
    cfg = cfg or RootConfig()
    z = np.asarray(z, dtype=float).reshape(-1)
    if U is None or np.size(U) == 0:
        w = z if shift is None else z - np.asarray(shift, dtype=float)
        x = M.resolvent(T, w)
        return x, RootSolveReport(np.zeros(0), 0.0, method="direct", converged=True)
    ctx = RootContext(T, M, sign, U, z, shift=shift)
    tol_eff = max(cfg.tol, _noise_floor(ctx.noise_scale()))
    if ctx.r == 1:
        zeta, f_lo, f_hi, _ = _bracket_zeta(ctx, cfg)
        report = hybrid_root(ctx.scalar_l(), zeta, cfg,
                             jacobian=lambda a: ctx.jacobian(np.array([a])),
                             tol=tol_eff, f_lo=f_lo, f_hi=f_hi)
    else:
        report = newton_root(ctx.l, ctx.jacobian, np.zeros(ctx.r), tol=tol_eff, cfg=cfg)
    if not report.converged or report.residual > tol_eff:
        raise RootConvergenceError(
            f"root solver did not reach tolerance {tol_eff:g} "
            f"(best residual {report.residual:g} after "
            f"{report.bisect_iters}+{report.newton_iters} iterations)", report)
    x = ctx.resolve_at(report.alpha_star)
    return x, report


def fb_step_perturbed(T: MonotoneOperator, B: Optional[CocoerciveMap], M: SpdBase,
                      sign: str, U, z, cfg: Optional[RootConfig] = None):
    """Forward-backward step ``J^V_T(z - V^{-1} B z)`` without forming ``V^{-1}``.

    Only ``M^{-1} B z`` (one base-inverse solve) and the cached ``M^{-1} U``
    are used; the low-rank correction is absorbed into the shifted root
    problem.  With ``B`` absent this is exactly :func:`resolve_perturbed`.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if B is None:
        return resolve_perturbed(T, M, sign, U, z, cfg=cfg)
    shift = M.apply_inverse(np.asarray(B.apply(z), dtype=float))
    return resolve_perturbed(T, M, sign, U, z, cfg=cfg, shift=shift)


def inclusion_residual(T: MonotoneOperator, apply_V: Callable, z, x, forward=None) -> float:
    """Residual of ``V(z - x) - forward in T(x)`` via the prox-optimality test
    ``x == J_T(x + q)`` with unit step; used by tests and diagnostics."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    q = apply_V(z - x)
    if forward is not None:
        q = q - np.asarray(forward, dtype=float)
    return float(np.linalg.norm(x - T.resolvent(x + q, 1.0)))
