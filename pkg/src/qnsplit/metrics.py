"""SPD base metrics, rank-one 0SR1 perturbations, and safeguard rules.

The variable metric is ``V = M0 +/- gamma * u u^T`` built from one secant
pair ``s = z_k - z_{k-1}``, ``y = B z_k - B z_{k-1}``.  With the
normalization ``u = (y - M0 s) / sqrt(|<y - M0 s, s>|)`` the scale
``gamma = 1`` reproduces the secant condition ``V s = y`` exactly.
Safeguard rules cap ``gamma`` so the metric sequence keeps either the
uniform margin ``V - (1/beta) I >= c' I`` or a summable drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .prox import MonotoneOperator


class MetricAssumptionError(ValueError):
    """The base metric violates a margin required by a safeguard rule."""


# ---------------------------------------------------------------------------
# SPD base metrics


class SpdBase:
    """Symmetric positive definite metric with inverse and resolvent access.

    ``norm_bound`` upper-bounds the spectral norm and ``rho_min``
    lower-bounds the smallest eigenvalue; both are certified, not measured.
    """

    kind = "abstract"
    dim: int
    norm_bound: float
    rho_min: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_inverse(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def resolvent(self, T: MonotoneOperator, w: np.ndarray) -> np.ndarray:
        """Evaluate ``J^M_T(w)``."""
        raise NotImplementedError

    def to_dense(self) -> np.ndarray:
        cols = [self.apply(e) for e in np.eye(self.dim)]
        return np.stack(cols, axis=1)


class ScaledIdentityMetric(SpdBase):
    """``M = scale * I``; resolvents reduce to a step of ``1/scale``."""

    kind = "scaled-identity"

    def __init__(self, scale: float, dim: int, inv_scale: Optional[float] = None):
        if scale <= 0:
            raise MetricAssumptionError(f"scale must be positive, got {scale}")
        self.scale = float(scale)
        self.inv_scale = float(inv_scale) if inv_scale is not None else 1.0 / self.scale
        self.dim = int(dim)
        self.norm_bound = self.scale
        self.rho_min = self.scale

    @classmethod
    def from_step(cls, tau: float, dim: int) -> "ScaledIdentityMetric":
        """Metric ``(1/tau) I`` storing ``tau`` exactly as the inverse scale."""
        return cls(1.0 / tau, dim, inv_scale=tau)

    def apply(self, x):
        return self.scale * x

    def apply_inverse(self, x):
        return self.inv_scale * x

    def resolvent(self, T, w):
        return T.resolvent(w, self.inv_scale)

    def resolvent_jacobian_apply(self, T, w, v):
        if T.jacobian_apply is None:
            return None
        return T.jacobian_apply(w, self.inv_scale, v)


class DiagonalMetric(SpdBase):
    """Diagonal SPD metric; usable with the separable resolvent catalog."""

    kind = "diagonal"

    def __init__(self, diag):
        diag = np.asarray(diag, dtype=float).reshape(-1)
        if np.any(diag <= 0):
            raise MetricAssumptionError("diagonal metric entries must be positive")
        self.diag = diag
        self.dim = diag.shape[0]
        self.norm_bound = float(diag.max())
        self.rho_min = float(diag.min())

    def apply(self, x):
        return self.diag * x

    def apply_inverse(self, x):
        return x / self.diag

    def resolvent(self, T, w):
        return T.resolvent(w, 1.0 / self.diag)

    def resolvent_jacobian_apply(self, T, w, v):
        if T.jacobian_apply is None:
            return None
        return T.jacobian_apply(w, 1.0 / self.diag, v)


class DenseMetric(SpdBase):
    """Dense SPD metric for small dimensions (tests and diagnostics).

    ``resolvent`` solves the strongly monotone inclusion
    ``0 in T(p) + M(p - w)`` by a forward-backward fixed point with the
    optimal constant step, so it works for any catalog operator.
    """

    kind = "dense"

    def __init__(self, matrix, fp_tol: float = 1e-14, fp_max_iter: int = 200000):
        A = np.asarray(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("dense metric must be square")
        if not np.allclose(A, A.T, atol=1e-12):
            raise MetricAssumptionError("dense metric must be symmetric")
        evals = np.linalg.eigvalsh(A)
        if evals[0] <= 0:
            raise MetricAssumptionError(f"dense metric not positive definite (lambda_min={evals[0]:g})")
        self.matrix = A
        self.dim = A.shape[0]
        self.norm_bound = float(evals[-1])
        self.rho_min = float(evals[0])
        self._inv = np.linalg.inv(A)
        self._step = 2.0 / (evals[0] + evals[-1])
        self._fp_tol = fp_tol
        self._fp_max_iter = fp_max_iter

    def apply(self, x):
        return self.matrix @ x

    def apply_inverse(self, x):
        return self._inv @ x

    def resolvent(self, T, w):
        s = self._step
        x = np.array(w, dtype=float)
        scale = 1.0 + np.linalg.norm(w)
        for _ in range(self._fp_max_iter):
            x_new = T.resolvent(x - s * (self.matrix @ (x - w)), s)
            if np.linalg.norm(x_new - x) <= self._fp_tol * scale:
                return x_new
            x = x_new
        return x

    def resolvent_jacobian_apply(self, T, w, v):
        return None


# ---------------------------------------------------------------------------
# quasi-Newton metric


@dataclass(frozen=True)
class QuasiNewtonMetric:
    """``V = base +/- gamma * U U^T`` (sign 'none' means ``V = base``)."""

    base: SpdBase
    sign: str = "none"                 # 'plus' | 'minus' | 'none'
    gamma: float = 0.0
    directions: Optional[np.ndarray] = None   # (n, r)

    def __post_init__(self):
        if self.sign not in ("plus", "minus", "none"):
            raise ValueError(f"unknown metric sign {self.sign!r}")
        if self.sign != "none":
            U = self.directions
            if U is None or U.size == 0:
                raise ValueError("signed metric requires direction vectors")
            if self.gamma < 0:
                raise ValueError("gamma must be nonnegative")

    @property
    def is_perturbed(self) -> bool:
        return self.sign != "none" and self.gamma > 0 and self.directions is not None

    def scaled_directions(self) -> Optional[np.ndarray]:
        """Directions absorbed scale, ``sqrt(gamma) * U``, as an (n, r) array."""
        if not self.is_perturbed:
            return None
        U = self.directions.reshape(self.base.dim, -1)
        return np.sqrt(self.gamma) * U

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``M0 x +/- gamma U (U^T x)`` without dense assembly."""
        out = self.base.apply(x)
        if self.is_perturbed:
            U = self.directions.reshape(self.base.dim, -1)
            corr = self.gamma * (U @ (U.T @ x))
            out = out + corr if self.sign == "plus" else out - corr
        return out

    def to_dense(self) -> np.ndarray:
        D = self.base.to_dense()
        if self.is_perturbed:
            U = self.directions.reshape(self.base.dim, -1)
            P = self.gamma * (U @ U.T)
            D = D + P if self.sign == "plus" else D - P
        return D

    def norm_bound_estimate(self) -> float:
        if not self.is_perturbed:
            return self.base.norm_bound
        U = self.directions.reshape(self.base.dim, -1)
        return self.base.norm_bound + self.gamma * float(np.linalg.norm(U, 2) ** 2)


def metric_apply(V: QuasiNewtonMetric, x: np.ndarray) -> np.ndarray:
    if np.size(x) != V.base.dim:
        raise ValueError(f"vector dimension {np.size(x)} does not match metric dimension {V.base.dim}")
    return V.apply(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# 0SR1 update and safeguards


@dataclass(frozen=True)
class Osr1Direction:
    sign: str           # 'plus' | 'minus'
    u: np.ndarray
    curvature: float    # <y - M0 s, s>


def osr1_direction(M0: SpdBase, s: np.ndarray, y: np.ndarray,
                   tol: float = 1e-12) -> Optional[Osr1Direction]:
    """Rank-one secant direction ``u = d / sqrt(|<d, s>|)`` with ``d = y - M0 s``.

    Returns ``None`` (no update, keep ``V = M0``) when ``s`` vanishes or the
    curvature ``<d, s>`` is degenerate relative to ``|d| |s|``.
    """
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    ns = np.linalg.norm(s)
    if ns == 0.0:
        return None
    d = y - M0.apply(s)
    ds = float(d @ s)
    if abs(ds) <= tol * max(np.linalg.norm(d) * ns, np.finfo(float).tiny):
        return None
    u = d / np.sqrt(abs(ds))
    return Osr1Direction("plus" if ds > 0 else "minus", u, ds)


def secant_gamma() -> float:
    """Scale for which ``(M0 +/- gamma u u^T) s = y`` holds exactly."""
    return 1.0


def _minus_margin(M0: SpdBase, beta: float) -> float:
    margin = M0.rho_min - 1.0 / beta
    if margin <= 0:
        raise MetricAssumptionError(
            f"base metric margin rho_min - 1/beta = {margin:g} is not positive; "
            "the minus-sign safeguard requires M0 - (1/beta) I > 0")
    return margin


def safeguard_gamma_minus(M0: SpdBase, u: np.ndarray, beta: float, c: float,
                          gamma_requested: float = 1.0) -> float:
    """Cap ``gamma`` so ``M0 - gamma u u^T - (1/beta) I >= (1-c) margin I``."""
    if not 0 < c < 1:
        raise ValueError(f"c must lie in (0,1), got {c}")
    margin = _minus_margin(M0, beta)
    nu2 = float(np.asarray(u, dtype=float) @ np.asarray(u, dtype=float))
    if nu2 == 0.0:
        return 0.0
    return min(gamma_requested, c * margin / nu2)


def default_eta_schedule(eta0: float = 1.0) -> Callable[[int], float]:
    """Summable schedule ``eta_k = eta0 / k^2`` (k >= 1)."""
    return lambda k: eta0 / float(k) ** 2


def safeguard_gamma_summable(k: int, u: np.ndarray, eta_schedule, M0: SpdBase,
                             beta: float) -> float:
    """``gamma_k = min(eta_k, rho_min(M0 - I/beta)) / |u|^2`` (summable drift)."""
    if k < 1:
        raise ValueError("iteration index must be >= 1")
    margin = _minus_margin(M0, beta)
    nu2 = float(np.asarray(u, dtype=float) @ np.asarray(u, dtype=float))
    if nu2 == 0.0:
        return 0.0
    eta_k = eta_schedule(k) if callable(eta_schedule) else float(eta_schedule)
    return min(eta_k, margin) / nu2


def build_metric(mode: str, M0: SpdBase, s, y, beta: float, k: int,
                 gamma_hat: float = 1.0, c: float = 0.5,
                 eta_schedule=None, tol: float = 1e-12) -> QuasiNewtonMetric:
    """Assemble the iteration-k metric from a secant pair under a gamma rule.

    ``mode`` is one of ``off``, ``secant``, ``safeguard-a2``,
    ``safeguard-a1``, ``fixed`` (``gamma_k = gamma_hat / |u|^2``).
    """
    if mode == "off":
        return QuasiNewtonMetric(M0)
    d = osr1_direction(M0, s, y, tol=tol)
    if d is None:
        return QuasiNewtonMetric(M0)
    if mode == "secant":
        gamma = secant_gamma()
    elif mode == "safeguard-a2":
        gamma = secant_gamma()
        if d.sign == "minus":
            gamma = safeguard_gamma_minus(M0, d.u, beta, c, gamma_requested=gamma)
    elif mode == "safeguard-a1":
        sched = eta_schedule if eta_schedule is not None else default_eta_schedule()
        gamma = safeguard_gamma_summable(max(k, 1), d.u, sched, M0, beta)
    elif mode == "fixed":
        nu2 = float(d.u @ d.u)
        gamma = gamma_hat / nu2 if nu2 > 0 else 0.0
    else:
        raise ValueError(f"unknown metric mode {mode!r}")
    if gamma == 0.0:
        return QuasiNewtonMetric(M0)
    return QuasiNewtonMetric(M0, d.sign, gamma, d.u.reshape(-1, 1))


# ---------------------------------------------------------------------------
# assumption diagnostics


@dataclass
class MetricScheduleState:
    """Running bookkeeping for the metric sequence of one solver loop."""

    etas: List[float] = field(default_factory=list)
    norm_sup: float = 0.0
    a1_violations: int = 0
    a2_violations: int = 0

    def observe(self, metric: QuasiNewtonMetric, eta_k: float = 0.0):
        self.etas.append(float(eta_k))
        self.norm_sup = max(self.norm_sup, metric.norm_bound_estimate())

    @property
    def eta_partial_sums(self) -> np.ndarray:
        return np.cumsum(self.etas) if self.etas else np.zeros(0)


@dataclass
class AssumptionReport:
    """Per-iteration Assumption 1/2 diagnostics (never aborts a solve)."""

    a2_margin: np.ndarray        # lambda_min(M_k - I/beta), per iteration
    a2_ok: np.ndarray            # margin > 0
    norm_estimates: np.ndarray   # |M_k| estimates
    norm_sup: float              # running sup
    eta_chain: np.ndarray        # smallest eta_k with (1+eta_k) M_k >= M_{k+1}
    a1_summable: bool            # heuristic: eta tail looks summable
    a2_margin_min: float

    def summary(self) -> str:
        ok = int(self.a2_ok.sum())
        return (f"A2 margin ok {ok}/{self.a2_ok.size} (min {self.a2_margin_min:.3e}); "
                f"sup|M_k| ~ {self.norm_sup:.3e}; "
                f"A1 chain {'plausible' if self.a1_summable else 'violated'} "
                f"(sum eta ~ {self.eta_chain.sum():.3e})")


def _pencil_eta(Mk_dense: np.ndarray, Mk1_dense: np.ndarray) -> float:
    # smallest eta >= 0 with (1 + eta) M_k >= M_{k+1}
    evals = np.linalg.eigvalsh(np.linalg.solve(Mk_dense, Mk1_dense - Mk_dense))
    return max(0.0, float(evals.max()))


def _sampled_eta(Mk: QuasiNewtonMetric, Mk1: QuasiNewtonMetric, rng, samples: int = 32) -> float:
    n = Mk.base.dim
    best = 0.0
    for _ in range(samples):
        x = rng.standard_normal(n)
        qk = float(x @ Mk.apply(x))
        qk1 = float(x @ Mk1.apply(x))
        if qk > 0:
            best = max(best, (qk1 - qk) / qk)
    return best


def _sampled_margin(M: QuasiNewtonMetric, beta: float, rng, samples: int = 64) -> float:
    n = M.base.dim
    best = np.inf
    for _ in range(samples):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        best = min(best, float(x @ M.apply(x)) - 1.0 / beta)
    return best


def assumption_report(metrics: List[QuasiNewtonMetric], beta: float,
                      sigma: Optional[float] = None, dense_limit: int = 64,
                      seed: int = 0) -> AssumptionReport:
    """Diagnose Assumption 1/2 for a recorded metric sequence.

    Dense eigenchecks up to ``dense_limit`` dimensions, Rayleigh sampling
    above.  Assumption-1 summability is judged heuristically by comparing
    the eta mass of the second half of the run against the first half.
    """
    if not metrics:
        raise ValueError("need at least one recorded metric")
    rng = np.random.default_rng(seed)
    n = metrics[0].base.dim
    dense = n <= dense_limit
    margins, norms, etas = [], [], []
    denses = [m.to_dense() for m in metrics] if dense else None
    for i, m in enumerate(metrics):
        if dense:
            ev = np.linalg.eigvalsh(denses[i])
            margins.append(float(ev[0]) - 1.0 / beta)
            norms.append(float(np.abs(ev).max()))
        else:
            margins.append(_sampled_margin(m, beta, rng))
            norms.append(m.norm_bound_estimate())
        if i + 1 < len(metrics):
            if dense:
                etas.append(_pencil_eta(denses[i], denses[i + 1]))
            else:
                etas.append(_sampled_eta(m, metrics[i + 1], rng))
    margins = np.asarray(margins)
    etas = np.asarray(etas) if etas else np.zeros(0)
    if etas.size >= 2:
        half = etas.size // 2
        head, tail = etas[:half].sum(), etas[half:].sum()
        a1_summable = tail <= max(0.5 * head, 1e-9)
    else:
        a1_summable = True
    return AssumptionReport(
        a2_margin=margins,
        a2_ok=margins > 0,
        norm_estimates=np.asarray(norms),
        norm_sup=float(np.max(norms)),
        eta_chain=etas,
        a1_summable=bool(a1_summable),
        a2_margin_min=float(margins.min()),
    )
