"""Catalog of identity-metric resolvents, projections, and gradient maps.

A maximally monotone operator is represented by its resolvent
``J_{tau T}(z)``; the step ``tau`` may be a scalar or, for the separable
operators below, a per-component positive array (needed for diagonal
metrics).  Projections ignore ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linops import LinearOperator, ShapeError


@dataclass(frozen=True)
class MonotoneOperator:
    """A maximally monotone operator given through its resolvent.

    Parameters
    ----------
    resolvent : callable ``(z, tau) -> J_{tau T}(z)``
    gamma : strong-monotonicity modulus (0 for merely monotone).
    jacobian_apply : optional callable ``(w, tau, v) -> D[J_{tau T}](w) @ v``
        applying one generalized derivative of the resolvent; used by the
        semi-smooth Newton root solver when available.
    """

    resolvent: Callable[[np.ndarray, float], np.ndarray]
    gamma: float = 0.0
    jacobian_apply: Optional[Callable[[np.ndarray, float, np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class CocoerciveMap:
    """Single-valued beta-cocoercive map with strong-monotonicity gamma_b."""

    apply: Callable[[np.ndarray], np.ndarray]
    beta: float
    gamma_b: float = 0.0

    def __call__(self, x):
        return self.apply(x)


class InvalidBoxError(ValueError):
    """Box bounds with lo > hi."""


def prox_box(z, lo: float, hi: float):
    """Componentwise clamp to [lo, hi]; the resolvent of the box normal cone.

    Independent of the step size.
    """
    if lo > hi:
        raise InvalidBoxError(f"invalid box: lo={lo} > hi={hi}")
    return np.clip(np.asarray(z, dtype=float), lo, hi)


def _pairs(v, name="v"):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] % 2 != 0:
        raise ShapeError(f"{name} has odd dimension {v.shape[0]}, cannot pair")
    return v.reshape(-1, 2)


def pair_norms(v):
    """Euclidean norm of each (dx, dy) pair of an interleaved vector."""
    p = _pairs(v)
    return np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)


def project_pairwise_l2_ball(y, mu: float):
    """Project each 2-vector pair onto the l2 ball of radius mu.

    Pairs outside the ball are scaled by ``(mu / |p|)(1 - 2 eps)``; the
    microscopic shrink keeps the recomputed norm strictly inside the ball,
    which makes the projection exactly idempotent in floating point.
    """
    if mu <= 0:
        raise ValueError(f"ball radius must be positive, got {mu}")
    p = _pairs(y, "y")
    norms = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)
    factor = np.ones_like(norms)
    over = norms > mu
    factor[over] = (mu / norms[over]) * (1.0 - 2.0 * np.finfo(float).eps)
    return (p * factor[:, None]).reshape(-1)


def prox_group_l21(v, lam):
    """Per-pair soft shrinkage ``p * max(0, 1 - lam/|p|)``.

    ``lam`` may be a scalar or a per-pair array (diagonal-metric steps).
    """
    p = _pairs(v)
    norms = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), norms.shape)
    scale = np.zeros_like(norms)
    nz = norms > 0
    scale[nz] = np.maximum(0.0, 1.0 - lam[nz] / norms[nz])
    return (p * scale[:, None]).reshape(-1)


def soft_shrink(z, t):
    """Componentwise soft threshold ``sign(z) * max(|z| - t, 0)``."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def grad_quadratic(A: LinearOperator, b, x):
    """Gradient ``A*(Ax - b)`` of the quadratic data term ``0.5 |Ax - b|^2``."""
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape[0] != A.out_dim:
        raise ShapeError(f"b has dimension {b.shape[0]}, operator range is {A.out_dim}")
    return A.adjoint(A.apply(x) - b)


def quadratic_gradient_map(A: LinearOperator, b, gamma_b: float = 0.0) -> CocoerciveMap:
    """CocoerciveMap for ``x -> A*(Ax - b)`` with ``beta = 1 / |A|_bound^2``."""
    b = np.asarray(b, dtype=float).reshape(-1)
    bound = max(A.norm_bound, np.finfo(float).tiny)
    return CocoerciveMap(lambda x: A.adjoint(A.apply(x) - b), beta=1.0 / bound ** 2,
                         gamma_b=gamma_b)


# ---------------------------------------------------------------------------
# monotone-operator constructors (resolvent + generalized derivative)

def box_operator(lo: float, hi: float) -> MonotoneOperator:
    """Normal cone of the box ``[lo, hi]^n``; resolvent is the clamp."""
    if lo > hi:
        raise InvalidBoxError(f"invalid box: lo={lo} > hi={hi}")

    def jac(w, tau, v):
        active = (w > lo) & (w < hi)
        return np.where(active, v, 0.0)

    return MonotoneOperator(lambda z, tau: np.clip(z, lo, hi), 0.0, jac)


def pairwise_ball_operator(mu: float) -> MonotoneOperator:
    """Normal cone of ``{ |y|_{2,inf} <= mu }``; resolvent is the projection."""

    def jac(w, tau, v):
        p = _pairs(w)
        q = _pairs(v)
        norms = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)
        out = q.copy()
        over = norms > mu
        if np.any(over):
            po = p[over]
            no = norms[over][:, None]
            inner = (po * q[over]).sum(axis=1, keepdims=True) / no ** 2
            out[over] = (mu / no) * (q[over] - po * inner)
        return out.reshape(-1)

    return MonotoneOperator(lambda z, tau: project_pairwise_l2_ball(z, mu), 0.0, jac)


def l1_shrinkage_operator(lam: float) -> MonotoneOperator:
    """Subdifferential of ``lam * |.|_1``; resolvent is soft thresholding."""

    def jac(w, tau, v):
        return np.where(np.abs(w) > lam * tau, v, 0.0)

    return MonotoneOperator(lambda z, tau: soft_shrink(z, lam * tau), 0.0, jac)


def _per_pair_step(tau, npairs):
    # per-component steps must agree within each pair; keep one per pair
    tau = np.asarray(tau, dtype=float)
    if tau.ndim == 0:
        return np.full(npairs, float(tau))
    return tau.reshape(npairs, 2)[:, 0]


def group_l21_operator(lam: float) -> MonotoneOperator:
    """Subdifferential of the pairwise group norm ``lam * |.|_{2,1}``."""

    def res(z, tau):
        return prox_group_l21(z, lam * _per_pair_step(tau, np.size(z) // 2))

    def jac(w, tau, v):
        p = _pairs(w)
        q = _pairs(v)
        t = lam * _per_pair_step(tau, p.shape[0])
        norms = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)
        out = np.zeros_like(q)
        on = norms > t
        if np.any(on):
            po = p[on]
            no = norms[on][:, None]
            to = t[on][:, None]
            inner = (po * q[on]).sum(axis=1, keepdims=True) / no ** 2
            out[on] = (1.0 - to / no) * q[on] + (to / no) * po * inner
        return out.reshape(-1)

    return MonotoneOperator(res, 0.0, jac)


def zero_operator() -> MonotoneOperator:
    """The zero operator; its resolvent is the identity."""
    return MonotoneOperator(lambda z, tau: np.asarray(z, dtype=float), 0.0,
                            lambda w, tau, v: np.asarray(v, dtype=float))


def identity_prox_operator() -> MonotoneOperator:
    """Alias of :func:`zero_operator` (prox of the zero function)."""
    return zero_operator()
