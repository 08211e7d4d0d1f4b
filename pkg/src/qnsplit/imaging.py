"""Builders for the imaging studies: TV-l2 deconvolution, deconvolution with
an infimal-convolution regularizer, and strongly convex denoising.

All three share the saddle form ``min_x max_y <Dx, y> + g(x) + G(x) - f(y)
- F(y)`` with ``D`` the forward-difference operator and ``f`` the indicator
of the pairwise l2 ball of radius ``mu``:

* deconvolution:  ``g = box [0,255]``, ``G = 0.5 |Ax - b|^2``, ``F = 0``;
* infimal convolution: ``g = 0``, same G, ``F(y) = 0.5 |W^{-1} y|^2``;
* denoising: infimal convolution with ``A = I`` (strongly convex in both
  blocks, explicit dual objective and primal-dual gap).

The infimal-convolution regularizer has the closed per-pair form
``mu * huber_{t}( |p| )`` with ``t = mu / w^2``, which the objective
evaluation uses directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linops import Convolution2D, ForwardDifference2D, LinearOperator, power_norm
from .pdhg import SaddleProblem
from .prox import (box_operator, identity_prox_operator, pair_norms,
                   pairwise_ball_operator)

BOX_LO, BOX_HI = 0.0, 255.0
_FEAS_SLACK = 1e-9


# ---------------------------------------------------------------------------
# synthetic data


def gaussian_kernel(size: int = 5, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-D Gaussian kernel (entries sum to one)."""
    if size % 2 == 0 or size < 1:
        raise ValueError("kernel size must be odd and positive")
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def phantom(kind: str, size: int = 64) -> np.ndarray:
    """Built-in test images on the 0..255 scale."""
    n = int(size)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    if kind == "checkerboard":
        cell = max(n // 8, 1)
        img = 255.0 * (((ii // cell) + (jj // cell)) % 2)
    elif kind == "ramp":
        img = 255.0 * (ii + jj) / (2 * (n - 1)) if n > 1 else np.zeros((1, 1))
    elif kind == "shapes":
        img = np.zeros((n, n))
        c, r = n / 2.0, n / 3.5
        img[(ii - c) ** 2 + (jj - c) ** 2 <= r ** 2] = 200.0
        img[n // 8: n // 3, n // 8: n // 3] = 90.0
        img[int(0.6 * n): int(0.9 * n), int(0.55 * n): int(0.8 * n)] = 255.0
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    return img


def add_noise(img: np.ndarray, sigma: float, rng) -> np.ndarray:
    """Additive Gaussian noise on the 0..255 scale (not clipped)."""
    return np.asarray(img, dtype=float) + sigma * rng.standard_normal(np.shape(img))


# ---------------------------------------------------------------------------
# operators


def build_gradient_op(rows: int, cols: int) -> ForwardDifference2D:
    """Forward differences mapping M*N -> 2*M*N with ``|D|^2 <= 8``."""
    return ForwardDifference2D(rows, cols)


def build_blur_op(kernel, rows: int, cols: int) -> Convolution2D:
    """Replicate-boundary blur, spectrally normalized so ``rho(A*A) <= 1``.

    The kernel must be nonnegative with unit mass.  Replication keeps
    constant images constant up to the normalization factor (within about
    half a percent for the default Gaussian); the normalization makes the
    declared unit norm bound certified rather than approximate.
    """
    kernel = np.asarray(kernel, dtype=float)
    if np.any(kernel < 0) or not np.isclose(kernel.sum(), 1.0, atol=1e-12):
        raise ValueError("blur kernel must be nonnegative and sum to one")
    raw = Convolution2D(kernel, rows, cols, boundary="replicate",
                        norm_bound=float(kernel.sum()) * 1.5)
    est = power_norm(raw, iters=300, seed=7)
    scale = 1.0 / max(est * (1.0 + 1e-9), 1.0)
    return Convolution2D(kernel, rows, cols, boundary="replicate", scale=scale,
                         norm_bound=1.0)


def edge_weights(b: np.ndarray, rows: int, cols: int, scale: float = 25.0) -> np.ndarray:
    """Edge-favoring diagonal weights on the gradient domain.

    ``w = 1/2 + 1/2 exp(-|grad b| / scale)`` per pixel, replicated to the
    (dx, dy) pair, so all entries lie in (1/2, 1].
    """
    D = build_gradient_op(rows, cols)
    mag = pair_norms(D.apply(np.asarray(b, dtype=float).reshape(-1)))
    w = 0.5 + 0.5 * np.exp(-mag / float(scale))
    return np.repeat(w, 2)


# ---------------------------------------------------------------------------
# problems


@dataclass(frozen=True)
class ImageProblem:
    """An assembled imaging instance plus everything the harness needs."""

    family: str                      # 'deconvolution' | 'infconv' | 'denoising'
    b: np.ndarray                    # observed image, flat
    rows: int
    cols: int
    mu: float
    tau: float
    sigma: float
    D: LinearOperator
    A: Optional[LinearOperator]      # None means identity
    W: Optional[np.ndarray]          # diagonal weights on the dual space
    sp: SaddleProblem

    @property
    def dim_x(self) -> int:
        return self.rows * self.cols

    def initial_point(self) -> np.ndarray:
        """Deterministic start: x0 = observed image, y0 = 0."""
        return np.concatenate([self.b, np.zeros(2 * self.rows * self.cols)])

    def blur_apply(self, x):
        return self.A.apply(x) if self.A is not None else x

    def blur_adjoint(self, y):
        return self.A.adjoint(y) if self.A is not None else y


def _check_steps(mu, tau, sigma):
    if mu <= 0:
        raise ValueError("regularization weight mu must be positive")
    if tau <= 0 or sigma <= 0:
        raise ValueError("steps tau, sigma must be positive")


def _check_weights(W, dim):
    W = np.asarray(W, dtype=float).reshape(-1)
    if W.shape[0] != dim:
        raise ValueError(f"weights have dim {W.shape[0]}, expected {dim}")
    if W.min() < 0.5 - 1e-12 or W.max() > 1.0 + 1e-12:
        raise ValueError("weights must satisfy 1/2 <= W <= 1")
    return W


def build_deconvolution(b, mu, tau, sigma, kernel, rows=None, cols=None) -> ImageProblem:
    """TV-l2 deconvolution ``min 0.5|Ax-b|^2 + mu |Dx|_{2,1} on [0,255]^n``."""
    _check_steps(mu, tau, sigma)
    b = np.asarray(b, dtype=float)
    if b.ndim == 2:
        rows, cols = b.shape
    b = b.reshape(-1)
    A = build_blur_op(kernel, rows, cols)
    D = build_gradient_op(rows, cols)
    b_blur_adj = A.adjoint(b)
    sp = SaddleProblem(
        K=D,
        prox_g=box_operator(BOX_LO, BOX_HI),
        prox_f=pairwise_ball_operator(mu),
        grad_G=lambda x: A.adjoint(A.apply(x)) - b_blur_adj,
        grad_F=None,
        beta=1.0,                      # rho(A*A) <= 1 by the normalized blur
        gamma_primal=0.0,
        gamma_dual=0.0,
    )
    return ImageProblem("deconvolution", b, rows, cols, mu, tau, sigma, D, A, None, sp)


def _infconv_saddle(b, mu, W, A, D) -> SaddleProblem:
    Winv2 = 1.0 / W ** 2
    if A is not None:
        bt = A.adjoint(b)
        grad_G = lambda x: A.adjoint(A.apply(x)) - bt
        gamma_primal = 0.0
    else:
        grad_G = lambda x: x - b
        gamma_primal = 1.0
    return SaddleProblem(
        K=D,
        prox_g=identity_prox_operator(),
        prox_f=pairwise_ball_operator(mu),
        grad_G=grad_G,
        grad_F=lambda y: Winv2 * y,
        beta=0.25,                     # |W^{-2}| <= 4 dominates the 1-smooth G
        gamma_primal=gamma_primal,
        gamma_dual=float(Winv2.min()),
    )


def build_infconv(b, mu, W, tau, sigma, kernel=None, rows=None, cols=None) -> ImageProblem:
    """Deconvolution with the infimal-convolution regularizer.

    ``kernel=None`` uses the identity instead of a blur.
    """
    _check_steps(mu, tau, sigma)
    b = np.asarray(b, dtype=float)
    if b.ndim == 2:
        rows, cols = b.shape
    b = b.reshape(-1)
    W = _check_weights(W, 2 * rows * cols)
    A = build_blur_op(kernel, rows, cols) if kernel is not None else None
    D = build_gradient_op(rows, cols)
    sp = _infconv_saddle(b, mu, W, A, D)
    return ImageProblem("infconv", b, rows, cols, mu, tau, sigma, D, A, W, sp)


def build_denoising(b, mu, W, tau, sigma, rows=None, cols=None) -> ImageProblem:
    """Denoising instance (identity forward model, both blocks strongly convex)."""
    _check_steps(mu, tau, sigma)
    b = np.asarray(b, dtype=float)
    if b.ndim == 2:
        rows, cols = b.shape
    b = b.reshape(-1)
    W = _check_weights(W, 2 * rows * cols)
    D = build_gradient_op(rows, cols)
    sp = _infconv_saddle(b, mu, W, None, D)
    return ImageProblem("denoising", b, rows, cols, mu, tau, sigma, D, None, W, sp)


# ---------------------------------------------------------------------------
# objectives and gaps


@dataclass(frozen=True)
class GapReport:
    primal: float
    dual: Optional[float] = None
    primal_gap: Optional[float] = None   # primal - reference optimum
    pd_gap: Optional[float] = None       # primal - dual


def _data_term(p: ImageProblem, x) -> float:
    r = p.blur_apply(x) - p.b
    return 0.5 * float(r @ r)


def _huber_regularizer(p: ImageProblem, Dx) -> float:
    # per pair: mu * huber_t(|q|), t = mu / w^2, w the (equal) pair weight
    norms = pair_norms(Dx)
    w = p.W.reshape(-1, 2)[:, 0]
    t = p.mu / w ** 2
    vals = np.where(norms <= t, norms ** 2 / (2.0 * t), norms - 0.5 * t)
    return p.mu * float(vals.sum())


def primal_value(p: ImageProblem, x) -> float:
    """Primal objective; +inf when the box constraint is violated beyond slack."""
    x = np.asarray(x, dtype=float).reshape(-1)
    Dx = p.D.apply(x)
    if p.family == "deconvolution":
        if x.min() < BOX_LO - _FEAS_SLACK or x.max() > BOX_HI + _FEAS_SLACK:
            return np.inf
        return _data_term(p, x) + p.mu * float(pair_norms(Dx).sum())
    return _data_term(p, x) + _huber_regularizer(p, Dx)


def dual_value(p: ImageProblem, y) -> float:
    """Dual objective of the denoising family; -inf outside the dual ball.

    Derived from the primal (ball radius ``mu``, constant ``|b|^2/2`` kept)
    so that the gap vanishes at the saddle point.
    """
    if p.family != "denoising":
        raise ValueError("the explicit dual objective exists for the denoising family only")
    y = np.asarray(y, dtype=float).reshape(-1)
    if np.any(pair_norms(y) > p.mu * (1.0 + _FEAS_SLACK) + _FEAS_SLACK):
        return -np.inf
    r = p.D.adjoint(y) - p.b
    winv_y = y / p.W
    return 0.5 * float(p.b @ p.b) - 0.5 * float(r @ r) - 0.5 * float(winv_y @ winv_y)


def pd_gap(p: ImageProblem, x, y, reference: Optional[float] = None) -> GapReport:
    """Primal(-dual) gap report for an iterate pair."""
    pv = primal_value(p, x)
    dv = dual_value(p, y) if p.family == "denoising" else None
    return GapReport(
        primal=pv,
        dual=dv,
        primal_gap=None if reference is None else pv - reference,
        pd_gap=None if dv is None else pv - dv,
    )
