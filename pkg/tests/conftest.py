"""Shared test fixtures and independent oracles.

The brute-force resolvent oracle iterates the forward-backward fixed point
of the strongly monotone inclusion that defines ``J^V_T`` and is kept
independent of the root-finding code path it is used to check.
"""

import numpy as np
import pytest

from qnsplit.metrics import DenseMetric
from qnsplit.prox import (box_operator, l1_shrinkage_operator,
                          pairwise_ball_operator)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def oracle_resolvent(T, V, z, tol=1e-12, max_iter=500000):
    """Brute-force ``J^V_T(z)`` for a dense SPD ``V``: iterate
    ``x <- J_{sT}(x - s V (x - z))`` with ``s = 1 / (2 |V|)``."""
    V = np.asarray(V, dtype=float)
    z = np.asarray(z, dtype=float)
    s = 1.0 / (2.0 * np.linalg.norm(V, 2))
    x = z.copy()
    scale = 1.0 + np.linalg.norm(z)
    for _ in range(max_iter):
        x_new = T.resolvent(x - s * (V @ (x - z)), s)
        if np.linalg.norm(x_new - x) <= tol * scale:
            return x_new
        x = x_new
    return x


def random_spd(rng, n, lo=0.5, hi=2.5):
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    return Q @ np.diag(rng.uniform(lo, hi, n)) @ Q.T


def random_calculus_instance(rng, trial, n_max=8, r_max=3):
    """One randomized perturbed-resolvent instance (both signs, catalog T)."""
    n = 2 * int(rng.integers(1, n_max // 2 + 1))
    r = int(rng.integers(1, r_max + 1))
    M = DenseMetric(random_spd(rng, n))
    U = rng.standard_normal((n, r))
    sign = "plus" if trial % 2 == 0 else "minus"
    if sign == "minus":
        # keep V = M - U U^T safely positive definite
        U *= 0.6 * np.sqrt(M.rho_min) / np.linalg.norm(U, 2)
    catalog = [box_operator(-0.5, 0.8), l1_shrinkage_operator(0.3),
               pairwise_ball_operator(0.6)]
    T = catalog[trial % 3]
    z = 2.0 * rng.standard_normal(n)
    V = M.matrix + (1.0 if sign == "plus" else -1.0) * (U @ U.T)
    return T, M, sign, U, z, V
