"""Linear operators with exact adjoints and declared spectral-norm bounds.

Every operator maps flat float64 vectors to flat float64 vectors.  Images
are stored row-major; an ``(rows, cols)`` image becomes a vector of length
``rows * cols``.  The range of the 2-D difference operator interleaves the
horizontal and vertical differences per pixel: ``(dx_0, dy_0, dx_1, ...)``.

Adjoints are exact (not approximate transposes): ``<L x, y> == <x, L.adjoint y>``
up to roundoff for every kind.  ``norm_bound`` is a certified upper bound on
the spectral norm, never an estimate.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Dimension mismatch between an operator and its argument."""


def as_vector(x, dim=None, name="x"):
    """Validate and return a flat, finite float64 vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        x = x.reshape(-1)
    if dim is not None and x.shape[0] != dim:
        raise ShapeError(f"{name} has dimension {x.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


class LinearOperator:
    """Base class: ``apply``/``adjoint`` pair with shape checking."""

    kind = "abstract"

    def __init__(self, in_dim: int, out_dim: int, norm_bound: float):
        if in_dim <= 0 or out_dim <= 0:
            raise ShapeError(f"operator dims must be positive, got {in_dim}x{out_dim}")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.norm_bound = float(norm_bound)

    def _apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.in_dim:
            raise ShapeError(
                f"{self.kind}: input has dimension {x.shape[0]}, operator expects {self.in_dim}"
            )
        return self._apply(x)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.out_dim:
            raise ShapeError(
                f"{self.kind}: adjoint input has dimension {y.shape[0]}, operator expects {self.out_dim}"
            )
        return self._adjoint(y)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    def to_dense(self) -> np.ndarray:
        """Materialize the matrix column by column (small dims only)."""
        cols = [self.apply(e) for e in np.eye(self.in_dim)]
        return np.stack(cols, axis=1)


class DenseOperator(LinearOperator):
    kind = "dense"

    def __init__(self, matrix, norm_bound=None):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ShapeError("dense operator needs a 2-D matrix")
        if norm_bound is None:
            norm_bound = float(np.linalg.norm(matrix, 2))
        super().__init__(matrix.shape[1], matrix.shape[0], norm_bound)
        self.matrix = matrix

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, y):
        return self.matrix.T @ y


class DiagonalOperator(LinearOperator):
    kind = "diagonal"

    def __init__(self, diag):
        diag = np.asarray(diag, dtype=float).reshape(-1)
        super().__init__(diag.shape[0], diag.shape[0], float(np.max(np.abs(diag), initial=0.0)))
        self.diag = diag

    def _apply(self, x):
        return self.diag * x

    def _adjoint(self, y):
        return self.diag * y


class ScaledIdentityOperator(LinearOperator):
    kind = "scaled-identity"

    def __init__(self, scale: float, dim: int):
        super().__init__(dim, dim, abs(float(scale)))
        self.scale = float(scale)

    def _apply(self, x):
        return self.scale * x

    _adjoint = _apply


def identity(dim: int) -> ScaledIdentityOperator:
    return ScaledIdentityOperator(1.0, dim)


class ForwardDifference2D(LinearOperator):
    """Forward differences with replicate boundary (zero difference at the
    last row/column).  Output interleaves (dx, dy) per pixel; ``|D|^2 <= 8``.
    """

    kind = "forward-difference-2d"

    def __init__(self, rows: int, cols: int):
        super().__init__(rows * cols, 2 * rows * cols, np.sqrt(8.0))
        self.rows = int(rows)
        self.cols = int(cols)

    def _apply(self, x):
        X = x.reshape(self.rows, self.cols)
        dx = np.zeros_like(X)
        dy = np.zeros_like(X)
        dx[:, :-1] = X[:, 1:] - X[:, :-1]
        dy[:-1, :] = X[1:, :] - X[:-1, :]
        out = np.empty((self.rows, self.cols, 2))
        out[:, :, 0] = dx
        out[:, :, 1] = dy
        return out.reshape(-1)

    def _adjoint(self, y):
        Y = y.reshape(self.rows, self.cols, 2)
        dx = Y[:, :, 0]
        dy = Y[:, :, 1]
        out = np.zeros((self.rows, self.cols))
        # negative divergence matching the forward stencil
        out[:, :-1] -= dx[:, :-1]
        out[:, 1:] += dx[:, :-1]
        out[:-1, :] -= dy[:-1, :]
        out[1:, :] += dy[:-1, :]
        return out.reshape(-1)


class Convolution2D(LinearOperator):
    """2-D convolution (correlation stencil) with zero or replicate boundary.

    ``boundary='zero'`` pads with zeros, so a nonnegative kernel summing to
    one gives a certified norm bound of 1.  ``boundary='replicate'`` pads by
    edge replication; its norm can slightly exceed 1, so ``scale`` allows a
    spectral normalization by the caller.
    """

    kind = "convolution-2d"

    def __init__(self, kernel, rows: int, cols: int, boundary="zero", scale=1.0,
                 norm_bound=None):
        kernel = np.asarray(kernel, dtype=float)
        if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
            raise ShapeError("kernel must be 2-D with odd side lengths")
        if boundary not in ("zero", "replicate"):
            raise ValueError(f"unknown boundary {boundary!r}")
        if norm_bound is None:
            # |A|_1, |A|_inf <= sum |k| for zero padding
            norm_bound = abs(scale) * float(np.sum(np.abs(kernel)))
        super().__init__(rows * cols, rows * cols, norm_bound)
        self.kernel = kernel
        self.rows = int(rows)
        self.cols = int(cols)
        self.boundary = boundary
        self.scale = float(scale)
        self._pr = (kernel.shape[0] - 1) // 2
        self._pc = (kernel.shape[1] - 1) // 2

    def _pad(self, X):
        mode = "edge" if self.boundary == "replicate" else "constant"
        return np.pad(X, ((self._pr, self._pr), (self._pc, self._pc)), mode=mode)

    def _apply(self, x):
        X = self._pad(x.reshape(self.rows, self.cols))
        out = np.zeros((self.rows, self.cols))
        k = self.kernel
        for a in range(k.shape[0]):
            for b in range(k.shape[1]):
                out += k[a, b] * X[a:a + self.rows, b:b + self.cols]
        return self.scale * out.reshape(-1)

    def _adjoint(self, y):
        Y = y.reshape(self.rows, self.cols)
        k = self.kernel
        pr, pc = self._pr, self._pc
        G = np.zeros((self.rows + 2 * pr, self.cols + 2 * pc))
        for a in range(k.shape[0]):
            for b in range(k.shape[1]):
                G[a:a + self.rows, b:b + self.cols] += k[a, b] * Y
        if self.boundary == "zero":
            out = G[pr:pr + self.rows, pc:pc + self.cols]
        else:
            # fold the replicated pad back onto the edges
            H = G[pr:pr + self.rows, :].copy()
            if pr:
                H[0, :] += G[:pr, :].sum(axis=0)
                H[-1, :] += G[pr + self.rows:, :].sum(axis=0)
            out = H[:, pc:pc + self.cols].copy()
            if pc:
                out[:, 0] += H[:, :pc].sum(axis=1)
                out[:, -1] += H[:, pc + self.cols:].sum(axis=1)
        return self.scale * out.reshape(-1)


class BlockOperator(LinearOperator):
    """Block composition ``[[L_11, ...], [...]]`` with ``None`` as zero block."""

    kind = "block"

    def __init__(self, blocks):
        self.blocks = blocks
        row_dims, col_dims = [], []
        for i, row in enumerate(blocks):
            d = {b.out_dim for b in row if b is not None}
            if len(d) != 1:
                raise ShapeError(f"block row {i} has inconsistent output dims {d}")
            row_dims.append(d.pop())
        ncols = len(blocks[0])
        for j in range(ncols):
            d = {row[j].in_dim for row in blocks if row[j] is not None}
            if len(d) != 1:
                raise ShapeError(f"block column {j} has inconsistent input dims {d}")
            col_dims.append(d.pop())
        bound = float(sum(b.norm_bound for row in blocks for b in row if b is not None))
        super().__init__(sum(col_dims), sum(row_dims), bound)
        self.row_dims = row_dims
        self.col_dims = col_dims
        self._col_off = np.concatenate([[0], np.cumsum(col_dims)])
        self._row_off = np.concatenate([[0], np.cumsum(row_dims)])

    def _apply(self, x):
        out = np.zeros(self.out_dim)
        for i, row in enumerate(self.blocks):
            acc = out[self._row_off[i]:self._row_off[i + 1]]
            for j, b in enumerate(row):
                if b is not None:
                    acc += b.apply(x[self._col_off[j]:self._col_off[j + 1]])
        return out

    def _adjoint(self, y):
        out = np.zeros(self.in_dim)
        for i, row in enumerate(self.blocks):
            yi = y[self._row_off[i]:self._row_off[i + 1]]
            for j, b in enumerate(row):
                if b is not None:
                    out[self._col_off[j]:self._col_off[j + 1]] += b.adjoint(yi)
        return out


def power_norm(op: LinearOperator, iters: int = 100, seed: int = 0) -> float:
    """Spectral-norm estimate by power iteration on ``L* L`` (from below)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.in_dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = op.adjoint(op.apply(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam = nw
    return float(np.sqrt(lam))
