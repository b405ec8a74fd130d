"""Comparison methods: truncated-SVD factorization of complete matrices and
constant-step Vivaldi embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ContractError, PartialMatrix


class NumericError(ArithmeticError):
    pass


def complete_dense(m) -> np.ndarray:
    """Dense array from a complete PartialMatrix (diagonal as 0) or an array."""
    if isinstance(m, PartialMatrix):
        if not m.is_complete():
            raise ContractError(
                "matrix has unmeasured off-diagonal entries; extract a complete submatrix first"
            )
        d = m.d.copy()
        np.fill_diagonal(d, 0.0)
        return d
    d = np.asarray(m, dtype=np.float64)
    if d.ndim != 2 or not np.all(np.isfinite(d)):
        raise ContractError("expected a finite 2-D matrix")
    return d


def _svd(d: np.ndarray):
    try:
        return np.linalg.svd(d, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from None


def singular_values(m) -> np.ndarray:
    return _svd(complete_dense(m))[1]


def svd_lowrank(m, r: int):
    """Best rank-``r`` factors: X = U S_r^1/2 and Y = V S_r^1/2, so X @ Y.T approximates m."""
    d = complete_dense(m)
    if not 1 <= r <= min(d.shape):
        raise ContractError(f"rank must be in [1, {min(d.shape)}], got {r}")
    u, s, vt = _svd(d)
    root = np.sqrt(s[:r])
    return u[:, :r] * root, vt[:r].T * root


@dataclass
class EuclideanCoord:
    x: np.ndarray
    height: float | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if not np.all(np.isfinite(self.x)):
            raise ContractError("Euclidean coordinates must be finite")

    def distance(self, other: "EuclideanCoord") -> float:
        d = float(np.linalg.norm(self.x - other.x))
        if self.height is not None and other.height is not None:
            d += self.height + other.height
        return d


def vivaldi_step(xi: EuclideanCoord, xj: EuclideanCoord, d_ij: float, eta: float,
                 rng: np.random.Generator | None = None) -> EuclideanCoord:
    """Move node i along the unit vector from j, by ``eta`` times the prediction error.

    With heights on, the prediction adds both heights and node i's height
    moves by half the same scaled error, floored at 0. Coincident points get
    a random unit direction.
    """
    if not eta > 0:
        raise ContractError(f"eta must be > 0, got {eta}")
    diff = xi.x - xj.x
    norm = float(np.linalg.norm(diff))
    dhat = xi.distance(xj)
    if norm == 0.0:
        rng = rng if rng is not None else np.random.default_rng()
        diff = rng.standard_normal(xi.x.size)
        norm = float(np.linalg.norm(diff))
    err = d_ij - dhat
    x_new = xi.x + eta * err * diff / norm
    h_new = None
    if xi.height is not None:
        h_new = max(0.0, xi.height + eta * err * 0.5)
    return EuclideanCoord(x_new, h_new)


def euclidean_matrix(x: np.ndarray, heights: np.ndarray | None = None) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if heights is not None:
        d = d + (heights[:, None] + heights[None, :])
        np.fill_diagonal(d, 0.0)
    return d
