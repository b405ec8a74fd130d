"""Coordinates, loss functions, gradients and distance predictors."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called with arguments violating its contract."""


class LossKind(str, enum.Enum):
    L2 = "l2"
    L1 = "l1"


class DistanceModel(str, enum.Enum):
    RAW = "raw"
    SYMMETRIC = "symmetric"
    HEIGHT_SYMMETRIC = "height-symmetric"


@dataclass
class Coordinate:
    """The pair of factor rows (x, y) owned by one node, plus an optional height.

    ``x`` is the node's row of X (used when it is the source of a path) and
    ``y`` its row of Y (used when it is the destination).
    """

    x: np.ndarray
    y: np.ndarray
    height: float | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 1 or self.x.shape != self.y.shape or self.x.size < 1:
            raise ContractError(
                f"x and y must be vectors of equal length >= 1, got {self.x.shape} and {self.y.shape}"
            )
        if self.height is not None:
            self.height = float(self.height)
            if self.height < 0:
                raise ContractError(f"height must be nonnegative, got {self.height}")

    @property
    def rank(self) -> int:
        return self.x.size

    @classmethod
    def random(cls, rank: int, rng: np.random.Generator, height: bool = False) -> "Coordinate":
        """Draw x, y (and the height, if requested) uniformly from [0, 1)."""
        x = rng.random(rank)
        y = rng.random(rank)
        return cls(x, y, float(rng.random()) if height else None)

    def copy(self) -> "Coordinate":
        return Coordinate(self.x.copy(), self.y.copy(), self.height)


@dataclass
class PartialMatrix:
    """An n-by-n distance matrix with an availability mask.

    Entries of ``d`` where ``w`` is zero are meaningless and never read.
    """

    d: np.ndarray
    w: np.ndarray = field(default=None)

    def __post_init__(self):
        self.d = np.array(self.d, dtype=np.float64)
        if self.d.ndim != 2 or self.d.shape[0] != self.d.shape[1]:
            raise ContractError(f"distance matrix must be square, got shape {self.d.shape}")
        if self.w is None:
            self.w = np.isfinite(self.d).astype(np.float64)
        else:
            self.w = np.array(self.w, dtype=np.float64)
            if self.w.shape != self.d.shape:
                raise ContractError("mask and distance matrix shapes differ")
        np.fill_diagonal(self.w, 0.0)
        if np.any((self.w < 0) | (self.w > 1)):
            raise ContractError("weights must lie in [0, 1]")
        # unmeasured entries are zeroed so that accidental arithmetic stays finite
        self.d[self.w == 0] = 0.0
        if np.any(self.d < 0):
            raise ContractError("measured distances must be nonnegative")

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def measured(self) -> np.ndarray:
        """Boolean mask of measured entries."""
        return self.w > 0

    def is_measured(self, i: int, j: int) -> bool:
        return bool(self.w[i, j] > 0)

    def density(self) -> float:
        """Fraction of off-diagonal entries that are measured."""
        n = self.n
        if n < 2:
            return 0.0
        return float(np.count_nonzero(self.measured)) / (n * (n - 1))

    def is_complete(self) -> bool:
        off = ~np.eye(self.n, dtype=bool)
        return bool(np.all(self.w[off] > 0))


def _check_same_rank(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ContractError(f"rank mismatch: {a.shape} vs {b.shape}")


def predict(model: DistanceModel, ci: Coordinate, cj: Coordinate) -> float:
    """Predicted distance from node i to node j."""
    _check_same_rank(ci.x, cj.x)
    model = DistanceModel(model)
    if model is DistanceModel.RAW:
        return float(ci.x @ cj.y)
    sym = 0.5 * (float(ci.x @ cj.y) + float(cj.x @ ci.y))
    if model is DistanceModel.SYMMETRIC:
        return sym
    if ci.height is None or cj.height is None:
        raise ContractError("the height model needs a height on both coordinates")
    return sym + ci.height + cj.height


def predict_matrix(model: DistanceModel, x: np.ndarray, y: np.ndarray,
                   heights: np.ndarray | None = None) -> np.ndarray:
    """All pairwise predictions for stacked coordinates (rows of ``x`` and ``y``)."""
    model = DistanceModel(model)
    raw = x @ y.T
    if model is DistanceModel.RAW:
        return raw
    sym = 0.5 * (raw + raw.T)
    if model is DistanceModel.SYMMETRIC:
        return sym
    if heights is None:
        raise ContractError("the height model needs heights")
    return sym + heights[:, None] + heights[None, :]


def loss(kind: LossKind, d, dhat):
    """Pointwise loss between measured ``d`` and predicted ``dhat``; broadcasts."""
    r = np.subtract(d, dhat)
    if kind == LossKind.L2:
        out = r * r
    else:
        out = np.abs(r)
    return float(out) if np.ndim(out) == 0 else out


def residual_weight(kind: LossKind, residual):
    """The factor multiplying the descent direction: the residual itself for L2,
    its sign (with sign(0) = 0) for L1."""
    if kind == LossKind.L2:
        return residual
    return np.sign(residual)


def gradient_x(kind: LossKind, d: float, xi, yj) -> np.ndarray:
    """Gradient of l(d, xi . yj) w.r.t. xi, with the constant factor 2 of L2 dropped."""
    xi = np.asarray(xi, dtype=np.float64)
    yj = np.asarray(yj, dtype=np.float64)
    _check_same_rank(xi, yj)
    return -residual_weight(kind, d - xi @ yj) * yj


def gradient_y(kind: LossKind, d: float, xj, yi) -> np.ndarray:
    """Gradient of l(d, xj . yi) w.r.t. yi."""
    xj = np.asarray(xj, dtype=np.float64)
    yi = np.asarray(yi, dtype=np.float64)
    _check_same_rank(xj, yi)
    return -residual_weight(kind, d - xj @ yi) * xj


def local_loss(kind: LossKind, d, others, weights, own, lam: float) -> float:
    """Regularized loss of one node over its neighbors.

    Parameters
    ----------
    kind : LossKind
    d : array_like, shape (m,)
        Measured distances to (for the x side) or from (for the y side) each neighbor.
    others : array_like, shape (m, r)
        The neighbors' y rows when ``own`` is x_i, or their x rows when ``own`` is y_i.
    weights : array_like, shape (m,)
    own : array_like, shape (r,)
        The coordinate row being optimized.
    lam : float
        Regularization coefficient.

    Returns
    -------
    float
        ``sum_j w_j * l(d_j, own . other_j) + lam * own . own``.
    """
    own = np.asarray(own, dtype=np.float64)
    reg = lam * float(own @ own)
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        return reg
    others = np.asarray(others, dtype=np.float64).reshape(d.size, -1)
    if others.shape[1] != own.size:
        raise ContractError(f"rank mismatch: {others.shape[1]} vs {own.size}")
    r = d - others @ own
    fit = r * r if kind == LossKind.L2 else np.abs(r)
    return float(np.dot(np.asarray(weights, dtype=np.float64), fit)) + reg
