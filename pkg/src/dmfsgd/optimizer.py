"""SGD and minibatch coordinate updates, backtracking line search, and the
nonnegativity projection."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ContractError, LossKind, residual_weight


class UpdateOverflow(ArithmeticError):
    """A coordinate update produced a non-finite value (learning rate too large)."""


DEFAULT_ETA = {LossKind.L2: 1e-3, LossKind.L1: 1e-2}


@dataclass(frozen=True)
class UpdateConfig:
    lam: float = 1.0
    rank: int = 10
    loss: LossKind = LossKind.L1
    nonneg: bool = True
    eta_init: float | None = None
    max_line_search: int = 20
    delta: float | None = None  # None: 1e-4 * max(1, l0)

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        if self.eta_init is None:
            object.__setattr__(self, "eta_init", DEFAULT_ETA[self.loss])
        if self.lam < 0:
            raise ContractError(f"lambda must be >= 0, got {self.lam}")
        if self.rank < 1:
            raise ContractError(f"rank must be >= 1, got {self.rank}")
        if not self.eta_init > 0:
            raise ContractError(f"eta_init must be > 0, got {self.eta_init}")
        if self.max_line_search < 1:
            raise ContractError(f"max_line_search must be >= 1, got {self.max_line_search}")
        if self.delta is not None and self.delta < 0:
            raise ContractError(f"delta must be >= 0, got {self.delta}")

    def slack(self, l0: float) -> float:
        """Line-search slack for a starting objective value ``l0``."""
        if self.delta is not None:
            return self.delta
        return 1e-4 * max(1.0, l0)


def project_nonneg(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0)


def row_update(xi, others, d, weights, cfg: UpdateConfig,
               check: bool = True) -> Callable[[float], np.ndarray]:
    """Minibatch update of one row as a function of the step size.

    The returned callable maps ``eta`` to
    ``(1 - eta*lam) * xi + eta * sum_j w_j * psi(d_j - xi . other_j) * other_j``
    where psi is the identity for L2 and sign for L1. The same rule updates
    y_i when given the neighbors' x rows and the reverse-direction distances.
    The descent direction is computed once, so probing several step sizes
    is cheap.
    """
    xi = np.asarray(xi, dtype=np.float64)
    others = np.asarray(others, dtype=np.float64)
    if others.ndim != 2 or others.shape[1] != xi.size:
        raise ContractError(f"neighbor rows have shape {others.shape}, expected (m, {xi.size})")
    res = residual_weight(cfg.loss, np.asarray(d, dtype=np.float64) - others @ xi)
    direction = (np.asarray(weights, dtype=np.float64) * res) @ others
    lam = cfg.lam
    nonneg = cfg.nonneg

    def step(eta: float) -> np.ndarray:
        v = (1.0 - eta * lam) * xi + eta * direction
        # a sum is non-finite iff some entry is (or the entries are near overflow anyway)
        if check and not math.isfinite(v.sum()):
            raise UpdateOverflow("coordinate update overflowed; the learning rate is too large")
        return np.maximum(v, 0.0, out=v) if nonneg else v

    return step


def update_x(xi, others, d, weights, eta: float, cfg: UpdateConfig) -> np.ndarray:
    """One minibatch step of x_i against the neighbors' y rows; see :func:`row_update`."""
    with np.errstate(over="ignore", invalid="ignore"):
        return row_update(xi, others, d, weights, cfg)(eta)


def update_y(yi, xs, d_rev, weights, eta: float, cfg: UpdateConfig) -> np.ndarray:
    return update_x(yi, xs, d_rev, weights, eta, cfg)


def sgd_step(xi, yi, xj, yj, d_ij: float, d_ji: float, eta: float, cfg: UpdateConfig):
    """Single-sample update of node i's coordinates after measuring node j."""
    if not eta > 0:
        raise ContractError(f"eta must be > 0, got {eta}")
    xi_new = update_x(xi, np.atleast_2d(yj), [d_ij], [1.0], eta, cfg)
    yi_new = update_y(yi, np.atleast_2d(xj), [d_ji], [1.0], eta, cfg)
    return xi_new, yi_new


def minibatch_step(xi, yi, neighbors, eta: float, cfg: UpdateConfig):
    """Minibatch update over a list of ``(yj, xj, d_ij, d_ji, w)`` tuples."""
    if not eta > 0:
        raise ContractError(f"eta must be > 0, got {eta}")
    if not neighbors:
        raise ContractError("minibatch needs at least one neighbor")
    ys, xs, d_ij, d_ji, w = (np.asarray(col, dtype=np.float64) for col in zip(*neighbors))
    if not w.sum() > 0:
        raise ContractError("neighbor weights must have a positive sum")
    return (update_x(xi, ys, d_ij, w, eta, cfg),
            update_y(yi, xs, d_ji, w, eta, cfg))


@dataclass(frozen=True)
class LineSearchResult:
    value: np.ndarray
    eta: float          # 0.0 when every trial was rejected
    loss_before: float
    loss_after: float
    slack: float
    trials: int

    @property
    def accepted(self) -> bool:
        return self.eta > 0


def line_search(objective: Callable[[np.ndarray], float],
                step: Callable[[float], np.ndarray],
                current: np.ndarray,
                cfg: UpdateConfig) -> LineSearchResult:
    """Backtracking search for a step size that does not worsen ``objective``.

    Starting from ``cfg.eta_init``, the step size is halved until
    ``objective(step(eta)) < objective(current) + slack``. A step that
    overflows, or whose objective is not finite, counts as a rejected trial. If all ``cfg.max_line_search``
    trials are rejected, ``current`` is returned unchanged with ``eta = 0``.
    """
    l0 = objective(current)
    slack = cfg.slack(l0)
    eta = cfg.eta_init
    with np.errstate(over="ignore", invalid="ignore"):
        for trial in range(1, cfg.max_line_search + 1):
            try:
                cand = step(eta)
            except UpdateOverflow:
                cand = None
            if cand is not None:
                l1 = objective(cand)
                if l1 < l0 + slack:
                    return LineSearchResult(cand, eta, l0, l1, slack, trial)
            eta /= 2.0
    return LineSearchResult(np.asarray(current), 0.0, l0, l0, slack, cfg.max_line_search)


@functools.lru_cache(maxsize=64)
def _schedule(eta_init: float, trials: int, lam: float):
    # halving from eta_init is exact in binary, so these equal the sequential trials
    etas = eta_init * 0.5 ** np.arange(trials)
    scale = 1.0 - etas * lam
    etas.flags.writeable = scale.flags.writeable = False
    return etas, scale


def search_row(xi, others, d, weights, cfg: UpdateConfig) -> LineSearchResult:
    """:func:`line_search` over :func:`row_update` against the linear objective
    ``sum_j w_j * l(d_j, others_j . v) + lam * v . v``, with every trial step
    size evaluated in one vectorized pass.

    The candidates and the acceptance rule match the sequential search; the
    first accepted step size wins and ``trials`` counts up to it.
    """
    xi = np.asarray(xi, dtype=np.float64)
    others = np.asarray(others, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if others.ndim != 2 or others.shape[1] != xi.size:
        raise ContractError(f"neighbor rows have shape {others.shape}, expected (m, {xi.size})")
    l2 = cfg.loss is LossKind.L2
    lam = cfg.lam
    r0 = d - others @ xi
    l0 = float(w @ (r0 * r0 if l2 else np.abs(r0))) + lam * float(xi @ xi)
    slack = cfg.slack(l0)
    direction = (w * residual_weight(cfg.loss, r0)) @ others
    etas, scale = _schedule(cfg.eta_init, cfg.max_line_search, lam)
    with np.errstate(over="ignore", invalid="ignore"):
        v = np.multiply.outer(scale, xi)
        v += np.multiply.outer(etas, direction)
        if cfg.nonneg:
            np.maximum(v, 0.0, out=v)
        r = d - v @ others.T
        losses = (r * r if l2 else np.abs(r)) @ w + lam * np.einsum("ij,ij->i", v, v)
        # non-finite candidates compare False and count as rejected
        ok = losses < l0 + slack
    if not ok.any():
        return LineSearchResult(xi, 0.0, l0, l0, slack, cfg.max_line_search)
    k = int(np.argmax(ok))
    return LineSearchResult(v[k].copy(), float(etas[k]), l0, float(losses[k]), slack, k + 1)
