"""Prediction accuracy: relative estimation error, stress and median absolute error."""

from __future__ import annotations

import math

import numpy as np

from .model import ContractError


def eval_pairs(d, dhat):
    """Flatten measured/predicted arrays, dropping pairs whose measured distance is 0."""
    d = np.asarray(d, dtype=np.float64).ravel()
    dhat = np.asarray(dhat, dtype=np.float64).ravel()
    if d.shape != dhat.shape:
        raise ContractError(f"{d.size} measured values but {dhat.size} predictions")
    keep = d > 0
    return d[keep], dhat[keep]


def ree_values(d, dhat) -> np.ndarray:
    d, dhat = eval_pairs(d, dhat)
    return np.abs(dhat - d) / d


def empirical_cdf(values, grid) -> np.ndarray:
    """Fraction of ``values`` that are <= each grid point."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return np.zeros(len(grid))
    return np.searchsorted(v, np.asarray(grid, dtype=np.float64), side="right") / v.size


def stress(d, dhat) -> float:
    d, dhat = eval_pairs(d, dhat)
    if d.size == 0:
        raise ContractError("stress of an empty pair set")
    # fsum keeps the result independent of summation order
    num = math.fsum(((d - dhat) ** 2).tolist())
    den = math.fsum((d * d).tolist())
    return math.sqrt(num / den)


def mae(d, dhat) -> float:
    d, dhat = eval_pairs(d, dhat)
    if d.size == 0:
        raise ContractError("median absolute error of an empty pair set")
    return float(np.median(np.abs(d - dhat)))
