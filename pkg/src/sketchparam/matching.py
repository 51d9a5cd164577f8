"""Optimal slot assignment between predicted and ground-truth primitives,
a factorial brute-force oracle for it, and the four evaluation metrics.

Matching always runs over the full 16x16 slot grid (padding slots included),
so the assignment size never varies with primitive count.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .tokens import (
    CONSTRUCTION,
    PARAM_BASE,
    PARAM_MAX,
    SLOT_COUNT,
    TOKENS_PER_SLOT,
    VOCAB_SIZE,
    TokenGrid,
)

COST_PROB_FLOOR = 1e-9
FOREGROUND_THRESHOLD = 0.5


class NonFiniteError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    """Prediction slot assigned to each ground-truth slot, with total cost."""

    permutation: tuple[int, ...]
    cost: float

    def __post_init__(self):
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValueError(f"not a permutation: {self.permutation}")


@dataclass
class MetricReport:
    acc: float
    param_mse: float
    img_mse: float
    chamfer: float
    t_acc: int = 0
    t_mse: int = 0
    pred_foreground: int = 0
    target_foreground: int = 0


def cost_matrix(pred_probs: np.ndarray, target: TokenGrid) -> np.ndarray:
    """(16, 16) negative log-likelihood of each target slot under each
    predicted slot; empty target slots cost against the padding token."""
    probs = np.asarray(pred_probs, dtype=np.float64)
    if probs.shape != (SLOT_COUNT * TOKENS_PER_SLOT, VOCAB_SIZE):
        raise ValueError(
            f"prediction must be ({SLOT_COUNT * TOKENS_PER_SLOT}, {VOCAB_SIZE}), "
            f"got {probs.shape}"
        )
    slots = target.slots if isinstance(target, TokenGrid) else np.asarray(target)
    nll = -np.log(np.maximum(probs, COST_PROB_FLOOR))
    nll = nll.reshape(SLOT_COUNT, TOKENS_PER_SLOT, VOCAB_SIZE)
    # cost[i, j] = sum_k nll[j, k, target[i, k]]
    j = np.arange(SLOT_COUNT)[:, None, None]
    k = np.arange(TOKENS_PER_SLOT)[None, None, :]
    gather = nll[j, k, slots[None, :, :]]  # (pred j, target i, position k)
    return gather.sum(axis=-1).T.copy()


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-total-cost perfect matching of a square cost matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise NonFiniteError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return Assignment(tuple(int(c) for c in perm), float(cost[rows, cols].sum()))


def brute_force_assignment(cost: np.ndarray) -> Assignment:
    """Exhaustive minimum over all permutations; the n! oracle (n <= 9)."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if n > 9:
        raise ValueError(f"brute force over {n}! permutations is intractable")
    best_perm, best_cost = None, math.inf
    idx = np.arange(n)
    for perm in itertools.permutations(range(n)):
        c = float(cost[idx, perm].sum())
        if c < best_cost:
            best_perm, best_cost = perm, c
    return Assignment(tuple(best_perm), best_cost)


def _permuted(pred_slots: np.ndarray, assignment) -> np.ndarray:
    perm = np.asarray(getattr(assignment, "permutation", assignment), dtype=np.int64)
    return pred_slots[perm]


def metric_acc(pred_grid, target_grid, assignment) -> float:
    """Fraction of non-padding ground-truth tokens matched exactly."""
    target = target_grid.slots if isinstance(target_grid, TokenGrid) else np.asarray(target_grid)
    pred = pred_grid.slots if isinstance(pred_grid, TokenGrid) else np.asarray(pred_grid)
    pred = _permuted(pred, assignment)
    mask = target > 0
    t_acc = int(mask.sum())
    if t_acc == 0:
        return 1.0
    return float((pred[mask] == target[mask]).sum() / t_acc)


def metric_param_mse(pred_grid, target_grid, assignment) -> float:
    """Mean squared token difference over parameter positions of the target.

    Positions are those whose target token lies in [7, 70]; 0 when the
    target has no parameter tokens.
    """
    target = target_grid.slots if isinstance(target_grid, TokenGrid) else np.asarray(target_grid)
    pred = pred_grid.slots if isinstance(pred_grid, TokenGrid) else np.asarray(pred_grid)
    pred = _permuted(pred, assignment)
    mask = (target >= PARAM_BASE) & (target <= PARAM_MAX)
    t_mse = int(mask.sum())
    if t_mse == 0:
        return 0.0
    diff = pred[mask].astype(np.float64) - target[mask].astype(np.float64)
    return float((diff**2).mean())


def metric_img_mse(pred_img: np.ndarray, target_img: np.ndarray) -> float:
    """Half foreground-restricted MSE plus half full-image MSE.

    Foreground pixels are those equal to 1 in the target; the foreground
    term is 0 for an all-background target.
    """
    pred = np.asarray(pred_img, dtype=np.float64)
    target = np.asarray(target_img, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"image shapes differ: {pred.shape} vs {target.shape}")
    sq = (pred - target) ** 2
    fg = target == 1.0
    fg_term = float(sq[fg].mean()) if fg.any() else 0.0
    return 0.5 * fg_term + 0.5 * float(sq.mean())


def chamfer_sentinel(shape) -> float:
    """Pessimistic stand-in (h^2 + w^2) when a foreground set is empty;
    strictly worse than any real bidirectional distance on that canvas."""
    h, w = shape
    return float(h * h + w * w)


def metric_chamfer(pred_img: np.ndarray, target_img: np.ndarray) -> float:
    """Symmetric mean squared nearest-neighbor distance (pixels^2) between
    foreground pixel sets (threshold 0.5); all pixels, no subsampling.

    Returns the sentinel value when either image has no foreground.
    """
    pred = np.asarray(pred_img)
    target = np.asarray(target_img)
    if pred.shape != target.shape:
        raise ValueError(f"image shapes differ: {pred.shape} vs {target.shape}")
    p_pts = np.argwhere(pred > FOREGROUND_THRESHOLD).astype(np.float64)
    t_pts = np.argwhere(target > FOREGROUND_THRESHOLD).astype(np.float64)
    if len(p_pts) == 0 or len(t_pts) == 0:
        return chamfer_sentinel(pred.shape)
    d_pt = cKDTree(t_pts).query(p_pts, k=1)[0]
    d_tp = cKDTree(p_pts).query(t_pts, k=1)[0]
    return 0.5 * float((d_pt**2).mean()) + 0.5 * float((d_tp**2).mean())
