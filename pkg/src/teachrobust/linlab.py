"""Linear students for the comparison teacher on [0,1]^100.

The teacher labels a point -1 when ``x_1 > x_100`` and +1 otherwise.  A
dense least-squares student is easy to flip by moving the 98 middle
coordinates; a student restricted to ``{x_1, x_100}`` cannot be flipped
that way, and rounding its coefficients makes it agree with the teacher
everywhere.

Coordinates in masks are 1-based; arrays are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .framework import Comparison, Grid, evaluate_teacher, strong_robustness_check

__all__ = [
    "DIM",
    "SPARSE_MASK",
    "TEACHER",
    "Example1Dataset",
    "LinearCoefficients",
    "FlipResult",
    "teacher_labels",
    "gen_example1",
    "fit_linear",
    "predict",
    "adversarial_flip",
    "round_coefficients",
    "find_sparse_counterexample",
    "grid_disagreements",
]

DIM = 100
SPARSE_MASK = (1, 100)
TEACHER = Comparison(i=0, j=DIM - 1, dim=DIM)


@dataclass(frozen=True)
class Example1Dataset:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class LinearCoefficients:
    alpha: np.ndarray
    mask: tuple[int, ...] | None = None

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        object.__setattr__(self, "alpha", alpha)
        if self.mask is not None:
            outside = np.ones(len(alpha), dtype=bool)
            outside[np.asarray(self.mask) - 1] = False
            if np.any(alpha[outside] != 0):
                raise ValueError("coefficients outside the mask must be exactly zero")


@dataclass(frozen=True)
class FlipResult:
    x_hat: np.ndarray
    eps_min: float
    eps_used: float
    flipped: bool
    left_box: bool


def teacher_labels(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    return np.where(X[:, 0] > X[:, -1], -1, 1)


def gen_example1(n_per_class: int = 1000, seed: int = 0, dim: int = DIM) -> Example1Dataset:
    """Uniform points on ``[0,1]^dim`` conditioned on each class.

    Rows alternate +1, -1, +1, ... so the classes are interleaved.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    rng = np.random.default_rng(seed)
    pos, neg = [], []
    n_pos = n_neg = 0
    while n_pos < n_per_class or n_neg < n_per_class:
        batch = rng.uniform(0.0, 1.0, size=(2 * n_per_class, dim))
        labels = teacher_labels(batch)
        pos.append(batch[labels == 1])
        neg.append(batch[labels == -1])
        n_pos += int((labels == 1).sum())
        n_neg += int((labels == -1).sum())
    pos = np.concatenate(pos)[:n_per_class]
    neg = np.concatenate(neg)[:n_per_class]
    X = np.empty((2 * n_per_class, dim))
    X[0::2] = pos
    X[1::2] = neg
    y = np.tile([1.0, -1.0], n_per_class)
    return Example1Dataset(X, y)


def fit_linear(data: Example1Dataset, mask=None) -> LinearCoefficients:
    """Least squares without intercept, optionally on the masked columns only."""
    X, y = data.X, data.y
    cols = np.arange(X.shape[1]) if mask is None else np.asarray(sorted(mask)) - 1
    A = X[:, cols]
    if A.shape[0] < A.shape[1]:
        raise ValueError(f"{A.shape[0]} rows cannot determine {A.shape[1]} coefficients")
    coef, _, rank, sv = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1]:
        raise ValueError(
            f"rank-deficient design: rank {rank} < {A.shape[1]}, "
            f"smallest singular value {sv.min():.3e}"
        )
    alpha = np.zeros(X.shape[1])
    alpha[cols] = coef
    return LinearCoefficients(alpha, None if mask is None else tuple(sorted(mask)))


def predict(alpha: LinearCoefficients, X) -> np.ndarray | int:
    """+1 when ``alpha . x >= 0``, else -1."""
    score = np.asarray(X, dtype=float) @ alpha.alpha
    out = np.where(score >= 0, 1, -1)
    return int(out) if np.ndim(out) == 0 else out


def adversarial_flip(x, alpha: LinearCoefficients, eps_extra: float = 1e-6, eps_used=None) -> FlipResult:
    """Push the middle coordinates along ``sign(alpha_i)`` to flip the student.

    The step needed is ``eps_min = |alpha . x| / sum_middle |alpha_i|``; the
    step taken is ``eps_min + eps_extra`` unless ``eps_used`` is given.  The
    first and last coordinates are never touched, so the teacher's label is
    preserved.  The result is not clipped to the unit box.
    """
    x = np.asarray(x, dtype=float)
    a = alpha.alpha
    score = float(x @ a)
    if score == 0:
        raise ValueError("point lies on the student's decision boundary")
    middle_mass = float(np.abs(a[1:-1]).sum())
    if middle_mass == 0:
        return FlipResult(x.copy(), math.inf, 0.0, False, False)
    direction = -math.copysign(1.0, score)
    eps_min = abs(score) / middle_mass
    eps = eps_min + eps_extra if eps_used is None else float(eps_used)
    x_hat = x.copy()
    x_hat[1:-1] = x[1:-1] + eps * direction * np.sign(a[1:-1])
    new_score = float(x_hat @ a)
    flipped = new_score != 0 and math.copysign(1.0, new_score) == direction
    left_box = bool(np.any(x_hat < 0) or np.any(x_hat > 1))
    return FlipResult(x_hat, eps_min, eps, flipped, left_box)


def round_coefficients(alpha: LinearCoefficients) -> LinearCoefficients:
    """Round to the nearest integer, halves away from zero."""
    a = alpha.alpha
    return LinearCoefficients(np.sign(a) * np.floor(np.abs(a) + 0.5), alpha.mask)


def find_sparse_counterexample(alpha: LinearCoefficients, step: float = 1e-3):
    """Grid-search ``(x_1, x_100)`` in the unit square for a disagreement.

    Returns a full-length point (other coordinates zero) or None.
    """
    if alpha.mask is None or tuple(alpha.mask) != SPARSE_MASK:
        raise ValueError("expects a student masked to coordinates {1, 100}")
    n = int(round(1.0 / step)) + 1
    ticks = np.linspace(0.0, 1.0, n)
    x1, x100 = np.meshgrid(ticks, ticks, indexing="ij")
    a1, a100 = alpha.alpha[0], alpha.alpha[-1]
    student = np.where(a1 * x1 + a100 * x100 >= 0, 1, -1)
    teacher = np.where(x1 > x100, -1, 1)
    hits = np.argwhere(student != teacher)
    if len(hits) == 0:
        return None
    i, j = hits[0]
    point = np.zeros(len(alpha.alpha))
    point[0], point[-1] = ticks[i], ticks[j]
    if evaluate_teacher(TEACHER, point) == predict(alpha, point):
        raise AssertionError("grid counterexample does not re-evaluate to a disagreement")
    return point


def grid_disagreements(alpha: LinearCoefficients, resolution: int = 101):
    """Strong check of a student against the comparison teacher on an (x_1, x_100) grid."""
    domain = Grid((0.0, 0.0), (1.0, 1.0), resolution, axes=(0, DIM - 1), base=np.zeros(DIM))
    return strong_robustness_check(lambda x: predict(alpha, x), TEACHER, domain)
