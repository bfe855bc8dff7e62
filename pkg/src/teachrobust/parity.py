"""Parity teachers on {0,1}^d, a tolerant statistical-query oracle and learners.

Coordinates are 1-based in :class:`ParitySupport` to match the usual
``x_1 .. x_d`` naming; bit vectors themselves are ordinary 0-based arrays.
Labels use the {0,1} encoding: ``T(x) = 1`` iff the selected bits have an
even sum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

__all__ = [
    "ParitySupport",
    "ParityTeacher",
    "parity_eval",
    "random_teacher_support",
    "UniformCube",
    "TwoPoint",
    "SQOracle",
    "sq_query",
    "exact_feature_correlation",
    "brute_force_feature_correlation",
    "active_teacher_learn",
    "CountingQuery",
    "SupportGuess",
    "AffineThreshold",
    "sq_student_learn",
    "train_linear_on_mu",
    "agreement_on",
]

ENUMERATION_LIMIT = 24
MONTE_CARLO_SAMPLES = 10**6
_CHUNK_BITS = 16


@dataclass(frozen=True)
class ParitySupport:
    d: int
    members: tuple[int, ...] = ()

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        members = tuple(sorted(set(int(i) for i in self.members)))
        for i in members:
            if not 1 <= i <= self.d:
                raise ValueError(f"support index {i} outside 1..{self.d}")
        object.__setattr__(self, "members", members)

    @property
    def columns(self) -> np.ndarray:
        return np.asarray(self.members, dtype=np.intp) - 1

    def __len__(self):
        return len(self.members)


def _check_bits(support: ParitySupport, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != support.d:
        raise ValueError(f"expected bit vectors of length {support.d}, got {x.shape[-1]}")
    return x


def parity_eval(support: ParitySupport, x) -> np.ndarray | int:
    """1 when the bits of ``x`` selected by ``support`` sum to an even number.

    Accepts a single vector or a stack of shape ``(n, d)``.
    """
    x = _check_bits(support, x)
    s = np.take(x, support.columns, axis=-1).sum(axis=-1).astype(np.int64)
    out = 1 - (s & 1)
    return int(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ParityTeacher:
    """Member of the teacher family; the first coordinate is always selected."""

    support: ParitySupport

    def __post_init__(self):
        if 1 not in self.support.members:
            raise ValueError("teacher supports must include coordinate 1")

    @property
    def d(self) -> int:
        return self.support.d

    def __call__(self, x):
        return parity_eval(self.support, x)


def random_teacher_support(d: int, size: int, rng: np.random.Generator) -> ParitySupport:
    """Uniform random support of the given size containing coordinate 1."""
    if not 1 <= size <= d:
        raise ValueError(f"support size must lie in 1..{d}, got {size}")
    rest = rng.choice(np.arange(2, d + 1), size=size - 1, replace=False) if size > 1 else []
    return ParitySupport(d, (1, *[int(i) for i in rest]))


# ---------------------------------------------------------------------------
# Distributions on the cube
# ---------------------------------------------------------------------------


def _cube_chunks(d: int) -> Iterator[np.ndarray]:
    """All of {0,1}^d in chunks, first coordinate as the most significant bit."""
    total = 1 << d
    chunk = 1 << min(d, _CHUNK_BITS)
    shifts = np.arange(d - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        yield ((idx[:, None] >> shifts) & 1).astype(np.int8)


@dataclass(frozen=True)
class UniformCube:
    d: int

    def support_chunks(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        weight = 0.5**self.d
        for x in _cube_chunks(self.d):
            yield x, np.full(len(x), weight)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, 2, size=(n, self.d), dtype=np.int8)


@dataclass(frozen=True)
class TwoPoint:
    """Uniform on the origin and the first basis vector."""

    d: int

    def points(self) -> np.ndarray:
        x = np.zeros((2, self.d), dtype=np.int8)
        x[1, 0] = 1
        return x

    def support_chunks(self):
        yield self.points(), np.array([0.5, 0.5])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.points()[rng.integers(0, 2, size=n)]


def _expectation(chi, teacher, distribution) -> float:
    total = 0.0
    for x, w in distribution.support_chunks():
        total += float(np.dot(w, np.asarray(chi(x, teacher(x)), dtype=float)))
    return total


def agreement_on(predict: Callable, teacher: Callable, distribution) -> float:
    """Exact ``P(predict(x) == teacher(x))`` under an enumerable distribution."""
    return _expectation(lambda x, y: predict(x) == y, teacher, distribution)


# ---------------------------------------------------------------------------
# Statistical-query oracle
# ---------------------------------------------------------------------------


@dataclass
class SQOracle:
    """Answers ``E[chi(x, T(x))]`` up to an additive error of at most ``tolerance``.

    ``noise`` is ``"uniform"`` (error drawn uniformly from the tolerance band)
    or ``"exact"`` (no error).
    """

    teacher: ParityTeacher
    distribution: UniformCube | TwoPoint
    tolerance: float
    noise: str = "uniform"
    seed: int = 0
    query_count: int = field(default=0, init=False)

    def __post_init__(self):
        if not 0.0 < self.tolerance < 1.0:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tolerance}")
        if self.noise not in ("uniform", "exact"):
            raise ValueError(f"unknown noise mode {self.noise!r}")
        if self.distribution.d != self.teacher.d:
            raise ValueError("distribution and teacher dimensions differ")
        if self.distribution.d > ENUMERATION_LIMIT and self.tolerance <= 5e-3:
            raise ValueError(
                f"Monte Carlo truth at d={self.distribution.d} needs tolerance > 5e-3, "
                f"got {self.tolerance}"
            )
        self._rng = np.random.default_rng(self.seed)

    def truth(self, chi) -> float:
        dist = self.distribution
        if isinstance(dist, TwoPoint) or dist.d <= ENUMERATION_LIMIT:
            return _expectation(chi, self.teacher, dist)
        x = dist.sample(MONTE_CARLO_SAMPLES, self._rng)
        return float(np.mean(np.asarray(chi(x, self.teacher(x)), dtype=float)))

    def query(self, chi) -> float:
        value = self.truth(chi)
        self.query_count += 1
        if self.noise == "exact":
            return value
        return value + float(self._rng.uniform(-self.tolerance, self.tolerance))


def sq_query(oracle: SQOracle, chi) -> float:
    """One statistical query; ``chi`` is vectorized over rows of bit vectors."""
    return oracle.query(chi)


def feature_chi(feature: ParitySupport):
    """``chi(x, y) = h(x) * y`` with ``h`` the parity indicator of ``feature``."""
    return lambda x, y: parity_eval(feature, x) * y


def exact_feature_correlation(feature: ParitySupport, support: ParitySupport) -> float:
    """Closed-form ``E[h_A(x) T_S(x)]`` over the uniform cube."""
    if feature.d != support.d:
        raise ValueError("feature and support dimensions differ")
    if not feature.members and not support.members:
        return 1.0
    if feature.members == support.members or not feature.members or not support.members:
        return 0.5
    return 0.25


def brute_force_feature_correlation(feature: ParitySupport, support: ParitySupport) -> float:
    """Same quantity as :func:`exact_feature_correlation`, by enumeration."""
    if feature.d != support.d:
        raise ValueError("feature and support dimensions differ")
    total = 0
    count = 0
    for bits in itertools.product((0, 1), repeat=support.d):
        x = np.array(bits)
        total += parity_eval(feature, x) * parity_eval(support, x)
        count += 1
    return total / count


# ---------------------------------------------------------------------------
# Learners
# ---------------------------------------------------------------------------


class CountingQuery:
    """Wraps a membership query and counts calls."""

    def __init__(self, fn):
        self.fn = fn
        self.count = 0

    def __call__(self, x):
        self.count += 1
        return self.fn(x)


def active_teacher_learn(query: Callable[[np.ndarray], int], d: int) -> ParitySupport:
    """Recover a parity support with exactly ``d + 1`` membership queries.

    Coordinate ``i`` is in the support iff flipping it alone changes the label.
    """
    origin = np.zeros(d, dtype=np.int8)
    base = query(origin)
    members = []
    for i in range(d):
        e = origin.copy()
        e[i] = 1
        if query(e) != base:
            members.append(i + 1)
    return ParitySupport(d, tuple(members))


@dataclass(frozen=True)
class SupportGuess:
    support: ParitySupport

    def predict(self, x):
        return parity_eval(self.support, x)


@dataclass(frozen=True)
class AffineThreshold:
    """Predict 1 iff ``w . x + b >= 1/2``."""

    weights: np.ndarray
    bias: float

    def predict(self, x):
        score = np.asarray(x, dtype=float) @ np.asarray(self.weights, dtype=float) + self.bias
        out = (score >= 0.5).astype(np.int64)
        return int(out) if np.ndim(out) == 0 else out


def _features_up_to(d: int, max_size: int) -> Iterator[ParitySupport]:
    for size in range(1, max_size + 1):
        for combo in itertools.combinations(range(1, d + 1), size):
            yield ParitySupport(d, combo)


def sq_student_learn(oracle: SQOracle, feature_budget: int, max_feature_size: int):
    """Search small parity features by their correlation with the labels.

    The first query estimates ``E[y]`` and fixes the constant-majority
    fallback.  Features of size 1..``max_feature_size`` are then queried in
    lexicographic order (size first) until the budget runs out.  The best
    feature is returned if its correlation exceeds ``0.5 - 3 * tolerance``;
    a wrong feature correlates at 0.25 and a correct one at 0.5.
    """
    if feature_budget < 1:
        raise ValueError(f"feature budget must be at least 1, got {feature_budget}")
    d = oracle.distribution.d
    alpha = oracle.tolerance
    mean_label = sq_query(oracle, lambda x, y: y)
    fallback = AffineThreshold(np.zeros(d), 1.0 if mean_label >= 0.5 else 0.0)

    best, best_score = None, -math.inf
    used = 1
    for feature in _features_up_to(d, max_feature_size):
        if used >= feature_budget:
            break
        score = sq_query(oracle, feature_chi(feature))
        used += 1
        if score > best_score:
            best, best_score = feature, score
    if best is not None and best_score > 0.5 - alpha - 2 * alpha:
        return SupportGuess(best)
    return fallback


def train_linear_on_mu(teacher: ParityTeacher) -> AffineThreshold:
    """Least-squares affine fit to the two labeled points of the clean distribution."""
    d = teacher.d
    x = TwoPoint(d).points().astype(float)
    y = np.asarray(teacher(x), dtype=float)
    design = np.hstack([x, np.ones((2, 1))])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return AffineThreshold(coef[:d], float(coef[d]))
