"""Teachers with uncertain regions, attack families and robustness evaluators.

A teacher maps a point to a class label or to ``UNCERTAIN``.  Students are
plain callables ``point -> label``.  Robustness is only ever assessed on
points where the teacher is certain.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "UNCERTAIN",
    "CLASS_A",
    "CLASS_B",
    "LinearThreshold",
    "Quadrant",
    "Comparison",
    "ConfidenceWrapped",
    "External",
    "evaluate_teacher",
    "PointList",
    "BooleanCube",
    "Grid",
    "RobustnessReport",
    "LpBall",
    "DensityRatio",
    "FastGradient",
    "Explicit",
    "AttackFamily",
    "Sampler",
    "realize_attack",
    "strong_robustness_check",
    "weak_robustness_estimate",
    "lp_distance",
]


class _Uncertain:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNCERTAIN"

    def __reduce__(self):
        return (_Uncertain, ())


UNCERTAIN = _Uncertain()
CLASS_A = 0
CLASS_B = 1


def _as_point(x, dim: int | None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if dim is not None and (x.ndim != 1 or x.shape[0] != dim):
        raise ValueError(f"expected a point of dimension {dim}, got shape {x.shape}")
    if np.isnan(x).any():
        raise ValueError("point contains NaN coordinates")
    return x


# ---------------------------------------------------------------------------
# Teachers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearThreshold:
    """Class A when ``x[axis] >= hi``, class B when ``x[axis] <= lo``."""

    hi: float
    lo: float
    axis: int = 0
    dim: int | None = None

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got lo={self.lo}, hi={self.hi}")

    def rule(self, x: np.ndarray):
        if x[self.axis] >= self.hi:
            return CLASS_A
        if x[self.axis] <= self.lo:
            return CLASS_B
        return UNCERTAIN


@dataclass(frozen=True)
class Quadrant:
    """Class A in the open second quadrant, class B in the open fourth."""

    dim: int = field(default=2, init=False)

    def rule(self, x: np.ndarray):
        if x[0] < 0 and x[1] > 0:
            return CLASS_A
        if x[0] > 0 and x[1] < 0:
            return CLASS_B
        return UNCERTAIN


@dataclass(frozen=True)
class Comparison:
    """Label -1 when ``x[i] > x[j]`` and +1 otherwise (ties go to +1)."""

    i: int = 0
    j: int = 99
    dim: int | None = None

    def rule(self, x: np.ndarray):
        return -1 if x[self.i] > x[self.j] else 1


@dataclass(frozen=True)
class ConfidenceWrapped:
    """Confidence-thresholded scorer: A above ``hi``, B below ``lo``."""

    scorer: Callable[[np.ndarray], float]
    hi: float = 0.99
    lo: float = 0.01
    dim: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ValueError(f"need 0 <= lo < hi <= 1, got lo={self.lo}, hi={self.hi}")

    def rule(self, x: np.ndarray):
        score = float(self.scorer(x))
        if score > self.hi:
            return CLASS_A
        if score < self.lo:
            return CLASS_B
        return UNCERTAIN


@dataclass(frozen=True)
class External:
    """Teacher whose rule lives elsewhere (parity teacher, shape teacher)."""

    fn: Callable[[np.ndarray], Any]
    dim: int | None = None

    def rule(self, x: np.ndarray):
        return self.fn(x)


Teacher = LinearThreshold | Quadrant | Comparison | ConfidenceWrapped | External


def evaluate_teacher(teacher: Teacher, x) -> Any:
    """Apply ``teacher`` to ``x`` after validating dimension and NaNs."""
    return teacher.rule(_as_point(x, teacher.dim))


# ---------------------------------------------------------------------------
# Robustness reports and domains
# ---------------------------------------------------------------------------


@dataclass
class RobustnessReport:
    n_evaluated: int
    n_certain: int
    n_disagree: int
    counterexamples: list = field(default_factory=list)
    per_distribution: list | None = None
    certified: bool = False
    approximate: bool = False
    estimate_kind: str = "exact"
    n_undefined: int = 0
    zero_gradient_events: int = 0

    @property
    def agreement(self) -> float | None:
        """``1 - n_disagree / n_certain``; None when nothing was certain."""
        if self.per_distribution is not None:
            defined = [a for a in self.per_distribution if a is not None]
            return min(defined) if defined else None
        if self.n_certain == 0:
            return None
        return 1.0 - self.n_disagree / self.n_certain

    @property
    def undefined(self) -> bool:
        return self.agreement is None

    def to_dict(self) -> dict:
        return {
            "n_evaluated": self.n_evaluated,
            "n_certain": self.n_certain,
            "n_disagree": self.n_disagree,
            "agreement": self.agreement,
            "certified": self.certified,
            "approximate": self.approximate,
            "estimate_kind": self.estimate_kind,
            "per_distribution": self.per_distribution,
            "n_undefined": self.n_undefined,
            "zero_gradient_events": self.zero_gradient_events,
            "counterexamples": [
                {"point": np.asarray(p).tolist(), "teacher": _label_json(t), "student": _label_json(s)}
                for p, t, s in self.counterexamples
            ],
        }


def _label_json(label):
    return None if label is UNCERTAIN else label


@dataclass(frozen=True)
class PointList:
    points: Sequence

    exhaustive = True

    def __iter__(self):
        return iter(self.points)


@dataclass(frozen=True)
class BooleanCube:
    """All points of ``{0,1}^d``; enumeration is limited to ``d <= 24``."""

    d: int

    exhaustive = True

    def __post_init__(self):
        if not 1 <= self.d <= 24:
            raise ValueError(f"boolean cube enumeration needs 1 <= d <= 24, got {self.d}")

    def __iter__(self):
        for bits in itertools.product((0.0, 1.0), repeat=self.d):
            yield np.array(bits)


@dataclass(frozen=True)
class Grid:
    """Uniform grid with ``resolution`` points per axis over a box.

    With ``axes`` given, only those coordinates vary and the remaining ones
    are copied from ``base`` (zeros by default).
    """

    lows: Sequence[float]
    highs: Sequence[float]
    resolution: int
    axes: Sequence[int] | None = None
    base: Sequence[float] | None = None

    exhaustive = False

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError(f"grid resolution must be positive, got {self.resolution}")
        if len(self.lows) != len(self.highs):
            raise ValueError("lows and highs differ in length")
        if self.axes is not None and len(self.axes) != len(self.lows):
            raise ValueError("axes and bounds differ in length")

    def __iter__(self):
        ticks = [np.linspace(lo, hi, self.resolution) for lo, hi in zip(self.lows, self.highs)]
        if self.axes is None:
            for coords in itertools.product(*ticks):
                yield np.array(coords)
            return
        base = np.zeros(max(self.axes) + 1) if self.base is None else np.asarray(self.base, dtype=float)
        for coords in itertools.product(*ticks):
            x = base.copy()
            x[list(self.axes)] = coords
            yield x


def _tally(student, teacher, points, cap):
    n_eval = n_certain = n_disagree = 0
    examples = []
    for x in points:
        n_eval += 1
        t = evaluate_teacher(teacher, x)
        if t is UNCERTAIN:
            continue
        n_certain += 1
        s = student(x)
        if s != t:
            n_disagree += 1
            if len(examples) < cap:
                examples.append((np.array(x, dtype=float), t, s))
    return n_eval, n_certain, n_disagree, examples


def strong_robustness_check(student, teacher: Teacher, domain, cap: int = 32) -> RobustnessReport:
    """Compare ``student`` with ``teacher`` on every certain point of ``domain``.

    Finite point lists and boolean cubes are enumerated exhaustively and the
    report is a certificate.  Grids only approximate a continuum, so the
    report is flagged ``approximate``.
    """
    if not isinstance(domain, (PointList, BooleanCube, Grid)):
        domain = PointList(list(domain))
    n_eval, n_certain, n_disagree, examples = _tally(student, teacher, domain, cap)
    exhaustive = domain.exhaustive
    return RobustnessReport(
        n_evaluated=n_eval,
        n_certain=n_certain,
        n_disagree=n_disagree,
        counterexamples=examples,
        certified=exhaustive and n_certain > 0,
        approximate=not exhaustive,
        estimate_kind="exhaustive" if exhaustive else "grid approximation",
    )


# ---------------------------------------------------------------------------
# Attack families
# ---------------------------------------------------------------------------

SampleFn = Callable[[int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class LpBall:
    p: float
    delta: float
    samples_per_point: int = 1

    def __post_init__(self):
        if self.p not in (0, 1, 2, math.inf):
            raise ValueError(f"p must be one of 0, 1, 2, inf; got {self.p}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.samples_per_point < 1:
            raise ValueError("samples_per_point must be at least 1")


@dataclass(frozen=True)
class DensityRatio:
    weight: Callable[[np.ndarray], float]
    c: float

    def __post_init__(self):
        if not 0.0 < self.c <= 1.0:
            raise ValueError(f"c must lie in (0, 1], got {self.c}")


@dataclass(frozen=True)
class FastGradient:
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")


@dataclass(frozen=True)
class Explicit:
    samplers: Sequence[SampleFn]


@dataclass(frozen=True)
class AttackFamily:
    """An attack kind together with the clean sampler ``base`` it acts on.

    Samplers are callables ``(n, rng) -> array of shape (n, d)``.
    """

    kind: LpBall | DensityRatio | FastGradient | Explicit
    base: SampleFn | None = None


class Sampler:
    """A realized adversarial distribution; ``draw(n)`` is reproducible."""

    def __init__(self, fn: SampleFn, seed, name: str = ""):
        self.fn = fn
        self.seed = seed
        self.name = name
        self.zero_gradient_events = 0

    def draw(self, n: int) -> np.ndarray:
        return np.asarray(self.fn(n, np.random.default_rng(self.seed)), dtype=float)

    def __repr__(self):
        return f"Sampler({self.name!r}, seed={self.seed})"


def _lp_offsets(p, delta, n, d, rng):
    radius = rng.uniform(0.0, delta, size=n) if delta > 0 else np.zeros(n)
    if p == 2:
        g = rng.standard_normal((n, d))
        norms = np.linalg.norm(g, axis=1)
        norms[norms == 0] = 1.0
        return g / norms[:, None] * radius[:, None]
    if p == math.inf:
        u = rng.uniform(-1.0, 1.0, size=(n, d))
        scale = np.abs(u).max(axis=1)
        scale[scale == 0] = 1.0
        return u / scale[:, None] * radius[:, None]
    out = np.zeros((n, d))
    if p == 1:
        idx = rng.integers(0, d, size=n)
        signs = rng.choice((-1.0, 1.0), size=n)
        out[np.arange(n), idx] = signs * radius
        return out
    # p == 0: change at most floor(delta) coordinates by arbitrary amounts
    k = min(int(math.floor(delta)), d)
    for row in range(n):
        if k == 0:
            break
        cols = rng.choice(d, size=k, replace=False)
        out[row, cols] = rng.uniform(-1.0, 1.0, size=k)
    return out


def realize_attack(attack: AttackFamily, gradient=None, seed: int = 0) -> list[Sampler]:
    """Turn an attack family into a finite list of reproducible samplers.

    ``gradient`` maps a point to the student's input gradient and is only
    needed for :class:`FastGradient`.
    """
    kind = attack.kind
    base = attack.base

    if isinstance(kind, Explicit):
        if not kind.samplers:
            raise ValueError("explicit attack family is empty")
        return [Sampler(fn, (seed, i), f"explicit[{i}]") for i, fn in enumerate(kind.samplers)]

    if base is None:
        raise ValueError(f"{type(kind).__name__} attack needs a base sampler")

    if isinstance(kind, LpBall):
        def lp_fn(n, rng):
            n_base = -(-n // kind.samples_per_point)
            x = np.asarray(base(n_base, rng), dtype=float)
            x = np.repeat(x, kind.samples_per_point, axis=0)[:n]
            return x + _lp_offsets(kind.p, kind.delta, n, x.shape[1], rng)

        return [Sampler(lp_fn, (seed, 0), f"lp{kind.p}-ball")]

    if isinstance(kind, DensityRatio):
        def ratio_fn(n, rng):
            kept = []
            total = 0
            while total < n:
                x = np.asarray(base(max(n, 16), rng), dtype=float)
                w = np.array([kind.weight(row) for row in x], dtype=float)
                if np.any(w < kind.c) or np.any(w > 1.0 / kind.c):
                    raise ValueError(f"density ratio weight outside [{kind.c}, {1.0 / kind.c}]")
                accept = rng.uniform(size=len(x)) < w * kind.c
                kept.append(x[accept])
                total += int(accept.sum())
            return np.concatenate(kept)[:n]

        return [Sampler(ratio_fn, (seed, 0), "density-ratio")]

    if isinstance(kind, FastGradient):
        if gradient is None:
            raise ValueError("fast gradient attack needs the student's gradient")

        sampler = Sampler(None, (seed, 0), "fast-gradient")

        def fgm_fn(n, rng):
            x = np.asarray(base(n, rng), dtype=float)
            out = x.copy()
            for row in range(n):
                g = np.asarray(gradient(x[row]), dtype=float)
                norm = np.linalg.norm(g)
                if norm == 0:
                    sampler.zero_gradient_events += 1
                    continue
                out[row] = x[row] + kind.delta * g / norm
            return out

        sampler.fn = fgm_fn
        return [sampler]

    raise TypeError(f"unknown attack kind {kind!r}")


def weak_robustness_estimate(
    student,
    teacher: Teacher,
    attack: AttackFamily,
    n_samples: int,
    seed: int = 0,
    gradient=None,
    cap: int = 32,
) -> RobustnessReport:
    """Worst conditional agreement over the realized attack distributions.

    The infimum over the family is replaced by a minimum over the finitely
    many realized samplers, so the value is a finite-family lower-bound
    estimate.  Distributions that never hit the certain region are excluded
    and counted in ``n_undefined``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    samplers = realize_attack(attack, gradient=gradient, seed=seed)
    per = []
    n_eval = n_certain = n_disagree = 0
    examples = []
    for sampler in samplers:
        pts = sampler.draw(n_samples)
        e, c, dis, ex = _tally(student, teacher, pts, cap - len(examples))
        n_eval += e
        n_certain += c
        n_disagree += dis
        examples.extend(ex)
        per.append(None if c == 0 else 1.0 - dis / c)
    return RobustnessReport(
        n_evaluated=n_eval,
        n_certain=n_certain,
        n_disagree=n_disagree,
        counterexamples=examples,
        per_distribution=per,
        approximate=True,
        estimate_kind="finite-family lower-bound estimate",
        n_undefined=sum(a is None for a in per),
        zero_gradient_events=sum(s.zero_gradient_events for s in samplers),
    )


def lp_distance(a, b, p) -> float:
    """l0 (count of differing entries), l1 or l2 distance between arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = (a - b).ravel()
    if p == 0:
        return float(np.count_nonzero(a.ravel() != b.ravel()))
    if p == 1:
        return float(np.abs(diff).sum())
    if p == 2:
        return float(np.sqrt(np.dot(diff, diff)))
    raise ValueError(f"p must be 0, 1 or 2, got {p}")
