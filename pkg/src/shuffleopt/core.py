"""Shared domain types: privacy budgets, ball-shaped parameter spaces,
datasets, and the seeded-randomness contract used by every protocol.

All randomness in the package flows through :class:`SeededRng`; no module
touches the global numpy generator. Two calls with an equal ``SeededRng``
produce bit-identical draws.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Parameter selection for the shuffle-sum protocols is only valid up to
# this epsilon; budgets above it can be constructed but are rejected by
# the selection routines.
MAX_SUM_EPSILON = 15.0


class DomainError(ValueError):
    """A precondition on a domain type or operation was violated."""


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) differential-privacy budget.

    epsilon must be nonnegative (zero only arises as the output of
    per-instance bounds on identical executions; selection operations
    require it strictly positive) and delta must lie in (0, 1/2).
    """

    epsilon: float
    delta: float

    def __post_init__(self):
        if not (self.epsilon >= 0):
            raise DomainError(f"epsilon must be nonnegative, got {self.epsilon}")
        if not (0 < self.delta < 0.5):
            raise DomainError(f"delta must be in (0, 1/2), got {self.delta}")


@dataclass(frozen=True)
class ParameterSpace:
    """A closed Euclidean ball in R^d with closed-form projection.

    The diameter ``2 * radius`` is the quantity every loss guarantee is
    stated in terms of.
    """

    dimension: int
    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        if center.shape != (self.dimension,):
            raise DomainError(
                f"center has shape {center.shape}, expected ({self.dimension},)")
        if not (self.radius > 0):
            raise DomainError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", center)
        center.flags.writeable = False

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def contains(self, theta: np.ndarray, tol: float = 1e-9) -> bool:
        theta = np.asarray(theta, dtype=np.float64)
        return float(np.linalg.norm(theta - self.center)) <= self.radius + tol


def project_to_ball(theta: np.ndarray, space: ParameterSpace) -> np.ndarray:
    """Euclidean projection of ``theta`` onto the ball of ``space``.

    Interior points are returned unchanged; exterior points are pulled to
    the sphere along the ray from the center. Idempotent.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (space.dimension,):
        raise DomainError(
            f"theta has shape {theta.shape}, expected ({space.dimension},)")
    offset = theta - space.center
    dist = float(np.linalg.norm(offset))
    if dist <= space.radius:
        return theta.copy()
    return space.center + offset * (space.radius / dist)


@dataclass(frozen=True)
class Dataset:
    """A list of n user inputs, each a d-vector (or a scalar).

    Scalar datasets are stored with shape (n,); vector datasets with
    shape (n, d). Norm feasibility is checked by the consuming protocol,
    not at construction, so neighbor-pair tests can build both sides.
    """

    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim not in (1, 2):
            raise DomainError(f"points must be 1- or 2-dimensional, got ndim={points.ndim}")
        object.__setattr__(self, "points", points)
        points.flags.writeable = False

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return 1 if self.points.ndim == 1 else self.points.shape[1]

    def max_l2_norm(self) -> float:
        if self.points.ndim == 1:
            return float(np.max(np.abs(self.points))) if self.n else 0.0
        return float(np.max(np.linalg.norm(self.points, axis=1))) if self.n else 0.0


def l2_distance_of_sums(x: Dataset, y: Dataset) -> float:
    """l2 distance between the two dataset sums.

    For neighbor datasets this equals the distance between the two
    differing points, hence is at most twice the norm cap.
    """
    if x.points.shape != y.points.shape:
        raise DomainError(
            f"shape mismatch: {x.points.shape} vs {y.points.shape}")
    return float(np.linalg.norm(np.sum(x.points, axis=0) - np.sum(y.points, axis=0)))


@dataclass(frozen=True)
class SeededRng:
    """Deterministic randomness handle: a 64-bit seed plus a stream path.

    Equal (seed, path) pairs yield bit-identical generators; distinct
    paths yield statistically independent streams. ``child`` derives a
    sub-stream, so loops can hand each (round, user) its own stream
    without sharing generator state across workers.
    """

    seed: int
    path: tuple[int, ...] = field(default=())

    def child(self, *ids: int) -> "SeededRng":
        return SeededRng(self.seed, self.path + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.path))
