"""The vector shuffle-sum protocol: shift each coordinate into the
nonnegative range, run one labeled scalar-sum execution per coordinate,
and re-center the analyzer outputs.

A single (grain, trials, prob) configuration is shared by all d
coordinates; the privacy certificate composes the d per-instance
divergence bounds with the advanced-composition slack.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accountant import CompositionInput, compose_per_instance
from .core import Dataset, DomainError, PrivacyBudget, SeededRng
from .scalar_sum import (ScalarSumParams, ShuffledView, _fixed_point,
                         analytic_variance, analyze_scalar, randomize_scalar,
                         simulate_outputs)

NORM_TOL = 1e-9


@dataclass(frozen=True)
class VectorSumParams:
    """Shared per-coordinate configuration plus the split budget.

    The scalar range cap is 2 * l2_cap (shifted coordinates live in
    [0, 2*l2_cap]); delta splits as d * delta_hat + gamma == delta,
    exactly, with gamma stored as the floating-point residual.
    """

    d: int
    l2_cap: float
    n_users: int
    per_coord: ScalarSumParams
    eps_hat: float
    delta_hat: float
    gamma: float
    epsilon: float
    delta: float

    def __post_init__(self):
        if self.d < 1:
            raise DomainError("d must be at least 1")
        if self.per_coord.range_cap != 2.0 * self.l2_cap:
            raise DomainError("per-coordinate range cap must equal 2 * l2_cap")
        if self.d * self.delta_hat + self.gamma != self.delta:
            raise DomainError("delta budget identity d*delta_hat + gamma == delta violated")
        if self.per_coord.grain < max(2.0 * self.l2_cap * np.sqrt(self.n_users),
                                      np.sqrt(self.d), 4.0):
            raise DomainError("grain below max(2*l2_cap*sqrt(n), sqrt(d), 4)")


@dataclass(frozen=True)
class VectorSumReport:
    """One shuffled view per coordinate, in coordinate order; coordinate
    labels are implicit in the position."""

    views: tuple[ShuffledView, ...]

    def __post_init__(self):
        if not self.views:
            raise DomainError("report must contain at least one view")


def _check_norm(x: np.ndarray, params: VectorSumParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.d,):
        raise DomainError(f"vector has shape {x.shape}, expected ({params.d},)")
    norm = float(np.linalg.norm(x))
    if norm > params.l2_cap + NORM_TOL:
        raise DomainError(
            f"l2 norm {norm} exceeds cap {params.l2_cap}; clip before randomizing")
    return x


def randomize_vector(x: np.ndarray, params: VectorSumParams, rng: SeededRng) -> np.ndarray:
    """Per-coordinate one-counts for one user: coordinate j randomizes
    the shifted value x_j + l2_cap on the range [0, 2*l2_cap], using the
    coordinate's own sub-stream."""
    x = _check_norm(x, params)
    return np.array([
        randomize_scalar(float(x[j] + params.l2_cap), params.per_coord, rng.child(j))
        for j in range(params.d)
    ], dtype=np.int64)


def analyze_vector(report: VectorSumReport, params: VectorSumParams) -> np.ndarray:
    """Re-centered per-coordinate sum estimates: the scalar analyzer's
    output minus n * l2_cap on every coordinate."""
    if len(report.views) != params.d:
        raise DomainError(f"report has {len(report.views)} views, expected {params.d}")
    return np.array([
        analyze_scalar(view, params.per_coord) - view.n_contributors * params.l2_cap
        for view in report.views
    ])


def run_vector_sum(points: np.ndarray, params: VectorSumParams, rng: SeededRng) -> np.ndarray:
    """Full protocol round trip on an (n, d) batch, returning the sum
    estimate.

    Samples the sufficient statistic directly: per-user rounding
    Bernoullis plus the exact Binomial(n*b, p) aggregate of the n users'
    noise draws, per coordinate. Identical in law to shuffling the
    per-user message multisets.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != params.d:
        raise DomainError(f"expected an (n, {params.d}) batch, got {points.shape}")
    norms = np.linalg.norm(points, axis=1)
    if norms.size and float(norms.max()) > params.l2_cap + NORM_TOL:
        raise DomainError(
            f"l2 norm {norms.max()} exceeds cap {params.l2_cap}; clip before randomizing")
    n = points.shape[0]
    pc = params.per_coord
    shifted = points + params.l2_cap
    scaled = np.clip(shifted * pc.grain / pc.range_cap, 0.0, float(pc.grain))
    floors = np.floor(scaled)
    fracs = scaled - floors
    gen = rng.generator()
    rounding = (gen.random(points.shape) < fracs).sum(axis=0)
    noise = gen.binomial(n * pc.noise_trials, pc.noise_prob, size=params.d)
    ones = floors.sum(axis=0) + rounding + noise
    centered = ones - pc.noise_prob * pc.noise_trials * n
    return pc.range_cap / pc.grain * centered - n * params.l2_cap


def simulate_estimates(data: Dataset | np.ndarray, params: VectorSumParams,
                       rng: SeededRng, trials: int) -> np.ndarray:
    """Monte-Carlo (trials, d) matrix of protocol sum estimates, one
    independent coordinate stream per coordinate."""
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    n = points.shape[0]
    out = np.empty((trials, params.d))
    for j in range(params.d):
        shifted = points[:, j] + params.l2_cap
        out[:, j] = simulate_outputs(shifted, params.per_coord, rng.child(j),
                                     trials) - n * params.l2_cap
    return out


def analytic_vector_variance(data: Dataset | np.ndarray, params: VectorSumParams) -> float:
    """Exact total output variance: the d-sum of per-coordinate scalar
    variances of the shifted inputs."""
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    return float(sum(
        analytic_variance(points[:, j] + params.l2_cap, params.per_coord)
        for j in range(params.d)))


def worst_case_variance(params: VectorSumParams, n: int | None = None) -> float:
    """Data-independent envelope of the total output variance, taking the
    rounding term at its 1/4 maximum. Used to size optimizer schedules
    before any data is seen."""
    pc = params.per_coord
    n = params.n_users if n is None else n
    per_coord = (pc.range_cap / pc.grain) ** 2 * n * (
        0.25 + pc.noise_trials * pc.noise_prob * (1.0 - pc.noise_prob))
    return params.d * per_coord


def coordinate_gaps(x: Dataset, y: Dataset) -> np.ndarray:
    """Per-coordinate absolute differences of the one differing user in a
    neighbor pair; the zero vector when the datasets are identical."""
    if x.points.shape != y.points.shape:
        raise DomainError(f"shape mismatch: {x.points.shape} vs {y.points.shape}")
    pts_x = np.atleast_2d(x.points)
    pts_y = np.atleast_2d(y.points)
    differing = np.nonzero(np.any(pts_x != pts_y, axis=1))[0]
    if len(differing) > 1:
        raise DomainError(f"datasets differ in {len(differing)} users; neighbors differ in one")
    if len(differing) == 0:
        return np.zeros(pts_x.shape[1])
    u = differing[0]
    return np.abs(pts_x[u] - pts_y[u])


def privacy_certificate(x: Dataset, y: Dataset, params: VectorSumParams) -> PrivacyBudget:
    """Per-instance privacy certificate for a neighbor pair.

    Each coordinate contributes eps_j = eps_hat * (2/g + a_j / (2*l2_cap))
    with a_j the coordinate gap; the certificate is their advanced
    composition at slack gamma. The composed epsilon is guaranteed not to
    exceed the overall budget, and sum eps_j^2 <= 9 eps_hat^2.
    """
    for ds in (x, y):
        if ds.max_l2_norm() > params.l2_cap + NORM_TOL:
            raise DomainError("datasets must satisfy the l2 norm cap")
    gaps = coordinate_gaps(x, y)
    if len(gaps) != params.d:
        raise DomainError(f"datasets have dimension {len(gaps)}, params expect {params.d}")
    eps_j = params.eps_hat * (2.0 / params.per_coord.grain + gaps / (2.0 * params.l2_cap))
    sq = float(np.sum(eps_j ** 2))
    if sq > 9.0 * params.eps_hat ** 2 * (1.0 + 1e-12):
        raise DomainError(
            f"sum of squared per-coordinate epsilons {sq} exceeds 9*eps_hat^2")
    eps_prime, delta_prime = compose_per_instance(CompositionInput(
        per_coordinate=tuple((float(e), params.delta_hat) for e in eps_j),
        gamma=params.gamma))
    if eps_prime > params.epsilon * (1.0 + 1e-12):
        raise DomainError(
            f"composed epsilon {eps_prime} exceeds the overall budget {params.epsilon}")
    return PrivacyBudget(eps_prime, delta_prime)
