"""The scalar shuffle-sum protocol: fixed-point local randomizer,
shuffler view, debiasing analyzer, and an exact output-distribution
enumerator used by the privacy acceptance checks.

Each user encodes x in [0, cap] as floor(x*g/cap) + Ber(frac) ones plus
Binomial(b, p) noise ones, padding with zeros to g+b messages. The
shuffled view is equivalent to the total count of one-messages, so the
view is stored as that sufficient statistic; explicit bit multisets
exist only for tiny conformance tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .accountant import FiniteDistribution
from .core import Dataset, DomainError, SeededRng

# Cap on n*(g+b) for the exact convolution enumerator.
MAX_EXACT_SUPPORT = 100_000


@dataclass(frozen=True)
class ScalarSumParams:
    """Fixed-point and noise configuration for the scalar sum.

    ``range_cap`` bounds the inputs, ``grain`` is the fixed-point
    resolution, and each user adds Binomial(noise_trials, noise_prob)
    noise ones. ``epsilon``/``delta`` record the budget the parameters
    were selected for (None when hand-constructed).
    """

    range_cap: float
    grain: int
    noise_trials: int
    noise_prob: float
    n_users: int
    epsilon: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if not (self.range_cap > 0):
            raise DomainError(f"range_cap must be positive, got {self.range_cap}")
        if self.grain < 1:
            raise DomainError(f"grain must be at least 1, got {self.grain}")
        if self.noise_trials < 0:
            raise DomainError(f"noise_trials must be nonnegative, got {self.noise_trials}")
        if not (0 < self.noise_prob < 0.5):
            raise DomainError(f"noise_prob must be in (0, 1/2), got {self.noise_prob}")
        if self.n_users < 1:
            raise DomainError(f"n_users must be at least 1, got {self.n_users}")

    @property
    def messages_per_user(self) -> int:
        return self.grain + self.noise_trials


@dataclass(frozen=True)
class ShuffledView:
    """What the analyzer sees: the count of one-messages among
    ``total_messages`` shuffled bits from ``n_contributors`` users.

    ``bits`` holds the explicit permuted multiset when requested.
    """

    ones_count: int
    total_messages: int
    n_contributors: int
    bits: np.ndarray | None = None

    def __post_init__(self):
        if not (0 <= self.ones_count <= self.total_messages):
            raise DomainError(
                f"ones_count {self.ones_count} outside [0, {self.total_messages}]")
        if self.bits is not None:
            bits = np.asarray(self.bits, dtype=np.uint8)
            if bits.shape != (self.total_messages,) or int(bits.sum()) != self.ones_count:
                raise DomainError("explicit bits disagree with the counts")
            object.__setattr__(self, "bits", bits)


def _fixed_point(x: float, params: ScalarSumParams) -> tuple[int, float]:
    """floor and fractional part of x * g / cap, clipped into [0, g].

    At x == cap the scaled value is exactly g, so the rounding Bernoulli
    is degenerate at zero.
    """
    if not (0.0 <= x <= params.range_cap):
        raise DomainError(f"input {x} outside [0, {params.range_cap}]")
    scaled = min(max(x * params.grain / params.range_cap, 0.0), float(params.grain))
    floor_part = int(math.floor(scaled))
    return floor_part, scaled - floor_part


def randomize_scalar(x: float, params: ScalarSumParams, rng: SeededRng) -> int:
    """Local randomizer: the number of one-messages this user reports.

    Distributed as floor(x*g/cap) + Ber(frac) + Binomial(b, p); the
    remaining g + b - z messages are zeros.
    """
    floor_part, frac = _fixed_point(x, params)
    gen = rng.generator()
    rounding = 1 if gen.random() < frac else 0
    noise = int(gen.binomial(params.noise_trials, params.noise_prob)) if params.noise_trials else 0
    return floor_part + rounding + noise


def shuffle(contributions: Sequence[int], params: ScalarSumParams,
            rng: SeededRng | None = None, explicit: bool = False) -> ShuffledView:
    """Aggregate per-user one-counts into the shuffled view.

    The uniformly permuted bit multiset is a post-processing of the total
    ones count, so by default only the count is materialized. With
    ``explicit=True`` (tiny tests) the permuted bits are produced from
    ``rng``.
    """
    per_user = params.messages_per_user
    counts = [int(z) for z in contributions]
    for z in counts:
        if not (0 <= z <= per_user):
            raise DomainError(f"contribution {z} outside [0, {per_user}]")
    ones = int(sum(counts))
    total = per_user * len(counts)
    bits = None
    if explicit:
        if rng is None:
            raise DomainError("explicit shuffling needs an rng for the permutation")
        bits = np.zeros(total, dtype=np.uint8)
        bits[:ones] = 1
        rng.generator().shuffle(bits)
    return ShuffledView(ones_count=ones, total_messages=total,
                        n_contributors=len(counts), bits=bits)


def analyze_scalar(view: ShuffledView, params: ScalarSumParams) -> float:
    """Debiased sum estimate (cap/g) * (ones_count - p*b*n).

    The participant count comes from the view, so the same analyzer
    serves the all-honest and dropout paths.
    """
    if view.total_messages != params.messages_per_user * view.n_contributors:
        raise DomainError("view message count inconsistent with params")
    centered = view.ones_count - params.noise_prob * params.noise_trials * view.n_contributors
    return params.range_cap / params.grain * centered


def _as_scalar_array(data: Dataset | np.ndarray) -> np.ndarray:
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if points.ndim != 1:
        raise DomainError("scalar sum expects a 1-d dataset")
    return points


def analytic_variance(data: Dataset | np.ndarray, params: ScalarSumParams) -> float:
    """Exact variance of the analyzer output on this dataset:

    (cap/g)^2 * sum_i [ mu_i (1 - mu_i) + b p (1 - p) ]

    where mu_i is the fractional part of x_i * g / cap.
    """
    xs = _as_scalar_array(data)
    fracs = np.array([_fixed_point(float(x), params)[1] for x in xs])
    b, p = params.noise_trials, params.noise_prob
    per_user = fracs * (1.0 - fracs) + b * p * (1.0 - p)
    return (params.range_cap / params.grain) ** 2 * float(np.sum(per_user))


def exact_output_distribution(data: Dataset | np.ndarray,
                              params: ScalarSumParams) -> FiniteDistribution:
    """Exact law of the ones count: the convolution of each user's
    two-point rounding law with their Binomial(b, p) noise.

    Feasible only while n * (g + b) stays within MAX_EXACT_SUPPORT.
    """
    xs = _as_scalar_array(data)
    n = len(xs)
    if n * params.messages_per_user > MAX_EXACT_SUPPORT:
        raise DomainError(
            f"support {n * params.messages_per_user} exceeds {MAX_EXACT_SUPPORT}; "
            "exact enumeration is for tiny instances")
    b, p = params.noise_trials, params.noise_prob
    noise_pmf = np.array([1.0]) if b == 0 else stats.binom.pmf(np.arange(b + 1), b, p)
    offset = 0
    pmf = np.array([1.0])
    for x in xs:
        floor_part, frac = _fixed_point(float(x), params)
        user_pmf = np.convolve(np.array([1.0 - frac, frac]), noise_pmf)
        pmf = np.convolve(pmf, user_pmf)
        offset += floor_part
    pmf = np.clip(pmf, 0.0, None)
    pmf /= pmf.sum()
    support = np.arange(offset, offset + len(pmf))
    return FiniteDistribution(support, pmf)


def simulate_outputs(data: Dataset | np.ndarray, params: ScalarSumParams,
                     rng: SeededRng, trials: int) -> np.ndarray:
    """Monte-Carlo analyzer outputs over independent protocol runs.

    Equivalent in law to running the per-user randomizer for every user:
    the rounding Bernoullis are drawn per user and the binomial noise is
    drawn as its exact n*b-trial aggregate.
    """
    xs = _as_scalar_array(data)
    n = len(xs)
    parts = [_fixed_point(float(x), params) for x in xs]
    floor_total = sum(f for f, _ in parts)
    fracs = np.array([fr for _, fr in parts])
    gen = rng.generator()
    b, p = params.noise_trials, params.noise_prob
    out = np.empty(trials, dtype=np.float64)
    chunk = max(1, min(trials, 20_000_000 // max(n, 1)))
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)
        rounding = (gen.random((size, n)) < fracs).sum(axis=1)
        noise = gen.binomial(n * b, p, size=size) if b else np.zeros(size, dtype=np.int64)
        ones = floor_total + rounding + noise
        out[start:start + size] = params.range_cap / params.grain * (
            ones - p * b * n)
    return out
