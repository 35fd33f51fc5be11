"""Privacy accounting: exact approximate-max-divergence on finite
distributions, the binomial-mechanism bound, parameter selection for the
scalar and vector sum protocols, and the two composition rules.

Everything here is a pure function of its inputs; logs are natural
throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import MAX_SUM_EPSILON, DomainError, PrivacyBudget


@dataclass(frozen=True)
class FiniteDistribution:
    """A probability distribution on a finite set of integers."""

    support: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64)
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if support.shape != probs.shape or support.ndim != 1:
            raise DomainError("support and probabilities must be 1-d arrays of equal length")
        if len(np.unique(support)) != len(support):
            raise DomainError("support points must be distinct")
        if np.any(probs < 0):
            raise DomainError("probabilities must be nonnegative")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise DomainError(f"probabilities sum to {probs.sum()}, expected 1 within 1e-12")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probabilities", probs)
        support.flags.writeable = False
        probs.flags.writeable = False

    def shift(self, offset: int) -> "FiniteDistribution":
        return FiniteDistribution(self.support + int(offset), self.probabilities)

    def mass_of(self, points: np.ndarray) -> float:
        lookup = dict(zip(self.support.tolist(), self.probabilities.tolist()))
        return float(sum(lookup.get(int(z), 0.0) for z in points))


def approx_max_divergence(p: FiniteDistribution, q: FiniteDistribution, delta: float) -> float:
    """Exact delta-approximate max divergence D_inf^delta(P || Q).

    The maximizing event is a superlevel set of the likelihood ratio, so
    it suffices to sort outcomes by P(z)/Q(z) descending and scan prefix
    sets Z with P(Z) >= delta, taking the max of log((P(Z)-delta)/Q(Z)).
    Returns +inf when some feasible prefix has Q(Z) = 0 and P(Z) > delta.
    A dedicated test checks this prefix scan against the exhaustive max
    over all 2^k subsets on small supports.
    """
    if delta < 0:
        raise DomainError(f"delta must be nonnegative, got {delta}")
    # Align supports on the union; missing points carry zero mass. Only
    # points in supp(P) are candidates for the event Z.
    union = np.union1d(p.support, q.support)
    pp = np.zeros(len(union))
    qq = np.zeros(len(union))
    pp[np.searchsorted(union, p.support)] = p.probabilities
    qq[np.searchsorted(union, q.support)] = q.probabilities
    in_supp = pp > 0
    pp, qq = pp[in_supp], qq[in_supp]
    if len(pp) == 0:
        return float("-inf")

    # Sort by likelihood ratio descending; Q = 0 points have ratio +inf.
    with np.errstate(divide="ignore"):
        ratio = np.where(qq > 0, pp / np.where(qq > 0, qq, 1.0), np.inf)
    order = np.argsort(-ratio, kind="stable")
    cum_p = np.cumsum(pp[order])
    cum_q = np.cumsum(qq[order])

    feasible = cum_p >= delta
    if not np.any(feasible):
        return float("-inf")
    excess = cum_p[feasible] - delta
    denom = cum_q[feasible]
    if np.any((denom == 0) & (excess > 0)):
        return float("inf")
    best = float("-inf")
    with np.errstate(divide="ignore"):
        vals = np.where(
            excess > 0,
            np.log(np.where(excess > 0, excess, 1.0)) - np.log(np.where(denom > 0, denom, 1.0)),
            float("-inf"),
        )
    if len(vals):
        best = float(np.max(vals))
    return best


def binomial_pmf(m: int, prob: float, tail_mass: float = 1e-15):
    """Binomial(m, prob) restricted to the support carrying all but
    ``tail_mass`` of the probability.

    Returns (FiniteDistribution, dropped) where ``dropped`` is the mass
    outside the kept window; callers fold it into delta conservatively.
    """
    ks = np.arange(m + 1)
    pmf = stats.binom.pmf(ks, m, prob)
    if m > 200:
        cdf = np.cumsum(pmf)
        lo = int(np.searchsorted(cdf, tail_mass / 2))
        hi = int(np.searchsorted(cdf, 1.0 - tail_mass / 2))
        hi = min(hi + 1, m)
        ks, pmf = ks[lo:hi + 1], pmf[lo:hi + 1]
    dropped = max(0.0, 1.0 - float(pmf.sum()))
    total = float(pmf.sum())
    return FiniteDistribution(ks, pmf / total), dropped


@dataclass(frozen=True)
class BinomialMechBound:
    """Configuration for the per-instance binomial-mechanism bound.

    ``m`` noise trials at probability ``p`` mask an integer statistic
    whose value differs by ``shift`` (at most ``t``) across the two
    inputs; ``alpha`` trades epsilon against delta and must satisfy
    alpha * m * p >= 2 * t.
    """

    m: int
    p: float
    t: int
    alpha: float
    shift: int

    def __post_init__(self):
        if self.m < 1:
            raise DomainError("m must be a positive integer")
        if not (0 < self.p <= 0.5):
            raise DomainError(f"p must be in (0, 1/2], got {self.p}")
        if self.t < 0:
            raise DomainError("t must be nonnegative")
        if not (0 < self.alpha < 1):
            raise DomainError(f"alpha must be in (0, 1), got {self.alpha}")
        if abs(self.shift) > self.t:
            raise DomainError(f"|shift|={abs(self.shift)} exceeds sensitivity cap t={self.t}")
        if self.alpha * self.m * self.p < 2 * self.t:
            raise DomainError(
                f"alpha*m*p = {self.alpha * self.m * self.p:.6g} < 2t = {2 * self.t}")


def binomial_mech_bound(b: BinomialMechBound) -> PrivacyBudget:
    """(epsilon, delta) masking guarantee of Binomial(m, p) noise.

    epsilon = |shift| * ln((1+alpha)/(1-alpha)) and
    delta = 2 * exp(-alpha^2 * m * p / 10).
    """
    eps = abs(b.shift) * math.log((1.0 + b.alpha) / (1.0 - b.alpha))
    delta = 2.0 * math.exp(-b.alpha ** 2 * b.m * b.p / 10.0)
    return PrivacyBudget(eps, delta)


def select_noise_trials(g: int, n: int, epsilon: float, delta: float) -> tuple[int, float]:
    """Minimal (b, p) satisfying the scalar-sum noise lower bounds for a
    given grain g: b strictly exceeds 180 g^2 ln(2/delta) / (eps^2 n) and
    p = 90 g^2 ln(2/delta) / (b eps^2 n) < 1/2 follows.
    """
    bound = 180.0 * g * g * math.log(2.0 / delta) / (epsilon ** 2 * n)
    b = int(math.floor(bound)) + 1
    p = 90.0 * g * g * math.log(2.0 / delta) / (b * epsilon ** 2 * n)
    return b, p


def scalar_sum_params(n: int, range_cap: float, budget: PrivacyBudget):
    """Protocol parameters for summing n scalars in [0, range_cap].

    Picks the minimal grain g >= range_cap * sqrt(n) and the minimal
    noise-trial count b exceeding its lower bound; minimality keeps the
    per-user message count g + b as small as the analysis allows.
    """
    from .scalar_sum import ScalarSumParams  # local import breaks the cycle

    if not (0 < budget.epsilon <= MAX_SUM_EPSILON):
        raise DomainError(
            f"shuffle-sum selection requires 0 < epsilon <= {MAX_SUM_EPSILON}, "
            f"got {budget.epsilon}")
    if n < 1:
        raise DomainError("n must be at least 1")
    if not (range_cap > 0):
        raise DomainError("range_cap must be positive")
    g = int(math.ceil(range_cap * math.sqrt(n)))
    b, p = select_noise_trials(g, n, budget.epsilon, budget.delta)
    return ScalarSumParams(
        range_cap=range_cap, grain=g, noise_trials=b, noise_prob=p, n_users=n,
        epsilon=budget.epsilon, delta=budget.delta)


def vector_sum_params(n: int, d: int, l2_cap: float, budget: PrivacyBudget):
    """Per-coordinate parameters for summing n vectors of l2 norm at most
    l2_cap, splitting the (epsilon, delta) budget across d coordinates.

    The grain is g = ceil(max(2*l2_cap*sqrt(n), sqrt(d), 4)); each
    coordinate runs the scalar protocol on the shifted range [0, 2*l2_cap]
    at budget (eps_hat, delta_hat) with eps_hat = eps / (18 sqrt(ln(1/gamma)))
    and delta_hat = delta / (d+1). gamma is stored as the floating-point
    residual delta - d*delta_hat so the budget identity
    d*delta_hat + gamma == delta holds exactly.
    """
    from .scalar_sum import ScalarSumParams
    from .vector_sum import VectorSumParams

    if not (0 < budget.epsilon <= MAX_SUM_EPSILON):
        raise DomainError(
            f"shuffle-sum selection requires 0 < epsilon <= {MAX_SUM_EPSILON}, "
            f"got {budget.epsilon}")
    if n < 1 or d < 1:
        raise DomainError("n and d must be at least 1")
    if not (l2_cap > 0):
        raise DomainError("l2_cap must be positive")
    delta_hat = budget.delta / (d + 1)
    gamma = budget.delta - d * delta_hat
    eps_hat = budget.epsilon / (18.0 * math.sqrt(math.log(1.0 / gamma)))
    g = int(math.ceil(max(2.0 * l2_cap * math.sqrt(n), math.sqrt(d), 4.0)))
    b, p = select_noise_trials(g, n, eps_hat, delta_hat)
    per_coord = ScalarSumParams(
        range_cap=2.0 * l2_cap, grain=g, noise_trials=b, noise_prob=p, n_users=n,
        epsilon=eps_hat, delta=delta_hat)
    return VectorSumParams(
        d=d, l2_cap=l2_cap, n_users=n, per_coord=per_coord,
        eps_hat=eps_hat, delta_hat=delta_hat, gamma=gamma,
        epsilon=budget.epsilon, delta=budget.delta)


def robust_scalar_sum_bound(params, gamma_honest: float, gap: float) -> float:
    """Divergence bound for the scalar sum when only a gamma_honest
    fraction of users follow the protocol: (eps/gamma) * (2/g + gap/cap).

    Requires the robustness claim's preconditions: gamma_honest >= 1/3,
    grain >= 3, and selection epsilon <= 1.
    """
    if not (1.0 / 3.0 <= gamma_honest <= 1.0):
        raise DomainError(f"gamma_honest must be in [1/3, 1], got {gamma_honest}")
    if params.grain < 3:
        raise DomainError(f"robust bound requires grain >= 3, got {params.grain}")
    if params.epsilon is None:
        raise DomainError("params carry no selection budget; build them via scalar_sum_params")
    if params.epsilon > 1.0:
        raise DomainError(
            f"robust bound requires selection epsilon <= 1, got {params.epsilon}")
    return (params.epsilon / gamma_honest) * (2.0 / params.grain + gap / params.range_cap)


@dataclass(frozen=True)
class CompositionInput:
    """Per-coordinate (epsilon_j, delta_j) divergence bounds plus the
    slack gamma spent on the union bound."""

    per_coordinate: tuple[tuple[float, float], ...]
    gamma: float

    def __post_init__(self):
        per = tuple((float(e), float(d)) for e, d in self.per_coordinate)
        if any(e < 0 for e, _ in per):
            raise DomainError("all epsilon_j must be nonnegative")
        if any(not (0 <= d < 1) for _, d in per):
            raise DomainError("all delta_j must lie in [0, 1)")
        if not (0 < self.gamma < 1):
            raise DomainError(f"gamma must be in (0, 1), got {self.gamma}")
        object.__setattr__(self, "per_coordinate", per)


def compose_per_instance(inputs: CompositionInput) -> tuple[float, float]:
    """Advanced composition of per-coordinate divergence bounds:

    eps' = sum_j eps_j (e^{eps_j} - 1) + 2 sqrt(ln(1/gamma) sum_j eps_j^2)
    delta' = sum_j delta_j + gamma
    """
    eps = np.array([e for e, _ in inputs.per_coordinate])
    deltas = [d for _, d in inputs.per_coordinate]
    eps_prime = float(np.sum(eps * np.expm1(eps))) + 2.0 * math.sqrt(
        math.log(1.0 / inputs.gamma) * float(np.sum(eps ** 2)))
    delta_prime = float(sum(deltas)) + inputs.gamma
    return eps_prime, delta_prime


def fip_round_budget(total: PrivacyBudget, rounds: int) -> PrivacyBudget:
    """Per-round budget for a T-round fully interactive run:
    (eps / (2 sqrt(2 T ln(1/delta))), delta / (T+1)).

    The epsilon split satisfies T * eps_round^2 * 8 * ln(1/delta) = eps^2.
    """
    if rounds < 1:
        raise DomainError(f"rounds must be at least 1, got {rounds}")
    eps_round = total.epsilon / (2.0 * math.sqrt(2.0 * rounds * math.log(1.0 / total.delta)))
    return PrivacyBudget(eps_round, total.delta / (rounds + 1))
