"""The private optimizers: mini-batch SGD, accelerated AC-SA, its
Moreau-smoothed variant, the strongly convex phase reduction, fully
interactive gradient descent, and the pan-private AC-SA stream.

Sequential runners consume disjoint consecutive user blocks, so their
privacy certificate is the single-round budget; the fully interactive
runner queries every user each round and composes the per-round budgets.
Zero-noise mode (``noise=False``) is a testing hook: the protocol sum is
replaced by the exact streamed batch mean and, if requested, user blocks
may be recycled so classical full-gradient trajectories can be compared
bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .accountant import (CompositionInput, compose_per_instance,
                         fip_round_budget, vector_sum_params)
from .core import (Dataset, DomainError, ParameterSpace, PrivacyBudget,
                   SeededRng, project_to_ball)
from .losses import LossModel, MoreauEnvelope
from .vector_sum import VectorSumParams, run_vector_sum, worst_case_variance

GRAD_CAP_TOL = 1e-9


class GradientCapError(DomainError):
    """A model produced a gradient larger than its declared Lipschitz
    constant; the run errors rather than clipping, since clipping would
    bias the oracle."""


@dataclass(frozen=True)
class ScheduleACSA:
    """The accelerated schedule: alpha_t = 2/(t+2) and
    L_t = (1/(t+1)) * ((T+2)^{3/2} * sigma / diameter + smoothness).

    ``smoothness`` is the curvature constant the caller wants the steps
    sized for; the optimizers pass twice the loss smoothness (see
    ``effective_smoothness``).
    """

    rounds: int
    sigma: float
    diameter: float
    smoothness: float

    def alpha(self, t: int) -> float:
        return 2.0 / (t + 2.0)

    def step_coefficient(self, t: int) -> float:
        return (1.0 / (t + 1.0)) * (
            (self.rounds + 2.0) ** 1.5 * self.sigma / self.diameter + self.smoothness)


def effective_smoothness(beta: float) -> float:
    # The literal (L_t, alpha_t) pairing allows steps (t+1)/beta, which
    # violates the accelerated method's step condition alpha_t/L_t <= 1/beta
    # by a factor approaching 2 and stalls at O(1/T) even on quadratics.
    # Sizing steps for curvature 2*beta restores the condition (and exact
    # deterministic convergence) while keeping the schedule's shape.
    return 2.0 * beta


@dataclass(frozen=True)
class PrivacyCertificate:
    """Claimed budget plus the per-round budgets and their composition.

    ``mode`` is "disjoint" when rounds touch disjoint users (parallel
    composition: the total is the max round budget) and "composed" when
    every round touches all users (advanced composition).
    """

    claimed_epsilon: float
    claimed_delta: float
    mode: str
    round_epsilon: float
    round_delta: float
    rounds: int
    composed_epsilon: float
    composed_delta: float

    def satisfied(self, tol: float = 1e-9) -> bool:
        return (self.composed_epsilon <= self.claimed_epsilon * (1.0 + tol)
                and self.composed_delta <= self.claimed_delta * (1.0 + tol))


def disjoint_certificate(budget: PrivacyBudget, rounds: int) -> PrivacyCertificate:
    return PrivacyCertificate(
        claimed_epsilon=budget.epsilon, claimed_delta=budget.delta, mode="disjoint",
        round_epsilon=budget.epsilon, round_delta=budget.delta, rounds=rounds,
        composed_epsilon=budget.epsilon, composed_delta=budget.delta)


def composed_certificate(budget: PrivacyBudget, round_budget: PrivacyBudget,
                         rounds: int) -> PrivacyCertificate:
    gamma = budget.delta - rounds * round_budget.delta
    eps, delta = compose_per_instance(CompositionInput(
        per_coordinate=((round_budget.epsilon, round_budget.delta),) * rounds,
        gamma=gamma))
    return PrivacyCertificate(
        claimed_epsilon=budget.epsilon, claimed_delta=budget.delta, mode="composed",
        round_epsilon=round_budget.epsilon, round_delta=round_budget.delta, rounds=rounds,
        composed_epsilon=eps, composed_delta=delta)


@dataclass
class RunReport:
    """Everything a run certifies about itself: the output, the loss
    trajectory at checkpoints, the privacy certificate, and which users
    each round touched."""

    final_theta: np.ndarray
    certificate: PrivacyCertificate
    rounds: int
    batch_size: int
    seed: tuple
    user_rounds: list[tuple[int, int]]
    recycled_users: bool = False
    loss_trajectory: list[tuple[int, float]] = field(default_factory=list)
    final_loss: float | None = None
    warnings: list[str] = field(default_factory=list)
    extras: dict = field(default_factory=dict)


Evaluator = Callable[[np.ndarray], float]


def _stream_mean(grads: np.ndarray, batch: int) -> np.ndarray:
    """Sequentially accumulated batch mean, matching the online update
    gbar <- gbar + grad/b element by element (pan-privacy processes the
    stream this way; zero-noise reductions share it so trajectories agree
    bit for bit)."""
    acc = np.zeros(grads.shape[1])
    for g in grads:
        acc = acc + g / batch
    return acc


def _checked_gradients(loss: LossModel, theta: np.ndarray, points: np.ndarray,
                       cap: float) -> np.ndarray:
    grads = loss.gradient_batch(theta, points)
    norms = np.linalg.norm(grads, axis=1)
    if norms.size and float(norms.max()) > cap + GRAD_CAP_TOL:
        raise GradientCapError(
            f"gradient norm {norms.max():.12g} exceeds the declared Lipschitz "
            f"constant {cap:.12g}")
    return grads


def _round_blocks(n: int, batch: int, rounds: int, recycle: bool) -> list[np.ndarray]:
    """Index blocks per round: consecutive disjoint blocks, wrapping
    around (testing hook) only when recycling is allowed."""
    blocks = []
    for t in range(rounds):
        start = t * batch
        if start + batch <= n:
            blocks.append(np.arange(start, start + batch))
        elif recycle:
            blocks.append((start + np.arange(batch)) % n)
        else:
            raise DomainError("round allocation exceeds the user pool")
    return blocks


def _resolve_batch(formula_value: float, n: int) -> int:
    """Round the theorem's real-valued batch size and clamp to [1, n/2]."""
    if n < 2:
        raise DomainError(f"need at least 2 users, got {n}")
    b = int(round(formula_value))
    return min(max(1, b), n // 2)


def _record(trajectory, evaluator, t, theta, every):
    if evaluator is not None and (t % every == 0 or t == 1):
        trajectory.append((t, evaluator(theta)))


def sgd_config(n: int, d: int, lipschitz: float, diameter: float,
               budget: PrivacyBudget) -> tuple[int, int, float]:
    """Batch size, round count, and step size of the sequential SGD:
    b = sqrt(d) ln(d/delta) / eps, T = n/b,
    eta = eps b D / (L sqrt(T) (eps b + sqrt(d) L ln(d/delta)))."""
    log_term = math.log(d / budget.delta)
    batch = _resolve_batch(math.sqrt(d) * log_term / budget.epsilon, n)
    rounds = n // batch
    eta = (budget.epsilon * batch * diameter) / (
        lipschitz * math.sqrt(rounds)
        * (budget.epsilon * batch + math.sqrt(d) * lipschitz * log_term))
    return batch, rounds, eta


def run_sgd(loss: LossModel, data: Dataset, budget: PrivacyBudget,
            space: ParameterSpace, rng: SeededRng, noise: bool = True,
            evaluator: Evaluator | None = None, theta0: np.ndarray | None = None,
            batch: int | None = None, rounds: int | None = None) -> RunReport:
    """Sequentially interactive mini-batch SGD.

    Each round queries a fresh disjoint block of users through the vector
    sum protocol at the full budget, averages, steps, and projects; the
    output is the average of the first T iterates. Disjoint blocks make
    the total budget equal the round budget.
    """
    n, d = data.n, space.dimension
    cap = loss.lipschitz
    auto_batch, _, eta = sgd_config(n, d, cap, space.diameter, budget)
    batch = auto_batch if batch is None else batch
    rounds = n // batch if rounds is None else rounds
    if noise and n < 2 * batch:
        raise DomainError(f"n={n} users cannot fill two rounds of batch {batch}")
    params = vector_sum_params(batch, d, cap, budget) if noise else None
    blocks = _round_blocks(n, batch, rounds, recycle=not noise)

    theta = space.center.copy() if theta0 is None else project_to_ball(theta0, space)
    iterates_sum = np.zeros(d)
    trajectory: list[tuple[int, float]] = []
    every = max(1, rounds // 50)
    for t in range(1, rounds + 1):
        iterates_sum += theta
        grads = _checked_gradients(loss, theta, data.points[blocks[t - 1]], cap)
        if noise:
            gbar = run_vector_sum(grads, params, rng.child(t)) / batch
        else:
            gbar = _stream_mean(grads, batch)
        theta = project_to_ball(theta - eta * gbar, space)
        _record(trajectory, evaluator, t, theta, every)
    final = iterates_sum / rounds

    report = RunReport(
        final_theta=final,
        certificate=disjoint_certificate(budget, rounds),
        rounds=rounds, batch_size=batch, seed=(rng.seed, rng.path),
        user_rounds=[(int(b[0]), int(b[-1]) + 1) for b in blocks],
        recycled_users=not noise and rounds * batch > n,
        loss_trajectory=trajectory,
        final_loss=evaluator(final) if evaluator is not None else None,
        extras={"eta": eta})
    return report


def acsa_config(n: int, d: int, lipschitz: float, diameter: float, beta: float,
                budget: PrivacyBudget) -> int:
    """The accelerated runner's batch size:
    b = n^{3/5} d^{1/5} L^{2/5} ln^{2/5}(d/delta) / (eps^{2/5} beta^{2/5} D^{2/5})."""
    log_term = math.log(d / budget.delta)
    value = (n ** 0.6 * d ** 0.2 * lipschitz ** 0.4 * log_term ** 0.4
             / (budget.epsilon ** 0.4 * beta ** 0.4 * diameter ** 0.4))
    return _resolve_batch(value, n)


def run_acsa(loss: LossModel, data: Dataset, budget: PrivacyBudget,
             space: ParameterSpace, rng: SeededRng, noise: bool = True,
             evaluator: Evaluator | None = None, theta0: np.ndarray | None = None,
             batch: int | None = None, rounds: int | None = None) -> RunReport:
    """Sequentially interactive accelerated AC-SA for smooth losses.

    The inner argmin over the ball is the closed-form projected step
    theta - gbar/L_t around the non-aggregated iterate; the output is the
    final aggregated iterate.
    """
    if loss.smoothness is None:
        raise DomainError("AC-SA requires a smoothness constant on the loss")
    n, d = data.n, space.dimension
    cap = loss.lipschitz
    batch = acsa_config(n, d, cap, space.diameter, loss.smoothness, budget) \
        if batch is None else batch
    rounds = n // batch if rounds is None else rounds
    if noise and n < 2 * batch:
        raise DomainError(f"n={n} users cannot fill two rounds of batch {batch}")
    params = vector_sum_params(batch, d, cap, budget) if noise else None
    sigma = math.sqrt(cap ** 2 / batch + worst_case_variance(params) / batch ** 2) \
        if noise else 0.0
    schedule = ScheduleACSA(rounds=rounds, sigma=sigma, diameter=space.diameter,
                            smoothness=effective_smoothness(loss.smoothness))
    blocks = _round_blocks(n, batch, rounds, recycle=not noise)

    theta = space.center.copy() if theta0 is None else project_to_ball(theta0, space)
    ag = theta.copy()
    trajectory: list[tuple[int, float]] = []
    every = max(1, rounds // 50)
    for t in range(1, rounds + 1):
        alpha = schedule.alpha(t)
        md = alpha * theta + (1.0 - alpha) * ag
        grads = _checked_gradients(loss, md, data.points[blocks[t - 1]], cap)
        if noise:
            gbar = run_vector_sum(grads, params, rng.child(t)) / batch
        else:
            gbar = _stream_mean(grads, batch)
        theta = project_to_ball(theta - gbar / schedule.step_coefficient(t), space)
        ag = alpha * theta + (1.0 - alpha) * ag
        _record(trajectory, evaluator, t, ag, every)

    report = RunReport(
        final_theta=ag,
        certificate=disjoint_certificate(budget, rounds),
        rounds=rounds, batch_size=batch, seed=(rng.seed, rng.path),
        user_rounds=[(int(b[0]), int(b[-1]) + 1) for b in blocks],
        recycled_users=not noise and rounds * batch > n,
        loss_trajectory=trajectory,
        final_loss=evaluator(ag) if evaluator is not None else None,
        extras={"sigma": sigma, "schedule": schedule})
    return report


def smoothing_beta(n: int, d: int, lipschitz: float, diameter: float,
                   budget: PrivacyBudget) -> float:
    """Envelope parameter for the smoothed sequential runner:
    beta = eps^{2/3} n^{2/3} L / (d^{1/3} D ln^{2/3}(d/delta))."""
    return (budget.epsilon ** (2.0 / 3.0) * n ** (2.0 / 3.0) * lipschitz
            / (d ** (1.0 / 3.0) * diameter * math.log(d / budget.delta) ** (2.0 / 3.0)))


def run_smoothed_acsa(loss: LossModel, data: Dataset, budget: PrivacyBudget,
                      space: ParameterSpace, rng: SeededRng, noise: bool = True,
                      evaluator: Evaluator | None = None,
                      theta0: np.ndarray | None = None,
                      beta_env: float | None = None, batch: int | None = None,
                      rounds: int | None = None) -> RunReport:
    """Non-smooth losses: wrap in the Moreau envelope (gradient cap 2L)
    and run AC-SA on the envelope. The report records the true loss of
    the output next to the envelope loss the run optimized."""
    n, d = data.n, space.dimension
    if beta_env is None:
        beta_env = smoothing_beta(n, d, loss.lipschitz, space.diameter, budget)
    env = MoreauEnvelope(base=loss, beta=beta_env, space=space)
    report = run_acsa(env, data, budget, space, rng, noise=noise,
                      evaluator=evaluator, theta0=theta0,
                      batch=batch, rounds=rounds)
    report.extras["envelope_beta"] = beta_env
    report.extras["envelope_loss"] = env.mean_loss(report.final_theta, data.points)
    report.extras["true_loss"] = loss.mean_loss(report.final_theta, data.points)
    return report


def phase_count(n: int) -> int:
    """Number of phases of the strongly convex reduction: a concrete
    ceil(log2 log2 n) for the analysis's O(log log n)."""
    return max(1, math.ceil(math.log2(math.log2(max(n, 4)))))


def run_strongly_convex(loss: LossModel, data: Dataset, budget: PrivacyBudget,
                        space: ParameterSpace, rng: SeededRng, smooth: bool = False,
                        noise: bool = True, evaluator: Evaluator | None = None,
                        theta0: np.ndarray | None = None) -> RunReport:
    """Phase reduction for strongly convex losses: split users into
    ceil(log2 log2 n) disjoint groups and run the convex routine on each,
    warm-started from the previous phase's output over the full ball.

    Warm starts preserve the analysis's distance contraction without
    shrinking the domain; the per-phase losses are logged so the
    contraction is observable.
    """
    if loss.strong_convexity is None:
        raise DomainError("the phase reduction requires a strong convexity constant")
    n = data.n
    k = phase_count(n)
    if n < 2 * k:
        raise DomainError(f"n={n} users cannot fill {k} phases")
    sizes = [n // k + (1 if j < n % k else 0) for j in range(k)]
    starts = np.cumsum([0] + sizes)

    theta = space.center.copy() if theta0 is None else project_to_ball(theta0, space)
    phase_reports: list[RunReport] = []
    phase_losses: list[float] = []
    user_rounds: list[tuple[int, int]] = []
    runner = run_acsa if smooth else run_smoothed_acsa
    for j in range(k):
        group = Dataset(data.points[starts[j]:starts[j + 1]])
        sub = runner(loss, group, budget, space, rng.child(j), noise=noise,
                     evaluator=evaluator, theta0=theta)
        theta = sub.final_theta
        phase_reports.append(sub)
        if evaluator is not None:
            phase_losses.append(evaluator(theta))
        user_rounds.extend([(int(starts[j]) + a, int(starts[j]) + b)
                            for a, b in sub.user_rounds])

    report = RunReport(
        final_theta=theta,
        certificate=disjoint_certificate(budget, k),
        rounds=sum(r.rounds for r in phase_reports),
        batch_size=phase_reports[0].batch_size,
        seed=(rng.seed, rng.path),
        user_rounds=user_rounds,
        recycled_users=any(r.recycled_users for r in phase_reports),
        loss_trajectory=[(j + 1, v) for j, v in enumerate(phase_losses)],
        final_loss=evaluator(theta) if evaluator is not None else None,
        extras={"phases": k, "phase_losses": phase_losses,
                "phase_reports": phase_reports})
    return report


def fip_config(n: int, d: int, lipschitz: float, diameter: float,
               budget: PrivacyBudget) -> tuple[int, bool]:
    """Round count of the fully interactive runner:
    T = min(n, eps^2 n^2 / (d ln^2(n d / delta))), clamped to at least 1.
    Returns (T, clamped)."""
    log_term = math.log(n * d / budget.delta)
    value = min(float(n), budget.epsilon ** 2 * n ** 2 / (d * log_term ** 2))
    rounds = int(math.floor(value))
    return max(1, rounds), rounds < 1


def fip_smoothing_beta(n: int, d: int, lipschitz: float, diameter: float,
                       budget: PrivacyBudget) -> float:
    """Envelope parameter of the fully interactive runner:
    beta = (L/D) min(sqrt(n), eps n / (sqrt(d) ln^{3/2}(n d / delta)))."""
    log_term = math.log(n * d / budget.delta)
    return lipschitz / diameter * min(
        math.sqrt(n), budget.epsilon * n / (math.sqrt(d) * log_term ** 1.5))


def run_fip_gd(loss: LossModel, data: Dataset, budget: PrivacyBudget,
               space: ParameterSpace, rng: SeededRng, noise: bool = True,
               evaluator: Evaluator | None = None, theta0: np.ndarray | None = None,
               rounds: int | None = None, strongly_convex: bool = False) -> RunReport:
    """Fully interactive gradient descent: every round queries all n
    users through the vector sum at the per-round budget
    (eps/(2 sqrt(2 T ln(1/delta))), delta/(T+1)); the certificate
    composes the T rounds and must land at or below the claimed budget.

    Non-smooth losses are smoothed internally by the Moreau envelope.
    With ``strongly_convex`` the FKT phase reduction applies the runner
    to ceil(log2 log2 n) disjoint user groups in sequence.
    """
    if strongly_convex:
        return _run_fip_strongly_convex(loss, data, budget, space, rng, noise,
                                        evaluator, theta0)
    n, d = data.n, space.dimension
    warnings: list[str] = []
    auto_rounds, clamped = fip_config(n, d, loss.lipschitz, space.diameter, budget)
    if clamped:
        warnings.append("round formula fell below 1; clamped to a single round")
    rounds = auto_rounds if rounds is None else rounds

    working = loss
    if loss.smoothness is None:
        beta_env = fip_smoothing_beta(n, d, loss.lipschitz, space.diameter, budget)
        working = MoreauEnvelope(base=loss, beta=beta_env, space=space)
    cap = working.lipschitz
    eta = space.diameter / (cap * math.sqrt(rounds))
    if eta > 2.0 / working.smoothness:
        # Stability condition of the generalization bound; a smaller step
        # is always admissible.
        eta = 2.0 / working.smoothness
        warnings.append("step capped at 2/beta")

    round_budget = fip_round_budget(budget, rounds)
    params = vector_sum_params(n, d, cap, round_budget) if noise else None

    theta = space.center.copy() if theta0 is None else project_to_ball(theta0, space)
    iterates_sum = np.zeros(d)
    trajectory: list[tuple[int, float]] = []
    every = max(1, rounds // 50)
    for t in range(1, rounds + 1):
        iterates_sum += theta
        grads = _checked_gradients(working, theta, data.points, cap)
        if noise:
            gbar = run_vector_sum(grads, params, rng.child(t)) / n
        else:
            gbar = _stream_mean(grads, n)
        theta = project_to_ball(theta - eta * gbar, space)
        _record(trajectory, evaluator, t, theta, every)
    final = iterates_sum / rounds

    report = RunReport(
        final_theta=final,
        certificate=composed_certificate(budget, round_budget, rounds),
        rounds=rounds, batch_size=n, seed=(rng.seed, rng.path),
        user_rounds=[(0, n)] * rounds,
        loss_trajectory=trajectory,
        final_loss=evaluator(final) if evaluator is not None else None,
        warnings=warnings,
        extras={"eta": eta,
                "envelope_beta": getattr(working, "beta", None)})
    return report


def _run_fip_strongly_convex(loss, data, budget, space, rng, noise, evaluator, theta0):
    if loss.strong_convexity is None:
        raise DomainError("the phase reduction requires a strong convexity constant")
    n = data.n
    k = phase_count(n)
    if n < 2 * k:
        raise DomainError(f"n={n} users cannot fill {k} phases")
    sizes = [n // k + (1 if j < n % k else 0) for j in range(k)]
    starts = np.cumsum([0] + sizes)
    theta = space.center.copy() if theta0 is None else project_to_ball(theta0, space)
    phase_losses: list[float] = []
    phase_reports: list[RunReport] = []
    for j in range(k):
        group = Dataset(data.points[starts[j]:starts[j + 1]])
        sub = run_fip_gd(loss, group, budget, space, rng.child(j), noise=noise,
                         evaluator=evaluator, theta0=theta)
        theta = sub.final_theta
        phase_reports.append(sub)
        if evaluator is not None:
            phase_losses.append(evaluator(theta))
    report = RunReport(
        final_theta=theta,
        certificate=disjoint_certificate(budget, k),
        rounds=sum(r.rounds for r in phase_reports),
        batch_size=max(sizes), seed=(rng.seed, rng.path),
        user_rounds=[(int(starts[j]), int(starts[j + 1])) for j in range(k)],
        loss_trajectory=[(j + 1, v) for j, v in enumerate(phase_losses)],
        final_loss=evaluator(theta) if evaluator is not None else None,
        extras={"phases": k, "phase_losses": phase_losses,
                "phase_reports": phase_reports})
    return report


def pan_noise_scale(lipschitz: float, batch: int, budget: PrivacyBudget) -> float:
    """Per-coordinate Gaussian variance of the pan-private stream:
    zeta^2 = 8 L^2 ln(2/delta) / (b^2 eps^2)."""
    return 8.0 * lipschitz ** 2 * math.log(2.0 / budget.delta) / (
        batch ** 2 * budget.epsilon ** 2)


@dataclass
class PanState:
    """Internal state of the pan-private stream as of one processed
    element: the parameter triple, the gradient accumulator, and exactly
    which of the two per-batch noise draws it contains."""

    batch_index: int
    within_index: int
    theta: np.ndarray
    theta_ag: np.ndarray
    theta_md: np.ndarray
    grad_accum: np.ndarray
    first_noise: np.ndarray | None
    second_noise: np.ndarray | None

    @property
    def has_first_noise(self) -> bool:
        return self.first_noise is not None

    @property
    def has_second_noise(self) -> bool:
        return self.second_noise is not None


def pan_acsa_stream(loss: LossModel, data: Dataset, budget: PrivacyBudget,
                    space: ParameterSpace, rng: SeededRng, batch: int,
                    noise: bool = True, rounds: int | None = None) -> Iterator[PanState]:
    """Online pan-private AC-SA over the data stream.

    Yields the internal state after every processed element: the
    gradient accumulator is seeded with fresh Gaussian noise when a batch
    opens, accumulates grad/b per element, and receives a second
    independent Gaussian plus the parameter updates when the batch
    closes. The state before any data is yielded first.
    """
    if loss.smoothness is None:
        raise DomainError("pan-private AC-SA requires a smoothness constant")
    if noise and not (budget.epsilon < 1.0):
        raise DomainError(f"pan-privacy requires epsilon < 1, got {budget.epsilon}")
    n, d = data.n, space.dimension
    rounds = n // batch if rounds is None else rounds
    zeta_sq = pan_noise_scale(loss.lipschitz, batch, budget) if noise else 0.0
    sigma = math.sqrt(loss.lipschitz ** 2 / batch + 2.0 * d * zeta_sq)
    schedule = ScheduleACSA(rounds=rounds, sigma=sigma, diameter=space.diameter,
                            smoothness=effective_smoothness(loss.smoothness))
    blocks = _round_blocks(n, batch, rounds, recycle=not noise)
    cap = loss.lipschitz

    theta = space.center.copy()
    ag = theta.copy()
    md = theta.copy()
    gbar = np.zeros(d)
    yield PanState(batch_index=0, within_index=0, theta=theta.copy(),
                   theta_ag=ag.copy(), theta_md=md.copy(), grad_accum=gbar.copy(),
                   first_noise=None, second_noise=None)
    for t in range(1, rounds + 1):
        gen = rng.child(t).generator()
        alpha = schedule.alpha(t)
        md = alpha * theta + (1.0 - alpha) * ag
        z_first = gen.normal(0.0, math.sqrt(zeta_sq), size=d) if noise else np.zeros(d)
        gbar = z_first.copy()
        points = data.points[blocks[t - 1]]
        for i in range(batch):
            grad = _checked_gradients(loss, md, points[i:i + 1], cap)[0]
            gbar = gbar + grad / batch
            if i + 1 < batch:
                yield PanState(batch_index=t, within_index=i + 1, theta=theta.copy(),
                               theta_ag=ag.copy(), theta_md=md.copy(),
                               grad_accum=gbar.copy(),
                               first_noise=z_first.copy() if noise else np.zeros(d),
                               second_noise=None)
        z_second = gen.normal(0.0, math.sqrt(zeta_sq), size=d) if noise else np.zeros(d)
        gbar = gbar + z_second
        theta = project_to_ball(theta - gbar / schedule.step_coefficient(t), space)
        ag = alpha * theta + (1.0 - alpha) * ag
        yield PanState(batch_index=t, within_index=batch, theta=theta.copy(),
                       theta_ag=ag.copy(), theta_md=md.copy(), grad_accum=gbar.copy(),
                       first_noise=z_first.copy() if noise else np.zeros(d),
                       second_noise=z_second.copy() if noise else np.zeros(d))


def run_pan_acsa(loss: LossModel, data: Dataset, budget: PrivacyBudget,
                 space: ParameterSpace, rng: SeededRng, batch: int,
                 noise: bool = True, evaluator: Evaluator | None = None,
                 rounds: int | None = None) -> RunReport:
    """Drive the pan-private stream to completion and report the final
    aggregated iterate, exactly as AC-SA would with Gaussian noise in
    place of the shuffle protocol."""
    final_state = None
    trajectory: list[tuple[int, float]] = []
    n = data.n
    total_rounds = n // batch if rounds is None else rounds
    every = max(1, total_rounds // 50)
    for state in pan_acsa_stream(loss, data, budget, space, rng, batch,
                                 noise=noise, rounds=rounds):
        if state.within_index == batch and state.batch_index >= 1:
            _record(trajectory, evaluator, state.batch_index, state.theta_ag, every)
            final_state = state
    if final_state is None:
        raise DomainError("stream too short for a single batch")
    final = final_state.theta_ag
    report = RunReport(
        final_theta=final,
        certificate=disjoint_certificate(budget, total_rounds),
        rounds=total_rounds, batch_size=batch, seed=(rng.seed, rng.path),
        user_rounds=[(t * batch, (t + 1) * batch) for t in range(total_rounds)],
        recycled_users=not noise and total_rounds * batch > n,
        loss_trajectory=trajectory,
        final_loss=evaluator(final) if evaluator is not None else None,
        extras={"zeta_sq": pan_noise_scale(loss.lipschitz, batch, budget)
                if noise else 0.0})
    return report


@dataclass
class GradientOracle:
    """A noisy gradient oracle with its certified moment bounds: the
    second moment of query outputs is at most ``second_moment_bound`` and
    their variance around the population gradient at most
    ``variance_bound``."""

    query: Callable[[np.ndarray, SeededRng], np.ndarray]
    second_moment_bound: float
    variance_bound: float


def shuffle_gradient_oracle(loss: LossModel, space: ParameterSpace, batch: int,
                            budget: PrivacyBudget,
                            sampler: Callable[[SeededRng], np.ndarray]) -> GradientOracle:
    """The oracle every round of the optimizers realizes: sample a fresh
    batch, push the per-point gradients through the vector sum protocol,
    divide by the batch size.

    The variance bound is L^2/b plus the protocol's worst-case analytic
    variance over b^2; the second moment bound replaces L^2/b with L^2.
    """
    cap = loss.lipschitz
    params = vector_sum_params(batch, space.dimension, cap, budget)
    protocol_var = worst_case_variance(params)

    def query(theta: np.ndarray, rng: SeededRng) -> np.ndarray:
        points = sampler(rng.child(0))
        grads = _checked_gradients(loss, theta, points, cap)
        return run_vector_sum(grads, params, rng.child(1)) / batch

    return GradientOracle(
        query=query,
        second_moment_bound=cap ** 2 + protocol_var / batch ** 2,
        variance_bound=cap ** 2 / batch + protocol_var / batch ** 2)
