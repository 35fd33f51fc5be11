"""Loss models with declared constants, proximal operators, the Moreau
envelope, and synthetic data generation for the experiments.

A loss model evaluates l(theta, x) and its (sub)gradient for a single
datum, and declares the Lipschitz constant L (a hard contract: the
optimizers pass gradients to the sum protocol with l2 cap L), plus
optional smoothness and strong-convexity constants. Labeled losses store
each datum as a (d+1)-vector whose last entry is the +-1 label.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, ParameterSpace, SeededRng, project_to_ball

PROX_MAX_ITER = 500
PROX_TOL = 1e-8


class ProxSolveError(RuntimeError):
    """The inner prox solve hit its iteration cap before reaching the
    step-norm tolerance; ``best_iterate`` is the lowest-objective point
    seen."""

    def __init__(self, message: str, best_iterate: np.ndarray):
        super().__init__(message)
        self.best_iterate = best_iterate


class LossModel:
    """Base class; subclasses set the constants and the per-datum math."""

    lipschitz: float
    smoothness: float | None = None
    strong_convexity: float | None = None
    # True when the unconstrained prox objective has spherical level sets,
    # so projecting the closed-form minimizer onto the ball is exact.
    projection_exact: bool = False

    def evaluate(self, theta: np.ndarray, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def prox_candidate(self, theta: np.ndarray, x: np.ndarray, scale: float):
        """Unconstrained minimizer of scale*l(u, x) + 0.5*||u - theta||^2
        when a closed form exists, else None."""
        return None

    def gradient_batch(self, theta: np.ndarray, points: np.ndarray) -> np.ndarray:
        return np.stack([self.gradient(theta, x) for x in points])

    def mean_loss(self, theta: np.ndarray, points: np.ndarray) -> float:
        return float(np.mean([self.evaluate(theta, x) for x in points]))


@dataclass
class QuadraticLoss(LossModel):
    """l(theta, x) = 0.5 * ||theta - x||^2 on a ball of the given diameter
    containing data of norm at most data_radius. L = diameter +
    data_radius, smoothness 1, strong convexity 1."""

    diameter: float
    data_radius: float

    def __post_init__(self):
        self.lipschitz = self.diameter + self.data_radius
        self.smoothness = 1.0
        self.strong_convexity = 1.0
        self.projection_exact = True

    def evaluate(self, theta, x):
        diff = np.asarray(theta) - np.asarray(x)
        return 0.5 * float(diff @ diff)

    def gradient(self, theta, x):
        return np.asarray(theta, dtype=np.float64) - np.asarray(x, dtype=np.float64)

    def gradient_batch(self, theta, points):
        return np.asarray(theta)[None, :] - np.asarray(points, dtype=np.float64)

    def mean_loss(self, theta, points):
        diffs = np.asarray(theta)[None, :] - np.asarray(points, dtype=np.float64)
        return 0.5 * float(np.mean(np.sum(diffs ** 2, axis=1)))

    def prox_candidate(self, theta, x, scale):
        return (np.asarray(theta) + scale * np.asarray(x)) / (1.0 + scale)

    def prox_batch(self, theta, points, scale):
        return (np.asarray(theta)[None, :] + scale * np.asarray(points)) / (1.0 + scale)


@dataclass
class AbsoluteLoss(LossModel):
    """l(theta, x) = ||theta - x||_2 (the absolute loss at d = 1, whose
    population minimizer is the median). Non-smooth; prox shrinks theta
    toward x by at most the prox scale."""

    def __post_init__(self):
        self.lipschitz = 1.0

    def evaluate(self, theta, x):
        return float(np.linalg.norm(np.asarray(theta) - np.asarray(x)))

    def gradient(self, theta, x):
        diff = np.asarray(theta, dtype=np.float64) - np.asarray(x, dtype=np.float64)
        dist = float(np.linalg.norm(diff))
        if dist == 0.0:
            return np.zeros_like(diff)
        return diff / dist

    def gradient_batch(self, theta, points):
        diffs = np.asarray(theta)[None, :] - np.asarray(points, dtype=np.float64)
        dists = np.linalg.norm(diffs, axis=1)
        safe = np.where(dists > 0, dists, 1.0)
        return diffs / safe[:, None]

    def mean_loss(self, theta, points):
        diffs = np.asarray(theta)[None, :] - np.asarray(points, dtype=np.float64)
        return float(np.mean(np.linalg.norm(diffs, axis=1)))

    def prox_candidate(self, theta, x, scale):
        theta = np.asarray(theta, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        diff = theta - x
        dist = float(np.linalg.norm(diff))
        if dist <= scale:
            return x.copy()
        return theta - diff * (scale / dist)

    def prox_batch(self, theta, points, scale):
        diffs = np.asarray(theta)[None, :] - np.asarray(points, dtype=np.float64)
        dists = np.linalg.norm(diffs, axis=1)
        shrink = np.minimum(scale, dists) / np.where(dists > 0, dists, 1.0)
        return np.asarray(theta)[None, :] - diffs * shrink[:, None]


def _split_labeled(x: np.ndarray) -> tuple[np.ndarray, float]:
    x = np.asarray(x, dtype=np.float64)
    return x[:-1], float(x[-1])


@dataclass
class LogisticLoss(LossModel):
    """l(theta, (a, y)) = log(1 + exp(-y <theta, a>)) with ||a|| <= 1.
    L = 1, smoothness 1/4."""

    def __post_init__(self):
        self.lipschitz = 1.0
        self.smoothness = 0.25

    def evaluate(self, theta, x):
        a, y = _split_labeled(x)
        margin = y * float(np.dot(theta, a))
        # log(1 + e^{-m}) computed stably for both signs of m
        return float(np.logaddexp(0.0, -margin))

    def gradient(self, theta, x):
        a, y = _split_labeled(x)
        margin = y * float(np.dot(theta, a))
        sigma = 1.0 / (1.0 + math.exp(margin))
        return -y * sigma * a

    def gradient_batch(self, theta, points):
        points = np.asarray(points, dtype=np.float64)
        a, y = points[:, :-1], points[:, -1]
        margins = y * (a @ np.asarray(theta))
        sig = 1.0 / (1.0 + np.exp(margins))
        return -(y * sig)[:, None] * a

    def mean_loss(self, theta, points):
        points = np.asarray(points, dtype=np.float64)
        margins = points[:, -1] * (points[:, :-1] @ np.asarray(theta))
        return float(np.mean(np.logaddexp(0.0, -margins)))


@dataclass
class HingeLoss(LossModel):
    """l(theta, (a, y)) = max(0, 1 - y <theta, a>) with ||a|| <= 1.
    Non-smooth; the prox steps toward the margin by at most the scale."""

    def __post_init__(self):
        self.lipschitz = 1.0

    def evaluate(self, theta, x):
        a, y = _split_labeled(x)
        return max(0.0, 1.0 - y * float(np.dot(theta, a)))

    def gradient(self, theta, x):
        a, y = _split_labeled(x)
        if 1.0 - y * float(np.dot(theta, a)) > 0.0:
            return -y * a
        return np.zeros_like(a)

    def gradient_batch(self, theta, points):
        points = np.asarray(points, dtype=np.float64)
        a, y = points[:, :-1], points[:, -1]
        active = (1.0 - y * (a @ np.asarray(theta))) > 0.0
        return -(y * active)[:, None] * a

    def mean_loss(self, theta, points):
        points = np.asarray(points, dtype=np.float64)
        margins = points[:, -1] * (points[:, :-1] @ np.asarray(theta))
        return float(np.mean(np.maximum(0.0, 1.0 - margins)))

    def prox_candidate(self, theta, x, scale):
        a, y = _split_labeled(x)
        theta = np.asarray(theta, dtype=np.float64)
        sq = float(a @ a)
        if sq == 0.0:
            return theta.copy()
        slack = 1.0 - y * float(np.dot(theta, a))
        step = min(max(slack / sq, 0.0), scale)
        return theta + step * y * a

    def prox_batch(self, theta, points, scale):
        points = np.asarray(points, dtype=np.float64)
        a, y = points[:, :-1], points[:, -1]
        sq = np.sum(a ** 2, axis=1)
        slack = 1.0 - y * (a @ np.asarray(theta))
        steps = np.clip(slack / np.where(sq > 0, sq, 1.0), 0.0, scale) * (sq > 0)
        return np.asarray(theta)[None, :] + (steps * y)[:, None] * a


def prox(base: LossModel, theta: np.ndarray, x: np.ndarray, scale: float,
         space: ParameterSpace, tol: float = PROX_TOL,
         max_iter: int = PROX_MAX_ITER) -> np.ndarray:
    """argmin over the ball of scale * l(u, x) + 0.5 * ||u - theta||^2.

    Prefers the model's closed form: it is exact when it lands inside the
    ball (the constraint is inactive) or when the model's prox objective
    is isotropic so projection commutes with the constrained argmin.
    Otherwise runs projected gradient on the 1-strongly-convex objective
    (subgradient schedule when the base is non-smooth).
    """
    if not (scale > 0):
        raise DomainError(f"prox scale must be positive, got {scale}")
    candidate = base.prox_candidate(theta, x, scale)
    if candidate is not None:
        if space.contains(candidate, tol=1e-12):
            return candidate
        if base.projection_exact:
            return project_to_ball(candidate, space)
    return _prox_solve(base, theta, x, scale, space, tol, max_iter)


def _prox_solve(base, theta, x, scale, space, tol, max_iter):
    theta = np.asarray(theta, dtype=np.float64)
    u = project_to_ball(theta, space)
    best_u, best_val = u, scale * base.evaluate(u, x) + 0.5 * float(np.sum((u - theta) ** 2))
    smooth = base.smoothness
    step = 1.0 / (1.0 + scale * smooth) if smooth is not None else None
    for k in range(max_iter):
        grad = scale * base.gradient(u, x) + (u - theta)
        eta = step if step is not None else 2.0 / (k + 2.0)
        u_next = project_to_ball(u - eta * grad, space)
        val = scale * base.evaluate(u_next, x) + 0.5 * float(np.sum((u_next - theta) ** 2))
        if val < best_val:
            best_u, best_val = u_next, val
        if float(np.linalg.norm(u_next - u)) <= tol:
            return u_next
        u = u_next
    raise ProxSolveError(
        f"prox solve did not reach step tolerance {tol} in {max_iter} iterations",
        best_iterate=best_u)


def prox_batch(base: LossModel, theta: np.ndarray, points: np.ndarray, scale: float,
               space: ParameterSpace) -> np.ndarray:
    """Row-wise prox over a batch of data. Uses the model's vectorized
    closed form when every candidate stays inside the ball (or projection
    is exact); falls back to per-row solves otherwise."""
    closed = getattr(base, "prox_batch", None)
    if closed is not None:
        cands = closed(theta, points, scale)
        dists = np.linalg.norm(cands - space.center[None, :], axis=1)
        if base.projection_exact:
            outside = dists > space.radius
            if np.any(outside):
                cands = cands.copy()
                scalefac = space.radius / dists[outside]
                cands[outside] = space.center + (cands[outside] - space.center) * scalefac[:, None]
            return cands
        if np.all(dists <= space.radius + 1e-12):
            return cands
    return np.stack([prox(base, theta, x, scale, space) for x in points])


@dataclass
class MoreauEnvelope(LossModel):
    """The beta-envelope of a base loss over the parameter ball:

        f_beta(theta) = min_u ( l(u, x) + (beta/2) ||theta - u||^2 )

    It is 2L-Lipschitz and beta-smooth, its gradient is
    beta * (theta - prox_{l/beta}(theta)), and it sandwiches the base
    loss within L^2 / (2 beta).
    """

    base: LossModel
    beta: float
    space: ParameterSpace
    tol: float = PROX_TOL

    def __post_init__(self):
        if not (self.beta > 0):
            raise DomainError(f"envelope beta must be positive, got {self.beta}")
        self.lipschitz = 2.0 * self.base.lipschitz
        self.smoothness = self.beta

    def prox_point(self, theta, x):
        return prox(self.base, theta, x, 1.0 / self.beta, self.space, tol=self.tol)

    def evaluate(self, theta, x):
        p = self.prox_point(theta, x)
        return self.base.evaluate(p, x) + 0.5 * self.beta * float(
            np.sum((np.asarray(theta) - p) ** 2))

    def gradient(self, theta, x):
        return moreau_gradient(self, theta, x)

    def gradient_batch(self, theta, points):
        proxes = prox_batch(self.base, theta, points, 1.0 / self.beta, self.space)
        return self.beta * (np.asarray(theta)[None, :] - proxes)

    def mean_loss(self, theta, points):
        proxes = prox_batch(self.base, theta, points, 1.0 / self.beta, self.space)
        base_vals = np.array([self.base.evaluate(p, x) for p, x in zip(proxes, points)])
        quad = 0.5 * self.beta * np.sum((np.asarray(theta)[None, :] - proxes) ** 2, axis=1)
        return float(np.mean(base_vals + quad))


def moreau_gradient(env: MoreauEnvelope, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """beta * (theta - prox_{l(.,x)/beta}(theta)); the exact gradient of
    the envelope, with norm at most twice the base Lipschitz constant."""
    p = env.prox_point(theta, x)
    return env.beta * (np.asarray(theta, dtype=np.float64) - p)


def sample_ball(gen: np.random.Generator, d: int, radius: float, size: int) -> np.ndarray:
    """Uniform samples from the d-ball of the given radius."""
    raw = gen.standard_normal((size, d))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = radius * gen.random((size, 1)) ** (1.0 / d)
    return raw / norms * radii


@dataclass(frozen=True)
class SynthData:
    """Generated points plus the population minimizer when it is known
    analytically (quadratic: the hidden center; absolute: the median)."""

    points: np.ndarray
    minimizer: np.ndarray | None
    data_radius: float


def synth_data(kind: str, n: int, d: int, rng: SeededRng,
               space: ParameterSpace | None = None,
               center_spread: float = 0.2, data_spread: float = 0.5) -> SynthData:
    """Documented synthetic distributions, one per loss kind.

    quadratic: hidden minimizer theta* uniform in the ball of radius
        center_spread * R around the space center; x = theta* + uniform
        ball of radius data_spread * R. Population minimizer is theta*.
    absolute: same construction; theta* is the coordinatewise median.
    logistic / hinge: unit-sphere features a with labels
        y = sign(<a, theta*>) flipped with probability 0.1; points are
        (a, y) rows of width d+1. No analytic minimizer.
    """
    if space is None:
        space = ParameterSpace(dimension=d, center=np.zeros(d), radius=1.0)
    gen = rng.generator()
    r = space.radius
    if kind in ("quadratic", "absolute"):
        hidden = space.center + sample_ball(gen, d, center_spread * r, 1)[0]
        points = hidden[None, :] + sample_ball(gen, d, data_spread * r, n)
        return SynthData(points=points, minimizer=hidden,
                         data_radius=float(np.linalg.norm(hidden - space.center))
                         + data_spread * r)
    if kind in ("logistic", "hinge"):
        hidden = space.center + sample_ball(gen, d, r, 1)[0]
        raw = gen.standard_normal((max(n, 1), d))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        feats = raw / norms
        labels = np.sign(feats @ hidden)
        labels[labels == 0] = 1.0
        flips = gen.random(max(n, 1)) < 0.1
        labels[flips] *= -1.0
        points = np.concatenate([feats, labels[:, None]], axis=1)[:n]
        return SynthData(points=points, minimizer=None, data_radius=math.sqrt(2.0))
    raise DomainError(f"unknown synthetic data kind: {kind!r}")
