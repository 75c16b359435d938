"""Synthetic objectives with exact gradients and bounded noise models.

Objectives carry analytic values, gradients and, for finite sums,
per-sample gradients, together with smoothness constants for which the
gradient Lipschitz bound is allowed to grow linearly with the gradient
norm. Noise models produce mean-zero perturbations whose norm is bounded
almost surely by ``tau0 + tau1 * ||grad f(x)||``; the bound is asserted on
every draw in debug mode.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

#: Ridge coefficient added to the synthetic logistic loss.
LOGISTIC_RIDGE = 1e-4

TWO_POINT_RADIAL = "two_point_radial"
SPHERICAL_BOUNDED = "spherical_bounded"
NO_NOISE = "none"

NOISE_KINDS = (TWO_POINT_RADIAL, SPHERICAL_BOUNDED, NO_NOISE)


class ZeroGradientError(ValueError):
    """Radial noise is undefined where the gradient vanishes."""


class NoiseBoundViolation(RuntimeError):
    """A draw exceeded the declared almost-sure noise bound."""

    def __init__(self, message: str, draw: np.ndarray):
        super().__init__(message)
        self.draw = draw


@dataclass(frozen=True)
class SmoothnessParams:
    """Constants (l0, l1) of the gradient-growth Lipschitz bound."""

    l0: float
    l1: float

    def __post_init__(self) -> None:
        if self.l0 < 0 or self.l1 < 0:
            raise ValueError("smoothness constants must be nonnegative")


@dataclass(frozen=True)
class VarianceParams:
    """Almost-sure noise bound tau0 + tau1 * ||grad||, with 0 <= tau1 < 1."""

    tau0: float
    tau1: float = 0.0

    def __post_init__(self) -> None:
        if self.tau0 < 0:
            raise ValueError("tau0 must be nonnegative")
        if not 0 <= self.tau1 < 1:
            raise ValueError("tau1 must lie in [0, 1)")


@dataclass(frozen=True)
class Objective:
    """Deterministic objective with exact value and gradient oracles.

    ``n_terms`` is 0 unless the objective is a finite sum, in which case
    ``per_sample_grad(x, i)`` returns the gradient of the i-th term and the
    full gradient equals the mean of the per-sample gradients.
    """

    dim: int
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    smoothness: SmoothnessParams
    f_star_lower_bound: float
    n_terms: int = 0
    per_sample_grad: Callable[[np.ndarray, int], np.ndarray] | None = None
    per_sample_grad_batch: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    value_batch: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def is_finite_sum(self) -> bool:
        return self.n_terms > 0

    def value_rows(self, points: np.ndarray) -> np.ndarray:
        """Objective value for each row of an (n, dim) array."""
        if self.value_batch is not None:
            return self.value_batch(points)
        return np.array([self.value(row) for row in points])


@dataclass
class NoiseModel:
    """Stochastic-gradient deviation model.

    ``draw_scale`` multiplies every drawn vector; values other than 1.0
    deliberately break the declared bound and exist so the assumption
    checker can be validated against a misparameterized model.
    """

    kind: str
    variance: VarianceParams
    draw_scale: float = 1.0
    _pending: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")


def noise_bound(model: NoiseModel, grad_norm: float) -> float:
    v = model.variance
    return v.tau0 + v.tau1 * grad_norm


def draw_noise(model: NoiseModel, grad: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One deviation vector e with ||e|| <= tau0 + tau1 ||grad|| a.s.

    Two-point radial: +tau0*u with probability 1/3 and -(tau0/2)*u with
    probability 2/3 along u = grad/||grad||, hence mean zero with tau1 = 0.
    Spherical: uniform direction times an independent uniform radius in
    [0, tau0 + tau1 ||grad||]; consecutive draws are antithetic, so each
    emitted pair sums to zero. The pending partner is dropped if the bound
    at the current gradient no longer covers it.
    """
    grad = np.asarray(grad, dtype=float)
    if model.kind == NO_NOISE:
        return np.zeros_like(grad)

    s = float(np.linalg.norm(grad))
    bound = noise_bound(model, s)

    if model.kind == TWO_POINT_RADIAL:
        if s == 0.0:
            raise ZeroGradientError("two-point radial noise needs a nonzero gradient")
        u = grad / s
        tau0 = model.variance.tau0
        if rng.random() < 1.0 / 3.0:
            e = tau0 * u
        else:
            e = -(tau0 / 2.0) * u
        e = model.draw_scale * e
        assert np.linalg.norm(e) <= bound * max(1.0, model.draw_scale) + 1e-12
        return e

    # spherical_bounded
    if model._pending is not None:
        partner = model._pending
        model._pending = None
        if np.linalg.norm(partner) <= bound * max(1.0, model.draw_scale) + 1e-12:
            return partner
    direction = rng.standard_normal(grad.shape)
    norm = np.linalg.norm(direction)
    while norm == 0.0:  # pragma: no cover - probability zero
        direction = rng.standard_normal(grad.shape)
        norm = np.linalg.norm(direction)
    radius = rng.uniform(0.0, bound)
    e = model.draw_scale * radius * direction / norm
    model._pending = -e
    return e


def draw_noise_batch(
    model: NoiseModel, grad: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n deviation vectors at a common gradient, as an (n, dim) array.

    Vectorized equivalent of repeated :func:`draw_noise` calls at one point;
    spherical pairs are antithetic within the batch and the per-call pending
    buffer is not consulted.
    """
    grad = np.asarray(grad, dtype=float)
    d = grad.shape[0]
    if model.kind == NO_NOISE:
        return np.zeros((n, d))

    s = float(np.linalg.norm(grad))
    bound = noise_bound(model, s)

    if model.kind == TWO_POINT_RADIAL:
        if s == 0.0:
            raise ZeroGradientError("two-point radial noise needs a nonzero gradient")
        u = grad / s
        tau0 = model.variance.tau0
        radial = np.where(rng.random(n) < 1.0 / 3.0, tau0, -tau0 / 2.0)
        return model.draw_scale * radial[:, None] * u[None, :]

    half = (n + 1) // 2
    directions = rng.standard_normal((half, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.uniform(0.0, bound, size=half)
    fresh = model.draw_scale * radii[:, None] * directions
    paired = np.empty((2 * half, d))
    paired[0::2] = fresh
    paired[1::2] = -fresh
    return paired[:n]


@dataclass(frozen=True)
class Assumption2Report:
    """Largest observed ratio ||e|| / (tau0 + tau1 ||grad||) over all draws."""

    max_ratio: float
    n_points: int
    n_draws: int


def check_assumption2(
    model: NoiseModel,
    objective: Objective,
    n_points: int,
    n_draws: int,
    rng: np.random.Generator,
) -> Assumption2Report:
    """Verify the almost-sure noise bound empirically at random points.

    Draws ``n_draws`` deviations at ``n_points`` random locations and raises
    :class:`NoiseBoundViolation` (carrying the offending draw) as soon as a
    draw exceeds the declared bound.
    """
    max_ratio = 0.0
    for _ in range(n_points):
        x = rng.uniform(-2.0, 2.0, objective.dim)
        grad = objective.grad(x)
        bound = noise_bound(model, float(np.linalg.norm(grad)))
        if bound == 0.0:
            continue
        draws = draw_noise_batch(model, grad, n_draws, rng)
        ratios = np.linalg.norm(draws, axis=1) / bound
        worst = int(np.argmax(ratios))
        if ratios[worst] > 1.0 + 1e-12:
            raise NoiseBoundViolation(
                f"draw norm {np.linalg.norm(draws[worst]):.6g} exceeds bound {bound:.6g}",
                draws[worst],
            )
        max_ratio = max(max_ratio, float(ratios[worst]))
    return Assumption2Report(max_ratio=max_ratio, n_points=n_points, n_draws=n_draws)


def make_cosh_objective(dim: int) -> Objective:
    """Separable cosh-sum objective: f(x) = sum_j cosh(x_j) - dim.

    The Hessian is diag(cosh(x_j)), and max_j cosh(x_j) <= 1 + max_j
    |sinh(x_j)| <= 1 + ||grad f(x)||, so the smoothness constants are
    exactly (1, 1). The infimum is 0 at the origin.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")

    def value(x: np.ndarray) -> float:
        return float(np.sum(np.cosh(x)) - dim)

    def grad(x: np.ndarray) -> np.ndarray:
        return np.sinh(x)

    def value_batch(points: np.ndarray) -> np.ndarray:
        return np.sum(np.cosh(points), axis=1) - dim

    return Objective(
        dim=dim,
        value=value,
        grad=grad,
        smoothness=SmoothnessParams(1.0, 1.0),
        f_star_lower_bound=0.0,
        value_batch=value_batch,
    )


def make_quadratic_objective(dim: int, condition_number: float) -> Objective:
    """Diagonal quadratic f(x) = x' D x / 2 with eigenvalues log-spaced in
    [1, condition_number]. Ordinary smoothness: constants
    (condition_number, 0)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if condition_number < 1:
        raise ValueError("condition_number must be >= 1")
    diag = np.logspace(0.0, math.log10(condition_number), dim) if condition_number > 1 else np.ones(dim)

    def value(x: np.ndarray) -> float:
        return float(0.5 * np.dot(x, diag * x))

    def grad(x: np.ndarray) -> np.ndarray:
        return diag * x

    def value_batch(points: np.ndarray) -> np.ndarray:
        return 0.5 * np.sum(points * diag[None, :] * points, axis=1)

    return Objective(
        dim=dim,
        value=value,
        grad=grad,
        smoothness=SmoothnessParams(float(condition_number), 0.0),
        f_star_lower_bound=0.0,
        value_batch=value_batch,
    )


def make_logistic_data(n_terms: int, dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two Gaussian blobs with 5% label noise; labels in {-1, +1}."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n_terms) * 2 - 1
    offset = 1.5 / math.sqrt(dim)
    features = labels[:, None] * offset + rng.standard_normal((n_terms, dim))
    flip = rng.random(n_terms) < 0.05
    labels = np.where(flip, -labels, labels)
    return features, labels.astype(float)


def make_logistic_objective(n_terms: int, dim: int, seed: int) -> Objective:
    """Ridge-regularized logistic regression on synthetic blob data.

    Per-sample loss: log(1 + exp(-y_i <x, phi_i>)) + (ridge / 2) ||x||^2.
    Smoothness is set conservatively from the data matrix:
    l0 = max_i ||phi_i||^2 / 4 + ridge, l1 = 0.
    """
    if n_terms < 2:
        raise ValueError("n_terms must be >= 2")
    features, labels = make_logistic_data(n_terms, dim, seed)

    def value(x: np.ndarray) -> float:
        margins = labels * (features @ x)
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * LOGISTIC_RIDGE * np.dot(x, x))

    def grad(x: np.ndarray) -> np.ndarray:
        margins = labels * (features @ x)
        weights = expit(-margins) * labels
        return -(features.T @ weights) / n_terms + LOGISTIC_RIDGE * x

    def per_sample_grad(x: np.ndarray, index: int) -> np.ndarray:
        margin = labels[index] * (features[index] @ x)
        return -labels[index] * expit(-margin) * features[index] + LOGISTIC_RIDGE * x

    def per_sample_grad_batch(x: np.ndarray, indices: np.ndarray) -> np.ndarray:
        phi = features[indices]
        y = labels[indices]
        margins = y * (phi @ x)
        return -(expit(-margins) * y)[:, None] * phi + LOGISTIC_RIDGE * x[None, :]

    l0 = float(np.max(np.sum(features * features, axis=1)) / 4.0 + LOGISTIC_RIDGE)
    return Objective(
        dim=dim,
        value=value,
        grad=grad,
        smoothness=SmoothnessParams(l0, 0.0),
        f_star_lower_bound=0.0,
        n_terms=n_terms,
        per_sample_grad=per_sample_grad,
        per_sample_grad_batch=per_sample_grad_batch,
    )


def estimate_variance_params(
    objective: Objective, points: np.ndarray, tau1_grid: np.ndarray | None = None
) -> VarianceParams:
    """Empirical (tau0, tau1) for a finite sum, from the per-sample spread.

    At every row of ``points`` the largest deviation of a per-sample
    gradient from the full gradient is measured. For each candidate tau1
    the smallest feasible tau0 is ``max(deviation - tau1 * grad_norm)``;
    the returned pair minimizes the bound evaluated at the largest observed
    gradient norm. The estimate covers the sampled region only, which is
    all the data-dependent constants of a synthetic task can promise.
    """
    if not objective.is_finite_sum:
        raise ValueError("variance estimation needs a finite-sum objective")
    if tau1_grid is None:
        tau1_grid = np.linspace(0.0, 0.95, 20)
    deviations = np.empty(len(points))
    grad_norms = np.empty(len(points))
    indices = np.arange(objective.n_terms)
    for i, x in enumerate(np.atleast_2d(points)):
        full = objective.grad(x)
        if objective.per_sample_grad_batch is not None:
            grads = objective.per_sample_grad_batch(x, indices)
        else:
            grads = np.stack([objective.per_sample_grad(x, j) for j in indices])
        deviations[i] = np.max(np.linalg.norm(grads - full[None, :], axis=1))
        grad_norms[i] = np.linalg.norm(full)

    s_max = float(np.max(grad_norms))
    best: VarianceParams | None = None
    best_level = math.inf
    for tau1 in tau1_grid:
        tau0 = float(np.max(deviations - tau1 * grad_norms))
        if tau0 < 0:
            tau0 = 0.0
        level = tau0 + tau1 * s_max
        if level < best_level:
            best_level = level
            best = VarianceParams(tau0=tau0, tau1=float(tau1))
    return best


def write_logistic_csv(path, features: np.ndarray, labels: np.ndarray) -> None:
    """Serialize a synthetic dataset, one row per sample: features..., label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(features.shape[1])] + ["label"])
        for row, label in zip(features, labels):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(label))])
