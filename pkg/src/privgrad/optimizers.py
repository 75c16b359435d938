"""Per-sample normalized and clipped SGD steps with Gaussian perturbation.

The normalized update rescales each per-sample gradient by
``1 / (r + ||g||)`` and adds noise ``N(0, sigma^2 I)``; the clipped update
rescales by ``min(1, c / ||g||)`` and adds ``N(0, c^2 sigma^2 I)``. Theory
mode derives the constant learning rate and the minimum iteration count
prescribed for these updates from the smoothness and variance constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oracles import SmoothnessParams, VarianceParams


@dataclass(frozen=True)
class NsgdConfig:
    """Normalized update: factor 1 / (regularizer + ||g||), noise sigma."""

    regularizer: float
    sigma: float
    eta: float
    batch_size: int

    def __post_init__(self) -> None:
        if self.regularizer <= 0:
            raise ValueError("regularizer must be positive")
        _check_common(self.sigma, self.eta, self.batch_size)


@dataclass(frozen=True)
class SgdConfig:
    """Clipped update: factor min(1, clip_threshold / ||g||), noise c*sigma."""

    clip_threshold: float
    sigma: float
    eta: float
    batch_size: int

    def __post_init__(self) -> None:
        if self.clip_threshold <= 0:
            raise ValueError("clip_threshold must be positive")
        _check_common(self.sigma, self.eta, self.batch_size)


def _check_common(sigma: float, eta: float, batch_size: int) -> None:
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if eta <= 0:
        raise ValueError("eta must be positive")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class TheoryParams:
    """Constants feeding the prescribed learning-rate and horizon formulas.

    ``d_f`` upper-bounds the initial optimality gap f(x0) - inf f; it is
    normally estimated as f(x0) minus the objective's lower bound.
    """

    smoothness: SmoothnessParams
    variance: VarianceParams
    d_f: float
    dim: int

    def __post_init__(self) -> None:
        if self.d_f < 0:
            raise ValueError("d_f must be nonnegative")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


def normalize_factor(g_norm: float, r: float) -> float:
    """Per-sample normalizing factor 1 / (r + ||g||), in (0, 1/r]."""
    if r <= 0:
        raise ValueError("r must be positive")
    if g_norm < 0:
        raise ValueError("g_norm must be nonnegative")
    return 1.0 / (r + g_norm)


def clip_factor(g_norm: float, c: float) -> float:
    """Per-sample clipping factor min(1, c / ||g||), extended to 1 at 0."""
    if c <= 0:
        raise ValueError("c must be positive")
    if g_norm < 0:
        raise ValueError("g_norm must be nonnegative")
    if g_norm <= c:
        return 1.0
    return c / g_norm


def dp_nsgd_step(
    x: np.ndarray,
    per_sample_grads: np.ndarray,
    config: NsgdConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One normalized step: x - eta * (mean_i g_i/(r+||g_i||) + z).

    The Gaussian vector is drawn after the batch is processed, one fresh
    draw per step, so a fixed seed reproduces the trajectory bit for bit.
    """
    grads = np.atleast_2d(np.asarray(per_sample_grads, dtype=float))
    if grads.shape[0] != config.batch_size:
        raise ValueError(
            f"expected {config.batch_size} per-sample gradients, got {grads.shape[0]}"
        )
    norms = np.linalg.norm(grads, axis=1)
    factors = 1.0 / (config.regularizer + norms)
    mean = (factors[:, None] * grads).mean(axis=0)
    z = rng.standard_normal(x.shape[0]) * config.sigma
    return x - config.eta * (mean + z)


def dp_sgd_step(
    x: np.ndarray,
    per_sample_grads: np.ndarray,
    config: SgdConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One clipped step: x - eta * (mean_i min(1, c/||g_i||) g_i + z),
    z ~ N(0, c^2 sigma^2 I)."""
    grads = np.atleast_2d(np.asarray(per_sample_grads, dtype=float))
    if grads.shape[0] != config.batch_size:
        raise ValueError(
            f"expected {config.batch_size} per-sample gradients, got {grads.shape[0]}"
        )
    norms = np.linalg.norm(grads, axis=1)
    factors = np.minimum(1.0, np.divide(
        config.clip_threshold, norms,
        out=np.ones_like(norms), where=norms > 0,
    ))
    mean = (factors[:, None] * grads).mean(axis=0)
    z = rng.standard_normal(x.shape[0]) * (config.clip_threshold * config.sigma)
    return x - config.eta * (mean + z)


def theorem_lr_nsgd(theory: TheoryParams, r: float, sigma: float, steps: int) -> float:
    """Prescribed constant learning rate for the normalized update:
    sqrt(2 / ((l1 (r + tau0) + l0) T d sigma^2))."""
    if sigma <= 0:
        raise ValueError("sigma must be positive in theory mode")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    l0, l1 = theory.smoothness.l0, theory.smoothness.l1
    denom = (l1 * (r + theory.variance.tau0) + l0) * steps * theory.dim * sigma * sigma
    if denom <= 0:
        raise ValueError("learning-rate denominator vanished")
    return math.sqrt(2.0 / denom)


def theorem_lr_sgd(theory: TheoryParams, c: float, sigma: float, steps: int) -> float:
    """Prescribed constant learning rate for the clipped update:
    sqrt(2 / ((l1 (c + tau0) + l0) T d c^2 sigma^2))."""
    if sigma <= 0:
        raise ValueError("sigma must be positive in theory mode")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    l0, l1 = theory.smoothness.l0, theory.smoothness.l1
    denom = (
        (l1 * (c + theory.variance.tau0) + l0)
        * steps * theory.dim * c * c * sigma * sigma
    )
    if denom <= 0:
        raise ValueError("learning-rate denominator vanished")
    return math.sqrt(2.0 / denom)


def alpha0_nsgd(variance: VarianceParams, r: float) -> float:
    """tau0 (1 - tau1) / (2 r (1 - tau1) + 4 tau0); always below 1/4."""
    if r <= 0:
        raise ValueError("r must be positive")
    t0, t1 = variance.tau0, variance.tau1
    return t0 * (1.0 - t1) / (2.0 * r * (1.0 - t1) + 4.0 * t0)


def alpha0_sgd(variance: VarianceParams, c: float) -> float:
    """tau0 (1 - tau1) / (c (1 - tau1) + 2 tau0); always below 1/2."""
    if c <= 0:
        raise ValueError("c must be positive")
    t0, t1 = variance.tau0, variance.tau1
    return t0 * (1.0 - t1) / (c * (1.0 - t1) + 2.0 * t0)


def _div(num: float, den: float) -> float:
    return num / den if den > 0 else math.inf


def eta_limit_nsgd(
    theory: TheoryParams, r: float, sigma: float, alpha: float | None = None
) -> float:
    """Largest eta admitted by the normalized second-order bounds:
    min((r - tau0) a / (4 l0), (1 - tau1) a / (4 l1), a / (6 l1 d sigma^2)).

    Defaults to the canonical alpha used by the convergence argument.
    """
    if alpha is None:
        alpha = alpha0_nsgd(theory.variance, r)
    l0, l1 = theory.smoothness.l0, theory.smoothness.l1
    t0, t1 = theory.variance.tau0, theory.variance.tau1
    if r <= t0:
        raise ValueError("eta condition requires r > tau0")
    return min(
        _div((r - t0) * alpha, 4.0 * l0),
        _div((1.0 - t1) * alpha, 4.0 * l1),
        _div(alpha, 6.0 * l1 * theory.dim * sigma * sigma),
    )


def eta_limit_sgd(
    theory: TheoryParams, c: float, sigma: float, alpha: float | None = None
) -> float:
    """Largest eta admitted by the clipped second-order bounds:
    min(a / (6 l1 d c sigma^2), a (1 - tau1) / (2 l0 (1 - tau1) + 4 l1 tau0),
    a tau0 (1 - tau1) / (4 c (l0 (1 - tau1) + 2 l1 tau0)))."""
    if alpha is None:
        alpha = alpha0_sgd(theory.variance, c)
    l0, l1 = theory.smoothness.l0, theory.smoothness.l1
    t0, t1 = theory.variance.tau0, theory.variance.tau1
    if c <= 2.0 * t0 / (1.0 - t1):
        raise ValueError("eta condition requires c > 2 tau0 / (1 - tau1)")
    return min(
        _div(alpha, 6.0 * l1 * theory.dim * c * sigma * sigma),
        _div(alpha * (1.0 - t1), 2.0 * l0 * (1.0 - t1) + 4.0 * l1 * t0),
        _div(alpha * t0 * (1.0 - t1), 4.0 * c * (l0 * (1.0 - t1) + 2.0 * l1 * t0)),
    )


def nsgd_iteration_thresholds(
    theory: TheoryParams, r: float, sigma: float
) -> tuple[float, float, float]:
    """The three horizon thresholds behind :func:`min_iterations_nsgd`.

    The middle threshold divides by tau1^2 and is returned as 0 (vacuous)
    when tau1 = 0.
    """
    l0, l1 = theory.smoothness.l0, theory.smoothness.l1
    t0, t1 = theory.variance.tau0, theory.variance.tau1
    if r <= t0:
        raise ValueError("minimum-horizon formulas require r > tau0")
    if l1 == 0:
        raise ValueError("minimum-horizon formulas degenerate at l1 = 0")
    a0 = alpha0_nsgd(theory.variance, r)
    d, var = theory.dim, sigma * sigma
    first = 32.0 * l0 * l0 / ((r - t0) ** 2 * a0 * a0 * l1 * (r + t0) * d * var)
    second = (
        32.0 * l1 / (t1 * t1 * a0 * a0 * (r + t0) * d * var) if t1 > 0 else 0.0
    )
    third = 72.0 * l1 * d / (a0 * a0 * (r + t0))
    return first, second, third


def min_iterations_nsgd(theory: TheoryParams, r: float, sigma: float) -> int:
    """Iterations after which the prescribed eta meets its admissibility
    condition, for the normalized update. Raises when r <= tau0 or l1 = 0;
    callers fall back to a horizon of 1 in the degenerate cases."""
    first, second, third = nsgd_iteration_thresholds(theory, r, sigma)
    return max(1, math.ceil(max(first, second, third)))


def min_iterations_sgd(theory: TheoryParams, c: float, sigma: float) -> int:
    """Smallest horizon T with theorem_lr_sgd(T) within the clipped eta
    limit, obtained by inverting the sqrt(1/T) dependence in closed form."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    limit = eta_limit_sgd(theory, c, sigma)
    if not limit > 0:
        raise ValueError("eta limit degenerate; cannot invert for a horizon")
    l0, l1 = theory.smoothness.l0, theory.smoothness.l1
    t0 = theory.variance.tau0
    k = 2.0 / ((l1 * (c + t0) + l0) * theory.dim * c * c * sigma * sigma)
    if math.isinf(limit):
        return 1
    return max(1, math.ceil(k / (limit * limit)))


def nsgd_theory_config(
    theory: TheoryParams, regularizer: float, sigma: float, steps: int, batch_size: int = 1
) -> NsgdConfig:
    """Normalized-update config with the prescribed learning rate.

    Theory mode additionally requires the regularizer to dominate tau0.
    """
    if regularizer <= theory.variance.tau0:
        raise ValueError("theory mode requires regularizer > tau0")
    eta = theorem_lr_nsgd(theory, regularizer, sigma, steps)
    return NsgdConfig(regularizer=regularizer, sigma=sigma, eta=eta, batch_size=batch_size)


def sgd_theory_config(
    theory: TheoryParams, clip_threshold: float, sigma: float, steps: int, batch_size: int = 1
) -> SgdConfig:
    """Clipped-update config with the prescribed learning rate.

    Theory mode requires clip_threshold > 2 tau0 / (1 - tau1).
    """
    t0, t1 = theory.variance.tau0, theory.variance.tau1
    if clip_threshold <= 2.0 * t0 / (1.0 - t1):
        raise ValueError("theory mode requires clip_threshold > 2 tau0 / (1 - tau1)")
    eta = theorem_lr_sgd(theory, clip_threshold, sigma, steps)
    return SgdConfig(clip_threshold=clip_threshold, sigma=sigma, eta=eta, batch_size=batch_size)


def sample_batch(n: int, b: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random b-subset of range(n), all indices distinct."""
    if b > n:
        raise ValueError(f"cannot draw {b} distinct indices from {n}")
    return rng.choice(n, size=b, replace=False)
