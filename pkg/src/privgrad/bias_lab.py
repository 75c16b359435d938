"""Numerical checks of the descent and first-order bounds.

The convergence argument for the normalized and clipped updates rests on a
small number of scalar inequalities: a descent inequality driven by the
generalized-smoothness constants, piecewise lower bounds A(s) and B(s) on
the first-order term at gradient norm s, and a closed-form expectation for
a two-atom radial noise model on which the normalized first-order term can
turn negative. This module estimates each quantity by Monte Carlo (or, for
the two-atom model, by exact enumeration) and compares against the stated
bounds. Statistical comparisons are one-sided with a 4-standard-error
allowance; a shortfall is reported as a finding, not raised.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .optimizers import NsgdConfig, SgdConfig, alpha0_nsgd, alpha0_sgd
from .oracles import NoiseModel, Objective, VarianceParams, draw_noise_batch


@dataclass(frozen=True)
class ToyParams:
    """Two-atom radial model parameters at gradient norm ``grad_norm``.

    The closed-form expectation below is only valid while
    ``grad_norm < tau0 / 2``; past that point the second atom's norm
    changes sign and the closed form's denominator no longer applies.
    """

    tau0: float
    r: float
    eta: float
    grad_norm: float

    def __post_init__(self) -> None:
        if min(self.tau0, self.r, self.eta, self.grad_norm) <= 0:
            raise ValueError("all toy parameters must be positive")
        if not self.grad_norm < self.tau0 / 2.0:
            raise ValueError(
                f"closed form requires grad_norm < tau0/2, got "
                f"{self.grad_norm} >= {self.tau0 / 2.0}"
            )


def toy_A_closed_form(p: ToyParams) -> float:
    """Closed-form expected normalized descent term for the two-atom model:

        eta (s^3 + (3r + tau0/2) s^2 - tau0^2 s / 2)
        -------------------------------------------- ,  s = grad_norm.
        3 (r + tau0 + s)(r + tau0/2 - s)
    """
    s, r, t0 = p.grad_norm, p.r, p.tau0
    numer = s**3 + (3.0 * r + t0 / 2.0) * s**2 - t0 * t0 * s / 2.0
    denom = 3.0 * (r + t0 + s) * (r + t0 / 2.0 - s)
    return p.eta * numer / denom


def toy_A_two_point(p: ToyParams) -> float:
    """Exact two-atom enumeration of the same expectation.

    The noise takes value +tau0*u with probability 1/3 and -(tau0/2)*u with
    probability 2/3 along the gradient direction u, so the expectation is a
    weighted sum of two ratios. This enumeration is the authoritative value
    against which the closed form is checked.
    """
    s, r, t0 = p.grad_norm, p.r, p.tau0
    g_plus = s + t0
    g_minus = s - t0 / 2.0
    term_plus = s * g_plus / (r + abs(g_plus))
    term_minus = s * g_minus / (r + abs(g_minus))
    return p.eta * (term_plus / 3.0 + 2.0 * term_minus / 3.0)


def toy_A_monte_carlo(
    p: ToyParams, n_draws: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Monte-Carlo estimate (mean, stderr) of the two-atom expectation."""
    if n_draws < 2:
        raise ValueError("n_draws must be >= 2")
    s, r, t0 = p.grad_norm, p.r, p.tau0
    radial = np.where(rng.random(n_draws) < 1.0 / 3.0, t0, -t0 / 2.0)
    g = s + radial
    values = p.eta * s * g / (r + np.abs(g))
    return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(n_draws))


def first_order_bound_nsgd(s: float, r: float, variance: VarianceParams, alpha: float) -> float:
    """Piecewise lower bound A(s) for the normalized first-order term.

    Large gradients (s >= tau0 / (1 - tau1)):
        (tau0 / (r (1-tau1) + 2 tau0) - alpha / (1-tau1)) * s
    Small gradients:
        (1-alpha)(1-tau1) / (r (1-tau1) + 2 tau0) * s^2
        - 4 tau0^3 / (r (r + tau0) (1-tau1)^3)
    """
    t0, t1 = variance.tau0, variance.tau1
    if s >= t0 / (1.0 - t1):
        return (t0 / (r * (1.0 - t1) + 2.0 * t0) - alpha / (1.0 - t1)) * s
    return (
        (1.0 - alpha) * (1.0 - t1) / (r * (1.0 - t1) + 2.0 * t0) * s * s
        - 4.0 * t0**3 / (r * (r + t0) * (1.0 - t1) ** 3)
    )


def first_order_bound_sgd(s: float, c: float, variance: VarianceParams, alpha: float) -> float:
    """Piecewise lower bound B(s) for the clipped first-order term.

    Large gradients (s >= tau0 / (1 - tau1)):
        (tau0 c / (c (1-tau1) + 2 tau0) - alpha / (1-tau1)) * s
    Small gradients: (1 - alpha) s^2.
    """
    t0, t1 = variance.tau0, variance.tau1
    if s >= t0 / (1.0 - t1):
        return (t0 * c / (c * (1.0 - t1) + 2.0 * t0) - alpha / (1.0 - t1)) * s
    return (1.0 - alpha) * s * s


@dataclass(frozen=True)
class FirstOrderReport:
    """Monte-Carlo estimate of the alpha-corrected first-order term against
    its piecewise lower bound at gradient norm s."""

    grad_norm: float
    mc_estimate: float
    mc_stderr: float
    bound: float
    n_draws: int

    @property
    def satisfied(self) -> bool:
        """Bound holds up to the 4-standard-error allowance."""
        return self.mc_estimate >= self.bound - 4.0 * self.mc_stderr


def first_order_check_nsgd(
    objective: Objective,
    noise_model: NoiseModel,
    x: np.ndarray,
    r: float,
    eta: float,
    n_draws: int,
    rng: np.random.Generator,
) -> FirstOrderReport:
    """Estimate eta E[<h grad f, g>] - eta a0 E[h] ||grad f||^2 and compare
    against eta * A(s). Requires r > tau0. A shortfall beyond the standard
    error allowance is a finding recorded in the report, not an error."""
    if r <= noise_model.variance.tau0:
        raise ValueError("normalized first-order check requires r > tau0")
    grad = objective.grad(np.asarray(x, dtype=float))
    s = float(np.linalg.norm(grad))
    alpha = alpha0_nsgd(noise_model.variance, r)

    draws = draw_noise_batch(noise_model, grad, n_draws, rng)
    g = grad[None, :] + draws
    factors = 1.0 / (r + np.linalg.norm(g, axis=1))
    values = eta * factors * (g @ grad - alpha * s * s)
    bound = eta * first_order_bound_nsgd(s, r, noise_model.variance, alpha)
    return FirstOrderReport(
        grad_norm=s,
        mc_estimate=float(np.mean(values)),
        mc_stderr=float(np.std(values, ddof=1) / math.sqrt(n_draws)),
        bound=bound,
        n_draws=n_draws,
    )


def first_order_check_sgd(
    objective: Objective,
    noise_model: NoiseModel,
    x: np.ndarray,
    c: float,
    eta: float,
    n_draws: int,
    rng: np.random.Generator,
) -> FirstOrderReport:
    """Clipped analogue of :func:`first_order_check_nsgd` against eta * B(s).

    Requires c >= 2 tau0 / (1 - tau1). Below the branch threshold every
    drawn gradient fits inside the clipping radius, so all factors must be
    exactly one; a violation there indicates a broken noise model and
    raises.
    """
    t0, t1 = noise_model.variance.tau0, noise_model.variance.tau1
    if c < 2.0 * t0 / (1.0 - t1):
        raise ValueError("clipped first-order check requires c >= 2 tau0 / (1 - tau1)")
    grad = objective.grad(np.asarray(x, dtype=float))
    s = float(np.linalg.norm(grad))
    alpha = alpha0_sgd(noise_model.variance, c)

    draws = draw_noise_batch(noise_model, grad, n_draws, rng)
    g = grad[None, :] + draws
    norms = np.linalg.norm(g, axis=1)
    factors = np.minimum(1.0, np.divide(c, norms, out=np.ones_like(norms), where=norms > 0))
    if t0 > 0 and s < t0 / (1.0 - t1) and not np.all(factors == 1.0):
        raise RuntimeError(
            "clipping engaged below the small-gradient threshold; "
            "noise model exceeds its declared bound"
        )
    values = eta * factors * (g @ grad - alpha * s * s)
    bound = eta * first_order_bound_sgd(s, c, noise_model.variance, alpha)
    return FirstOrderReport(
        grad_norm=s,
        mc_estimate=float(np.mean(values)),
        mc_stderr=float(np.std(values, ddof=1) / math.sqrt(n_draws)),
        bound=bound,
        n_draws=n_draws,
    )


@dataclass(frozen=True)
class DescentReport:
    """One-step descent inequality audit: slack = bound side - measured side."""

    slack: float
    stderr: float
    lhs: float
    rhs: float
    n_draws: int

    @property
    def satisfied(self) -> bool:
        return self.slack >= -4.0 * self.stderr


def descent_inequality_check(
    objective: Objective,
    noise_model: NoiseModel,
    x: np.ndarray,
    optimizer_config: NsgdConfig | SgdConfig,
    n_draws: int,
    rng: np.random.Generator,
) -> DescentReport:
    """Monte-Carlo audit of the one-step descent inequality.

    Each draw realizes a single-sample update x+ = x - eta (h g + z) and the
    measured side is E[f(x+)] - f(x); the bound side is
    -eta E[<h grad f, g>] + (l0 + l1 s)/2 * eta^2 (d sigma_eff^2 + E||h g||^2)
    with sigma_eff = sigma for the normalized update and c sigma for the
    clipped one. Slack and its standard error come from per-draw pairing.
    """
    x = np.asarray(x, dtype=float)
    grad = objective.grad(x)
    s = float(np.linalg.norm(grad))
    eta = optimizer_config.eta
    sigma = optimizer_config.sigma
    d = objective.dim

    draws = draw_noise_batch(noise_model, grad, n_draws, rng)
    g = grad[None, :] + draws
    norms = np.linalg.norm(g, axis=1)
    if isinstance(optimizer_config, NsgdConfig):
        factors = 1.0 / (optimizer_config.regularizer + norms)
        noise_scale = sigma
    else:
        c = optimizer_config.clip_threshold
        factors = np.minimum(1.0, np.divide(c, norms, out=np.ones_like(norms), where=norms > 0))
        noise_scale = c * sigma

    hg = factors[:, None] * g
    z = rng.standard_normal((n_draws, d)) * noise_scale
    x_next = x[None, :] - eta * (hg + z)

    f_x = objective.value(x)
    smooth = (objective.smoothness.l0 + objective.smoothness.l1 * s) / 2.0
    lhs_draws = objective.value_rows(x_next) - f_x
    rhs_draws = -eta * (hg @ grad) + smooth * eta * eta * (
        d * noise_scale * noise_scale + np.sum(hg * hg, axis=1)
    )
    slack_draws = rhs_draws - lhs_draws
    stderr = float(np.std(slack_draws, ddof=1) / math.sqrt(n_draws)) if n_draws > 1 else 0.0
    return DescentReport(
        slack=float(np.mean(slack_draws)),
        stderr=stderr,
        lhs=float(np.mean(lhs_draws)),
        rhs=float(np.mean(rhs_draws)),
        n_draws=n_draws,
    )


def expected_direction(
    objective: Objective, x: np.ndarray, mode: str, param: float
) -> tuple[np.ndarray, float, float]:
    """Expected processed direction of a finite-sum objective and its bias.

    mode "normalize" weighs each per-sample gradient by 1/(param + norm);
    mode "clip" by min(1, param / norm). Returns the direction, its distance
    to the true gradient, and the cosine between them.
    """
    if not objective.is_finite_sum:
        raise ValueError("expected_direction needs a finite-sum objective")
    if mode not in ("normalize", "clip"):
        raise ValueError(f"unknown mode {mode!r}")
    if param <= 0:
        raise ValueError("mode parameter must be positive")
    x = np.asarray(x, dtype=float)

    if objective.per_sample_grad_batch is not None:
        grads = objective.per_sample_grad_batch(x, np.arange(objective.n_terms))
    else:
        grads = np.stack(
            [objective.per_sample_grad(x, i) for i in range(objective.n_terms)]
        )
    norms = np.linalg.norm(grads, axis=1)
    if mode == "normalize":
        factors = 1.0 / (param + norms)
    else:
        factors = np.minimum(1.0, np.divide(param, norms, out=np.ones_like(norms), where=norms > 0))
    direction = (factors[:, None] * grads).mean(axis=0)

    true_grad = objective.grad(x)
    bias_norm = float(np.linalg.norm(direction - true_grad))
    denom = np.linalg.norm(direction) * np.linalg.norm(true_grad)
    cosine = float(direction @ true_grad / denom) if denom > 0 else 0.0
    return direction, bias_norm, cosine


@dataclass(frozen=True)
class VerificationRow:
    """One line of the check report written by the verification battery."""

    check: str
    parameters: str
    estimate: float
    stderr: float
    bound: float
    passed: bool


def write_verification_csv(path, rows: list[VerificationRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "parameters", "estimate", "stderr", "bound", "pass"])
        for row in rows:
            writer.writerow(
                [
                    row.check,
                    row.parameters,
                    repr(row.estimate),
                    repr(row.stderr),
                    repr(row.bound),
                    str(row.passed),
                ]
            )
