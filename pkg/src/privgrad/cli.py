"""Command-line entry point.

Subcommands: calibrate, run, sweep, bias, verify, rate. Human-readable
progress goes to stderr; machine-readable results are single stdout lines
prefixed with the sentinel token ``RESULT`` so scripts can grep them.
Exit codes: 0 success, 1 usage error, 2 infeasible budget or a failed
verification finding.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import accountant, bias_lab, harness, optimizers, reporting
from .accountant import AccountantConfig, InfeasibleBudget, PrivacyBudget
from .config import (
    ExperimentConfig,
    NoiseSpec,
    ObjectiveSpec,
    OptimizerSpec,
    experiment_config_from_mapping,
    load_experiment_config,
    parse_config_text,
    sweep_spec_from_mapping,
)
from .oracles import NoiseModel, VarianceParams, make_cosh_objective, make_logistic_objective
from .optimizers import TheoryParams

SENTINEL = "RESULT"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FINDING = 2

OUT_ENV_VAR = "PRIVGRAD_OUT"


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; remap to 1."""

    def error(self, message: str):  # noqa: D102
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _result(**fields) -> None:
    parts = " ".join(f"{key}={value}" for key, value in fields.items())
    print(f"{SENTINEL} {parts}")


def _default_out() -> str:
    return os.environ.get(OUT_ENV_VAR, "privgrad-out")


def _prepare_out(out_dir: str, names: list[str], force: bool) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    for name in names:
        target = path / name
        if target.exists() and not force:
            raise _UsageError(
                f"refusing to overwrite {target}; pass --force to replace it"
            )
    return path


def _add_output_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default=_default_out(),
                        help=f"output directory (default: ${OUT_ENV_VAR} or ./privgrad-out)")
    parser.add_argument("--force", action="store_true",
                        help="overwrite existing result files")
    parser.add_argument("--seed", type=int, default=None, help="seed override")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="privgrad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="calibrate the noise multiplier for a budget")
    p_cal.add_argument("--eps", type=float, required=True)
    p_cal.add_argument("--delta", type=float, required=True)
    p_cal.add_argument("--n", type=int, required=True, help="number of samples N")
    p_cal.add_argument("--batch", type=int, required=True, help="batch size B")
    p_cal.add_argument("--steps", type=int, required=True, help="iterations T")
    p_cal.add_argument("--accountant", choices=("closed", "numeric"), default="closed")

    p_run = sub.add_parser("run", help="run one configured trajectory")
    p_run.add_argument("--config", required=True, help="experiment config file")
    _add_output_flags(p_run)

    p_sweep = sub.add_parser("sweep", help="run a learning-rate x parameter grid")
    p_sweep.add_argument("--config", required=True, help="config file with sweep.* keys")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel workers over cells")
    _add_output_flags(p_sweep)

    p_bias = sub.add_parser("bias", help="expected processed direction vs the true gradient")
    p_bias.add_argument("--n-terms", type=int, default=2000)
    p_bias.add_argument("--dim", type=int, default=20)
    p_bias.add_argument("--data-seed", type=int, default=0)
    p_bias.add_argument("--mode", choices=("normalize", "clip", "both"), default="both")
    p_bias.add_argument("--grid", default="0.1,0.4,1.6,6.4",
                        help="comma-separated parameter values")
    p_bias.add_argument("--warmup", type=int, default=20,
                        help="full-gradient descent steps before measuring")
    _add_output_flags(p_bias)

    p_verify = sub.add_parser("verify", help="run the inequality verification battery")
    p_verify.add_argument("--quick", action="store_true", help="smaller Monte-Carlo sizes")
    _add_output_flags(p_verify)

    p_rate = sub.add_parser("rate", help="fit the min-grad-norm decay rate over horizons")
    p_rate.add_argument("--t-grid", default="1000,10000,100000",
                        help="comma-separated iteration counts")
    p_rate.add_argument("--seeds", type=int, default=3)
    p_rate.add_argument("--sigma", type=float, default=1.0)
    p_rate.add_argument("--tau0", type=float, default=0.5)
    p_rate.add_argument("--clip", type=float, default=2.0)
    p_rate.add_argument("--dim", type=int, default=10)
    _add_output_flags(p_rate)

    return parser


def _cmd_calibrate(args) -> int:
    config = AccountantConfig(n_samples=args.n, batch_size=args.batch, steps=args.steps)
    if args.accountant == "closed" and args.batch >= 0.1 * args.n:
        raise _UsageError(
            "the closed-form accountant requires batch < 0.1 * n; "
            "use --accountant numeric for larger sampling ratios"
        )
    budget = PrivacyBudget(eps=args.eps, delta=args.delta)
    try:
        sigma = accountant.calibrate_sigma(budget, config, accountant=args.accountant)
    except InfeasibleBudget as exc:
        _say(f"infeasible: {exc}")
        return EXIT_FINDING

    if args.accountant == "closed":
        eps = accountant.eps_at(sigma, config, args.delta)
        curve = accountant.closed_form_curve(sigma, config)
        _, order = accountant.rdp_to_dp(curve, args.delta)
    else:
        eps = accountant.numeric_eps_at(sigma, config, args.delta)
        orders = [a for a in accountant.DEFAULT_ORDERS if float(a).is_integer()]
        values = tuple(
            accountant.numeric_poisson_rdp(int(a), sigma, config.sampling_ratio)
            for a in orders
        )
        curve = accountant.compose(
            accountant.RdpCurve(tuple(float(a) for a in orders), values), config.steps
        )
        _, order = accountant.rdp_to_dp(curve, args.delta)

    _say(
        f"{args.accountant} accountant: sigma = {sigma:.4g} reaches eps = {eps:.4g} "
        f"(target {args.eps:g}) at delta = {args.delta:g}, winning order {order:g}"
    )
    _result(sigma=f"{sigma:.4g}", order=f"{order:g}", eps=f"{eps:.6g}",
            accountant=args.accountant)
    return EXIT_OK


def _cmd_run(args) -> int:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = _prepare_out(args.out, ["trajectory.csv", "trajectory.svg"], args.force)
    trajectory = harness.run(config)
    reporting.emit_csv(trajectory, out / "trajectory.csv")
    reporting.emit_plot(trajectory, out / "trajectory.svg")
    _say(
        f"ran {config.steps} steps in {trajectory.wall_time:.2f}s; "
        f"wrote {out / 'trajectory.csv'} and {out / 'trajectory.svg'}"
    )
    _result(final_min_grad_norm=repr(trajectory.final_metric),
            final_loss=repr(float(trajectory.losses[-1])))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    with open(args.config) as fh:
        mapping = parse_config_text(fh.read())
    config = experiment_config_from_mapping(mapping)
    spec = sweep_spec_from_mapping(mapping)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = _prepare_out(args.out, ["sweep.csv", "sweep.svg"], args.force)
    result = harness.sweep(config, spec, jobs=args.jobs)
    reporting.emit_csv(result, out / "sweep.csv")
    reporting.emit_plot(result, out / "sweep.svg")
    best = np.unravel_index(np.argmin(result.mean_metric), result.mean_metric.shape)
    _say(f"wrote {out / 'sweep.csv'} and {out / 'sweep.svg'}")
    _result(
        best_lr=repr(float(result.lr_values[best[0]])),
        best_param=repr(float(result.param_values[best[1]])),
        best_metric=repr(float(result.mean_metric[best])),
    )
    return EXIT_OK


def _cmd_bias(args) -> int:
    modes = ["normalize", "clip"] if args.mode == "both" else [args.mode]
    grid = [float(tok) for tok in args.grid.split(",") if tok.strip()]
    if not grid:
        raise _UsageError("--grid must list at least one parameter value")
    names = ["bias.csv"] + [f"bias_{mode}.svg" for mode in modes]
    out = _prepare_out(args.out, names, args.force)

    objective = make_logistic_objective(args.n_terms, args.dim, args.data_seed)
    x = np.zeros(args.dim)
    lr = 1.0 / objective.smoothness.l0
    for _ in range(args.warmup):
        x = x - lr * objective.grad(x)

    rows = []
    for mode in modes:
        biases = []
        for param in grid:
            _, bias_norm, cosine = bias_lab.expected_direction(objective, x, mode, param)
            rows.append((mode, param, bias_norm, cosine))
            biases.append(bias_norm)
            _result(mode=mode, param=repr(param), bias_norm=repr(bias_norm),
                    cosine=repr(cosine))
        reporting.plot_bias_curve(grid, biases, mode, out / f"bias_{mode}.svg")

    with open(out / "bias.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "param", "bias_norm", "cosine"])
        for mode, param, bias_norm, cosine in rows:
            writer.writerow([mode, repr(param), repr(bias_norm), repr(cosine)])
    _say(f"wrote {out / 'bias.csv'}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    seed = 0 if args.seed is None else args.seed
    n_draws = 2000 if args.quick else 10_000
    n_iterates = 10 if args.quick else 50
    n_fuzz = 100_000 if args.quick else 1_000_000
    out = _prepare_out(args.out, ["verification.csv", "first_order.svg"], args.force)
    rng = np.random.default_rng(seed)
    rows: list[bias_lab.VerificationRow] = []

    # Two-atom model: closed form against exact enumeration, and its
    # sign in the small-gradient regime.
    worst_gap = 0.0
    for tau0 in (0.5, 0.8, 1.0, 1.5):
        for r in (0.5, 1.0, 2.0, 4.0):
            for frac in (0.05, 0.2, 0.5, 0.9):
                p = bias_lab.ToyParams(tau0=tau0, r=r, eta=1.0, grad_norm=frac * tau0 / 2 * 0.999)
                worst_gap = max(worst_gap, abs(
                    bias_lab.toy_A_closed_form(p) - bias_lab.toy_A_two_point(p)))
    rows.append(bias_lab.VerificationRow(
        check="toy_closed_form_vs_enumeration", parameters="4x4x4 grid",
        estimate=worst_gap, stderr=0.0, bound=1e-12, passed=worst_gap <= 1e-12))
    sign_ok = True
    for tau0, r in ((1.0, 1.0), (1.0, 2.0), (0.5, 1.0)):
        p = bias_lab.ToyParams(tau0=tau0, r=r, eta=1.0, grad_norm=tau0**2 / (10 * r))
        sign_ok = sign_ok and bias_lab.toy_A_closed_form(p) < 0
    rows.append(bias_lab.VerificationRow(
        check="toy_negative_descent_term", parameters="s = tau0^2/(10 r)",
        estimate=float(sign_ok), stderr=0.0, bound=1.0, passed=sign_ok))

    # Descent inequality on the cosh objective.
    objective = make_cosh_objective(10)
    noise = NoiseModel(kind="two_point_radial", variance=VarianceParams(0.5, 0.0))
    theory = TheoryParams(objective.smoothness, noise.variance, d_f=10.0, dim=10)
    eta = optimizers.theorem_lr_nsgd(theory, 1.0, 1.0, 10_000)
    nsgd_cfg = optimizers.NsgdConfig(regularizer=1.0, sigma=1.0, eta=eta, batch_size=1)
    failures = 0
    for i in range(n_iterates):
        x = rng.uniform(-2.0, 2.0, 10)
        report = bias_lab.descent_inequality_check(objective, noise, x, nsgd_cfg, n_draws, rng)
        if not report.satisfied:
            failures += 1
    rows.append(bias_lab.VerificationRow(
        check="descent_inequality_nsgd", parameters=f"{n_iterates} iterates x {n_draws} draws",
        estimate=float(failures), stderr=0.0, bound=math.ceil(0.01 * n_iterates),
        passed=failures <= math.ceil(0.01 * n_iterates)))

    # First-order lower bounds on an s-grid.
    s_grid = np.linspace(0.1, 2.5, 10)
    r, c = 1.5, 6.0
    tau0 = 1.0
    noise = NoiseModel(kind="two_point_radial", variance=VarianceParams(tau0, 0.0))
    est_n, se_n, bd_n = [], [], []
    first_order_ok = True
    for s in s_grid:
        x = np.full(10, math.asinh(float(s) / math.sqrt(10)))
        rep_n = bias_lab.first_order_check_nsgd(objective, noise, x, r, 1.0, n_draws, rng)
        rep_s = bias_lab.first_order_check_sgd(objective, noise, x, c, 1.0, n_draws, rng)
        first_order_ok = first_order_ok and rep_n.satisfied and rep_s.satisfied
        est_n.append(rep_n.mc_estimate)
        se_n.append(rep_n.mc_stderr)
        bd_n.append(rep_n.bound)
    rows.append(bias_lab.VerificationRow(
        check="first_order_bounds", parameters=f"10-point s-grid, r={r}, c={c}",
        estimate=float(first_order_ok), stderr=0.0, bound=1.0, passed=first_order_ok))
    reporting.plot_first_order_bounds(
        list(s_grid), est_n, se_n, bd_n, "normalized", out / "first_order.svg")

    # Factor ordering and sensitivity bounds under fuzzing.
    g_norms = rng.uniform(0.0, 50.0, n_fuzz)
    cs = rng.uniform(1e-3, 20.0, n_fuzz)
    rs = rng.uniform(1e-3, 20.0, n_fuzz)
    clip = np.minimum(1.0, np.divide(cs, g_norms, out=np.ones_like(cs), where=g_norms > 0))
    ordering_bad = int(np.sum((clip < cs / (cs + g_norms) - 1e-15)
                              | (clip > 2 * cs / (cs + g_norms) + 1e-15)))
    sens_bad = int(np.sum(g_norms / (rs + g_norms) >= 1.0))
    sens_bad += int(np.sum(clip * g_norms > cs * (1 + 1e-15)))
    rows.append(bias_lab.VerificationRow(
        check="factor_ordering_and_sensitivity", parameters=f"{n_fuzz} fuzzed inputs",
        estimate=float(ordering_bad + sens_bad), stderr=0.0, bound=0.0,
        passed=(ordering_bad + sens_bad) == 0))

    # Prescribed eta meets its admissibility condition at the minimum
    # horizon and misses it at half that horizon.
    theory = TheoryParams(objective.smoothness, VarianceParams(1.0, 0.5), d_f=10.0, dim=10)
    t_min_n = optimizers.min_iterations_nsgd(theory, 1.5, 1.0)
    eta_ok = (
        optimizers.theorem_lr_nsgd(theory, 1.5, 1.0, t_min_n)
        <= optimizers.eta_limit_nsgd(theory, 1.5, 1.0)
        < optimizers.theorem_lr_nsgd(theory, 1.5, 1.0, max(1, t_min_n // 2))
    )
    t_min_s = optimizers.min_iterations_sgd(theory, 6.0, 1.0)
    eta_ok = eta_ok and (
        optimizers.theorem_lr_sgd(theory, 6.0, 1.0, t_min_s)
        <= optimizers.eta_limit_sgd(theory, 6.0, 1.0)
        < optimizers.theorem_lr_sgd(theory, 6.0, 1.0, max(1, t_min_s // 2))
    )
    rows.append(bias_lab.VerificationRow(
        check="eta_condition_at_min_horizon", parameters=f"T_min={t_min_n},{t_min_s}",
        estimate=float(eta_ok), stderr=0.0, bound=1.0, passed=eta_ok))

    bias_lab.write_verification_csv(out / "verification.csv", rows)
    all_passed = all(row.passed for row in rows)
    for row in rows:
        _result(check=row.check, passed=row.passed)
    _say(f"wrote {out / 'verification.csv'}")
    if not all_passed:
        _say("verification findings present")
        return EXIT_FINDING
    return EXIT_OK


def _cmd_rate(args) -> int:
    horizons = [int(tok) for tok in args.t_grid.split(",") if tok.strip()]
    if len(horizons) < 3:
        raise _UsageError("--t-grid needs at least 3 horizons")
    seed0 = 0 if args.seed is None else args.seed
    out = _prepare_out(args.out, ["rate.csv", "rate.svg"], args.force)

    rows = []
    mean_points = []
    for steps in horizons:
        metrics = []
        for k in range(args.seeds):
            config = ExperimentConfig(
                objective=ObjectiveSpec(kind="cosh", dim=args.dim),
                noise=NoiseSpec(kind="two_point_radial", tau0=args.tau0, tau1=0.0),
                optimizer=OptimizerSpec(
                    method="sgd", param=args.clip, sigma=args.sigma, theory_mode=True
                ),
                steps=steps,
                seed=seed0 + k,
            )
            metric = harness.run(config).final_metric
            metrics.append(metric)
            rows.append((steps, seed0 + k, metric))
        mean_points.append((steps, float(np.mean(metrics))))
    slope = harness.rate_fit(mean_points)

    with open(out / "rate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["steps", "seed", "final_min_grad_norm"])
        for steps, seed, metric in rows:
            writer.writerow([steps, seed, repr(metric)])
    reporting.plot_rate_fit(mean_points, slope, out / "rate.svg")
    _say(f"wrote {out / 'rate.csv'} and {out / 'rate.svg'}")
    _result(slope=repr(slope))
    return EXIT_OK


_COMMANDS = {
    "calibrate": _cmd_calibrate,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "bias": _cmd_bias,
    "verify": _cmd_verify,
    "rate": _cmd_rate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        _say(f"usage error: {exc}")
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE
    except InfeasibleBudget as exc:
        _say(f"infeasible: {exc}")
        return EXIT_FINDING


if __name__ == "__main__":
    sys.exit(main())
