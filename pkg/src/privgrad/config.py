"""Experiment configuration and the plain-text config-file format.

Config files hold one ``section.key = value`` assignment per line; blank
lines and ``#`` comments are ignored and unknown keys are errors. The full
schema is documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, field

OBJECTIVE_KINDS = ("cosh", "quadratic", "logistic")
OPTIMIZER_METHODS = ("nsgd", "sgd")
SCHEDULE_KINDS = ("constant", "step_decay")


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str
    dim: int = 10
    condition_number: float = 10.0
    n_terms: int = 2000
    data_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("objective.dim must be >= 1")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    tau0: float = 0.0
    tau1: float = 0.0


@dataclass(frozen=True)
class OptimizerSpec:
    """Optimizer selection: ``param`` is the regularizer for nsgd and the
    clipping threshold for sgd. Free mode takes an explicit eta; theory mode
    derives it from the objective and noise constants instead."""

    method: str
    param: float
    sigma: float = 0.0
    eta: float | None = None
    theory_mode: bool = False
    batch_size: int = 1

    def __post_init__(self) -> None:
        if self.method not in OPTIMIZER_METHODS:
            raise ValueError(f"unknown optimizer method {self.method!r}")
        if self.theory_mode and self.eta is not None:
            raise ValueError("theory mode derives eta; do not set optimizer.eta")
        if not self.theory_mode and self.eta is None:
            raise ValueError("free mode requires optimizer.eta")


@dataclass(frozen=True)
class Schedule:
    kind: str = "constant"
    milestones: tuple[int, ...] = ()
    factor: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("schedule.milestones must be strictly increasing")

    def eta_at(self, base_eta: float, step: int) -> float:
        if self.kind == "constant":
            return base_eta
        passed = sum(1 for m in self.milestones if step >= m)
        return base_eta * self.factor**passed


@dataclass(frozen=True)
class ExperimentConfig:
    objective: ObjectiveSpec
    noise: NoiseSpec
    optimizer: OptimizerSpec
    steps: int
    seed: int = 0
    eval_every: int = 0
    x0_scale: float = 1.0
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("run.steps must be >= 1")
        if self.eval_every < 0:
            raise ValueError("run.eval_every must be >= 0 (0 selects the default)")

    def effective_eval_every(self) -> int:
        # Cap full-gradient evaluations at roughly 200 per run.
        return self.eval_every if self.eval_every > 0 else max(1, self.steps // 200)


@dataclass(frozen=True)
class SweepSpec:
    lr_values: tuple[float, ...]
    param_values: tuple[float, ...]
    n_seeds: int = 3

    def __post_init__(self) -> None:
        if not self.lr_values or not self.param_values:
            raise ValueError("sweep grids must be nonempty")
        if self.n_seeds < 1:
            raise ValueError("sweep.seeds must be >= 1")


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


_CONVERTERS = {
    "objective.kind": str,
    "objective.dim": int,
    "objective.condition_number": float,
    "objective.n_terms": int,
    "objective.data_seed": int,
    "noise.kind": str,
    "noise.tau0": float,
    "noise.tau1": float,
    "optimizer.method": str,
    "optimizer.param": float,
    "optimizer.sigma": float,
    "optimizer.eta": float,
    "optimizer.theory": _parse_bool,
    "optimizer.batch_size": int,
    "run.steps": int,
    "run.seed": int,
    "run.eval_every": int,
    "run.x0_scale": float,
    "schedule.kind": str,
    "schedule.milestones": _parse_int_list,
    "schedule.factor": float,
    "sweep.lr": _parse_float_list,
    "sweep.param": _parse_float_list,
    "sweep.seeds": int,
}


def parse_config_text(text: str) -> dict:
    """Parse ``section.key = value`` lines into a typed mapping."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONVERTERS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate config key {key!r}")
        try:
            values[key] = _CONVERTERS[key](value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return values


def experiment_config_from_mapping(values: dict) -> ExperimentConfig:
    """Assemble an :class:`ExperimentConfig` from parsed key-value pairs."""
    required = ("objective.kind", "optimizer.method", "optimizer.param", "run.steps")
    for key in required:
        if key not in values:
            raise ValueError(f"missing required config key {key!r}")
    objective = ObjectiveSpec(
        kind=values["objective.kind"],
        dim=values.get("objective.dim", 10),
        condition_number=values.get("objective.condition_number", 10.0),
        n_terms=values.get("objective.n_terms", 2000),
        data_seed=values.get("objective.data_seed", 0),
    )
    noise = NoiseSpec(
        kind=values.get("noise.kind", "none"),
        tau0=values.get("noise.tau0", 0.0),
        tau1=values.get("noise.tau1", 0.0),
    )
    optimizer = OptimizerSpec(
        method=values["optimizer.method"],
        param=values["optimizer.param"],
        sigma=values.get("optimizer.sigma", 0.0),
        eta=values.get("optimizer.eta"),
        theory_mode=values.get("optimizer.theory", False),
        batch_size=values.get("optimizer.batch_size", 1),
    )
    schedule = Schedule(
        kind=values.get("schedule.kind", "constant"),
        milestones=values.get("schedule.milestones", ()),
        factor=values.get("schedule.factor", 0.1),
    )
    return ExperimentConfig(
        objective=objective,
        noise=noise,
        optimizer=optimizer,
        steps=values["run.steps"],
        seed=values.get("run.seed", 0),
        eval_every=values.get("run.eval_every", 0),
        x0_scale=values.get("run.x0_scale", 1.0),
        schedule=schedule,
    )


def sweep_spec_from_mapping(values: dict) -> SweepSpec:
    for key in ("sweep.lr", "sweep.param"):
        if key not in values:
            raise ValueError(f"missing required config key {key!r}")
    return SweepSpec(
        lr_values=values["sweep.lr"],
        param_values=values["sweep.param"],
        n_seeds=values.get("sweep.seeds", 3),
    )


def load_experiment_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return experiment_config_from_mapping(parse_config_text(fh.read()))
