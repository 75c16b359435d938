"""Result serialization: delimited output plus rendered figures.

Every report path writes a CSV and, where it makes sense, an SVG figure
next to it. Figures use a fixed hash salt and omit the creation date so
repeated runs with the same seed produce byte-identical files.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import SweepResult, Trajectory  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "privgrad"

#: Passed to savefig so SVG output carries no volatile metadata.
SVG_METADATA = {"Date": None}

TRAJECTORY_COLUMNS = ("step", "loss", "grad_norm", "min_grad_norm", "cum_seconds")
SWEEP_COLUMNS = ("lr", "param_value", "seed", "final_metric")


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for i in range(len(trajectory.steps)):
            writer.writerow(
                [
                    int(trajectory.steps[i]),
                    repr(float(trajectory.losses[i])),
                    repr(float(trajectory.grad_norms[i])),
                    repr(float(trajectory.min_grad_norms[i])),
                    repr(float(trajectory.cum_seconds[i])),
                ]
            )


def read_trajectory_csv(path) -> dict[str, list[float]]:
    """Parse a trajectory CSV back into its recorded columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRAJECTORY_COLUMNS:
            raise ValueError(f"unexpected trajectory header {header!r}")
        columns: dict[str, list[float]] = {name: [] for name in TRAJECTORY_COLUMNS}
        for row in reader:
            columns["step"].append(int(row[0]))
            for name, token in zip(TRAJECTORY_COLUMNS[1:], row[1:]):
                columns[name].append(float(token))
    return columns


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for lr, param, seed, metric in result.rows:
            writer.writerow([repr(float(lr)), repr(float(param)), int(seed), repr(float(metric))])


def emit_csv(data, path) -> None:
    """Serialize a trajectory or sweep result to its documented CSV schema."""
    if isinstance(data, Trajectory):
        write_trajectory_csv(data, path)
    elif isinstance(data, SweepResult):
        write_sweep_csv(data, path)
    else:
        raise TypeError(f"no CSV writer for {type(data).__name__}")


def plot_trajectory(trajectory: Trajectory, path) -> None:
    fig, (ax_loss, ax_grad) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(trajectory.steps, trajectory.losses, lw=1.0)
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("loss")
    ax_grad.plot(trajectory.steps, trajectory.grad_norms, lw=1.0, label="grad norm")
    ax_grad.plot(trajectory.steps, trajectory.min_grad_norms, lw=1.0, label="min so far")
    ax_grad.set_xlabel("step")
    ax_grad.set_ylabel("gradient norm")
    ax_grad.set_yscale("log")
    ax_grad.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)


def plot_sweep_heatmap(result: SweepResult, path) -> None:
    fig, ax = plt.subplots(figsize=(1.2 * len(result.param_values) + 2, 1.0 * len(result.lr_values) + 1.5))
    # pcolormesh keeps the cells as vector paths, one per grid entry.
    image = ax.pcolormesh(result.mean_metric, cmap="viridis")
    ax.set_xticks(np.arange(len(result.param_values)) + 0.5)
    ax.set_xticklabels([f"{v:g}" for v in result.param_values])
    ax.set_yticks(np.arange(len(result.lr_values)) + 0.5)
    ax.set_yticklabels([f"{v:g}" for v in result.lr_values])
    ax.invert_yaxis()
    param_name = "regularizer r" if result.method == "nsgd" else "clip threshold c"
    ax.set_xlabel(param_name)
    ax.set_ylabel("learning rate")
    fig.colorbar(image, ax=ax, label="final min grad norm")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)


def emit_plot(data, path) -> None:
    """Render the figure matching a trajectory or sweep result."""
    if isinstance(data, Trajectory):
        plot_trajectory(data, path)
    elif isinstance(data, SweepResult):
        plot_sweep_heatmap(data, path)
    else:
        raise TypeError(f"no plot for {type(data).__name__}")


def plot_rate_fit(points: list[tuple[float, float]], slope: float, path) -> None:
    horizons = [t for t, _ in points]
    metrics = [m for _, m in points]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(horizons, metrics, "o", label="runs")
    anchor = metrics[0]
    ax.loglog(
        horizons,
        [anchor * (t / horizons[0]) ** slope for t in horizons],
        "--",
        label=f"slope {slope:.3f}",
    )
    ax.set_xlabel("iterations T")
    ax.set_ylabel("final min grad norm")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)


def plot_bias_curve(param_values, bias_norms, mode: str, path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(param_values, bias_norms, "o-")
    ax.set_xlabel("regularizer r" if mode == "normalize" else "clip threshold c")
    ax.set_ylabel("bias norm")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)


def plot_first_order_bounds(s_grid, estimates, stderrs, bounds, label: str, path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.errorbar(s_grid, estimates, yerr=[4 * e for e in stderrs], fmt="o", label="MC estimate")
    ax.plot(s_grid, bounds, "--", label=f"{label} lower bound")
    ax.set_xlabel("gradient norm s")
    ax.set_ylabel("first-order term")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
