"""The six figure kinds and their deterministic rendering."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import io

FIGURE_KINDS = ("entropy", "role_entropy", "passk", "sparsity", "probe", "lengths")

# Fixed style so identical inputs give identical bytes.
_RC = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "svg.hashsalt": "plotkit",
}
_METADATA = {"Software": "plotkit"}

DEFAULT_SMOOTHING = {"lengths": 0.9}


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[Path, ...]
    output: Path
    smoothing: float | None = None  # None: per-kind default (0.9 for lengths)
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise ValueError("at least one input is required")
        if self.smoothing is not None and not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must be in [0, 1)")
        if self.labels is not None and len(self.labels) != len(self.inputs):
            raise ValueError("need exactly one label per input")


def _smooth(rows, factor):
    if factor <= 0.0:
        return rows
    out = []
    s = rows[0][1]
    for x, v in rows:
        s = factor * s + (1.0 - factor) * v
        out.append((x, s))
    return out


def _label(spec: FigureSpec, i: int) -> str:
    if spec.labels:
        return spec.labels[i]
    path = spec.inputs[i]
    return path.parent.name if path.name == "export" else path.stem or path.name


def _single_input(spec: FigureSpec) -> Path:
    if len(spec.inputs) != 1:
        raise ValueError(f"{spec.kind} takes exactly one input, got {len(spec.inputs)}")
    return spec.inputs[0]


def _draw_entropy(spec: FigureSpec, ax):
    for i, export_dir in enumerate(spec.inputs):
        rows = io.read_metric(export_dir, "policy_entropy")
        ax.plot(*zip(*rows), label=_label(spec, i))
    ax.set_xlabel("iteration")
    ax.set_ylabel("policy entropy (nats/token)")
    ax.legend()


def _draw_role_entropy(spec: FigureSpec, ax):
    export_dir = _single_input(spec)
    for metric in ("policy_entropy", "proposer_entropy", "solver_entropy"):
        rows = io.read_metric(export_dir, metric)
        ax.plot(*zip(*rows), label=metric.replace("_entropy", ""))
    ax.set_xlabel("iteration")
    ax.set_ylabel("entropy (nats/token)")
    ax.legend()


def _draw_passk(spec: FigureSpec, ax):
    for i, path in enumerate(spec.inputs):
        rows = io.read_passk_csv(path)
        ax.plot(*zip(*rows), marker="o", markersize=3, label=_label(spec, i))
    ax.set_xscale("log", base=2)
    ax.set_xlabel("k")
    ax.set_ylabel("pass@k")
    ax.set_ylim(0.0, 1.05)
    ax.legend()


def _draw_sparsity(spec: FigureSpec, ax):
    rows = [row for path in spec.inputs for row in io.read_sparsity_csv(path)]
    labels = [row["label"] for row in rows]
    ax.bar(range(len(rows)), [row["sparsity"] for row in rows], color="tab:blue")
    ax.set_xticks(range(len(rows)), labels, rotation=20, ha="right")
    ax.set_ylabel("update sparsity")
    ax.set_ylim(0.0, 1.0)


def _draw_lengths(spec: FigureSpec, ax, smoothing: float):
    for i, export_dir in enumerate(spec.inputs):
        for metric, style in (("response_len_proposer", "-"), ("response_len_solver", "--")):
            rows = _smooth(io.read_metric(export_dir, metric), smoothing)
            role = metric.rsplit("_", 1)[1]
            ax.plot(*zip(*rows), style, label=f"{_label(spec, i)} {role}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("response length (tokens)")
    ax.legend()


def _draw_probe(spec: FigureSpec, axes):
    probe_dir = _single_input(spec)
    panels = (
        ("probe_lengths.csv", "mean response length"),
        ("probe_solve_rates.csv", "mean solve rate"),
    )
    for ax, (name, ylabel) in zip(axes, panels):
        by_snapshot = io.read_probe_csv(Path(probe_dir) / name)
        for snap in sorted(by_snapshot):
            rows = sorted(by_snapshot[snap])
            ax.plot(*zip(*rows), marker="o", markersize=3, label=f"iter {snap} params")
        ax.set_xlabel("task creation iteration")
        ax.set_ylabel(ylabel)
    axes[0].legend()


def render(spec: FigureSpec) -> Path:
    """Render one figure to spec.output; pure with respect to the inputs."""
    smoothing = spec.smoothing
    if smoothing is None:
        smoothing = DEFAULT_SMOOTHING.get(spec.kind, 0.0)
    with plt.rc_context(_RC):
        if spec.kind == "probe":
            fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.6))
        else:
            fig, ax = plt.subplots()
        try:
            if spec.kind == "entropy":
                _draw_entropy(spec, ax)
            elif spec.kind == "role_entropy":
                _draw_role_entropy(spec, ax)
            elif spec.kind == "passk":
                _draw_passk(spec, ax)
            elif spec.kind == "sparsity":
                _draw_sparsity(spec, ax)
            elif spec.kind == "lengths":
                _draw_lengths(spec, ax, smoothing)
            else:
                _draw_probe(spec, axes)
            fig.tight_layout()
            spec.output.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(spec.output, metadata=_METADATA)
        finally:
            plt.close(fig)
    return spec.output
