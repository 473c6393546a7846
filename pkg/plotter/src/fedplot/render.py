"""Render training-metrics CSVs into the four standard figure styles.

The input schema is the simulator's metrics CSV: one row per (run, round)
with mean_loss, ppl_analog, avg_grad_norm, per-layer activation moments, and
optionally a swept_value column from a sweep. Rendering never mutates the
inputs; the same spec rendered twice produces the same file.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

KINDS = ("convergence", "gradnorm", "client_panel", "activations")

# columns every metrics CSV must carry, whatever the layer count
BASE_COLUMNS = (
    "run_id", "method", "rule", "strategy", "rank", "n_clients", "seed",
    "round", "mean_loss", "ppl_analog", "avg_grad_norm", "diverged_count",
)


class SchemaError(ValueError):
    """A required column is missing from an input CSV."""


@dataclass
class FigureSpec:
    kind: str
    csv_paths: list[str]
    out_path: str
    group_by: str | None = None  # default depends on kind
    log_x: bool = False
    log_y: bool | None = None  # None means the kind's convention

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.csv_paths:
            raise ValueError("at least one input CSV is required")


@dataclass
class RenderResult:
    """What was drawn, for callers that want to check the figure's shape."""

    out_path: str
    panels: list[str]  # one per method
    curves_per_panel: dict[str, list] = field(default_factory=dict)  # group values, sorted
    colors_per_panel: dict[str, list] = field(default_factory=dict)  # RGBA per curve
    empty: bool = False


def load_metrics(paths: list[str]) -> pd.DataFrame:
    frames = []
    for path in paths:
        df = pd.read_csv(path)
        for col in BASE_COLUMNS:
            if col not in df.columns:
                raise SchemaError(f"column {col!r} missing from {path}")
        frames.append(df)
    return pd.concat(frames, ignore_index=True)


def _default_group(kind: str, df: pd.DataFrame) -> str:
    if kind == "client_panel":
        return "n_clients"
    if "swept_value" in df.columns:
        return "swept_value"
    return "rank"


def _shades(n: int):
    """Sequential shades, darker for larger group values."""
    cmap = matplotlib.colormaps["Blues"]
    if n == 1:
        return [cmap(0.8)]
    return [cmap(0.35 + 0.6 * i / (n - 1)) for i in range(n)]


def _empty_figure(spec: FigureSpec) -> RenderResult:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.savefig(spec.out_path)
    plt.close(fig)
    return RenderResult(out_path=spec.out_path, panels=[], empty=True)


def _activation_columns(df: pd.DataFrame) -> tuple[list[str], list[str]]:
    means = sorted(
        (c for c in df.columns if c.startswith("act_mean_l")),
        key=lambda c: int(c.rsplit("l", 1)[1]),
    )
    variances = sorted(
        (c for c in df.columns if c.startswith("act_var_l")),
        key=lambda c: int(c.rsplit("l", 1)[1]),
    )
    if not means or not variances:
        raise SchemaError("no act_mean_l*/act_var_l* columns found")
    return means, variances


def render(spec: FigureSpec) -> RenderResult:
    df = load_metrics(spec.csv_paths)
    if df.empty:
        return _empty_figure(spec)

    group_col = spec.group_by or _default_group(spec.kind, df)
    if group_col not in df.columns:
        raise SchemaError(f"grouping column {group_col!r} not in input")

    if spec.kind == "activations":
        return _render_activations(spec, df, group_col)

    metric, label, log_y_default = {
        "convergence": ("mean_loss", "validation loss", False),
        "gradnorm": ("avg_grad_norm", "avg gradient norm", True),
        "client_panel": ("mean_loss", "validation loss", False),
    }[spec.kind]
    log_y = log_y_default if spec.log_y is None else spec.log_y

    methods = sorted(df["method"].unique())
    fig, axes = plt.subplots(
        1, len(methods), figsize=(5 * len(methods), 4), squeeze=False, sharey=True
    )
    result = RenderResult(out_path=spec.out_path, panels=methods)
    for ax, method in zip(axes[0], methods):
        sub = df[df["method"] == method]
        values = sorted(sub[group_col].unique())
        colors = _shades(len(values))
        for value, color in zip(values, colors):
            curve = sub[sub[group_col] == value].sort_values("round")
            points = curve.dropna(subset=[metric])
            ax.plot(
                points["round"], points[metric],
                color=color, label=f"{group_col}={value}",
            )
        ax.set_title(method)
        ax.set_xlabel("round")
        ax.set_ylabel(label)
        if spec.log_x:
            ax.set_xscale("log")
        if log_y:
            ax.set_yscale("log")
        ax.legend(fontsize=8)
        result.curves_per_panel[method] = values
        result.colors_per_panel[method] = colors
    fig.tight_layout()
    fig.savefig(spec.out_path)
    plt.close(fig)
    return result


def _render_activations(spec: FigureSpec, df: pd.DataFrame, group_col: str) -> RenderResult:
    mean_cols, var_cols = _activation_columns(df)
    methods = sorted(df["method"].unique())
    fig, axes = plt.subplots(
        2, len(methods), figsize=(5 * len(methods), 7), squeeze=False
    )
    result = RenderResult(out_path=spec.out_path, panels=methods)
    for col_idx, method in enumerate(methods):
        sub = df[df["method"] == method]
        values = sorted(sub[group_col].unique())
        colors = _shades(len(values))
        for row_idx, (cols, label) in enumerate(
            ((mean_cols, "activation mean"), (var_cols, "activation variance"))
        ):
            ax = axes[row_idx][col_idx]
            for value, color in zip(values, colors):
                curve = sub[sub[group_col] == value].sort_values("round")
                for i, col in enumerate(cols):
                    style = "-" if i == 0 else "--"
                    ax.plot(
                        curve["round"], curve[col], style, color=color,
                        label=f"{group_col}={value}" if i == 0 else None,
                    )
            ax.set_xlabel("round")
            ax.set_ylabel(label)
            ax.set_title(method if row_idx == 0 else "")
            ax.legend(fontsize=8)
        result.curves_per_panel[method] = values
        result.colors_per_panel[method] = colors
    fig.tight_layout()
    fig.savefig(spec.out_path)
    plt.close(fig)
    return result
