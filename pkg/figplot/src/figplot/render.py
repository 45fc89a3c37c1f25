"""Figure renderers over benchmark CSV directories.

All statistics (medians, quartiles, standard deviations) are recomputed
from the raw per-seed rows, never read from summary files. Rendering is
deterministic: fixed style, fixed PNG metadata, no timestamps.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .schema import FIGURE_KINDS, SchemaError, epoch_end_steps, load_table

_SAVEFIG_KW = dict(dpi=120, metadata={"Software": "figplot"})


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    in_dir: Path
    out_path: Path
    group: str | None = None  # override of the grouping column (bias-cancel)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise SchemaError(
                f"unknown figure kind {self.kind!r}; allowed: {FIGURE_KINDS}"
            )


def render(spec: FigureSpec) -> Path:
    df = load_table(spec.in_dir, spec.kind)
    fig = _RENDERERS[spec.kind](df, spec)
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out_path, **_SAVEFIG_KW)
    plt.close(fig)
    return spec.out_path


def _quantile_bands(df: pd.DataFrame, x: str, y: str):
    """Per-x median and quartiles of y across seeds."""
    g = df.groupby(x)[y]
    return g.median(), g.quantile(0.25), g.quantile(0.75)


def _method_order(df: pd.DataFrame) -> list[str]:
    return sorted(df["method"].unique())


def _render_regret_curves(df: pd.DataFrame, spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for method in _method_order(df):
        sel = df[df["method"] == method]
        med, lo, hi = _quantile_bands(sel, "k", "cum_regret")
        ax.plot(med.index, med.values, label=method, linewidth=1.5)
        ax.fill_between(med.index, lo.values, hi.values, alpha=0.25, linewidth=0)
    ax.set_xlabel("step k")
    ax.set_ylabel("cumulative regret")
    ax.set_title("Online prediction regret (median, interquartile band)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def _render_tradeoff(df: pd.DataFrame, spec: FigureSpec):
    # final-step factor values per run
    final_k = df["k"].max()
    last = df[df["k"] == final_k]
    if last.empty:  # pragma: no cover - guarded by load_table
        raise SchemaError("no rows at the final step")
    methods = _method_order(last)
    stats = last.groupby("method")[["regress_factor", "reg_factor"]].agg(
        ["mean", "std"]
    )
    x = np.arange(len(methods))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for offset, (col, label) in zip(
        (-width / 2, width / 2),
        (("regress_factor", "regression error"), ("reg_factor", "regularization error")),
    ):
        means = stats.loc[methods, (col, "mean")].to_numpy()
        stds = np.nan_to_num(stats.loc[methods, (col, "std")].to_numpy())
        ax.bar(x + offset, means, width, yerr=stds, capsize=3, label=label)
    ax.set_xticks(x, methods, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(f"factor value at k = {final_k}")
    ax.set_title("Regression vs regularization trade-off (mean, one std)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    return fig


def _render_order_ratio(df: pd.DataFrame, spec: FigureSpec):
    ends = epoch_end_steps(df["k"])
    at_ends = df[df["k"].isin(ends)].copy()
    logs = np.log(at_ends["k"].to_numpy(dtype=float))
    fig, axes = plt.subplots(1, 3, figsize=(12, 4), sharex=True)
    for ax, order in zip(axes, (1, 2, 3)):
        at_ends[f"ratio_{order}"] = at_ends["cum_regret"] / logs**order
        for method in _method_order(at_ends):
            sel = at_ends[at_ends["method"] == method]
            med, lo, hi = _quantile_bands(sel, "k", f"ratio_{order}")
            ax.plot(med.index, med.values, marker="o", markersize=3, label=method)
            ax.fill_between(med.index, lo.values, hi.values, alpha=0.25, linewidth=0)
        ax.set_xscale("log")
        ax.set_xlabel("step k (epoch ends)")
        ax.set_ylabel(f"regret / ln^{order} k")
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=7)
    fig.suptitle("Regret against powers of ln k")
    fig.tight_layout()
    return fig


def _render_bias_cancel(df: pd.DataFrame, spec: FigureSpec):
    group = spec.group
    if group is None:
        # prefer the sweep axis when it varies, else the method label
        group = "beta" if df["beta"].nunique() > 1 else "method"
    if group not in df.columns:
        raise SchemaError(f"biascancel.csv is missing required column '{group}'")
    keys = sorted(df[group].unique())
    med = df.groupby(group)[["mean_bias_norm", "mean_cancel_norm"]].median()
    x = np.arange(len(keys))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(x - width / 2, med.loc[keys, "mean_bias_norm"], width, label="raw bias")
    ax.bar(
        x + width / 2,
        med.loc[keys, "mean_cancel_norm"],
        width,
        label="after cancellation",
    )
    ax.set_yscale("log")
    ax.set_xticks(x, [str(k) for k in keys], rotation=20, ha="right", fontsize=8)
    ax.set_xlabel(group)
    ax.set_ylabel("mean norm over the last epoch")
    ax.set_title("Truncation bias and its cancellation (median over seeds)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    return fig


_RENDERERS = {
    "regret-curves": _render_regret_curves,
    "tradeoff": _render_tradeoff,
    "order-ratio": _render_order_ratio,
    "bias-cancel": _render_bias_cancel,
}
