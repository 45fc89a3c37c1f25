"""CSV schema contracts for benchmark output directories.

Each figure kind reads one CSV produced by the benchmark harness and
requires a fixed set of columns. Loading validates presence of every
required column (errors name the missing column) and rejects files with
no data rows, so schema drift fails loudly instead of producing empty
figures.
"""
from __future__ import annotations

from pathlib import Path

import pandas as pd


class SchemaError(ValueError):
    """Raised when an input CSV does not match the expected schema."""


FIGURE_KINDS = ("regret-curves", "tradeoff", "order-ratio", "bias-cancel")

SOURCE_FILE = {
    "regret-curves": "regret.csv",
    "order-ratio": "regret.csv",
    "tradeoff": "decomposition.csv",
    "bias-cancel": "biascancel.csv",
}

REQUIRED_COLUMNS = {
    "regret-curves": ("k", "seed", "method", "cum_regret"),
    "order-ratio": ("k", "seed", "method", "cum_regret"),
    "tradeoff": ("k", "seed", "method", "reg_factor", "regress_factor"),
    "bias-cancel": ("seed", "method", "beta", "mean_bias_norm", "mean_cancel_norm"),
}


def load_table(in_dir: str | Path, kind: str) -> pd.DataFrame:
    if kind not in FIGURE_KINDS:
        raise SchemaError(f"unknown figure kind {kind!r}; allowed: {FIGURE_KINDS}")
    path = Path(in_dir) / SOURCE_FILE[kind]
    if not path.exists():
        raise SchemaError(f"missing input file {path}")
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path.name} has no header or content") from exc
    for col in REQUIRED_COLUMNS[kind]:
        if col not in df.columns:
            raise SchemaError(f"{path.name} is missing required column '{col}'")
    if df.empty:
        raise SchemaError(f"{path.name} has a header but no data rows")
    return df


def epoch_end_steps(ks: pd.Series) -> list[int]:
    """Epoch-end steps recovered from the step column alone.

    The first prediction step is T_init + 1 and epochs double:
    T_l = 2^{l-1} T_init + 1, ending at 2 T_l - 2.
    """
    k_min, k_max = int(ks.min()), int(ks.max())
    t_init = k_min - 1
    if t_init < 1:
        raise SchemaError(f"step column starts at {k_min}; expected k >= 2")
    ends = []
    t_l = t_init + 1
    while 2 * t_l - 2 <= k_max:
        ends.append(2 * t_l - 2)
        t_l = 2 * t_l - 1
    if not ends:
        raise SchemaError("step range covers no complete epoch")
    return ends
