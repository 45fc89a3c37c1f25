import csv
from pathlib import Path

import numpy as np
import pytest

# synthetic two-epoch layout: T_init = 10, epochs start at 11 and 21,
# ending at steps 20 and 40
T_INIT = 10
KS = list(range(11, 41))
METHODS = ["kalman", "opf:0.5", "opf:1"]
SEEDS = [0, 1, 2]


def write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)


def make_output_dir(root: Path, beta_values=(2.5,)) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)

    regret_rows = []
    for seed in SEEDS:
        for method in METHODS:
            scale = 0.0 if method == "kalman" else (3.0 if method == "opf:1" else 1.5)
            cum = 0.0
            for k in KS:
                online = scale * abs(rng.standard_normal()) + 1.0
                kalman = 1.0
                cum += online - kalman if method != "kalman" else 0.0
                regret_rows.append(
                    [k, seed, method, "" if method == "kalman" else method.split(":")[1],
                     online, kalman, cum]
                )
    write_csv(
        root / "regret.csv",
        ["k", "seed", "method", "gamma_or_alpha", "online_loss", "kalman_loss", "cum_regret"],
        regret_rows,
    )

    decomp_rows = []
    for seed in SEEDS:
        for method in METHODS[1:]:
            for k in (20, 40):
                base = 2.0 if method == "opf:0.5" else 5.0
                decomp_rows.append(
                    [k, seed, method,
                     base * 0.5 + rng.uniform(0, 0.1),
                     base * 10 + rng.uniform(0, 1),
                     base + rng.uniform(0, 0.5),
                     base * 3 + rng.uniform(0, 0.5),
                     50 + rng.uniform(0, 5),
                     12 + rng.uniform(0, 2)]
                )
    write_csv(
        root / "decomposition.csv",
        ["k", "seed", "method", "reg_factor", "regress_factor", "bias_factor",
         "accum_sum", "logdet_V", "trace_term"],
        decomp_rows,
    )

    bias_rows = []
    for beta in beta_values:
        for seed in SEEDS:
            for method in METHODS[1:]:
                bias_rows.append(
                    [seed, method, method.split(":")[1], beta,
                     1.0 + rng.uniform(0, 0.2),
                     0.01 + rng.uniform(0, 0.002)]
                )
    write_csv(
        root / "biascancel.csv",
        ["seed", "method", "gamma_or_alpha", "beta", "mean_bias_norm", "mean_cancel_norm"],
        bias_rows,
    )
    return root


@pytest.fixture()
def csv_dir(tmp_path):
    return make_output_dir(tmp_path / "outputs")
