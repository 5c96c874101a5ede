"""Figures from a scenario summary CSV (mean with one std-error bars)."""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PANELS = (
    ("avg_delay_per_fragment", "delay per fragment (slots)"),
    ("avg_power_actual", "average power"),
    ("final_multiplier", "final multiplier"),
)
XLABELS = {
    "delay_target": "delay target (slots)",
    "mean_gain_db": "mean channel gain (dB)",
    "bid_bits": "bid width (bits)",
    "policy": "policy",
    "max_power": "max power",
}


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(s):
    return float(s) if s not in ("", None) else float("nan")


def _series(rows):
    """{(group, policy): (x, mean, se) per metric} keeping file order."""
    out = defaultdict(list)
    for r in rows:
        out[r["group"], r["policy"]].append(r)
    return out


def render(summary_csv, out_dir=None, dpi: int = 120) -> list[str]:
    """One PNG per panel next to the summary (or in ``out_dir``).  Returns the paths."""
    rows = read_summary(summary_csv)
    if not rows:
        return []
    out_dir = out_dir or os.path.dirname(os.path.abspath(summary_csv))
    os.makedirs(out_dir, exist_ok=True)
    param = rows[0]["parameter"]
    name = rows[0]["scenario"]
    categorical = param == "policy"
    series = _series(rows)
    paths = []
    for metric, label in PANELS:
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for (group, policy), rs in series.items():
            xs = list(range(len(rs))) if categorical else [_num(r["value"]) for r in rs]
            mean = [_num(r[f"{metric}_mean"]) for r in rs]
            n = [max(int(r["runs"]), 1) for r in rs]
            se = [_num(r[f"{metric}_std"]) / k ** 0.5 for r, k in zip(rs, n)]
            ax.errorbar(xs, mean, yerr=se, marker="o", ms=4, capsize=3, lw=1.2, label=f"{group} / {policy}")
            if categorical:
                ax.set_xticks(xs)
                ax.set_xticklabels([r["value"] for r in rs])
        if metric == "avg_delay_per_fragment" and param == "delay_target":
            lo, hi = ax.get_xlim()
            ax.plot([lo, hi], [lo, hi], color="0.6", ls="--", lw=0.8, label="target")
        if "oracle_power" in rows[0] and metric == "avg_power_actual":
            rs = [r for r in rows if r.get("oracle_power")]
            ax.plot([_num(r["value"]) for r in rs], [_num(r["oracle_power"]) for r in rs], "k^", ms=5,
                    label="oracle")
        ax.set_xlabel(XLABELS.get(param, param))
        ax.set_ylabel(label)
        ax.set_title(name, fontsize=10)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7, frameon=False)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{name}_{metric}.png")
        fig.savefig(path, dpi=dpi)
        plt.close(fig)
        paths.append(path)
    return paths
