"""Cumulative-regret curves with stderr bands, written as deterministic SVG."""

from __future__ import annotations

import csv
from collections import OrderedDict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SUMMARY_COLUMNS = ("group", "policy", "N", "D", "t", "mean", "stderr", "n_seeds")


def read_summary(path) -> "OrderedDict[str, dict]":
    """Group summary rows into ``{group: {"t", "mean", "stderr"}}`` in file order."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("group", "t", "mean", "stderr") if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        groups: OrderedDict[str, dict] = OrderedDict()
        for row in reader:
            g = groups.setdefault(row["group"], {"t": [], "mean": [], "stderr": []})
            g["t"].append(int(row["t"]))
            g["mean"].append(float(row["mean"]))
            g["stderr"].append(float(row["stderr"]))
    return OrderedDict((k, {c: np.asarray(v) for c, v in g.items()}) for k, g in groups.items())


def emit_plot(groups, out_path, title: str | None = None, ylabel: str = "cumulative regret") -> None:
    """One line per group, ``gid`` set to the group name, with a mean +- stderr band."""
    if not groups:
        raise ValueError("nothing to plot")
    with plt.rc_context({"svg.hashsalt": "fnucb", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, g in groups.items():
            t, mu, se = g["t"], g["mean"], g["stderr"]
            line, = ax.plot(t, mu, label=name, lw=1.2)
            line.set_gid(name)
            if np.any(se > 0):
                ax.fill_between(t, mu - se, mu + se, alpha=0.2, color=line.get_color(), lw=0)
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
