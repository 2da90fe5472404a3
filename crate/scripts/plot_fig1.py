"""Plot the CSV output of `annet benchmark fig1a` / `fig1b`.

fig1a columns: rho, diff, mean_acc, stderr, reps (one row per match rate and diff).
fig1b columns: rep, acc_with, acc_without, success_with, success_without.

Usage:
    python scripts/plot_fig1.py fig1a results.csv out.png
    python scripts/plot_fig1.py fig1b reps.csv out.png
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def plot_fig1a(df, ax):
    for rho, rows in df.groupby("rho"):
        rows = rows.sort_values("diff")
        ax.errorbar(rows["diff"], rows["mean_acc"], yerr=rows["stderr"], marker="o", label=f"rho = {rho:g}")
    ax.set_xlabel("c_in - c_out")
    ax.set_ylabel("fraction correctly classified")
    ax.legend()


def plot_fig1b(df, ax):
    ax.hist([df["acc_with"], df["acc_without"]], bins=20, label=["with metadata", "without metadata"])
    ax.set_xlabel("fraction correctly classified")
    ax.set_ylabel("repetitions")
    ax.legend()


def main(argv):
    if len(argv) != 4 or argv[1] not in ("fig1a", "fig1b"):
        sys.exit(__doc__)
    kind, src, dst = argv[1:]
    df = pd.read_csv(src)
    fig, ax = plt.subplots(figsize=(5, 4))
    (plot_fig1a if kind == "fig1a" else plot_fig1b)(df, ax)
    fig.tight_layout()
    fig.savefig(dst, dpi=150)


if __name__ == "__main__":
    main(sys.argv)
