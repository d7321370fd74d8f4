"""Figures from the CSV outputs of ``spatboost simulate``.

Usage::

    python3 scripts/plot_study.py RESULTS_DIR [--out FIGDIR]

Reads ``metrics.csv``, ``replications.csv`` and ``coefficients.csv`` and
writes three PNG files:

* ``lambda_hat.png``: boxplots of the estimated lambda per variant and
  scenario, with the true value marked;
* ``coefficients.png``: boxplots of the four informative estimates per
  variant, with the true effects marked;
* ``selection.png``: TPR, TNR and FDR per variant across scenarios.

Needs matplotlib (``pip install .[plot]``).
"""

import argparse
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

INFORMATIVE = ("X1", "X2", "W.X1", "W.X2")

plt.rcParams.update({
    "figure.dpi": 110,
    "savefig.dpi": 200,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.4,
    "font.size": 9,
})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def scenario_key(row):
    return (int(row["q"]), int(row["K"]), float(row["lambda"]))


def scenario_label(key):
    q, K, lam = key
    return f"q={q} K={K}\nlambda={lam:g}"


def plot_lambda(reps, out):
    groups = defaultdict(list)
    for r in reps:
        if r["ok"] == "True" and r["lam_hat"]:
            groups[(scenario_key(r), r["variant"])].append(float(r["lam_hat"]))
    scenarios = sorted({k for k, _ in groups})
    variants = sorted({v for _, v in groups})
    fig, axes = plt.subplots(1, len(scenarios), figsize=(2.6 * len(scenarios), 3.2), squeeze=False, sharey=True)
    for ax, sc in zip(axes[0], scenarios):
        data = [groups.get((sc, v), []) for v in variants]
        ax.boxplot(data, showfliers=False)
        ax.set_xticks(range(1, len(variants) + 1), variants, rotation=45)
        ax.axhline(sc[2], color="tab:red", lw=1)
        ax.set_title(scenario_label(sc))
    axes[0, 0].set_ylabel("estimated lambda")
    fig.tight_layout()
    fig.savefig(out / "lambda_hat.png")
    plt.close(fig)


def plot_coefficients(coefs, out):
    groups = defaultdict(list)
    truth = {}
    for r in coefs:
        if r["name"] in INFORMATIVE:
            groups[(r["variant"], r["name"])].append(float(r["estimate"]))
            truth[r["name"]] = float(r["truth"])
    variants = sorted({v for v, _ in groups})
    fig, axes = plt.subplots(1, len(INFORMATIVE), figsize=(2.8 * len(INFORMATIVE), 3.2), squeeze=False)
    for ax, name in zip(axes[0], INFORMATIVE):
        ax.boxplot([groups.get((v, name), []) for v in variants], showfliers=False)
        ax.set_xticks(range(1, len(variants) + 1), variants, rotation=45)
        if name in truth:
            ax.axhline(truth[name], color="tab:red", lw=1)
        ax.set_title(name)
    axes[0, 0].set_ylabel("estimate (all scenarios)")
    fig.tight_layout()
    fig.savefig(out / "coefficients.png")
    plt.close(fig)


def plot_selection(metrics, out):
    rows = [r for r in metrics if r["tpr"]]
    scenarios = sorted({scenario_key(r) for r in rows})
    variants = sorted({r["variant"] for r in rows})
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2), sharey=True)
    for ax, key in zip(axes, ("tpr", "tnr", "fdr")):
        for v in variants:
            vals = {scenario_key(r): float(r[key]) for r in rows if r["variant"] == v}
            ax.plot(range(len(scenarios)), [vals.get(s, float("nan")) for s in scenarios], marker="o", label=v)
        ax.set_xticks(range(len(scenarios)), [scenario_label(s) for s in scenarios], fontsize=7)
        ax.set_title(key.upper())
    axes[0].set_ylabel("percent")
    axes[-1].legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out / "selection.png")
    plt.close(fig)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("results", type=Path, help="output directory of 'spatboost simulate'")
    p.add_argument("--out", type=Path, help="figure directory (default: RESULTS/figures)")
    args = p.parse_args()
    out = args.out or args.results / "figures"
    out.mkdir(parents=True, exist_ok=True)
    plot_lambda(read_csv(args.results / "replications.csv"), out)
    plot_coefficients(read_csv(args.results / "coefficients.csv"), out)
    plot_selection(read_csv(args.results / "metrics.csv"), out)
    print(f"figures written to {out}")


if __name__ == "__main__":
    main()
