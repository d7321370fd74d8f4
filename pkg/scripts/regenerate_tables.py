"""Regenerate the full Monte-Carlo tables (100 replications per scenario).

Runs, for every lambda in {-0.8, -0.6, -0.4, -0.2, 0.2, 0.4, 0.6, 0.8},
the low-dimensional (q = 20) and high-dimensional (q = 800) settings at
n = 400, K = 5, plus the neighbourhood sweep K in {1, 2, 3, 5, 10, 20} at
lambda = 0 for both dimensions. Each block goes to its own subdirectory of
OUTDIR with the usual CSV/JSON tables.

Runtime on one core is several hours (the q = 800 blocks dominate). Set
SPATBOOST_WORKERS or pass --workers to use more processes.

Usage::

    python3 scripts/regenerate_tables.py OUTDIR [--nsim 100] [--workers 4] [--only lambda|k]
"""

import argparse
import json
import time
from pathlib import Path

from spatboost.simstudy import ScenarioConfig, run_study, scenario_grid, write_tables

LAMBDAS = (-0.8, -0.6, -0.4, -0.2, 0.2, 0.4, 0.6, 0.8)
KS = (1, 2, 3, 5, 10, 20)


def blocks(nsim):
    for q in (20, 800):
        base = ScenarioConfig(q=q, n_sim=nsim)
        yield f"lambda_q{q}", scenario_grid(base, lambdas=LAMBDAS)
        yield f"k_q{q}", scenario_grid(ScenarioConfig(q=q, n_sim=nsim, lam=0.0), ks=KS)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("outdir", type=Path)
    p.add_argument("--nsim", type=int, default=100)
    p.add_argument("--workers", type=int)
    p.add_argument("--only", choices=("lambda", "k"))
    args = p.parse_args()
    for name, scenarios in blocks(args.nsim):
        if args.only and not name.startswith(args.only):
            continue
        t0 = time.time()
        tables = []
        for sc in scenarios:
            tables.append(run_study(sc, workers=args.workers))
            print(f"{name}: q={sc.q} K={sc.K} lambda={sc.lam:g} done ({time.time() - t0:.0f}s)", flush=True)
        paths = write_tables(tables, args.outdir / name)
        (args.outdir / name / "timing.json").write_text(json.dumps({"seconds": time.time() - t0}) + "\n")
        print(f"{name}: tables in {paths['metrics']}")


if __name__ == "__main__":
    main()
