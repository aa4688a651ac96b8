"""Membership queries per iteration of the uniform sampler on cubes of growing dimension.

Runs the formula-default parameters (h = 1/d^2, tau = 3 at M = 1) from
exact uniform starts and reports proposals per iteration, restarts, and
the total cost N * (proposals per iteration) next to d^2.

    python3 scripts/query_scaling.py --dims 2 4 8 16 --chains 2000
"""

import argparse
import csv
import math
import sys

import numpy as np

from proxsampler.diagnostics import exact_uniform
from proxsampler.oracles import Box
from proxsampler.rng import make_rng
from proxsampler.samplers import ChainState, derive_params_unif, ps_unif_iterate


def measure(d: int, chains: int, seed: int, eps: float = 0.1) -> dict:
    rng = make_rng(seed, d)
    body = Box(np.ones(d))
    p = derive_params_unif(d, 1.0, 2.0, 1 / 3, eps)
    state = ps_unif_iterate(ChainState(exact_uniform(body, chains, rng)), body, p.config(), rng, p.N)
    per_iter = state.ledger.proposals_drawn / (chains * p.N)
    return {"d": d, "h": p.h, "tau": p.tau, "N": p.N, "proposals_per_iter": per_iter,
            "restarts_per_iter": state.ledger.restarts / (chains * p.N),
            "total_per_chain": per_iter * p.N, "total_over_d2": per_iter * p.N / d ** 2}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs="+", default=[2, 4, 8, 16])
    ap.add_argument("--chains", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="optional CSV path")
    args = ap.parse_args(argv)

    rows = [measure(d, args.chains, args.seed) for d in args.dims]
    cols = list(rows[0])
    print("  ".join(f"{c:>18s}" for c in cols))
    for r in rows:
        print("  ".join(f"{r[c]:>18.4g}" if isinstance(r[c], float) else f"{r[c]:>18d}" for c in cols))
    if len(rows) > 1:
        d = np.log([r["d"] for r in rows])
        tot = np.log([r["total_per_chain"] for r in rows])
        slope = np.polyfit(d, tot, 1)[0]
        print(f"log-log slope of total queries against d: {slope:.3f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
