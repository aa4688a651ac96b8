"""How much the restart rule moves the one-step law, and where it stops mattering.

A restart re-draws y from the same x, so the accepted y is reweighted by
the stage success probability 1 - (1 - l(y))^tau.  This script shows:

* the one-step law on [-1, 1] from a point near the boundary for several
  tau against a tau = 1e6 reference (two-sample KS);
* the variance of the x-marginal for the lifted Laplace target after many
  iterations, at the formula defaults and at a small step with a large tau.

    python3 scripts/restart_bias.py --n 50000
"""

import argparse
import sys

import numpy as np
from scipy import stats

from proxsampler.oracles import Interval, LiftedBody, NormPotential
from proxsampler.rng import make_rng
from proxsampler.samplers import ChainState, SamplerConfig, lifted_start, ps_exp_iterate, ps_unif_iterate


def one_step(x0: float, h: float, tau: int, n: int, seed: int) -> np.ndarray:
    K = Interval(-1, 1)
    return ps_unif_iterate(ChainState(np.full((n, 1), x0)), K, SamplerConfig(h, tau), make_rng(seed, tau)).x[:, 0]


def laplace_variance(h: float, tau: int, iters: int, n: int, seed: int) -> tuple[float, float]:
    rng = make_rng(seed, 7, tau)
    pot = NormPotential(1)
    Z = lifted_start(pot, stats.laplace.rvs(size=(n, 1), random_state=rng), rng)
    Z = ps_exp_iterate(ChainState(Z), LiftedBody(pot), SamplerConfig(h, tau), rng, iters).x
    return float(Z[:, 0].var()), float(stats.kstest(Z[:, 0], stats.laplace.cdf).pvalue)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--x0", type=float, default=0.95)
    ap.add_argument("--h", type=float, default=0.25)
    args = ap.parse_args(argv)

    ref = one_step(args.x0, args.h, 10 ** 6, args.n, args.seed)
    print(f"one step from x0={args.x0}, h={args.h} on [-1,1]; reference tau=1e6 mean {ref.mean():.4f}")
    for tau in (1, 2, 3, 10, 100, 10 ** 4):
        x = one_step(args.x0, args.h, tau, args.n, args.seed)
        print(f"  tau={tau:>6d}  mean {x.mean():.4f}  KS p vs reference {stats.ks_2samp(x, ref).pvalue:.3g}")

    print("lifted Laplace target from exact starts, x-variance (exact value 2)")
    for h, tau, iters in ((1.0, 3, 30), (0.1, 10 ** 4, 30)):
        var, p = laplace_variance(h, tau, iters, args.n // 5, args.seed)
        print(f"  h={h:<4g} tau={tau:<6d} iterations={iters}: variance {var:.3f}, KS p {p:.3g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
