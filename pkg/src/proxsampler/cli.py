"""Batch runner: ``proxsampler --config run.ini [--dry-run] [--seed S] [--out P] [--replicas N]``.

Replicas are split into fixed chunks of :data:`CHUNK` chains.  Chunk ``j``
draws from the stream ``(seed, j)``, so the output does not depend on the
number of workers (``PROXSAMPLER_WORKERS``, default 1).

Outputs, all derived from the ``--out`` path ``P``:

* ``P``: one row per replica (``seed, replica, x0.., iterations, proposals,
  restarts, wall_time``) or, for ``diagnose``, one row per check;
* ``P.phases.csv``: per-phase ledger of warm-start pipelines;
* ``P.summary.json``: derived parameters, ledger totals, means with 95%
  intervals, and check results.

Exit status: 0 when every asserted check passes, 2 when one fails, 1 on a
config or oracle error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .annealing import (
    RejectionError,
    build_logconcave_plan,
    build_uniform_schedule,
    run_logconcave_warmstart,
    run_uniform_warmstart,
)
from .config import ConfigError, RunConfig, load_config
from .diagnostics import (
    CheckResult,
    GaussianLaw,
    UniformLaw,
    check_annealing_closeness,
    check_budget,
    check_concentration_uniform,
    check_hypercontractivity,
    check_sdpi_chiq,
    early_stop_curve,
    exact_uniform,
    interval_poincare,
    stationarity_pvalue,
    write_check_csv,
)
from .oracles import (
    Box,
    DimensionError,
    Interval,
    LiftedBody,
    NormPotential,
    OracleError,
    QuadraticPotential,
    QueryLedger,
    body_stats,
)
from .rng import make_rng
from .samplers import (
    ChainState,
    SamplerConfig,
    StuckChainError,
    boost_order_iterations,
    derive_params_ann,
    derive_params_exp,
    derive_params_gauss,
    derive_params_unif,
    lifted_start,
    ps_exp_iterate,
    ps_unif_iterate,
)

__all__ = ["CHUNK", "SCHEMA_VERSION", "main", "run", "echo_derived_params", "diagnostic_suite",
           "csv_payload", "load_samples"]

CHUNK = 4096
SCHEMA_VERSION = 1
WORKERS_ENV = "PROXSAMPLER_WORKERS"


# ----------------------------------------------------------------------------
# derived parameters


def _uniform_moments(cfg: RunConfig, body) -> tuple[float, float]:
    """``(R, Lambda)``: config values win, else the closed form of a library body."""
    R, lam = cfg.R, cfg.Lambda
    if R is None or lam is None:
        st = body_stats(body)
        R = math.sqrt(st.second_moment) if R is None else R
        lam = st.cov_norm if lam is None else lam
    return R, lam


def _sampling_params(cfg: RunConfig):
    c = cfg.constants
    if cfg.command == "sample-uniform":
        body = cfg.target.build_body()
        _, lam = _uniform_moments(cfg, body)
        return derive_params_unif(body.dim, cfg.M, cfg.q, lam, cfg.eps, c)
    pot = cfg.target.build_potential()
    return derive_params_exp(pot.dim, cfg.M, cfg.q, cfg.Lambda, cfg.eps, c)


def _uniform_plan_table(cfg: RunConfig, body) -> dict:
    d = body.dim
    R, lam = _uniform_moments(cfg, body)
    sched = build_uniform_schedule(R, lam, d, cfg.q, cfg.constants)
    M = cfg.constants.relay_warmness
    phases, predicted = [], 0
    params = None
    for e in sched.entries[1:]:
        params = derive_params_gauss(d, M, e.sigma2, 3, 2.0, 1.0, cfg.constants)
        predicted += 2 * params.tau * params.N
        phases.append({"sigma2": e.sigma2, "h": params.h, "tau": params.tau, "N": params.N})
    last = sched.entries[-1].sigma2
    if params is None:
        params = derive_params_gauss(d, M, last, 3, 2.0, 1.0, cfg.constants)
    n_boost = boost_order_iterations(params.h, last, 3, 2 * cfg.q, cfg.constants)
    predicted += 2 * params.tau * n_boost
    return {"R": R, "Lambda": lam, "schedule_length": len(sched), "stop_threshold": sched.stop_threshold,
            "sigma2_schedule": sched.sigma2.tolist(), "phases": phases, "boost_iterations": n_boost,
            "predicted_proposals_per_replica": predicted}


def _logconcave_plan_table(cfg: RunConfig, pot) -> dict:
    d = pot.dim
    plan = build_logconcave_plan(pot, cfg.R, cfg.Lambda, d, cfg.q, cfg.constants)
    M = cfg.constants.relay_warmness
    predicted, params = 0, None
    for e in plan.entries[1:]:
        params = derive_params_ann(d, M, e.sigma2, 3, 2.0, 1.0, cfg.constants)
        predicted += 2 * params.tau * params.N
    last = plan.entries[-1]
    if params is None:
        params = derive_params_ann(d, M, last.sigma2, 3, 2.0, 1.0, cfg.constants)
    n_boost = boost_order_iterations(params.h, max(last.sigma2, 1.0), 3, 2 * cfg.q, cfg.constants)
    predicted += 2 * params.tau * n_boost
    handoff = None
    if cfg.handoff_eps is not None:
        hc = cfg.handoff_constants or cfg.constants
        hp = derive_params_exp(d, 1.0, cfg.q, cfg.Lambda, cfg.handoff_eps, hc)
        predicted += 2 * hp.tau * hp.N
        handoff = {"h": hp.h, "tau": hp.tau, "N": hp.N}
    return {"D": plan.D, "schedule_length": len(plan.entries), "phase_counts": plan.phase_counts(),
            "stop_threshold": plan.stop_threshold,
            "schedule": [(e.phase, e.sigma2, e.rho) for e in plan.entries],
            "boost_iterations": n_boost, "handoff": handoff,
            "predicted_proposals_per_replica": predicted, "notes": list(plan.notes)}


def echo_derived_params(cfg: RunConfig, file=None) -> dict:
    """Print and return ``h``, ``tau``, ``N``, schedules and predicted query totals.

    No oracle is queried: the target is built with a fresh ledger that is
    checked to still be empty at the end.
    """
    file = sys.stdout if file is None else file
    table: dict = {"command": cfg.command, "seed": cfg.seed, "replicas": cfg.replicas}
    ledger = QueryLedger()
    target = None
    if cfg.command in ("sample-uniform", "sample-logconcave"):
        p = _sampling_params(cfg)
        N = cfg.iterations or p.N
        table.update(h=p.h, tau=p.tau, N=N, tau_capped=p.tau_capped,
                     predicted_proposals_per_replica=2 * p.tau * N, start=cfg.start)
    if cfg.command in ("sample-uniform", "warm-start-uniform"):
        target = cfg.target.build_body()
        target.ledger = ledger
        table["d"] = target.dim
        if cfg.command == "warm-start-uniform" or cfg.start == "warm-start":
            table["warm_start"] = _uniform_plan_table(cfg, target)
    elif cfg.command in ("sample-logconcave", "warm-start-logconcave"):
        target = cfg.target.build_potential()
        target.ledger = ledger
        table["d"] = target.dim
        if cfg.command == "warm-start-logconcave" or cfg.start == "warm-start":
            if cfg.R is None:
                raise ConfigError("the log-concave warm start needs key 'R'")
            table["warm_start"] = _logconcave_plan_table(cfg, target)
    else:
        table["checks"] = [name for name, _ in _suite_items(cfg.suite)]
    if any(ledger.as_dict().values()):
        raise AssertionError("dry run touched an oracle")
    table["ledger"] = ledger.as_dict()
    _print_table(table, file)
    return table


def _print_table(table: dict, file) -> None:
    for key, val in table.items():
        if key == "warm_start":
            print("warm_start:", file=file)
            for k2, v2 in val.items():
                if k2 == "phases":
                    for i, ph in enumerate(v2):
                        print(f"  phase {i + 1}: " + "  ".join(f"{a}={b:.6g}" if isinstance(b, float) else f"{a}={b}"
                                                          for a, b in ph.items()), file=file)
                elif k2 in ("sigma2_schedule",):
                    print(f"  {k2}: " + ", ".join(f"{s:.6g}" for s in v2), file=file)
                elif k2 == "schedule":
                    for ph, s, rho in v2:
                        print(f"  {ph:>9s}  sigma2={s:.6g}  rho={rho:.6g}", file=file)
                else:
                    print(f"  {k2}: {v2}", file=file)
        elif isinstance(val, float):
            print(f"{key}: {val:.6g}", file=file)
        else:
            print(f"{key}: {val}", file=file)


# ----------------------------------------------------------------------------
# sampling chunks


@dataclass
class ChunkResult:
    x: np.ndarray
    iterations: int
    proposals: np.ndarray
    restarts: np.ndarray
    wall_time: float
    ledger: QueryLedger
    phases: list = field(default_factory=list)  # (phase, sigma2, rho, iterations, ledger)
    checks: list = field(default_factory=list)


def _exact_potential_draw(pot, n: int, rng) -> np.ndarray:
    d = pot.dim
    if isinstance(pot, QuadraticPotential):
        return pot.center + math.sqrt(pot.scale) * rng.standard_normal((n, d))
    if isinstance(pot, NormPotential):
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        # the radius of exp(-|x|) in R^d follows Gamma(d, 1)
        return pot.center + pot.scale * g * rng.gamma(d, 1.0, n)[:, None]
    raise ConfigError(f"no exact start for {type(pot).__name__}")


def _run_chunk(cfg: RunConfig, chunk: int, count: int) -> ChunkResult:
    rng = make_rng(cfg.seed, chunk)
    t0 = time.perf_counter()
    c = cfg.constants
    phases, checks = [], []
    if cfg.command in ("warm-start-uniform", "warm-start-logconcave"):
        if cfg.command == "warm-start-uniform":
            body = cfg.target.build_body()
            R, lam = _uniform_moments(cfg, body)
            rep = run_uniform_warmstart(body, R, lam, body.dim, cfg.q, c, rng, count)
        else:
            pot = cfg.target.build_potential()
            rep = run_logconcave_warmstart(pot, cfg.R, cfg.Lambda, pot.dim, cfg.q, c, rng, count,
                                           handoff_eps=cfg.handoff_eps,
                                           handoff_constants=cfg.handoff_constants)
        phases = [(p.phase, p.sigma2, p.rho, p.iterations, p.ledger) for p in rep.phases]
        iters = sum(p.iterations for p in rep.phases)
        return ChunkResult(rep.final_sample, iters, rep.chain_proposals, rep.chain_restarts,
                           time.perf_counter() - t0, rep.total_ledger, phases)

    params = _sampling_params(cfg)
    N = cfg.iterations or params.N
    scfg = params.config(c, cfg.seed)
    if cfg.command == "sample-uniform":
        body = cfg.target.build_body()
        d = body.dim
        if cfg.start == "exact":
            X = exact_uniform(body, count, rng)
        elif cfg.start == "origin":
            X = np.zeros((count, d))
        else:
            R, lam = _uniform_moments(cfg, body)
            rep = run_uniform_warmstart(body, R, lam, d, cfg.q, c, rng, count)
            phases = [(p.phase, p.sigma2, p.rho, p.iterations, p.ledger) for p in rep.phases]
            X = rep.final_sample
        state = ps_unif_iterate(ChainState(X), body, scfg, rng, N)
        coords = state.x
    else:
        pot = cfg.target.build_potential()
        d = pot.dim
        led = QueryLedger()
        if cfg.start == "warm-start":
            if cfg.R is None:
                raise ConfigError("the log-concave warm start needs key 'R'")
            rep = run_logconcave_warmstart(pot, cfg.R, cfg.Lambda, d, cfg.q, c, rng, count)
            phases = [(p.phase, p.sigma2, p.rho, p.iterations, p.ledger) for p in rep.phases]
            Z = rep.final_lifted
        else:
            X = np.zeros((count, d)) if cfg.start == "origin" else _exact_potential_draw(pot, count, rng)
            Z = lifted_start(pot, X, rng, led)
        state = ps_exp_iterate(ChainState(Z, ledger=led), LiftedBody(pot), scfg, rng, N)
        coords = state.x[:, :-1]
    checks.append(check_budget(state.ledger, params.tau, N, state.chain_trials, cfg.command))
    return ChunkResult(coords, N, state.chain_trials, state.chain_restarts,
                       time.perf_counter() - t0, state.ledger, phases, checks)


def _chunks(replicas: int) -> list[tuple[int, int]]:
    return [(j, min(CHUNK, replicas - j * CHUNK)) for j in range(math.ceil(replicas / CHUNK))]


def _run_chunks(cfg: RunConfig, workers: int) -> list[ChunkResult]:
    jobs = _chunks(cfg.replicas)
    if workers <= 1 or len(jobs) == 1:
        return [_run_chunk(cfg, j, n) for j, n in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_chunk, [cfg] * len(jobs), *zip(*[(j, n) for j, n in jobs])))


# ----------------------------------------------------------------------------
# diagnose


def _suite_items(suite: str):
    items = [
        ("hypercontractivity", lambda cfg, rng: [r for p in (1.5, 2.0, 3.0) for m in (0.5, 1.0)
                                                 for r in check_hypercontractivity(p, 1.0, m, [0, 0.5, 1, 4])]),
        ("sdpi_interval", lambda cfg, rng: [r for q in (2.0, 3.0) for r in check_sdpi_chiq(
            UniformLaw(-1, 1), UniformLaw(-1, 0), q, [0, 0.1, 0.5, 1.0], interval_poincare(2.0))]),
        ("sdpi_gaussian", lambda cfg, rng: [r for q in (2.0, 3.0) for r in check_sdpi_chiq(
            GaussianLaw(0, 1), GaussianLaw(0.5, 1), q, [0, 0.1, 0.5, 1.0], 1.0)]),
        ("annealing_closeness", lambda cfg, rng: check_annealing_closeness((0.1, 0.5, 1.0), (0.05, 0.1, 0.2))),
        ("early_stop", lambda cfg, rng: [early_stop_curve(np.linspace(0.2, 4.0, 10))[1]]),
        ("concentration", lambda cfg, rng: [check_concentration_uniform(
            Box([1.0, 1.0]), 2, 1 / 32, 0.5, cfg.n or 10 ** 5, rng)]),
        ("budget", _suite_budget),
        ("stationarity", _suite_stationarity),
    ]
    return items


def _suite_budget(cfg, rng) -> list[CheckResult]:
    body = Box([1.0, 1.0])
    p = derive_params_unif(2, 1.0, 2.0, body_stats(body).cov_norm, 0.1, cfg.constants)
    n = min(cfg.n or 10 ** 4, 10 ** 5)
    state = ps_unif_iterate(ChainState(exact_uniform(body, n, rng)), body, p.config(cfg.constants), rng, p.N)
    return [check_budget(state.ledger, p.tau, p.N, state.chain_trials, "uniform")]


def _suite_stationarity(cfg, rng) -> list[CheckResult]:
    from scipy import stats

    # invariance is checked where restarts are negligible; at the formula
    # defaults (tau = 3) a restart re-draws y and biases the one-step law
    body = Interval(-1.0, 1.0)
    n = cfg.n or (10 ** 5 if cfg.suite == "full" else 2 * 10 ** 4)
    scfg = SamplerConfig(h=0.1, tau=10 ** 4, constants=cfg.constants)
    state = ps_unif_iterate(ChainState(exact_uniform(body, n, rng)), body, scfg, rng, 10)
    rep = stationarity_pvalue(state.x, stats.uniform(-1, 2).cdf)
    return [CheckResult("stationarity", "exact start stays at the uniform law",
                        {"body": "[-1,1]", "n": n, "iterations": 10, "h": scfg.h, "tau": scfg.tau},
                        rep.p_min, rep.threshold, rep.passed)]


def diagnostic_suite(cfg: RunConfig) -> list[CheckResult]:
    """Run every registered check with stream ``(seed, 10_000 + i)`` for check ``i``."""
    rows = []
    for i, (_, fn) in enumerate(_suite_items(cfg.suite)):
        rows.extend(fn(cfg, make_rng(cfg.seed, 10_000 + i)))
    return rows


# ----------------------------------------------------------------------------
# output


def _header(cfg: RunConfig, extra: dict) -> list[str]:
    lines = [f"# proxsampler-csv schema={SCHEMA_VERSION} toolkit={__version__}",
             f"# command={cfg.command}",
             f"# config: {cfg.echo()}"]
    if extra:
        lines.append("# derived: " + "; ".join(f"{k}=%.17g" % v if isinstance(v, float) else f"{k}={v}"
                                               for k, v in extra.items()))
    return lines


def _write_rows(path: Path, cfg: RunConfig, results: list[ChunkResult], derived: dict) -> None:
    d = results[0].x.shape[1]
    with open(path, "w", newline="") as fh:
        for line in _header(cfg, derived):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "replica", *[f"x{i}" for i in range(d)], "iterations", "proposals",
                    "restarts", "wall_time"])
        replica = 0
        for res in results:
            for i in range(res.x.shape[0]):
                w.writerow([cfg.seed, replica, *["%.8g" % v for v in res.x[i]], res.iterations,
                            int(res.proposals[i]), int(res.restarts[i]), "%.6f" % res.wall_time])
                replica += 1


def _merge_phases(results: list[ChunkResult]) -> list:
    merged = []
    for k, (phase, s, rho, iters, _) in enumerate(results[0].phases):
        led = QueryLedger()
        for res in results:
            led.merge(res.phases[k][4])
        merged.append((phase, s, rho, iters, led))
    return merged


def _write_phases(path: Path, phases: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", "sigma2", "rho", "iterations", "membership_calls", "evaluation_calls",
                    "restarts"])
        for phase, s, rho, iters, led in phases:
            w.writerow([phase, "%.17g" % s, "" if rho is None else "%.17g" % rho, iters,
                        led.membership_calls, led.evaluation_calls, led.restarts])


def csv_payload(path) -> list[str]:
    """Rows of a replica or check CSV with the wall-time column dropped, for determinism checks."""
    lines = Path(path).read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    rows = list(csv.reader(io.StringIO("\n".join(body))))
    if rows and rows[0] and rows[0][-1] == "wall_time":
        rows = [r[:-1] for r in rows]
    return [",".join(r) for r in rows]


def load_samples(path) -> np.ndarray:
    """The ``x0..`` columns of a replica CSV as an ``(n, d)`` array."""
    rows = list(csv.reader(ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")))
    cols = [i for i, name in enumerate(rows[0]) if name.startswith("x") and name[1:].isdigit()]
    return np.array([[float(r[i]) for i in cols] for r in rows[1:]]).reshape(len(rows) - 1, len(cols))


def _summary(cfg: RunConfig, results: list[ChunkResult], checks: list[CheckResult], derived: dict,
             wall: float) -> dict:
    out: dict = {"schema": SCHEMA_VERSION, "toolkit": __version__, "command": cfg.command,
                 "seed": cfg.seed, "replicas": cfg.replicas, "derived": derived,
                 "constants": cfg.constants.record(), "wall_time": wall}
    if results:
        X = np.vstack([r.x for r in results])
        total = QueryLedger()
        for r in results:
            total.merge(r.ledger)
        se = X.std(axis=0, ddof=1) / math.sqrt(len(X)) if len(X) > 1 else np.zeros(X.shape[1])
        out["ledger"] = total.as_dict()
        out["mean"] = X.mean(axis=0).tolist()
        out["mean_ci95"] = [[m - 1.96 * s, m + 1.96 * s] for m, s in zip(X.mean(axis=0), se)]
    out["checks"] = [{"check_id": c.check_id, "claim": c.claim, "parameters": c.parameters,
                      "measured": c.measured, "bound": c.bound, "pass": c.passed} for c in checks]
    out["pass"] = all(c.passed for c in checks)
    return out


def run(config_path, *, dry_run: bool = False, seed: int | None = None, out=None,
        replicas: int | None = None, workers: int | None = None, stdout=None) -> int:
    """Execute one config file; returns the process exit status."""
    stdout = sys.stdout if stdout is None else stdout
    try:
        cfg = load_config(config_path, {"seed": seed, "replicas": replicas})
        if dry_run:
            echo_derived_params(cfg, stdout)
            return 0
        out_path = Path(out or cfg.out or Path(config_path).with_suffix(".csv").name)
        if workers is None:
            workers = int(os.environ.get(WORKERS_ENV, "1"))
        t0 = time.perf_counter()
        if cfg.command == "diagnose":
            checks = diagnostic_suite(cfg)
            write_check_csv(checks, out_path)
            results, derived = [], {"suite": cfg.suite}
        else:
            derived = {}
            if cfg.command.startswith("sample"):
                p = _sampling_params(cfg)
                derived = {"h": p.h, "tau": p.tau, "N": cfg.iterations or p.N}
            results = _run_chunks(cfg, workers)
            checks = [c for r in results for c in r.checks]
            _write_rows(out_path, cfg, results, derived)
            if results[0].phases:
                _write_phases(Path(f"{out_path}.phases.csv"), _merge_phases(results))
        summary = _summary(cfg, results, checks, derived, time.perf_counter() - t0)
        Path(f"{out_path}.summary.json").write_text(json.dumps(summary, indent=2, default=float))
        for c in checks:
            print(c.line(), file=stdout)
        print(f"wrote {out_path}", file=stdout)
        return 0 if summary["pass"] else 2
    except (ConfigError, OracleError, DimensionError, StuckChainError, RejectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="proxsampler", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="INI run configuration")
    ap.add_argument("--dry-run", action="store_true", help="print derived parameters without sampling")
    ap.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    ap.add_argument("--out", help="output CSV path")
    ap.add_argument("--replicas", type=int, help="override the number of replicas")
    args = ap.parse_args(argv)
    return run(args.config, dry_run=args.dry_run, seed=args.seed, out=args.out, replicas=args.replicas)


if __name__ == "__main__":
    sys.exit(main())
