"""Gaussian-annealing warm starts that keep the Renyi order.

Two pipelines:

* uniform targets: exact draw from ``gamma_{1/d}|_K`` by rejection, then a
  chain of truncated Gaussians with growing variance, run with the
  truncated-Gaussian sampler and stopped early once the variance passes
  ``c_stop q R Lambda^{1/2} log^{1/2} d``; a final batch of iterations
  boosts the Renyi order from 3 to ``2q``;
* log-concave targets: the same idea on the lifted target truncated to
  ``K_bar = K n (B_{R l}(0) x [-21, 13 l - 6])``, ``l = log(4e)``, in three
  phases (variance warming, tilt annealing, variance annealing).

Each move between consecutive distributions is run from an ``R_3 <= 1``
sample of the previous one, so the warmness handed to the sampler is
bounded by ``1 + c_close`` (weak triangle inequality with the closeness
bound at order 4).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .oracles import (
    BodyOracle,
    CylinderWindow,
    Intersection,
    LiftedBody,
    PotentialOracle,
    QueryLedger,
)
from .samplers import (
    ChainState,
    Constants,
    GaussTarget,
    TiltedTarget,
    boost_order_iterations,
    derive_params_ann,
    derive_params_exp,
    derive_params_gauss,
    ps_ann_iterate,
    ps_exp_iterate,
    ps_gauss_iterate,
)

__all__ = [
    "RELAY_ORDER",
    "CLOSENESS_ORDER",
    "LOG4E",
    "T_WINDOW",
    "RejectionError",
    "AnnealConstants",
    "ScheduleEntry",
    "AnnealSchedule",
    "LogConcaveAnnealPlan",
    "PhaseRecord",
    "WarmStartReport",
    "closeness_bound",
    "logconcave_closeness_bound",
    "init_uniform",
    "init_logconcave",
    "build_uniform_schedule",
    "build_logconcave_plan",
    "run_uniform_warmstart",
    "run_logconcave_warmstart",
    "estimate_moments",
    "write_phase_csv",
]

log = logging.getLogger(__name__)

RELAY_ORDER = 3
CLOSENESS_ORDER = 4
LOG4E = math.log(4 * math.e)
T_WINDOW = (-21.0, 13 * LOG4E - 6.0)
MAX_INIT_TRIALS = 10 ** 4


class RejectionError(RuntimeError):
    """Initialization by rejection sampling ran out of trials."""


@dataclass(frozen=True)
class AnnealConstants(Constants):
    """Sampler constants plus the annealing ones.

    ``c_step`` scales the variance increments ``sigma / R``; left as None it
    is set to ``sqrt(2 c_close) / 4`` so every consecutive pair satisfies
    the order-4 closeness bound with value exactly ``c_close``.
    """

    c_stop: float = 1.0
    c_close: float = 1.0
    c_step: float | None = None

    def __post_init__(self):
        super().__post_init__()
        if not self.c_stop > 0 or not self.c_close > 0:
            raise ValueError("c_stop and c_close must be positive")
        if self.c_step is not None and not self.c_step > 0:
            raise ValueError("c_step must be positive")

    @property
    def step_multiplier(self) -> float:
        if self.c_step is not None:
            return self.c_step
        return math.sqrt(2.0 * self.c_close) / CLOSENESS_ORDER

    @property
    def relay_warmness(self) -> float:
        return 1.0 + self.c_close

    def record(self) -> dict:
        rec = asdict(self)
        rec["c_step"] = self.step_multiplier
        return rec


def closeness_bound(q: float, alpha: float, R: float, sigma2: float) -> float:
    """Upper bound on ``R_q(pi gamma_{s} || pi gamma_{s (1 + alpha)})``: ``q^2 alpha^2 R^2 / (2 s)``."""
    if not q > 1:
        raise ValueError("q must exceed 1")
    if alpha < 0 or not R > 0 or not sigma2 > 0:
        raise ValueError("need alpha >= 0, R > 0, sigma2 > 0")
    return q ** 2 * alpha ** 2 * R ** 2 / (2.0 * sigma2)


def logconcave_closeness_bound(q: float, d: int, alpha: float, delta: float | None = None) -> float:
    """Bound on ``R_q(e^{-(1+alpha)V} || e^{-V})`` for log-concave ``e^{-V}`` on ``R^d``.

    ``q d alpha^2 / 2`` for ``alpha >= 0``; for ``alpha`` in ``[-delta/2, 0)``
    with ``1 - q delta > 0`` it is ``q d alpha^2 / (1 - q delta)``.
    """
    if not q > 1:
        raise ValueError("q must exceed 1")
    if alpha >= 0:
        return q * d * alpha ** 2 / 2.0
    if delta is None or not delta > 0:
        raise ValueError("negative alpha needs delta > 0")
    if alpha < -delta / 2:
        raise ValueError(f"alpha = {alpha} lies outside [-delta/2, 0]")
    if not 1 - q * delta > 0:
        raise ValueError("need 1 - q * delta > 0")
    return q * d * alpha ** 2 / (1.0 - q * delta)


def _log_factor(d: int) -> float:
    return max(math.sqrt(math.log(d)), 1.0) if d > 1 else 1.0


# ----------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class ScheduleEntry:
    sigma2: float
    rho: float | None
    phase: str
    closeness: float | None = None  # bound on the move into this entry, None if no bound applies


@dataclass(frozen=True)
class AnnealSchedule:
    entries: tuple[ScheduleEntry, ...]
    stop_threshold: float
    q: float
    predicted_doublings: int
    relay_order: int = RELAY_ORDER
    closeness_order: int = CLOSENESS_ORDER

    @property
    def sigma2(self) -> np.ndarray:
        return np.array([e.sigma2 for e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)


def build_uniform_schedule(R: float, Lambda: float, d: int, q: float,
                           constants: AnnealConstants = AnnealConstants()) -> AnnealSchedule:
    """Variance schedule ``1/d = s_0 < s_1 < ...``, ``s_{i+1} = s_i (1 + c sigma_i / R)``.

    Stops at the first entry strictly above ``c_stop q R Lambda^{1/2}
    max(log^{1/2} d, 1)``.  Raises if a step breaks the closeness budget.
    """
    if not R > 0 or not Lambda > 0:
        raise ValueError("R and Lambda must be positive")
    if q < 2:
        raise ValueError("q must be at least 2")
    if int(d) < 1:
        raise ValueError("d must be a positive integer")
    c = constants.step_multiplier
    threshold = constants.c_stop * q * R * math.sqrt(Lambda) * _log_factor(d)
    s = 1.0 / d
    entries = [ScheduleEntry(s, None, "init")]
    while s <= threshold:
        alpha = c * math.sqrt(s) / R
        bound = closeness_bound(CLOSENESS_ORDER, alpha, R, s)
        if bound > constants.c_close * (1 + 1e-9):
            raise ValueError(f"variance step breaks closeness: bound {bound:.4g} > c_close "
                             f"{constants.c_close}; lower c_step")
        s = s * (1 + alpha)
        entries.append(ScheduleEntry(s, None, "anneal", bound))
    doublings = max(0, math.ceil(math.log2(threshold * d))) if threshold * d > 1 else 0
    return AnnealSchedule(tuple(entries), threshold, q, doublings)


@dataclass(frozen=True)
class LogConcaveAnnealPlan:
    D: float
    l: float
    trunc_body: BodyOracle
    t_window: tuple[float, float]
    entries: tuple[ScheduleEntry, ...]
    stop_threshold: float
    q: float
    notes: tuple[str, ...] = ()

    def phase_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.entries:
            counts[e.phase] = counts.get(e.phase, 0) + 1
        return counts


def truncated_lift(lifted: LiftedBody, radius: float, t_window=T_WINDOW) -> Intersection:
    """``K n (B_radius(0) x [t_lo, t_hi])``; the window is tested before ``V``."""
    window = CylinderWindow(lifted.base_dim, radius, *t_window)
    return Intersection(window, lifted)


def build_logconcave_plan(potential: PotentialOracle, R: float, Lambda: float, d: int, q: float,
                          constants: AnnealConstants = AnnealConstants()) -> LogConcaveAnnealPlan:
    """Three-phase ``(sigma2, rho)`` plan for ``exp(-|x|^2/(2 sigma2) - rho t)`` on ``K_bar``.

    Phase I raises ``sigma2`` from ``1/d`` to 1 by factors ``1 + d^{-1/2}``
    (no tilt), then the tilt switches on at ``rho = 1``.  Phase II raises
    ``rho`` to ``d`` by the same factor while dividing ``sigma2`` by it, each
    outer move followed by inner moves ``sigma2 <- sigma2 (1 + c sigma / D)``
    that bring ``sigma2`` back to 1.  Phase III grows ``sigma2`` at rate
    ``c sigma / D`` until it passes ``c_stop q D max(Lambda^{1/2}, 1)
    max(log^{1/2} d, 1)``.
    """
    if not R > 0 or not Lambda > 0:
        raise ValueError("R and Lambda must be positive")
    if q < 2:
        raise ValueError("q must be at least 2")
    if potential.dim != d:
        raise ValueError("potential dimension does not match d")
    l = LOG4E
    D = R * l
    lifted = LiftedBody(potential)
    trunc = truncated_lift(lifted, D)
    a = d ** -0.5
    c = constants.step_multiplier
    notes = []

    s, rho = 1.0 / d, 0.0
    entries = [ScheduleEntry(s, rho, "init")]
    while s < 1.0:
        s = min(s * (1 + a), 1.0)
        entries.append(ScheduleEntry(s, rho, "I", logconcave_closeness_bound(2, d, a)))
    rho = 1.0
    entries.append(ScheduleEntry(1.0, rho, "I-tilt", None))
    s = 1.0
    while rho < d:
        s = s / (1 + a)
        rho = min(float(d), rho * (1 + a))
        neg = -a / (1 + a)
        try:
            bound = logconcave_closeness_bound(2, d, neg, 2 * abs(neg))
        except ValueError:
            bound = None
        entries.append(ScheduleEntry(s, rho, "II-outer", bound))
        while s < 1.0:
            alpha = c * math.sqrt(s) / D
            bound = closeness_bound(CLOSENESS_ORDER, alpha, D, s)
            s = min(s * (1 + alpha), 1.0)
            entries.append(ScheduleEntry(s, rho, "II-inner", bound))
    if any(e.phase == "II-outer" and e.closeness is None for e in entries):
        notes.append("tilt-annealing steps fall outside the range of the negative-step closeness bound at this d")
    threshold = constants.c_stop * q * D * max(math.sqrt(Lambda), 1.0) * _log_factor(d)
    while s <= threshold:
        alpha = c * math.sqrt(s) / D
        bound = closeness_bound(CLOSENESS_ORDER, alpha, D, s)
        s = s * (1 + alpha)
        entries.append(ScheduleEntry(s, rho, "III", bound))
    for e in entries:
        if e.closeness is not None and e.closeness > max(constants.c_close, 1.0) * (1 + 1e-9):
            raise ValueError(f"phase {e.phase} step breaks closeness ({e.closeness:.4g})")
    return LogConcaveAnnealPlan(D, l, trunc, T_WINDOW, tuple(entries), threshold, q, tuple(notes))


# ----------------------------------------------------------------------------
# reports


@dataclass
class PhaseRecord:
    phase: str
    sigma2: float
    rho: float | None
    iterations: int
    ledger: QueryLedger
    h: float | None = None
    tau: int | None = None


@dataclass
class WarmStartReport:
    final_sample: np.ndarray
    schedule_length: int
    phases: list[PhaseRecord]
    achieved_order: float
    target_order: float
    constants_used: dict
    final_lifted: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)
    chain_proposals: np.ndarray | None = None
    chain_restarts: np.ndarray | None = None

    @property
    def total_ledger(self) -> QueryLedger:
        total = QueryLedger()
        for p in self.phases:
            total.merge(p.ledger)
        return total


def write_phase_csv(report: WarmStartReport, path) -> None:
    """One row per phase: phase, sigma2, rho, iterations, membership/evaluation calls, restarts."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "sigma2", "rho", "iterations", "membership_calls",
                    "evaluation_calls", "restarts"])
        for p in report.phases:
            w.writerow([p.phase, "%.17g" % p.sigma2, "" if p.rho is None else "%.17g" % p.rho,
                        p.iterations, p.ledger.membership_calls, p.ledger.evaluation_calls,
                        p.ledger.restarts])


# ----------------------------------------------------------------------------
# initialization


def _rejection(propose, support: BodyOracle, n: int, ledger, max_trials: int):
    """Rejection sampling; returns the draws and the number of trials each took."""
    out = np.empty((n, support.dim))
    counts = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    trials = 0
    while pending.size:
        trials += 1
        if trials > max_trials:
            raise RejectionError(f"rejection sampling exceeded {max_trials} trials; "
                                 "the body probably does not contain the unit ball")
        Z = propose(pending.size)
        ledger.proposals_drawn += pending.size
        counts[pending] += 1
        inside = support.contains(Z, ledger)
        out[pending[inside]] = Z[inside]
        pending = pending[~inside]
    return out, counts


def init_uniform(body: BodyOracle, d: int, rng: np.random.Generator, n: int | None = None,
                 ledger: QueryLedger | None = None,
                 max_trials: int = MAX_INIT_TRIALS) -> np.ndarray:
    """Exact draw(s) from ``gamma_{1/d}`` restricted to ``body`` by rejection."""
    if body.dim != d:
        raise ValueError("body dimension does not match d")
    ledger = QueryLedger() if ledger is None else ledger
    m = 1 if n is None else int(n)
    sd = 1.0 / math.sqrt(d)
    X, _ = _rejection(lambda k: sd * rng.standard_normal((k, d)), body, m, ledger, max_trials)
    return X[0] if n is None else X


def init_logconcave(plan: LogConcaveAnnealPlan, d: int, rng: np.random.Generator, n: int,
                    ledger: QueryLedger, max_trials: int = MAX_INIT_TRIALS):
    """Draws from ``exp(-d |x|^2 / 2)`` on ``K_bar`` with proposal ``gamma_{1/d} x Unif(window)``.

    Returns the draws and the per-draw trial counts.
    """
    lo, hi = plan.t_window
    sd = 1.0 / math.sqrt(d)

    def propose(k):
        return np.column_stack([sd * rng.standard_normal((k, d)), rng.uniform(lo, hi, k)])

    return _rejection(propose, plan.trunc_body, n, ledger, max_trials)


# ----------------------------------------------------------------------------
# pipelines


def _relay(state: ChainState, ledger: QueryLedger) -> ChainState:
    """Same chains with a fresh phase ledger; per-chain counters keep accumulating."""
    return ChainState(state.x, state.iteration, ledger, state.chain_trials, state.chain_restarts)


def run_uniform_warmstart(body: BodyOracle, R: float, Lambda: float, d: int, q: float,
                          constants: AnnealConstants = AnnealConstants(),
                          rng: np.random.Generator | None = None,
                          replicas: int = 1) -> WarmStartReport:
    """Anneal ``gamma_{s}|_K`` from ``s = 1/d`` to the early-stop variance.

    Returns ``replicas`` independent final samples (``(replicas, d)``).  The
    output targets ``R_{2q}``-closeness to the last truncated Gaussian, which
    in turn is ``O(1)``-close to uniform in ``R_q``.
    """
    rng = np.random.default_rng() if rng is None else rng
    schedule = build_uniform_schedule(R, Lambda, d, q, constants)
    phases: list[PhaseRecord] = []

    if body.dim != d:
        raise ValueError("body dimension does not match d")
    led = QueryLedger()
    sd = 1.0 / math.sqrt(d)
    X, counts = _rejection(lambda k: sd * rng.standard_normal((k, d)), body, replicas, led,
                           MAX_INIT_TRIALS)
    phases.append(PhaseRecord("init", schedule.entries[0].sigma2, None, 0, led))
    state = ChainState(X, chain_trials=counts)

    M = constants.relay_warmness
    params = None
    for entry in schedule.entries[1:]:
        params = derive_params_gauss(d, M, entry.sigma2, RELAY_ORDER, 2.0, 1.0, constants)
        led = QueryLedger()
        state = _relay(state, led)
        state = ps_gauss_iterate(state, GaussTarget(body, entry.sigma2), params.config(constants),
                                 rng, params.N)
        phases.append(PhaseRecord("anneal", entry.sigma2, None, params.N, led, params.h, params.tau))

    last = schedule.entries[-1].sigma2
    if params is None:
        params = derive_params_gauss(d, M, last, RELAY_ORDER, 2.0, 1.0, constants)
    n_boost = boost_order_iterations(params.h, last, RELAY_ORDER, 2 * q, constants)
    led = QueryLedger()
    state = _relay(state, led)
    state = ps_gauss_iterate(state, GaussTarget(body, last), params.config(constants), rng, n_boost)
    phases.append(PhaseRecord("boost", last, None, n_boost, led, params.h, params.tau))

    return WarmStartReport(state.x, len(schedule), phases, 2 * q, q, constants.record(),
                           notes=[f"stop_threshold={schedule.stop_threshold:.6g}"],
                           chain_proposals=state.chain_trials, chain_restarts=state.chain_restarts)


def run_logconcave_warmstart(potential: PotentialOracle, R: float, Lambda: float, d: int, q: float,
                             constants: AnnealConstants = AnnealConstants(),
                             rng: np.random.Generator | None = None, replicas: int = 1,
                             handoff_eps: float | None = None,
                             handoff_constants: Constants | None = None) -> WarmStartReport:
    """Three-phase warm start for ``exp(-V)``; the minimizer of ``V`` must sit at 0 with ``V(0) = 0``.

    With ``handoff_eps`` set, the warm sample is handed to the lifted
    exponential sampler for the iteration count of its warm-start bound
    (warmness 1, accuracy ``handoff_eps``), so ``final_sample`` then targets
    ``exp(-V)`` itself rather than the truncated annealing endpoint.
    ``handoff_constants`` (default: ``constants``) sets that stage's
    ``h``, ``tau`` and iteration multipliers separately.
    """
    rng = np.random.default_rng() if rng is None else rng
    plan = build_logconcave_plan(potential, R, Lambda, d, q, constants)
    phases: list[PhaseRecord] = []
    notes = list(plan.notes)
    notes.append("tilt-annealing: outer (sigma2, rho) move first, then inner sigma2 restoration to 1")

    led = QueryLedger()
    Z, counts = init_logconcave(plan, d, rng, replicas, led)
    phases.append(PhaseRecord("init", plan.entries[0].sigma2, 0.0, 0, led))
    state = ChainState(Z, chain_trials=counts)

    M = constants.relay_warmness
    params = None
    for entry in plan.entries[1:]:
        params = derive_params_ann(d, M, entry.sigma2, RELAY_ORDER, 2.0, 1.0, constants)
        led = QueryLedger()
        state = _relay(state, led)
        target = TiltedTarget(plan.trunc_body, entry.sigma2, entry.rho)
        state = ps_ann_iterate(state, target, params.config(constants), rng, params.N)
        phases.append(PhaseRecord(entry.phase, entry.sigma2, entry.rho, params.N, led,
                                  params.h, params.tau))

    last = plan.entries[-1]
    if params is None:
        params = derive_params_ann(d, M, last.sigma2, RELAY_ORDER, 2.0, 1.0, constants)
    n_boost = boost_order_iterations(params.h, max(last.sigma2, 1.0), RELAY_ORDER, 2 * q, constants)
    led = QueryLedger()
    state = _relay(state, led)
    state = ps_ann_iterate(state, TiltedTarget(plan.trunc_body, last.sigma2, last.rho),
                           params.config(constants), rng, n_boost)
    phases.append(PhaseRecord("boost", last.sigma2, last.rho, n_boost, led, params.h, params.tau))

    if handoff_eps is not None:
        hc = constants if handoff_constants is None else handoff_constants
        hp = derive_params_exp(d, 1.0, q, Lambda, handoff_eps, hc)
        led = QueryLedger()
        state = _relay(state, led)
        state = ps_exp_iterate(state, LiftedBody(potential), hp.config(hc), rng, hp.N)
        phases.append(PhaseRecord("handoff", math.inf, float(d), hp.N, led, hp.h, hp.tau))

    return WarmStartReport(state.x[:, :-1], len(plan.entries), phases, 2 * q, q,
                           constants.record(), final_lifted=state.x, notes=notes,
                           chain_proposals=state.chain_trials, chain_restarts=state.chain_restarts)


def estimate_moments(samples: np.ndarray) -> tuple[float, float]:
    """Heuristic ``(R, Lambda)`` from pilot samples: ``sqrt(mean |x|^2)`` and ``||cov||``."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    R = float(np.sqrt(np.mean(np.einsum("ij,ij->i", X, X))))
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    return R, float(np.linalg.eigvalsh(cov).max())
