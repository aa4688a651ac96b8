"""Proximal samplers with restart.

One iteration of every sampler here is a sequence of *stages*.  A stage
draws ``y ~ N(x, h I)`` (forward step) and then tries up to ``tau``
proposals from a Gaussian whose acceptance event is "lands in the support"
(backward step).  If all ``tau`` fail, ``y`` is discarded and a new stage
starts from the same ``x``.

The four samplers differ only in the backward proposal:

=============  ==========================================  ==================
sampler        proposal given ``y``                        support
=============  ==========================================  ==================
uniform        ``N(y, h I)``                               ``K``
gauss          ``N(s y, s h I)``, ``s = sig2/(h + sig2)``  ``K``
exp (lifted)   ``N(y - h alpha, h I)``, ``alpha = d e_d+1``  ``{V(x) <= d t}``
ann (tilted)   ``N(r y_x, r h I) x N(y_t - rho h, h)``     truncated lift
=============  ==========================================  ==================

All samplers run many independent chains at once: ``ChainState.x`` is
``(n, dim)`` for a batch or ``(dim,)`` for a single chain.

Restart caveat: conditioned on a stage succeeding, ``y`` is reweighted by
the stage success probability ``1 - (1 - l(y))^tau``.  The one-step law
therefore equals the untruncated ``P_h Q_h`` only when that probability is
(numerically) constant over the relevant ``y``, e.g. for large ``tau`` or
for starts well inside the support.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .oracles import BodyOracle, LiftedBody, OracleError, PotentialOracle, QueryLedger, _as_batch

__all__ = [
    "TAU_CAP",
    "StuckChainError",
    "TauCapWarning",
    "Constants",
    "SamplerConfig",
    "DerivedParams",
    "ChainState",
    "GaussTarget",
    "TiltedTarget",
    "StepOutcome",
    "BackwardProposal",
    "forward_step",
    "backward_step_uniform",
    "backward_step_gauss",
    "ps_unif_iterate",
    "ps_gauss_iterate",
    "ps_exp_iterate",
    "ps_ann_iterate",
    "sample_t_given_x",
    "lifted_start",
    "derive_params_unif",
    "derive_params_gauss",
    "derive_params_exp",
    "derive_params_ann",
    "boost_order_iterations",
    "renyi_from_chi",
    "chi_from_renyi",
    "renyi_from_lq_norm",
]

log = logging.getLogger(__name__)

TAU_CAP = 2 ** 40
DEFAULT_MAX_STAGES = 10 ** 6

#: When true, every completed iteration re-checks support membership
#: (outside any ledger).  The test suite switches this on.
CHECK_SUPPORT = False


class StuckChainError(RuntimeError):
    """A chain exceeded the stage cap inside a single iteration."""


class TauCapWarning(RuntimeWarning):
    """The restart threshold hit ``TAU_CAP``; sampling stays correct, the budget bound does not."""


@dataclass(frozen=True)
class Constants:
    """Multipliers standing in for the unknown constants of the asymptotic formulas."""

    c_h: float = 1.0
    c_tau: float = 1.0
    c_N: float = 1.0

    def __post_init__(self):
        for name in ("c_h", "c_tau", "c_N"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    h: float
    tau: int
    constants: Constants = field(default_factory=Constants)
    seed: int = 0
    max_stages: int = DEFAULT_MAX_STAGES

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step size h must be positive")
        if int(self.tau) < 1 or int(self.tau) > TAU_CAP:
            raise ValueError(f"tau must lie in [1, {TAU_CAP}]")
        if int(self.max_stages) < 1:
            raise ValueError("max_stages must be positive")
        object.__setattr__(self, "tau", int(self.tau))


@dataclass(frozen=True)
class DerivedParams:
    h: float
    tau: int
    N: int
    tau_capped: bool = False

    def config(self, constants: Constants = Constants(), seed: int = 0, **kw) -> SamplerConfig:
        return SamplerConfig(h=self.h, tau=self.tau, constants=constants, seed=seed, **kw)


@dataclass
class ChainState:
    """Current iterate(s), completed iteration count and query ledger.

    ``chain_trials``/``chain_restarts`` hold per-chain proposal and restart
    counts for batches; the ledger holds the totals.
    """

    x: np.ndarray
    iteration: int = 0
    ledger: QueryLedger = field(default_factory=QueryLedger)
    chain_trials: np.ndarray | None = None
    chain_restarts: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float)
        if self.x.ndim not in (1, 2):
            raise ValueError("state must hold a point (d,) or a batch (n, d)")
        n = 1 if self.x.ndim == 1 else self.x.shape[0]
        if self.chain_trials is None:
            self.chain_trials = np.zeros(n, dtype=np.int64)
        if self.chain_restarts is None:
            self.chain_restarts = np.zeros(n, dtype=np.int64)

    @property
    def n_chains(self) -> int:
        return 1 if self.x.ndim == 1 else self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[-1]


@dataclass(frozen=True)
class GaussTarget:
    """``exp(-|x|^2 / (2 sigma2))`` restricted to ``body``."""

    body: BodyOracle
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


@dataclass(frozen=True)
class TiltedTarget:
    """``exp(-|x|^2 / (2 sigma2) - rho t)`` on a body in ``R^{d+1}``.

    ``rho = 0`` (no tilt) is allowed for the warming phase of annealing.
    """

    trunc_body: BodyOracle
    sigma2: float
    rho: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        d = self.trunc_body.dim - 1
        if d < 1:
            raise ValueError("tilted targets live in R^{d+1} with d >= 1")
        if not 0 <= self.rho <= d:
            raise ValueError(f"rho must lie in [0, d] = [0, {d}]")


@dataclass(frozen=True)
class StepOutcome:
    """Result of one backward rejection loop: accepted point or exhaustion."""

    point: np.ndarray | None
    trials_used: int

    @property
    def accepted(self) -> bool:
        return self.point is not None

    @property
    def status(self) -> str:
        return "accepted" if self.accepted else "exhausted"


@dataclass(frozen=True)
class BackwardProposal:
    """Gaussian proposal ``N(gain * y + offset, diag(std^2))`` accepted on ``support``."""

    support: BodyOracle
    gain: np.ndarray
    offset: np.ndarray
    std: np.ndarray

    def mean(self, y: np.ndarray) -> np.ndarray:
        return self.gain * y + self.offset

    def draw(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.mean(y) + self.std * rng.standard_normal(y.shape)


def _uniform_proposal(body: BodyOracle, h: float) -> BackwardProposal:
    d = body.dim
    return BackwardProposal(body, np.ones(d), np.zeros(d), np.full(d, math.sqrt(h)))


def _gauss_proposal(target: GaussTarget, h: float) -> BackwardProposal:
    d = target.body.dim
    s = target.sigma2 / (h + target.sigma2)
    return BackwardProposal(target.body, np.full(d, s), np.zeros(d), np.full(d, math.sqrt(s * h)))


def _exp_proposal(lifted: LiftedBody, h: float) -> BackwardProposal:
    D = lifted.dim
    return BackwardProposal(lifted, np.ones(D), -h * lifted.alpha, np.full(D, math.sqrt(h)))


def _ann_proposal(target: TiltedTarget, h: float) -> BackwardProposal:
    D = target.trunc_body.dim
    r = target.sigma2 / (h + target.sigma2)
    gain = np.full(D, r)
    gain[-1] = 1.0
    offset = np.zeros(D)
    offset[-1] = -target.rho * h
    std = np.full(D, math.sqrt(r * h))
    std[-1] = math.sqrt(h)
    return BackwardProposal(target.trunc_body, gain, offset, std)


# ----------------------------------------------------------------------------
# single steps


def forward_step(x, h: float, rng: np.random.Generator) -> np.ndarray:
    """``y = x + sqrt(h) z`` with ``z`` standard normal of matching shape."""
    if h < 0:
        raise ValueError("h must be non-negative")
    x = np.asarray(x, dtype=float)
    if h == 0:
        return x.copy()
    return x + math.sqrt(h) * rng.standard_normal(x.shape)


def _backward_single(proposal: BackwardProposal, y, tau: int, rng, ledger) -> StepOutcome:
    y = np.asarray(y, dtype=float)
    if y.shape != (proposal.support.dim,):
        raise ValueError("backward steps take a single point; use the *_iterate functions for batches")
    if int(tau) < 1:
        raise ValueError("tau must be at least 1")
    for trial in range(1, int(tau) + 1):
        z = proposal.draw(y, rng)
        if ledger is not None:
            ledger.proposals_drawn += 1
        if proposal.support.contains(z, ledger):
            return StepOutcome(z, trial)
    return StepOutcome(None, int(tau))


def backward_step_uniform(body: BodyOracle, y, h: float, tau: int, rng,
                          ledger: QueryLedger | None = None) -> StepOutcome:
    """Up to ``tau`` draws from ``N(y, h I)``; the first one inside ``body`` wins."""
    if not h > 0:
        raise ValueError("h must be positive")
    return _backward_single(_uniform_proposal(body, h), y, tau, rng, ledger)


def backward_step_gauss(target: GaussTarget, y, h: float, tau: int, rng,
                        ledger: QueryLedger | None = None) -> StepOutcome:
    """Up to ``tau`` draws from ``N(s y, s h I)`` with ``s = sigma2 / (h + sigma2)``."""
    if not h > 0:
        raise ValueError("h must be positive")
    return _backward_single(_gauss_proposal(target, h), y, tau, rng, ledger)


# ----------------------------------------------------------------------------
# the batched stage loop


def _advance(state: ChainState, proposal: BackwardProposal, cfg: SamplerConfig,
             rng: np.random.Generator, n_iter: int) -> ChainState:
    if n_iter < 0:
        raise ValueError("n_iter must be non-negative")
    X, single = _as_batch(state.x, proposal.support.dim)
    X = X.copy()
    ledger = state.ledger
    trials_total = state.chain_trials.copy()
    restarts_total = state.chain_restarts.copy()
    sqrt_h = math.sqrt(cfg.h)
    tau = cfg.tau

    for _ in range(n_iter):
        n = X.shape[0]
        out = np.empty_like(X)
        idx = np.arange(n)
        Y = X + sqrt_h * rng.standard_normal(X.shape)
        trials = np.zeros(n, dtype=np.int64)
        stages = np.ones(n, dtype=np.int64)
        while idx.size:
            Z = proposal.draw(Y, rng)
            ledger.proposals_drawn += idx.size
            trials_total[idx] += 1
            inside = proposal.support.contains(Z, ledger)
            done = np.flatnonzero(inside)
            out[idx[done]] = Z[done]
            keep = ~inside
            idx, Y, trials, stages = idx[keep], Y[keep], trials[keep] + 1, stages[keep]
            exhausted = np.flatnonzero(trials >= tau)
            if exhausted.size:
                ledger.restarts += exhausted.size
                restarts_total[idx[exhausted]] += 1
                stages[exhausted] += 1
                if stages.max() > cfg.max_stages:
                    raise StuckChainError(
                        f"a chain needed more than {cfg.max_stages} stages in one iteration; "
                        "h is probably too large or tau too small for this body")
                trials[exhausted] = 0
                Y[exhausted] = X[idx[exhausted]] + sqrt_h * rng.standard_normal((exhausted.size, X.shape[1]))
        X = out
        ledger.iterations_completed += n
        if CHECK_SUPPORT and not np.all(proposal.support._contains(X, None)):
            raise AssertionError("iterate left the support")

    return ChainState(X[0] if single else X, state.iteration + n_iter, ledger,
                      trials_total, restarts_total)


def ps_unif_iterate(state: ChainState, body: BodyOracle, cfg: SamplerConfig,
                    rng: np.random.Generator, n_iter: int = 1) -> ChainState:
    """Advance every chain by ``n_iter`` iterations toward the uniform law on ``body``.

    The ledger in ``state`` is updated in place and shared with the result.
    Raises :class:`StuckChainError` past ``cfg.max_stages`` stages.
    """
    return _advance(state, _uniform_proposal(body, cfg.h), cfg, rng, n_iter)


def ps_gauss_iterate(state: ChainState, target: GaussTarget, cfg: SamplerConfig,
                     rng: np.random.Generator, n_iter: int = 1) -> ChainState:
    return _advance(state, _gauss_proposal(target, cfg.h), cfg, rng, n_iter)


def ps_exp_iterate(state: ChainState, lifted: LiftedBody, cfg: SamplerConfig,
                   rng: np.random.Generator, n_iter: int = 1) -> ChainState:
    """Iterate on ``exp(-d t)`` over the lifted body; ``state.x`` holds ``(x, t)``."""
    return _advance(state, _exp_proposal(lifted, cfg.h), cfg, rng, n_iter)


def ps_ann_iterate(state: ChainState, target: TiltedTarget, cfg: SamplerConfig,
                   rng: np.random.Generator, n_iter: int = 1) -> ChainState:
    return _advance(state, _ann_proposal(target, cfg.h), cfg, rng, n_iter)


# ----------------------------------------------------------------------------
# lifting helpers


def sample_t_given_x(potential: PotentialOracle, x, d: int, rng: np.random.Generator,
                     ledger: QueryLedger | None = None):
    """Draw ``t`` from ``exp(-d t)`` on ``[V(x)/d, inf)`` by inverse CDF."""
    vals = potential.evaluate(x, ledger)
    arr = np.atleast_1d(np.asarray(vals, dtype=float))
    if np.isinf(arr).any():
        raise OracleError("V(x) = +inf: start point lies outside the domain of the potential")
    u = rng.random(arr.shape)
    t = arr / d - np.log1p(-u) / d
    return float(t[0]) if np.ndim(vals) == 0 else t


def lifted_start(potential: PotentialOracle, x, rng: np.random.Generator,
                 ledger: QueryLedger | None = None) -> np.ndarray:
    """Append ``t ~ pi(t | x)`` to each ``x``, giving points of the lifted body."""
    X, single = _as_batch(x, potential.dim)
    t = np.atleast_1d(sample_t_given_x(potential, X, potential.dim, rng, ledger))
    Z = np.column_stack([X, t])
    return Z[0] if single else Z


# ----------------------------------------------------------------------------
# parameter formulas


def _check_common(d, M, eps):
    if int(d) < 1:
        raise ValueError("d must be a positive integer")
    if not M > 0:
        raise ValueError("warmness bound M must be positive (pass M = 1 for an exact start)")
    if not 0 < eps < 1 and eps != 1:
        raise ValueError("eps must lie in (0, 1]")


def _step_and_threshold(d: int, M: float, c: Constants) -> tuple[float, int, bool]:
    h = min(1.0, c.c_h / (d ** 2 * max(M, 1.0)))
    log_tau = math.log(c.c_tau * M) + M
    if log_tau >= math.log(TAU_CAP):
        warnings.warn(f"tau = c_tau * M * e^M exceeds 2^40 for M = {M}; capping. "
                      "Sampling stays exact, the query bound no longer applies.",
                      TauCapWarning, stacklevel=3)
        return h, TAU_CAP, True
    return h, max(1, math.ceil(c.c_tau * M * math.exp(M))), False


def derive_params_unif(d: int, M: float, q: float, Lambda: float, eps: float,
                       constants: Constants = Constants()) -> DerivedParams:
    """Step size, threshold and iteration count for the uniform sampler.

    ``h = c_h / (d^2 max(M, 1))`` (at most 1), ``tau = ceil(c_tau M e^M)``
    and ``N = ceil(c_N q d^2 Lambda M max(log d, 1) log(1/eps))``, at least 1.
    """
    _check_common(d, M, eps)
    if q < 2:
        raise ValueError("q must be at least 2")
    if not Lambda > 0:
        raise ValueError("Lambda must be positive")
    h, tau, capped = _step_and_threshold(d, M, constants)
    N = constants.c_N * q * d ** 2 * Lambda * M * max(math.log(d), 1.0) * math.log(1.0 / eps)
    return DerivedParams(h, tau, max(1, math.ceil(N)), capped)


def derive_params_exp(d: int, M: float, q: float, Lambda: float, eps: float,
                      constants: Constants = Constants()) -> DerivedParams:
    """As :func:`derive_params_unif` with ``Lambda`` replaced by ``max(Lambda, 1)``."""
    return derive_params_unif(d, M, q, max(Lambda, 1.0), eps, constants)


def derive_params_gauss(d: int, M: float, sigma2: float, q: float, q0: float, eps: float,
                        constants: Constants = Constants()) -> DerivedParams:
    """Parameters for the truncated-Gaussian sampler.

    ``N = ceil(c_N d^2 sigma2 log(q max(M,1) / ((min(2, q0) - 1) eps)))``,
    at least 1; ``h`` and ``tau`` as for the uniform sampler.
    """
    _check_common(d, M, eps)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if not q > 1:
        raise ValueError("q must exceed 1")
    if not q0 > 1:
        raise ValueError("q0 must exceed 1")
    h, tau, capped = _step_and_threshold(d, M, constants)
    arg = q * max(M, 1.0) / ((min(2.0, q0) - 1.0) * eps)
    N = constants.c_N * d ** 2 * sigma2 * math.log(arg)
    return DerivedParams(h, tau, max(1, math.ceil(N)), capped)


def derive_params_ann(d: int, M: float, sigma2: float, q: float, q0: float, eps: float,
                      constants: Constants = Constants()) -> DerivedParams:
    """As :func:`derive_params_gauss` with ``sigma2`` replaced by ``max(sigma2, 1)``."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return derive_params_gauss(d, M, max(sigma2, 1.0), q, q0, eps, constants)


def boost_order_iterations(h: float, C_lsi: float, p: float, q: float,
                           constants: Constants = Constants()) -> int:
    """Extra iterations that upgrade a Renyi-``p`` guarantee to order ``q``.

    ``ceil(c_N C_lsi / h * log2((q - 1)/(p - 1)))``; zero when ``p == q``.
    For a Gaussian truncated to a convex body pass ``C_lsi = sigma2``.
    """
    if not h > 0 or not C_lsi > 0:
        raise ValueError("h and C_lsi must be positive")
    if not p > 1:
        raise ValueError("p must exceed 1")
    if p > q:
        raise ValueError("boosting needs p <= q")
    if p == q:
        return 0
    return math.ceil(constants.c_N * C_lsi / h * math.log2((q - 1.0) / (p - 1.0)))


def renyi_from_chi(q: float, chi: float) -> float:
    """``R_q = log(1 + chi^q) / (q - 1)``."""
    return math.log1p(chi) / (q - 1.0)


def chi_from_renyi(q: float, renyi: float) -> float:
    return math.expm1((q - 1.0) * renyi)


def renyi_from_lq_norm(q: float, norm: float) -> float:
    """Renyi divergence from the warmness ``M_q = ||d mu / d nu||_{L^q(nu)}``."""
    return q / (q - 1.0) * math.log(norm)
