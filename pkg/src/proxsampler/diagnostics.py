"""Brute-force oracles and statistical checks for the samplers.

Everything here works in one or two dimensions, where densities can be put
on a grid and integrated directly:

* :class:`GridDensity` holds a normalized density at the centres of a
  regular grid (midpoint quadrature), with a half-resolution copy for
  Richardson error bars;
* divergence estimators (quadrature, Gaussian closed form, histogram
  plug-in);
* one-sided inequality checks returning :class:`CheckResult` rows;
* goodness-of-fit harnesses (KS in 1-D, 16-cell chi-square in 2-D).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats

from .oracles import Ball, BodyOracle, Box, QueryLedger, StandardBody

__all__ = [
    "GRID_1D",
    "GRID_2D",
    "P_THRESHOLD",
    "GridDensity",
    "DivergenceEstimate",
    "ContractionParams",
    "CheckResult",
    "StationarityReport",
    "DecaySeries",
    "UniformLaw",
    "GaussianLaw",
    "interval_poincare",
    "renyi_quadrature",
    "renyi_gaussians_closed_form",
    "chi_q_gaussians_equal_var",
    "check_sdpi_chiq",
    "check_hypercontractivity",
    "check_concentration_uniform",
    "concentration_bound",
    "check_budget",
    "check_annealing_closeness",
    "early_stop_curve",
    "exact_uniform",
    "stationarity_pvalue",
    "stationarity_test",
    "plugin_chi2",
    "chi_sq_decay_curve",
    "write_check_csv",
]

GRID_1D = 2 ** 14
GRID_2D = 512
P_THRESHOLD = 0.01
Z99 = stats.norm.ppf(0.99)


# ----------------------------------------------------------------------------
# grid densities


LogDensity = Callable[[np.ndarray], np.ndarray]


def _cell_centers(lo: float, hi: float, n: int) -> np.ndarray:
    step = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * step


@dataclass(frozen=True)
class GridDensity:
    """Normalized density on a cell-centred grid over a box in ``R^1`` or ``R^2``.

    ``log_values`` has shape ``(n,)`` or ``(n, n)`` (``-inf`` off the
    support).  ``source`` is the log-density the grid was built from, kept so
    the grid can be rebuilt at half resolution.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    log_values: np.ndarray
    source: LogDensity | None = field(default=None, compare=False)

    @classmethod
    def from_log_density(cls, logpdf: LogDensity, lo, hi, n: int | None = None) -> "GridDensity":
        """Evaluate ``logpdf`` (taking ``(m, d)`` points) at the cell centres and normalize."""
        lo = tuple(float(v) for v in np.atleast_1d(lo))
        hi = tuple(float(v) for v in np.atleast_1d(hi))
        d = len(lo)
        if d not in (1, 2) or len(hi) != d:
            raise ValueError("grid densities support one or two dimensions")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("empty grid domain")
        n = (GRID_1D if d == 1 else GRID_2D) if n is None else int(n)
        axes = [_cell_centers(a, b, n) for a, b in zip(lo, hi)]
        if d == 1:
            pts = axes[0][:, None]
        else:
            gx, gy = np.meshgrid(*axes, indexing="ij")
            pts = np.column_stack([gx.ravel(), gy.ravel()])
        logv = np.asarray(logpdf(pts), dtype=float).reshape((n,) * d)
        if np.isnan(logv).any() or (logv == np.inf).any():
            raise ValueError("log-density returned NaN or +inf")
        cell = np.prod([(b - a) / n for a, b in zip(lo, hi)])
        log_mass = special.logsumexp(logv) + math.log(cell)
        if not np.isfinite(log_mass):
            raise ValueError("density has no mass on the grid")
        return cls(lo, hi, logv - log_mass, logpdf)

    @classmethod
    def from_density(cls, pdf, lo, hi, n: int | None = None) -> "GridDensity":
        def logpdf(x):
            with np.errstate(divide="ignore"):
                return np.log(np.asarray(pdf(x), dtype=float))
        return cls.from_log_density(logpdf, lo, hi, n)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def resolution(self) -> int:
        return self.log_values.shape[0]

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    @property
    def steps(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / self.resolution

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.steps))

    def axis(self, i: int = 0) -> np.ndarray:
        return _cell_centers(self.lo[i], self.hi[i], self.resolution)

    def edges(self, i: int = 0) -> np.ndarray:
        return np.linspace(self.lo[i], self.hi[i], self.resolution + 1)

    def total_mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def same_grid(self, other: "GridDensity") -> bool:
        return self.lo == other.lo and self.hi == other.hi and self.log_values.shape == other.log_values.shape

    def half_resolution(self) -> "GridDensity":
        """The same density on a grid with half as many points per axis."""
        n = self.resolution // 2
        if self.source is not None:
            return GridDensity.from_log_density(self.source, self.lo, self.hi, n)
        # no source: merge neighbouring cells
        v = self.values
        if self.dim == 1:
            merged = v[: 2 * n].reshape(n, 2).mean(axis=1)
        else:
            merged = v[: 2 * n, : 2 * n].reshape(n, 2, n, 2).mean(axis=(1, 3))
        with np.errstate(divide="ignore"):
            return GridDensity(self.lo, self.hi,
                               np.log(merged / (merged.sum() * self.cell_volume * 2 ** self.dim)))

    def cell_masses(self) -> np.ndarray:
        return self.values * self.cell_volume

    def marginal(self, axis: int) -> "GridDensity":
        if self.dim == 1:
            return self
        m = self.values.sum(axis=1 - axis) * self.steps[1 - axis]
        with np.errstate(divide="ignore"):
            return GridDensity((self.lo[axis],), (self.hi[axis],), np.log(m))

    def cdf(self, x) -> np.ndarray:
        """CDF of a 1-D grid density, linear inside each cell."""
        if self.dim != 1:
            raise ValueError("cdf needs a one-dimensional grid")
        edges = self.edges()
        cum = np.concatenate([[0.0], np.cumsum(self.cell_masses())])
        cum /= cum[-1]
        return np.interp(np.asarray(x, dtype=float), edges, cum, left=0.0, right=1.0)

    def quantile_edges(self, k: int, axis: int = 0) -> np.ndarray:
        """``k + 1`` grid edges splitting the ``axis`` marginal into near-equal masses.

        Interior edges snap to grid edges, so cell probabilities are exact
        sums of grid cells.  The outer edges are ``-inf`` and ``+inf``.
        """
        marg = self.marginal(axis)
        cum = np.cumsum(marg.cell_masses())
        cum /= cum[-1]
        grid_edges = marg.edges()
        inner = [grid_edges[np.searchsorted(cum, j / k) + 1] for j in range(1, k)]
        return np.array([-np.inf, *inner, np.inf])

    def cell_probabilities(self, edges_x: np.ndarray, edges_y: np.ndarray | None = None) -> np.ndarray:
        """Probabilities of the rectangles cut by the given edges (edges snap to the grid)."""
        masses = self.cell_masses()
        ix = np.searchsorted(edges_x, self.axis(0), side="right") - 1
        if self.dim == 1:
            return np.bincount(ix, weights=masses, minlength=len(edges_x) - 1) / masses.sum()
        iy = np.searchsorted(edges_y, self.axis(1), side="right") - 1
        kx, ky = len(edges_x) - 1, len(edges_y) - 1
        flat = (ix[:, None] * ky + iy[None, :]).ravel()
        probs = np.bincount(flat, weights=masses.ravel(), minlength=kx * ky)
        return probs.reshape(kx, ky) / masses.sum()

    def sample(self, n: int, rng: np.random.Generator, support: BodyOracle | None = None) -> np.ndarray:
        """Inverse-CDF draw: pick a cell by mass, then a uniform point in it.

        With ``support``, points outside it are redrawn within their cell,
        removing the boundary error of indicator-valued grids.
        """
        masses = self.cell_masses().ravel()
        cells = rng.choice(masses.size, size=n, p=masses / masses.sum())
        idx = np.array(np.unravel_index(cells, self.log_values.shape)).T
        lo = np.array(self.lo) + idx * self.steps
        out = lo + rng.random((n, self.dim)) * self.steps
        if support is not None:
            bad = np.flatnonzero(~support._contains(out, None))
            for _ in range(1000):
                if bad.size == 0:
                    break
                out[bad] = lo[bad] + rng.random((bad.size, self.dim)) * self.steps
                bad = bad[~support._contains(out[bad], None)]
        return out


# ----------------------------------------------------------------------------
# divergences


@dataclass(frozen=True)
class DivergenceEstimate:
    q: float
    value: float
    method: str
    error_bar: float = 0.0
    infinite: bool = False

    def __post_init__(self):
        if self.method not in ("quadrature", "closed_form", "plugin_histogram"):
            raise ValueError(f"unknown method {self.method}")
        if not self.value >= 0:
            raise ValueError("divergence estimates are non-negative")

    @property
    def chi(self) -> float:
        """The matching ``chi^q`` value, ``exp((q - 1) R_q) - 1``."""
        return math.expm1((self.q - 1) * self.value)


def _log_chi_plus_one(mu: GridDensity, nu: GridDensity, q: float) -> tuple[float, bool]:
    """``log(1 + chi^q(mu || nu))`` by midpoint quadrature; flag support violations."""
    lm, ln = mu.log_values, nu.log_values
    pos = lm > -np.inf
    if np.any(pos & (ln == -np.inf)):
        return math.inf, True
    if math.isinf(q):
        return float(np.max(lm[pos] - ln[pos])), False
    lr = lm[pos] - ln[pos]
    # sum of nu (r^q - 1) plus the cells where mu vanishes contributing -nu
    w = np.exp(ln[pos]) * mu.cell_volume
    chi = float(np.sum(w * np.expm1(q * lr)) - np.exp(ln[~pos]).sum() * mu.cell_volume)
    if chi > 1e300:
        log_terms = np.log(w) + q * lr
        return float(special.logsumexp(log_terms)), False
    return math.log1p(max(chi, -1 + 1e-300)), False


def renyi_quadrature(mu: GridDensity, nu: GridDensity, q: float) -> DivergenceEstimate:
    """``R_q(mu || nu)`` on a shared grid, with a Richardson error bar.

    ``q = inf`` gives the log of the largest density ratio.  If ``mu`` has
    mass where ``nu`` has none the value is ``+inf`` and ``infinite`` is set.
    """
    if not q > 1:
        raise ValueError("q must exceed 1")
    if not mu.same_grid(nu):
        raise ValueError("mu and nu must live on the same grid")
    lc, flag = _log_chi_plus_one(mu, nu, q)
    if flag:
        return DivergenceEstimate(q, math.inf, "quadrature", math.inf, True)
    scale = 1.0 if math.isinf(q) else 1.0 / (q - 1)
    value = max(lc * scale, 0.0)
    err = 0.0
    if mu.resolution >= 4:
        mh, nh = mu.half_resolution(), nu.half_resolution()
        lc_h, flag_h = _log_chi_plus_one(mh, nh, q)
        if not flag_h:
            # midpoint rule is second order: error ~ (fine - coarse) / 3
            err = abs(value - max(lc_h * scale, 0.0)) / 3.0
    return DivergenceEstimate(q, value, "quadrature", err)


def renyi_gaussians_closed_form(m1: float, s1: float, m2: float, s2: float, q: float) -> float:
    """``R_q(N(m1, s1) || N(m2, s2))`` for variances ``s1, s2``.

    With ``s* = q s2 + (1 - q) s1 > 0``::

        R_q = log(sqrt(s2 / s1)) + log(s2 / s*) / (2 (q - 1)) + q (m1 - m2)^2 / (2 s*)

    Returns ``inf`` when ``s* <= 0`` (the divergence is infinite).
    """
    if not q > 1 or math.isinf(q):
        raise ValueError("q must be finite and exceed 1")
    if not s1 > 0 or not s2 > 0:
        raise ValueError("variances must be positive")
    s_mix = q * s2 + (1 - q) * s1
    if s_mix <= 0:
        return math.inf
    return (0.5 * math.log(s2 / s1) + math.log(s2 / s_mix) / (2 * (q - 1))
            + q * (m1 - m2) ** 2 / (2 * s_mix))


def chi_q_gaussians_equal_var(m: float, s: float, q: float) -> float:
    """``chi^q(N(m, s) || N(0, s)) = exp(q (q - 1) m^2 / (2 s)) - 1``."""
    return math.expm1(q * (q - 1) * m * m / (2 * s))


# ----------------------------------------------------------------------------
# laws that stay tractable under the heat flow


@dataclass(frozen=True)
class UniformLaw:
    a: float
    b: float

    def bounds(self, t: float) -> tuple[float, float]:
        pad = 14.0 * math.sqrt(t)
        return self.a - pad, self.b + pad

    def flowed_logpdf(self, x: np.ndarray, t: float) -> np.ndarray:
        """Log-density of ``Unif[a, b] * N(0, t)``; ``t = 0`` is the plain uniform."""
        x = np.asarray(x, dtype=float).reshape(-1)
        width = self.b - self.a
        if t == 0:
            inside = (x >= self.a) & (x <= self.b)
            return np.where(inside, -math.log(width), -np.inf)
        r = math.sqrt(t)
        u, v = (x - self.a) / r, (x - self.b) / r  # density = (Phi(u) - Phi(v)) / width, u > v
        out = np.empty_like(x)
        left = v <= 0
        lu, lv = special.log_ndtr(u[left]), special.log_ndtr(v[left])
        out[left] = lu + np.log1p(-np.exp(lv - lu))
        nu_, nv_ = special.log_ndtr(-u[~left]), special.log_ndtr(-v[~left])
        out[~left] = nv_ + np.log1p(-np.exp(nu_ - nv_))
        return out - math.log(width)


@dataclass(frozen=True)
class GaussianLaw:
    m: float
    s: float

    def bounds(self, t: float) -> tuple[float, float]:
        sd = math.sqrt(self.s + t)
        return self.m - 14.0 * sd, self.m + 14.0 * sd

    def flowed_logpdf(self, x: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return stats.norm.logpdf(x, self.m, math.sqrt(self.s + t))


def interval_poincare(length: float) -> float:
    """Poincare constant ``(L / pi)^2`` of the uniform law on an interval of length ``L``."""
    return (length / math.pi) ** 2


# ----------------------------------------------------------------------------
# check rows


@dataclass(frozen=True)
class ContractionParams:
    C_pi: float
    C_lsi: float
    t: float = 0.0
    q: float = 2.0
    p: float = 2.0

    def __post_init__(self):
        if not self.C_pi > 0 or not self.C_lsi > 0:
            raise ValueError("functional-inequality constants must be positive")

    def q_of_t(self, t: float | None = None) -> float:
        """Hypercontractive order ``1 + (p - 1)(1 + t / C_lsi)``."""
        t = self.t if t is None else t
        return 1.0 + (self.p - 1.0) * (1.0 + t / self.C_lsi)


@dataclass(frozen=True)
class CheckResult:
    check_id: str
    claim: str
    parameters: dict
    measured: float
    bound: float
    passed: bool

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.check_id} {self.parameters}: measured={self.measured:.6g} bound={self.bound:.6g}"


def write_check_csv(rows: list[CheckResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check_id", "claim", "parameters", "measured", "bound", "pass"])
        for r in rows:
            w.writerow([r.check_id, r.claim, json.dumps(r.parameters, sort_keys=True),
                        "%.17g" % r.measured, "%.17g" % r.bound, int(r.passed)])


# ----------------------------------------------------------------------------
# SDPI and hypercontractivity


def _chi_q_flowed(nu_law, mu_law, q: float, t: float, n: int) -> float:
    lo = min(nu_law.bounds(t)[0], mu_law.bounds(t)[0])
    hi = max(nu_law.bounds(t)[1], mu_law.bounds(t)[1])
    nu = GridDensity.from_log_density(lambda x: nu_law.flowed_logpdf(x[:, 0], t), lo, hi, n)
    mu = GridDensity.from_log_density(lambda x: mu_law.flowed_logpdf(x[:, 0], t), lo, hi, n)
    lc, flag = _log_chi_plus_one(nu, mu, q)
    if flag:
        return math.inf
    return math.expm1(lc)


def check_sdpi_chiq(target, warm_start, q: float, t_list, C_pi: float, n: int = GRID_1D,
                    slack: float = 1e-6) -> list[CheckResult]:
    """Contraction of ``chi^q`` under the heat flow against ``(1 + t / C_pi)^{-2/q}``.

    ``target`` and ``warm_start`` are :class:`UniformLaw` or
    :class:`GaussianLaw` objects; both are flowed for time ``t`` and
    ``chi^q(warm_t || target_t)`` is integrated on a grid covering both.
    """
    if q < 2:
        raise ValueError("the contraction bound needs q >= 2")
    base = _chi_q_flowed(warm_start, target, q, 0.0, n)
    rows = []
    for t in t_list:
        ratio = 1.0 if t == 0 else _chi_q_flowed(warm_start, target, q, float(t), n) / base
        bound = (1.0 + t / C_pi) ** (-2.0 / q)
        rows.append(CheckResult("sdpi_chiq", "chi^q contraction under heat flow",
                                {"target": repr(target), "warm_start": repr(warm_start), "q": q,
                                 "t": float(t), "C_pi": C_pi},
                                ratio, bound, bool(ratio <= bound + slack)))
    return rows


def check_hypercontractivity(p: float, C_lsi: float, m: float, t_list,
                             tol: float = 1e-9) -> list[CheckResult]:
    """``R_{q(t)}(mu_t || nu_t) <= R_p(mu || nu)`` for ``nu = N(0, s)``, ``mu = N(m, s)``, ``s = C_lsi``.

    Both flowed laws stay Gaussian with variance ``s + t``, so the check is
    exact up to rounding; the slack is reported as ``bound - measured``.
    """
    s = C_lsi
    params = ContractionParams(C_pi=s, C_lsi=s, p=p)
    rhs = renyi_gaussians_closed_form(m, s, 0.0, s, p)
    rows = []
    for t in t_list:
        qt = params.q_of_t(t)
        lhs = renyi_gaussians_closed_form(m, s + t, 0.0, s + t, qt)
        rows.append(CheckResult("hypercontractivity", "heat-flow order boost keeps Renyi divergence",
                                {"p": p, "C_lsi": s, "m": m, "t": float(t), "q_t": qt},
                                lhs, rhs, bool(lhs <= rhs + tol)))
    return rows


# ----------------------------------------------------------------------------
# exact uniform draws and concentration


def _bounding_box(body: BodyOracle) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(body, Box):
        return body.translation - body.half_widths, body.translation + body.half_widths
    if isinstance(body, Ball):
        return body.translation - body.radius, body.translation + body.radius
    raise ValueError(f"pass a bounding box for {type(body).__name__}")


def exact_uniform(body: BodyOracle, n: int, rng: np.random.Generator, bbox=None) -> np.ndarray:
    """``n`` exact uniform draws from ``body`` by rejection from its bounding box (uncounted)."""
    lo, hi = _bounding_box(body) if bbox is None else map(np.asarray, bbox)
    out = np.empty((n, body.dim))
    pending = np.arange(n)
    while pending.size:
        Z = rng.uniform(lo, hi, (pending.size, body.dim))
        ok = body._contains(Z, None)
        out[pending[ok]] = Z[ok]
        pending = pending[~ok]
    return out


def concentration_bound(d: int, h: float, delta: float) -> float:
    """``exp(-delta^2 / (2h) + delta d)``, the tail bound for ``x + N(0, hI)`` leaving ``K_delta``."""
    return math.exp(-delta ** 2 / (2 * h) + delta * d)


def check_concentration_uniform(body: StandardBody, d: int, h: float, delta: float, n_samples: int,
                                rng: np.random.Generator) -> CheckResult:
    """Monte Carlo probability that ``x + N(0, hI)`` leaves ``K_delta`` for ``x ~ Unif(K)``."""
    if not delta > 0 or not h > 0:
        raise ValueError("delta and h must be positive")
    X = exact_uniform(body, n_samples, rng)
    Y = X + math.sqrt(h) * rng.standard_normal(X.shape)
    outside = ~body.dilated_contains(Y, delta)
    p_hat = float(outside.mean())
    se = math.sqrt(max(p_hat * (1 - p_hat), 1.0 / n_samples) / n_samples)
    bound = concentration_bound(d, h, delta)
    return CheckResult("concentration", "forward step rarely leaves the delta-dilation",
                       {"d": d, "h": h, "delta": delta, "n": n_samples, "se": se},
                       p_hat, bound, bool(p_hat <= bound + 3 * se))


# ----------------------------------------------------------------------------
# query budget


def check_budget(ledger: QueryLedger, tau: int, N: int, chain_trials: np.ndarray | None = None,
                 label: str = "") -> CheckResult:
    """Mean proposals per iteration against ``2 tau`` at 99% one-sided confidence.

    ``chain_trials`` (per-chain proposal totals over the ``N`` iterations)
    gives the standard error; without it only the plain mean is compared.
    """
    n_chains = 1 if chain_trials is None else len(chain_trials)
    if ledger.iterations_completed != n_chains * N:
        raise ValueError("ledger does not cover N iterations of every chain")
    mean = ledger.proposals_drawn / (n_chains * N)
    se = 0.0
    if chain_trials is not None and n_chains > 1:
        se = float(np.std(np.asarray(chain_trials) / N, ddof=1) / math.sqrt(n_chains))
    bound = 2.0 * tau
    return CheckResult("budget", "expected proposals per iteration at most 2 tau",
                       {"sampler": label, "tau": tau, "N": N, "chains": n_chains, "se": se,
                        "restarts": ledger.restarts},
                       mean, bound, bool(mean - Z99 * se <= bound))


# ----------------------------------------------------------------------------
# annealing closeness and early stopping (uniform target on an interval)


def _truncated_gauss_grid(a: float, b: float, sigma2: float, n: int) -> GridDensity:
    return GridDensity.from_log_density(lambda x: -x[:, 0] ** 2 / (2 * sigma2), a, b, n)


def check_annealing_closeness(sigma2_list, alpha_list, q_list=(2.0, 4.0), a: float = -1.0,
                              b: float = 1.0, n: int = GRID_1D, slack: float = 1e-6) -> list[CheckResult]:
    """Quadrature ``R_q`` between ``Unif[a,b] gamma_s`` and ``Unif[a,b] gamma_{s(1+alpha)}``
    against ``q^2 alpha^2 R^2 / (2 s)`` with ``R^2`` the second moment of the uniform law."""
    from .annealing import closeness_bound

    R = math.sqrt((a * a + a * b + b * b) / 3.0)
    rows = []
    for s in sigma2_list:
        for alpha in alpha_list:
            mu = _truncated_gauss_grid(a, b, s, n)
            nu = _truncated_gauss_grid(a, b, s * (1 + alpha), n)
            for q in q_list:
                est = renyi_quadrature(mu, nu, q)
                bound = closeness_bound(q, alpha, R, s)
                rows.append(CheckResult("annealing_closeness", "consecutive annealing laws are close",
                                        {"sigma2": s, "alpha": alpha, "q": q, "err": est.error_bar},
                                        est.value, bound, bool(est.value <= bound + slack)))
    return rows


def early_stop_curve(sigma2_grid, q: float = 2.0, a: float = -1.0, b: float = 1.0,
                     n: int = GRID_1D) -> tuple[np.ndarray, CheckResult]:
    """``R_q(Unif[a,b] gamma_s || Unif[a,b])`` over ``s``; asserts it decreases in ``s``."""
    grid = np.asarray(sorted(sigma2_grid), dtype=float)
    nu = GridDensity.from_log_density(lambda x: np.zeros(len(x)), a, b, n)
    vals = np.array([renyi_quadrature(_truncated_gauss_grid(a, b, s, n), nu, q).value for s in grid])
    gaps = np.diff(vals)
    ok = bool(np.all(gaps < 0))
    return vals, CheckResult("early_stop_monotone", "truncated Gaussian approaches uniform as variance grows",
                             {"q": q, "sigma2": grid.tolist()},
                             float(gaps.max()) if gaps.size else 0.0, 0.0, ok)


# ----------------------------------------------------------------------------
# goodness of fit


@dataclass(frozen=True)
class StationarityReport:
    p_values: tuple[float, ...]
    p_min: float
    threshold: float
    statistic: str
    n: int

    @property
    def passed(self) -> bool:
        return self.p_min > self.threshold


def stationarity_pvalue(samples: np.ndarray, target, threshold: float = P_THRESHOLD,
                        cells_per_axis: int = 4) -> StationarityReport:
    """Goodness of fit of ``samples`` against ``target``.

    1-D (or 1-D marginals): ``target`` is a CDF callable, or a list of them
    (one per coordinate); KS per coordinate with Bonferroni over coordinates.
    2-D: ``target`` is a :class:`GridDensity`; chi-square on a
    ``4 x 4`` partition cut at marginal quantiles.  A sample where the
    target has no mass fails outright.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if isinstance(target, GridDensity) and target.dim == 2:
        ex = target.quantile_edges(cells_per_axis, 0)
        ey = target.quantile_edges(cells_per_axis, 1)
        probs = target.cell_probabilities(ex, ey).ravel()
        ix = np.searchsorted(ex, X[:, 0], side="right") - 1
        iy = np.searchsorted(ey, X[:, 1], side="right") - 1
        counts = np.bincount(ix * cells_per_axis + iy, minlength=probs.size)
        in_domain = np.all((X >= np.array(target.lo)) & (X <= np.array(target.hi)), axis=1)
        if not in_domain.all():
            p = 0.0
        else:
            p = float(stats.chisquare(counts, probs * n).pvalue)
        return StationarityReport((p,), p, threshold, "chi2_16", n)
    cdfs = target if isinstance(target, (list, tuple)) else [target] * X.shape[1]
    if isinstance(target, GridDensity):
        cdfs = [target.cdf]
    if len(cdfs) != X.shape[1]:
        raise ValueError("need one CDF per coordinate")
    ps = tuple(float(stats.kstest(X[:, i], cdf).pvalue) for i, cdf in enumerate(cdfs))
    # Bonferroni: compare the smallest p-value times the number of tests
    p_adj = min(1.0, min(ps) * len(ps))
    return StationarityReport(ps, p_adj, threshold, "ks", n)


def stationarity_test(sampler: Callable[[int, int, np.random.Generator], np.ndarray], target,
                      n: int, burn_in: int, rng: np.random.Generator,
                      threshold: float = P_THRESHOLD) -> StationarityReport:
    """Draw ``n`` samples via ``sampler(n, burn_in, rng)`` and test them against ``target``."""
    return stationarity_pvalue(sampler(n, burn_in, rng), target, threshold)


# ----------------------------------------------------------------------------
# chi-square decay


def plugin_chi2(x: np.ndarray, edges: np.ndarray, probs: np.ndarray) -> tuple[float, float]:
    """Histogram plug-in ``chi^2(empirical || target)`` and its delta-method standard error.

    The estimate is biased upward by about ``(B - 1) / n`` for ``B`` bins;
    the bias is reported by the callers, not removed.
    """
    n = len(x)
    counts = np.histogram(x, bins=edges)[0]
    if counts.sum() != n:
        return math.inf, 0.0
    ph = counts / n
    chi2 = float(np.sum(ph ** 2 / probs) - 1.0)
    grad_var = np.sum(ph ** 3 / probs ** 2) - np.sum(ph ** 2 / probs) ** 2
    se = 2.0 * math.sqrt(max(grad_var, 0.0) / n)
    return chi2, se


@dataclass(frozen=True)
class DecaySeries:
    k: np.ndarray
    chi2: np.ndarray
    se: np.ndarray
    rate_bound: np.ndarray
    chi2_start: float
    bias: float
    monotone: bool
    within_rate: bool

    @property
    def passed(self) -> bool:
        return self.monotone and self.within_rate


def chi_sq_decay_curve(step: Callable[[np.ndarray, np.random.Generator], np.ndarray],
                       target: UniformLaw, warm_start: UniformLaw, k_max: int, h: float,
                       rng: np.random.Generator, n_chains: int = 10 ** 6, bins: int = 64,
                       slack: float = 0.2) -> DecaySeries:
    """Plug-in ``chi^2(pi_k || pi)`` for ``k = 0..k_max`` from ``n_chains`` pooled chains.

    ``step(X, rng)`` advances a ``(n, 1)`` batch by one iteration.  The rate
    check is ``chi^2_k <= (1 + slack)(1 + h / C_pi)^{-k} chi^2_0`` with
    ``chi^2_0`` the exact value by quadrature; monotonicity allows three
    standard errors plus the plug-in bias.
    """
    C_pi = interval_poincare(target.b - target.a)
    edges = np.linspace(target.a, target.b, bins + 1)
    probs = np.full(bins, 1.0 / bins)
    lo, hi = target.a, target.b
    nu = GridDensity.from_log_density(lambda x: target.flowed_logpdf(x[:, 0], 0.0), lo, hi)
    mu = GridDensity.from_log_density(lambda x: warm_start.flowed_logpdf(x[:, 0], 0.0), lo, hi)
    chi0 = renyi_quadrature(mu, nu, 2.0).chi

    X = rng.uniform(warm_start.a, warm_start.b, (n_chains, 1))
    ks, chis, ses = [], [], []
    for k in range(k_max + 1):
        if k:
            X = step(X, rng)
        c, s = plugin_chi2(X[:, 0], edges, probs)
        ks.append(k), chis.append(c), ses.append(s)
    ks, chis, ses = np.array(ks), np.array(chis), np.array(ses)
    bias = (bins - 1) / n_chains
    rate = (1.0 + h / C_pi) ** (-ks.astype(float)) * chi0
    tol = 3 * np.sqrt(ses[1:] ** 2 + ses[:-1] ** 2) + bias
    monotone = bool(np.all(np.diff(chis) <= tol))
    within = bool(np.all(chis <= (1.0 + slack) * rate + bias))
    return DecaySeries(ks, chis, ses, rate, chi0, bias, monotone, within)
