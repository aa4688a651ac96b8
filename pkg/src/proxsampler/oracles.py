"""Zeroth-order access to convex bodies and convex potentials.

Bodies answer membership queries, potentials answer evaluation queries.
Every oracle accepts either a single point of shape ``(d,)`` or a batch of
shape ``(n, d)``; a batch of ``n`` points costs ``n`` queries.  Query counts
go to a :class:`QueryLedger`, either passed explicitly per call or attached
to the oracle.

``+inf`` is the only value a potential may use to signal "outside the
domain"; a NaN coming back from an oracle is treated as corruption.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import gammaln

__all__ = [
    "OUTSIDE",
    "DimensionError",
    "OracleError",
    "NoClosedFormError",
    "UnitBallWarning",
    "QueryLedger",
    "BodyOracle",
    "PotentialOracle",
    "StandardBody",
    "Ball",
    "Box",
    "Interval",
    "Polytope",
    "Ellipsoid",
    "Intersection",
    "CylinderWindow",
    "LiftedBody",
    "FunctionBody",
    "FunctionPotential",
    "QuadraticPotential",
    "NormPotential",
    "IndicatorPotential",
    "BodyStats",
    "membership",
    "evaluate",
    "lift",
    "body_stats",
    "probe_unit_ball",
]

#: Value of a potential outside its domain.
OUTSIDE = math.inf


class DimensionError(ValueError):
    """A point does not have the oracle's dimension."""


class OracleError(RuntimeError):
    """An oracle returned something it never should (e.g. NaN)."""


class NoClosedFormError(NotImplementedError):
    """The requested analytic quantity is not available for this body."""


class UnitBallWarning(UserWarning):
    """A body appears not to contain the unit ball around the origin."""


@dataclass
class QueryLedger:
    """Exact per-category oracle accounting for one chain or one batch.

    Ledgers are never shared between concurrently running chains; combine
    them with ``+`` (or :meth:`merge`) at join points.
    """

    membership_calls: int = 0
    evaluation_calls: int = 0
    proposals_drawn: int = 0
    restarts: int = 0
    iterations_completed: int = 0

    def merge(self, other: "QueryLedger") -> "QueryLedger":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def __add__(self, other: "QueryLedger") -> "QueryLedger":
        return QueryLedger(**self.as_dict()).merge(other)

    def as_dict(self) -> dict[str, int]:
        return {f.name: int(getattr(self, f.name)) for f in fields(self)}

    def copy(self) -> "QueryLedger":
        return QueryLedger(**self.as_dict())


def _as_batch(x, dim: int) -> tuple[np.ndarray, bool]:
    """Return ``(batch, was_single)`` with ``batch`` of shape ``(n, dim)``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise DimensionError(f"expected a point of dimension {dim}, got {arr.shape[0]}")
        return arr[None, :], True
    if arr.ndim == 2:
        if arr.shape[1] != dim:
            raise DimensionError(f"expected points of dimension {dim}, got {arr.shape[1]}")
        return arr, False
    raise DimensionError(f"points must be 1-D or 2-D arrays, got shape {arr.shape}")


class BodyOracle:
    """Membership oracle for a convex body ``K`` in ``R^dim``.

    Subclasses implement :meth:`_contains` on an ``(n, dim)`` batch.  The
    boundary counts as inside.
    """

    def __init__(self, dim: int, ledger: QueryLedger | None = None):
        if int(dim) < 1:
            raise ValueError("dimension must be a positive integer")
        self.dim = int(dim)
        self.ledger = ledger

    def _contains(self, X: np.ndarray, ledger: QueryLedger | None) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x, ledger: QueryLedger | None = None):
        """Membership of one point (returns ``bool``) or a batch (bool array)."""
        X, single = _as_batch(x, self.dim)
        led = ledger if ledger is not None else self.ledger
        if led is not None:
            led.membership_calls += X.shape[0]
        inside = np.asarray(self._contains(X, led), dtype=bool)
        return bool(inside[0]) if single else inside

    def __call__(self, x, ledger: QueryLedger | None = None):
        return self.contains(x, ledger)


class PotentialOracle:
    """Evaluation oracle for a convex potential ``V: R^dim -> R u {+inf}``."""

    def __init__(self, dim: int, min_hint: float | None = None,
                 ledger: QueryLedger | None = None):
        if int(dim) < 1:
            raise ValueError("dimension must be a positive integer")
        self.dim = int(dim)
        self.min_hint = min_hint
        self.ledger = ledger

    def _eval(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, x, ledger: QueryLedger | None = None):
        X, single = _as_batch(x, self.dim)
        led = ledger if ledger is not None else self.ledger
        if led is not None:
            led.evaluation_calls += X.shape[0]
        vals = np.asarray(self._eval(X), dtype=float).reshape(X.shape[0])
        if np.isnan(vals).any():
            raise OracleError("potential oracle returned NaN")
        if (vals == -np.inf).any():
            raise OracleError("potential oracle returned -inf")
        return float(vals[0]) if single else vals

    def __call__(self, x, ledger: QueryLedger | None = None):
        return self.evaluate(x, ledger)

    def density(self, x):
        """Unnormalized density ``exp(-V)``; does not touch any ledger."""
        X, single = _as_batch(x, self.dim)
        vals = np.exp(-np.asarray(self._eval(X), dtype=float).reshape(X.shape[0]))
        return float(vals[0]) if single else vals


# ----------------------------------------------------------------------------
# concrete bodies


class StandardBody(BodyOracle):
    """A library body with a stored translation: ``K = base + translation``."""

    kind = "abstract"

    def __init__(self, dim: int, translation=None, ledger: QueryLedger | None = None):
        super().__init__(dim, ledger)
        if translation is None:
            translation = np.zeros(self.dim)
        self.translation = np.asarray(translation, dtype=float).reshape(self.dim)

    def _contains(self, X, ledger):
        return self._base_contains(X - self.translation)

    def _base_contains(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distance_to_base(self, Z: np.ndarray) -> np.ndarray:
        """Euclidean distance from (untranslated) points to the base set."""
        raise NoClosedFormError(f"no closed-form distance for {self.kind}")

    def dilated_contains(self, x, delta: float):
        """Membership in ``K_delta = {x : dist(x, K) <= delta}`` (uncounted)."""
        X, single = _as_batch(x, self.dim)
        inside = self.distance_to_base(X - self.translation) <= delta
        return bool(inside[0]) if single else inside

    def _base_stats(self) -> tuple[float, float, float]:
        raise NoClosedFormError(f"no closed-form moments for {self.kind}")

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class Ball(StandardBody):
    kind = "ball"

    def __init__(self, dim: int, radius: float = 1.0, translation=None, ledger=None):
        super().__init__(dim, translation, ledger)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)

    def _base_contains(self, Z):
        return np.einsum("ij,ij->i", Z, Z) <= self.radius ** 2

    def distance_to_base(self, Z):
        return np.maximum(np.linalg.norm(Z, axis=1) - self.radius, 0.0)

    def _base_stats(self):
        d, r = self.dim, self.radius
        second_moment = d * r ** 2 / (d + 2)
        cov_norm = r ** 2 / (d + 2)
        log_vol = 0.5 * d * math.log(math.pi) + d * math.log(r) - gammaln(0.5 * d + 1)
        return second_moment, cov_norm, math.exp(log_vol)


class Box(StandardBody):
    """Axis-aligned box ``prod_i [-a_i, a_i]`` (plus translation)."""

    kind = "box"

    def __init__(self, half_widths, translation=None, ledger=None):
        a = np.atleast_1d(np.asarray(half_widths, dtype=float))
        if (a <= 0).any():
            raise ValueError("half-widths must be positive")
        super().__init__(a.size, translation, ledger)
        self.half_widths = a

    def _base_contains(self, Z):
        return np.all(np.abs(Z) <= self.half_widths, axis=1)

    def distance_to_base(self, Z):
        excess = np.maximum(np.abs(Z) - self.half_widths, 0.0)
        return np.linalg.norm(excess, axis=1)

    def _base_stats(self):
        var = self.half_widths ** 2 / 3.0
        return float(var.sum()), float(var.max()), float(np.prod(2 * self.half_widths))


class Interval(Box):
    """The interval ``[a, b]`` as a one-dimensional body."""

    kind = "interval"

    def __init__(self, a: float, b: float, ledger=None):
        if not b > a:
            raise ValueError("interval needs a < b")
        self.a, self.b = float(a), float(b)
        super().__init__([0.5 * (b - a)], translation=[0.5 * (a + b)], ledger=ledger)


class Polytope(StandardBody):
    """``{z : A z <= b}`` (plus translation)."""

    kind = "polytope"

    def __init__(self, A, b, translation=None, ledger=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError("A must have one row per entry of b")
        super().__init__(A.shape[1], translation, ledger)
        self.A, self.b = A, b

    def _base_contains(self, Z):
        return np.all(Z @ self.A.T <= self.b, axis=1)


class Ellipsoid(StandardBody):
    """``{z : z^T Q z <= r^2}`` for symmetric positive definite ``Q``."""

    kind = "ellipsoid"

    def __init__(self, Q, radius: float = 1.0, translation=None, ledger=None):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise ValueError("Q must be positive definite")
        super().__init__(Q.shape[0], translation, ledger)
        self.Q, self.radius = Q, float(radius)

    def _base_contains(self, Z):
        return np.einsum("ij,jk,ik->i", Z, self.Q, Z) <= self.radius ** 2


class FunctionBody(BodyOracle):
    """Wrap a user predicate.  ``vectorized=True`` means it accepts ``(n, d)``."""

    def __init__(self, dim: int, predicate, vectorized: bool = False, ledger=None):
        super().__init__(dim, ledger)
        self.predicate = predicate
        self.vectorized = vectorized

    def _contains(self, X, ledger):
        if self.vectorized:
            return np.asarray(self.predicate(X), dtype=bool)
        return np.fromiter((bool(self.predicate(x)) for x in X), dtype=bool, count=len(X))


class Intersection(BodyOracle):
    """Intersection of bodies; later members are only queried where earlier ones say yes."""

    def __init__(self, *bodies: BodyOracle, ledger=None):
        dims = {b.dim for b in bodies}
        if len(dims) != 1:
            raise DimensionError("all bodies in an intersection must share a dimension")
        super().__init__(dims.pop(), ledger)
        self.bodies = bodies

    def _contains(self, X, ledger):
        inside = np.ones(len(X), dtype=bool)
        for body in self.bodies:
            idx = np.flatnonzero(inside)
            if idx.size == 0:
                break
            inside[idx] = body._contains(X[idx], ledger)
        return inside


class CylinderWindow(BodyOracle):
    """``B_radius(0) x [t_lo, t_hi]`` in ``R^{d+1}``; a known set, not an oracle query."""

    def __init__(self, d: int, radius: float, t_lo: float, t_hi: float):
        super().__init__(d + 1)
        self.radius, self.t_lo, self.t_hi = float(radius), float(t_lo), float(t_hi)

    def _contains(self, X, ledger):
        x, t = X[:, :-1], X[:, -1]
        return (np.einsum("ij,ij->i", x, x) <= self.radius ** 2) & (t >= self.t_lo) & (t <= self.t_hi)


# ----------------------------------------------------------------------------
# concrete potentials


class FunctionPotential(PotentialOracle):
    def __init__(self, dim: int, fn, vectorized: bool = False, min_hint=None, ledger=None):
        super().__init__(dim, min_hint, ledger)
        self.fn = fn
        self.vectorized = vectorized

    def _eval(self, X):
        if self.vectorized:
            return np.asarray(self.fn(X), dtype=float)
        return np.fromiter((float(self.fn(x)) for x in X), dtype=float, count=len(X))


class QuadraticPotential(PotentialOracle):
    """``V(x) = |x - center|^2 / (2 * scale)``."""

    def __init__(self, dim: int, scale: float = 1.0, center=None, ledger=None):
        super().__init__(dim, 0.0, ledger)
        self.scale = float(scale)
        self.center = np.zeros(dim) if center is None else np.asarray(center, float).reshape(dim)

    def _eval(self, X):
        Z = X - self.center
        return np.einsum("ij,ij->i", Z, Z) / (2.0 * self.scale)


class NormPotential(PotentialOracle):
    """``V(x) = |x - center| / scale`` (a Laplace-type target)."""

    def __init__(self, dim: int, scale: float = 1.0, center=None, ledger=None):
        super().__init__(dim, 0.0, ledger)
        self.scale = float(scale)
        self.center = np.zeros(dim) if center is None else np.asarray(center, float).reshape(dim)

    def _eval(self, X):
        return np.linalg.norm(X - self.center, axis=1) / self.scale


class IndicatorPotential(PotentialOracle):
    """0 on a body, ``+inf`` outside; each evaluation is one membership test."""

    def __init__(self, body: BodyOracle, ledger=None):
        super().__init__(body.dim, 0.0, ledger)
        self.body = body

    def _eval(self, X):
        return np.where(self.body._contains(X, None), 0.0, OUTSIDE)


class LiftedBody(BodyOracle):
    """``{(x, t) : V(x) <= d t}`` for a potential ``V`` on ``R^d``.

    Each membership test costs exactly one evaluation of ``V``.  The lifted
    density ``exp(-d t)`` on this set has ``exp(-V)`` as its ``x``-marginal.
    """

    def __init__(self, potential: PotentialOracle, ledger=None):
        super().__init__(potential.dim + 1, ledger)
        self.potential = potential
        self.base_dim = potential.dim

    @property
    def alpha(self) -> np.ndarray:
        a = np.zeros(self.dim)
        a[-1] = self.base_dim
        return a

    def _contains(self, X, ledger):
        vals = self.potential.evaluate(X[:, :-1], ledger)
        return vals <= self.base_dim * X[:, -1]

    def log_density(self, z) -> np.ndarray:
        """Unnormalized lifted log-density ``-d t`` on the set, ``-inf`` off it (uncounted)."""
        Z, single = _as_batch(z, self.dim)
        vals = np.asarray(self.potential._eval(Z[:, :-1]), dtype=float)
        t = Z[:, -1]
        out = np.where(vals <= self.base_dim * t, -self.base_dim * t, -np.inf)
        return float(out[0]) if single else out


# ----------------------------------------------------------------------------
# operations


def membership(body: BodyOracle, x, ledger: QueryLedger | None = None):
    """Ask ``body`` whether ``x`` is inside; one call per point."""
    return body.contains(x, ledger)


def evaluate(potential: PotentialOracle, x, ledger: QueryLedger | None = None):
    """Return ``V(x)``; ``+inf`` encodes "outside the domain"."""
    return potential.evaluate(x, ledger)


def lift(potential: PotentialOracle) -> LiftedBody:
    return LiftedBody(potential)


@dataclass(frozen=True)
class BodyStats:
    second_moment: float  # E|X|^2 under the uniform law
    cov_norm: float       # operator norm of the covariance
    volume: float


def body_stats(body: StandardBody) -> BodyStats:
    """Closed-form ``R^2 = E|X|^2``, ``Lambda = ||cov||`` and volume of a library body."""
    if not isinstance(body, StandardBody):
        raise NoClosedFormError(f"no closed form for {type(body).__name__}")
    m2, lam, vol = body._base_stats()
    # translation shifts the mean only
    return BodyStats(m2 + float(body.translation @ body.translation), lam, vol)


def probe_unit_ball(body: BodyOracle, rng: np.random.Generator, n: int = 64) -> bool:
    """Check ``n`` random points of the unit ball for membership (uncounted).

    Warns with :class:`UnitBallWarning` and returns False on a violation.
    The target is never rescaled.
    """
    d = body.dim
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radii = rng.random(n) ** (1.0 / d)
    pts = g * radii[:, None]
    # include the sphere's axis points, where violations usually show up first
    axes = np.vstack([np.eye(d), -np.eye(d)])
    pts = np.vstack([pts, axes])
    ok = bool(np.all(body._contains(pts, None)))
    if not ok:
        warnings.warn("body does not contain the unit ball around the origin; "
                      "complexity guarantees do not apply", UnitBallWarning, stacklevel=2)
    return ok
