"""Exact transport costs on small discrete measures and the p-moment switch.

The brute-force oracle enumerates permutations for equal-weight supports of
size at most 7, which is exact for any ground cost, and falls back to the
1-D quantile coupling for arbitrary weights under convex ground costs
(squared or plain Euclidean).  The quantile coupling is *not* optimal for
concave radial costs, so the switch-metric cost is deliberately confined to
the permutation regime; asking for it with unequal 1-D weights is an error
rather than a silently loose answer.

The one-time return from the switch metric to W2 costs the exponent
theta_p = (p - 2) / (2 (p - 1)): from the interpolation

    W2^2 <= (rho / a_slope) W_phi + 2^{p-1} M_bar rho^{-(p-2)},

optimizing rho gives W2 <= C * W_phi^theta_p with

    C = sqrt(2 (p - 1)) (p - 2)^{-theta_p} a_slope^{-theta_p} M_bar^{1/(2(p-1))}.

The two-point family mu_R = (1 - R^{-p}) delta_0 + R^{-p} delta_{R e1}
against delta_0 keeps its p-th moments bounded while W2 = R^{1-p/2} and
W_phi = R^{-p} phi(R), showing the exponent cannot be improved within
affine-tail concave costs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .switchgeom import SwitchGeometry, phi_many

SQUARED_EUCLIDEAN = "squared_euclidean"
EUCLIDEAN = "euclidean"

_MAX_BRUTE_FORCE = 7


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure in dimension <= 3."""
    points: tuple      # ((x1, ..., xd), ...)
    weights: tuple

    def __post_init__(self):
        pts = tuple(tuple(float(v) for v in np.atleast_1d(p)) for p in self.points)
        wts = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        if len(pts) != len(wts) or not pts:
            raise ConfigError("points and weights must be nonempty and equal length")
        if any(len(p) != len(pts[0]) for p in pts):
            raise ConfigError("all points must share one dimension")
        if len(pts[0]) > 3:
            raise ConfigError("dimension must be at most 3")
        if any(w <= 0 for w in wts):
            raise ConfigError("weights must be positive")
        if abs(sum(wts) - 1.0) > 1e-12:
            raise ConfigError("weights must sum to 1 within 1e-12")
        if not np.all(np.isfinite(np.asarray(pts))):
            raise ConfigError("points must be finite")

    @property
    def n(self):
        return len(self.points)

    @property
    def dim(self):
        return len(self.points[0])

    def point_array(self):
        return np.asarray(self.points, dtype=float)

    def weight_array(self):
        return np.asarray(self.weights, dtype=float)

    def abs_moment(self, p: float) -> float:
        """E |X|^p under the measure."""
        norms = np.linalg.norm(self.point_array(), axis=1)
        return float(np.dot(self.weight_array(), norms ** p))


def _cost_of_distance(dist: np.ndarray, cost):
    if cost == SQUARED_EUCLIDEAN:
        return dist ** 2
    if cost == EUCLIDEAN:
        return dist
    if isinstance(cost, SwitchGeometry):
        return phi_many(cost, dist)
    raise ConfigError(f"unknown cost {cost!r}")


def _is_equal_weight(mu: DiscreteMeasure) -> bool:
    return bool(np.max(np.abs(mu.weight_array() - 1.0 / mu.n)) <= 1e-12)


def w_cost_discrete(mu: DiscreteMeasure, nu: DiscreteMeasure, cost) -> float:
    """Exact optimal transport cost between two small discrete measures.

    Supported regimes: equal-cardinality equal-weight supports with n <= 7
    (permutation enumeration, exact for any cost), or dimension 1 with
    arbitrary weights under a convex ground cost (quantile coupling).  For
    the squared Euclidean cost the value is W2^2; the caller takes the root.
    """
    if mu.dim != nu.dim:
        raise ConfigError("measures must share one dimension")
    if (mu.n == nu.n and mu.n <= _MAX_BRUTE_FORCE
            and _is_equal_weight(mu) and _is_equal_weight(nu)):
        return _perm_cost(mu, nu, cost)
    if mu.dim == 1 and cost in (SQUARED_EUCLIDEAN, EUCLIDEAN):
        return _quantile_cost_1d(mu, nu, cost)
    raise ConfigError(
        "unsupported regime: need equal-weight supports with n <= 7 (any cost) "
        "or dimension 1 with a convex cost (squared_euclidean / euclidean); "
        "the concave switch-metric cost requires the permutation regime")


def _perm_cost(mu, nu, cost):
    x = mu.point_array()
    y = nu.point_array()
    n = mu.n
    dist = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
    c = _cost_of_distance(dist, cost)
    best = math.inf
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        total = c[rows, perm].sum()
        if total < best:
            best = total
    return best / n


def _quantile_cost_1d(mu, nu, cost):
    """Exact 1-D transport for convex costs via the monotone coupling."""
    xi = np.argsort(mu.point_array()[:, 0], kind="stable")
    yi = np.argsort(nu.point_array()[:, 0], kind="stable")
    xs = mu.point_array()[xi, 0]
    ws = mu.weight_array()[xi]
    ys = nu.point_array()[yi, 0]
    vs = nu.weight_array()[yi]
    total = 0.0
    i = j = 0
    wi, vj = ws[0], vs[0]
    while i < len(xs) and j < len(ys):
        m = min(wi, vj)
        d = abs(xs[i] - ys[j])
        total += m * float(_cost_of_distance(np.array(d), cost))
        wi -= m
        vj -= m
        if wi <= 1e-18:
            i += 1
            wi = ws[i] if i < len(xs) else 0.0
        if vj <= 1e-18:
            j += 1
            vj = vs[j] if j < len(ys) else 0.0
    return total


# ---------------------------------------------------------------------------
# p-moment conversion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentBudget:
    """Order p > 2 and an upper bound M_bar on the switch-time p-moments."""
    p: float
    M_bar: float

    def __post_init__(self):
        if self.p <= 2:
            raise ConfigError("moment order p must exceed 2")
        if self.M_bar <= 0:
            raise ConfigError("M_bar must be positive")


def theta_p(p: float) -> float:
    """Conversion exponent (p - 2) / (2 (p - 1)), in (0, 1/2) for p > 2."""
    if p <= 2:
        raise ValueError("theta_p requires p > 2")
    return (p - 2.0) / (2.0 * (p - 1.0))


def conversion_constant(sw: SwitchGeometry, budget: MomentBudget) -> float:
    """Prefactor of the one-time return W2 <= C * W_phi^theta_p.

    +inf when the tail slope has underflowed to 0 (no linear lower bound
    left to convert through).
    """
    th = theta_p(budget.p)
    if sw.a_slope == 0.0:
        return math.inf
    return (math.sqrt(2.0 * (budget.p - 1.0))
            * (budget.p - 2.0) ** (-th)
            * sw.a_slope ** (-th)
            * budget.M_bar ** (1.0 / (2.0 * (budget.p - 1.0))))


def convert_to_w2(sw: SwitchGeometry, budget: MomentBudget, delta_phi: float) -> float:
    """W2 bound from a damped switch-metric discrepancy; 0 maps to 0."""
    if delta_phi < 0:
        raise ValueError("delta_phi must be nonnegative")
    if delta_phi == 0.0:
        return 0.0
    return conversion_constant(sw, budget) * delta_phi ** theta_p(budget.p)


def moment_recursion(m0: float, steps) -> float:
    """Iterate m_{k+1} = (1 + A_k) m_k + B_k; one generator of M_bar bounds.

    Equals prod(1 + A_j) m0 + sum_i B_i prod_{j > i} (1 + A_j).
    """
    if m0 < 0:
        raise ValueError("m0 must be nonnegative")
    m = float(m0)
    for a, b in steps:
        if a < 0 or b < 0:
            raise ValueError("per-step constants must be nonnegative")
        m = (1.0 + a) * m + b
    return m


def sharpness_pair(R: float, p: float, sw: SwitchGeometry):
    """Exact costs of the affine-tail ceiling family at scale R.

    mu_R puts mass R^{-p} at R e1 and the rest at 0; nu is a Dirac at 0, so
    the coupling is unique and both costs are closed-form:
    W2 = R^{1 - p/2}, W_phi = R^{-p} phi(R).  The p-th moment of the pair is
    R^{-p} R^p + 0 = 1 for every R, so the family is uniformly inside one
    moment budget.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    if p <= 2:
        raise ValueError("p must exceed 2")
    w2 = R ** (1.0 - 0.5 * p)
    wphi = R ** (-p) * float(phi_many(sw, np.array([R]))[0])
    return w2, wphi, 1.0


def onesided_slope_check(field, samples) -> float:
    """Largest pairwise one-sided slope <e(x)-e(y), x-y> / |x-y|^2 over samples.

    ``field`` is any callable mapping a point (1-D array) to a vector;
    coincident pairs are skipped.  For a linear field this returns its slope
    on every pair; for a skew-symmetric rotation it is 0 regardless of the
    rotation magnitude.
    """
    worst = -math.inf
    for x, y in samples:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        d = x - y
        nd2 = float(np.dot(d, d))
        if nd2 == 0.0:
            continue
        q = float(np.dot(np.asarray(field(x)) - np.asarray(field(y)), d)) / nd2
        if q > worst:
            worst = q
    if worst == -math.inf:
        raise ValueError("no non-coincident sample pairs")
    return worst
