"""Radial geometry of the smoothed target and the learned reverse drift.

Weak log-concavity of the data potential is the profile condition

    kappa_V0(r) >= alpha - f_M(r)/r,      f_M(r) = 2 sqrt(M) tanh(sqrt(M) r / 2),

a global convexity floor alpha with a bounded short-scale defect M.  Gaussian
smoothing at noise level s transfers (alpha, M) into

    alpha_s = alpha / (a^2 + alpha sigma^2),
    M_s     = M a^2 / (a^2 + alpha sigma^2)^2,

and, together with a one-sided score-error slope ell(s), the learned reverse
drift inherits the radial lower envelope

    kappa_lower(s, r) = g^2(s) (alpha_s - f_{M_s}(r)/r - ell(s)) - f(s).

The envelope is nondecreasing in r and runs from -load(s) at r -> 0 (the
Euclidean obstruction seen by synchronous coupling) to margin(s) at r -> inf
(the far-field contraction reserve exploited by reflection coupling).  The
two endpoints satisfy margin + load = g^2 M_s exactly.

kappa_lower is defined for r > 0 only; the r -> 0 endpoint is exposed
separately as -load(s) via margin_load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .schedule import (DEFAULT_QUAD, QuadratureConfig, ScheduleSpec,
                       adaptive_simpson, window_extremum)

CONSTANT = "constant"
TABULATED = "tabulated"


@dataclass(frozen=True)
class WeakLogParams:
    """Large-scale convexity alpha > 0 and short-scale defect M >= 0."""
    alpha: float
    M: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.M < 0:
            raise ConfigError("M must be nonnegative")


@dataclass(frozen=True)
class Envelope:
    """Scalar function of noise level: constant or piecewise linear."""
    kind: str
    value: float = 0.0
    samples: tuple = field(default=())

    def __post_init__(self):
        if self.kind == TABULATED:
            pts = tuple((float(a), float(b)) for a, b in self.samples)
            object.__setattr__(self, "samples", pts)
            if len(pts) < 2:
                raise ConfigError("tabulated envelope needs at least two samples")
            ss = [p[0] for p in pts]
            if any(b <= a for a, b in zip(ss, ss[1:])):
                raise ConfigError("envelope sample times must be strictly increasing")
        elif self.kind != CONSTANT:
            raise ConfigError(f"unknown envelope kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float) -> "Envelope":
        return cls(kind=CONSTANT, value=float(value))

    @classmethod
    def tabulated(cls, samples) -> "Envelope":
        return cls(kind=TABULATED, samples=tuple(samples))

    def __call__(self, s):
        if self.kind == CONSTANT:
            if np.ndim(s):
                return np.full(np.shape(s), self.value)
            return self.value
        xs = np.array([p[0] for p in self.samples])
        vs = np.array([p[1] for p in self.samples])
        out = np.interp(s, xs, vs)
        return out if np.ndim(s) else float(out)

    def interior_knots(self, a, b):
        if self.kind == CONSTANT:
            return ()
        return tuple(p[0] for p in self.samples if a < p[0] < b)


@dataclass(frozen=True)
class ScoreErrorEnvelope:
    """One-sided slope ell(s) and L2 forcing size eps(s) of the score error."""
    ell: Envelope
    eps: Envelope

    def __post_init__(self):
        if self.eps.kind == CONSTANT and self.eps.value < 0:
            raise ConfigError("eps must be nonnegative")
        if self.eps.kind == TABULATED and any(v < 0 for _, v in self.eps.samples):
            raise ConfigError("eps must be nonnegative")

    @classmethod
    def constants(cls, ell_bar: float, eps_bar: float) -> "ScoreErrorEnvelope":
        return cls(ell=Envelope.constant(ell_bar), eps=Envelope.constant(eps_bar))


@dataclass(frozen=True)
class SmoothedParams:
    alpha_s: float
    M_s: float


@dataclass(frozen=True)
class RadialGeometry:
    """Bundle of schedule, weak-log-concavity parameters and error envelopes."""
    schedule: ScheduleSpec
    weak: WeakLogParams
    score: ScoreErrorEnvelope
    quad: QuadratureConfig = DEFAULT_QUAD


# ---------------------------------------------------------------------------
# The defect shape f_M and its stable r -> 0 evaluation
# ---------------------------------------------------------------------------

def f_M(M: float, r):
    """Defect cap 2 sqrt(M) tanh(sqrt(M) r / 2); bounded by min(M r, 2 sqrt(M))."""
    if M < 0:
        raise ValueError("M must be nonnegative")
    if M == 0.0:
        return np.zeros_like(r, dtype=float) if np.ndim(r) else 0.0
    rt = math.sqrt(M)
    return 2.0 * rt * np.tanh(0.5 * rt * np.asarray(r)) if np.ndim(r) \
        else 2.0 * rt * math.tanh(0.5 * rt * r)


def f_M_over_r(M: float, r):
    """f_M(r)/r = M tanh(y)/y with y = sqrt(M) r / 2, series-guarded near 0.

    For y < 1e-4 the 3-term series M (1 - y^2/3 + 2 y^4/15) avoids the 0/0
    cancellation.
    """
    if M == 0.0:
        return np.zeros_like(r, dtype=float) if np.ndim(r) else 0.0
    y = 0.5 * math.sqrt(M) * np.asarray(r, dtype=float)
    if np.ndim(r):
        small = y < 1e-4
        out = np.empty_like(y)
        ys = y[small]
        out[small] = M * (1.0 - ys ** 2 / 3.0 + 2.0 * ys ** 4 / 15.0)
        yl = y[~small]
        out[~small] = M * np.tanh(yl) / yl
        return out
    y = float(y)
    if y < 1e-4:
        return M * (1.0 - y * y / 3.0 + 2.0 * y ** 4 / 15.0)
    return M * math.tanh(y) / y


# ---------------------------------------------------------------------------
# Smoothed parameters, margin/load, lower envelope
# ---------------------------------------------------------------------------

def smoothed_params(geom: RadialGeometry, s: float) -> SmoothedParams:
    """(alpha_s, M_s) from one common denominator a^2 + alpha sigma^2."""
    from .schedule import coeff_a, coeff_sigma2
    a = coeff_a(geom.schedule, s, geom.quad)
    sig2 = coeff_sigma2(geom.schedule, s, geom.quad)
    den = a * a + geom.weak.alpha * sig2
    return SmoothedParams(alpha_s=geom.weak.alpha / den,
                          M_s=geom.weak.M * a * a / (den * den))


def _coeff_arrays(geom: RadialGeometry, s_arr: np.ndarray):
    """(f, g, a, sigma2) evaluated on an array of noise levels."""
    spec = geom.schedule
    s_arr = np.asarray(s_arr, dtype=float)
    f = np.asarray(spec.f_at(s_arr), dtype=float)
    g = np.asarray(spec.g_at(s_arr), dtype=float)
    if spec.kind == "vp":
        a = np.exp(-0.5 * spec.beta * s_arr)
        sig2 = -np.expm1(-spec.beta * s_arr)
    elif spec.kind == "constant_ou":
        a = np.exp(-spec.f0 * s_arr)
        if spec.f0 == 0.0:
            sig2 = spec.g0 ** 2 * s_arr
        else:
            sig2 = spec.g0 ** 2 * (-np.expm1(-2.0 * spec.f0 * s_arr)) / (2.0 * spec.f0)
    else:
        from .schedule import coeff_sigma2
        a = np.exp(-np.array([spec.f_primitive(s) for s in s_arr]))
        sig2 = np.array([coeff_sigma2(spec, s, geom.quad) for s in s_arr])
    return f, g, a, sig2


def _smoothed_arrays(geom: RadialGeometry, s_arr: np.ndarray):
    f, g, a, sig2 = _coeff_arrays(geom, s_arr)
    den = a * a + geom.weak.alpha * sig2
    alpha_s = geom.weak.alpha / den
    M_s = geom.weak.M * a * a / (den * den)
    return f, g, alpha_s, M_s


def margin_load_arrays(geom: RadialGeometry, s_arr: np.ndarray):
    """(margin, load) on an array of noise levels; used by window scans."""
    f, g, alpha_s, M_s = _smoothed_arrays(geom, s_arr)
    ell = np.asarray(geom.score.ell(s_arr), dtype=float)
    g2 = g * g
    m = g2 * (alpha_s - ell) - f
    b = f + g2 * (M_s + ell - alpha_s)
    return m, b


def margin_load(geom: RadialGeometry, s: float):
    """Far-field reserve margin(s) and near-field Euclidean load(s).

    margin + load = g^2(s) M_s exactly (up to rounding): the reserve that the
    short-scale defect converts into load near the origin reappears in full
    at large scales.
    """
    m, b = margin_load_arrays(geom, np.array([s]))
    return float(m[0]), float(b[0])


def load_scalar(geom: RadialGeometry, s: float) -> float:
    """Fast scalar load(s) for quadrature inner loops (closed-form schedules)."""
    spec = geom.schedule
    if spec.kind == "vp":
        f = 0.5 * spec.beta
        g2 = spec.beta
        a2 = math.exp(-spec.beta * s)
        sig2 = -math.expm1(-spec.beta * s)
    elif spec.kind == "constant_ou":
        f = spec.f0
        g2 = spec.g0 ** 2
        a2 = math.exp(-2.0 * spec.f0 * s)
        if spec.f0 == 0.0:
            sig2 = g2 * s
        else:
            sig2 = g2 * (-math.expm1(-2.0 * spec.f0 * s)) / (2.0 * spec.f0)
    else:
        return margin_load(geom, s)[1]
    den = a2 + geom.weak.alpha * sig2
    alpha_s = geom.weak.alpha / den
    M_s = geom.weak.M * a2 / (den * den)
    ell = geom.score.ell(s)
    return f + g2 * (M_s + ell - alpha_s)


def kappa_lower(geom: RadialGeometry, s: float, r):
    """Radial lower envelope of the learned reverse drift at noise level s.

    Defined for r > 0; nondecreasing in r, with limits -load(s) as r -> 0
    and margin(s) as r -> inf.
    """
    if np.ndim(r) == 0 and r <= 0:
        raise ValueError("kappa_lower is defined for r > 0 only")
    m, b = margin_load(geom, s)
    f, g, alpha_s, M_s = _smoothed_arrays(geom, np.array([s]))
    g2 = float(g[0]) ** 2
    return m - g2 * f_M_over_r(float(M_s[0]), r)


def gamma(geom: RadialGeometry, s: float) -> float:
    """Primitive of the load: Gamma(s) = int_0^s load(u) du; Gamma(0) = 0."""
    if s == 0.0:
        return 0.0
    knots = geom.schedule.interior_knots(0.0, s) + geom.score.ell.interior_knots(0.0, s)
    return adaptive_simpson(lambda u: load_scalar(geom, u), 0.0, s, geom.quad,
                            knots=knots)


_NEAR_ZERO_R = 1e-12


def zero_cross_radius(geom: RadialGeometry, s: float) -> float:
    """Smallest radius where the lower envelope turns nonnegative.

    Returns +inf when margin(s) <= 0 (the envelope never reaches 0) and 0
    when the envelope is already nonnegative at the near-field end.  The
    bisection bracket starts at [1e-12, 1] and doubles its upper end until a
    sign change, with an overflow guard returning the +inf sentinel.
    """
    m, _ = margin_load(geom, s)
    if m <= 0.0:
        return math.inf

    def k(r):
        return kappa_lower(geom, s, r)

    if k(_NEAR_ZERO_R) >= 0.0:
        return 0.0
    lo, hi = _NEAR_ZERO_R, 1.0
    while k(hi) < 0.0:
        hi *= 2.0
        if hi > 2.0 ** 64:
            return math.inf
        lo = hi / 2.0
    # monotone envelope: plain bisection to radius tolerance 1e-10
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if k(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def window_margin(geom: RadialGeometry, s0: float) -> float:
    """inf of margin over [s0, T] (scan + golden-section refinement)."""
    T = geom.schedule.T
    if s0 > T:
        raise ValueError(f"empty window: s0={s0} exceeds horizon T={T}")
    if s0 <= 0:
        raise ValueError("s0 must be positive")
    knots = geom.schedule.interior_knots(s0, T) + geom.score.ell.interior_knots(s0, T)
    _, v = window_extremum(lambda xs: margin_load_arrays(geom, xs)[0], s0, T,
                           "min", knots=knots)
    return v


def with_proxy_envelopes(geom: RadialGeometry, ell_upper, eps_upper) -> RadialGeometry:
    """Geometry with the error envelopes replaced by conservative upper ones."""
    ell = ell_upper if isinstance(ell_upper, Envelope) else Envelope.constant(ell_upper)
    eps = eps_upper if isinstance(eps_upper, Envelope) else Envelope.constant(eps_upper)
    return replace(geom, score=ScoreErrorEnvelope(ell=ell, eps=eps))
