"""Forward noise schedules and their smoothing coefficients.

A schedule is the coefficient pair (f, g) of the forward SDE
``dX_s = -f(s) X_s ds + g(s) dB_s`` on [0, T].  Everything downstream
consumes two deterministic functions of it,

    a(s)      = exp(-int_0^s f(u) du),
    sigma2(s) = int_0^s (a(s)/a(u))^2 g(u)^2 du,

which are closed-form for the parametric kinds (variance preserving,
constant Ornstein-Uhlenbeck) and computed by adaptive Simpson quadrature
for tabulated ones.  Tabulated schedules interpolate f and g piecewise
linearly, so int f is exact per panel; merely-measurable coefficients are
out of scope and the package restricts itself to these piecewise-continuous
representations.

Window extrema (inf g, sup f, sup g^2 over [s0, T]) are computed by a
4096-point uniform scan followed by golden-section refinement around the
best sample.  That is exact for constant/monotone schedules and a
documented heuristic for oscillatory tabulated ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, QuadratureError

VP = "vp"
CONSTANT_OU = "constant_ou"
TABULATED = "tabulated"

_SCAN_POINTS = 4096


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 2 ** 20

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ConfigError("quadrature tolerances must be strictly positive")
        if self.max_subdivisions < 1:
            raise ConfigError("max_subdivisions must be at least 1")


DEFAULT_QUAD = QuadratureConfig()


@dataclass(frozen=True)
class ScheduleSpec:
    """Forward schedule (f, g) on [0, T].

    kind is one of "vp" (f = beta/2, g = sqrt(beta)), "constant_ou"
    (f = f0, g = g0) or "tabulated" (piecewise-linear f, g through
    ``samples`` = ((s, f, g), ...)).
    """

    kind: str
    T: float
    beta: float = 0.0
    f0: float = 0.0
    g0: float = 0.0
    samples: tuple = field(default=())

    def __post_init__(self):
        if self.T <= 0:
            raise ConfigError("horizon T must be positive")
        if self.kind == VP:
            if self.beta <= 0:
                raise ConfigError("VP schedule needs beta > 0")
        elif self.kind == CONSTANT_OU:
            if self.f0 < 0:
                raise ConfigError("constant OU needs f0 >= 0")
            if self.g0 <= 0:
                raise ConfigError("constant OU needs g0 > 0")
        elif self.kind == TABULATED:
            pts = tuple(tuple(float(v) for v in row) for row in self.samples)
            object.__setattr__(self, "samples", pts)
            if len(pts) < 2:
                raise ConfigError("tabulated schedule needs at least two samples")
            s_vals = [p[0] for p in pts]
            if any(b <= a for a, b in zip(s_vals, s_vals[1:])):
                raise ConfigError("tabulated sample times must be strictly increasing")
            if abs(s_vals[0]) > 1e-12 or abs(s_vals[-1] - self.T) > 1e-12 * max(1.0, self.T):
                raise ConfigError("tabulated samples must cover [0, T] exactly")
            if any(p[1] < 0 for p in pts):
                raise ConfigError("tabulated f must be nonnegative")
            if any(p[2] <= 0 for p in pts if p[0] > 0):
                raise ConfigError("tabulated g must be positive on (0, T]")
            if pts[0][2] < 0:
                raise ConfigError("tabulated g(0) must be nonnegative")
        else:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")

    # -- constructors ------------------------------------------------------
    @classmethod
    def vp(cls, beta: float, T: float) -> "ScheduleSpec":
        return cls(kind=VP, T=T, beta=beta)

    @classmethod
    def constant_ou(cls, f0: float, g0: float, T: float) -> "ScheduleSpec":
        return cls(kind=CONSTANT_OU, T=T, f0=f0, g0=g0)

    @classmethod
    def tabulated(cls, samples, T: float) -> "ScheduleSpec":
        return cls(kind=TABULATED, T=T, samples=tuple(samples))

    # -- pointwise coefficient evaluation (vectorized) ---------------------
    def f_at(self, s):
        if self.kind == VP:
            return np.full_like(np.asarray(s, dtype=float), 0.5 * self.beta) if np.ndim(s) else 0.5 * self.beta
        if self.kind == CONSTANT_OU:
            return np.full_like(np.asarray(s, dtype=float), self.f0) if np.ndim(s) else self.f0
        xs = np.array([p[0] for p in self.samples])
        fs = np.array([p[1] for p in self.samples])
        out = np.interp(s, xs, fs)
        return out if np.ndim(s) else float(out)

    def g_at(self, s):
        if self.kind == VP:
            val = math.sqrt(self.beta)
            return np.full_like(np.asarray(s, dtype=float), val) if np.ndim(s) else val
        if self.kind == CONSTANT_OU:
            return np.full_like(np.asarray(s, dtype=float), self.g0) if np.ndim(s) else self.g0
        xs = np.array([p[0] for p in self.samples])
        gs = np.array([p[2] for p in self.samples])
        out = np.interp(s, xs, gs)
        return out if np.ndim(s) else float(out)

    def interior_knots(self, a: float, b: float):
        """Tabulation knots strictly inside (a, b); integrands kink there."""
        if self.kind != TABULATED:
            return ()
        return tuple(p[0] for p in self.samples if a < p[0] < b)

    def f_primitive(self, s):
        """Exact int_0^s f for the piecewise-linear representation."""
        if self.kind == VP:
            return 0.5 * self.beta * s
        if self.kind == CONSTANT_OU:
            return self.f0 * s
        return _pw_linear_primitive(self.samples, 1, s)


def _pw_linear_primitive(samples, col, s):
    """Trapezoid-exact primitive of a piecewise-linear tabulated column."""
    total = 0.0
    for (s0, *v0), (s1, *v1) in zip(samples, samples[1:]):
        if s <= s0:
            break
        hi = min(s, s1)
        y0 = v0[col - 1]
        y1 = v1[col - 1]
        yh = y0 + (y1 - y0) * (hi - s0) / (s1 - s0)
        total += 0.5 * (y0 + yh) * (hi - s0)
        if s <= s1:
            break
    return total


# ---------------------------------------------------------------------------
# Adaptive Simpson quadrature
# ---------------------------------------------------------------------------

def _simpson(fa, fm, fb, width):
    return width * (fa + 4.0 * fm + fb) / 6.0


def _adapt(fn, a, b, fa, fm, fb, whole, tol, budget):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = fn(lm)
    frm = fn(rm)
    left = _simpson(fa, flm, fm, m - a)
    right = _simpson(fm, frm, fb, b - m)
    err = left + right - whole
    if abs(err) <= 15.0 * tol or (b - a) <= 1e-15 * max(1.0, abs(a) + abs(b)):
        return left + right + err / 15.0
    budget[0] -= 1
    if budget[0] <= 0:
        raise QuadratureError(
            "adaptive Simpson exceeded subdivision budget",
            partial=left + right, residual=abs(err) / 15.0,
        )
    return (_adapt(fn, a, m, fa, flm, fm, left, 0.5 * tol, budget)
            + _adapt(fn, m, b, fm, frm, fb, right, 0.5 * tol, budget))


def adaptive_simpson(fn, a: float, b: float, quad: QuadratureConfig = DEFAULT_QUAD,
                     knots=()) -> float:
    """Integrate a scalar function on [a, b], splitting panels at knots.

    Tolerance per panel is apportioned by width; raises QuadratureError with
    the partial value and residual estimate when the subdivision budget runs
    out.
    """
    if b < a:
        return -adaptive_simpson(fn, b, a, quad, knots)
    if b == a:
        return 0.0
    edges = [a] + sorted(k for k in set(knots) if a < k < b) + [b]
    budget = [quad.max_subdivisions]
    total = 0.0
    rough = 0.0
    for lo, hi in zip(edges, edges[1:]):
        flo = fn(lo)
        fhi = fn(hi)
        rough += 0.5 * (abs(flo) + abs(fhi)) * (hi - lo)
    scale = max(quad.abs_tol, quad.rel_tol * rough)
    for lo, hi in zip(edges, edges[1:]):
        tol = scale * (hi - lo) / (b - a)
        flo = fn(lo)
        fmi = fn(0.5 * (lo + hi))
        fhi = fn(hi)
        whole = _simpson(flo, fmi, fhi, hi - lo)
        total += _adapt(fn, lo, hi, flo, fmi, fhi, whole, tol, budget)
    return total


# ---------------------------------------------------------------------------
# Smoothing coefficients
# ---------------------------------------------------------------------------

def coeff_a(spec: ScheduleSpec, s: float, quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Deterministic shrink factor a(s) = exp(-int_0^s f)."""
    _check_time(spec, s)
    if spec.kind == VP:
        return math.exp(-0.5 * spec.beta * s)
    if spec.kind == CONSTANT_OU:
        return math.exp(-spec.f0 * s)
    return math.exp(-spec.f_primitive(s))


def coeff_sigma2(spec: ScheduleSpec, s: float, quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Accumulated noise variance sigma^2(s); 0 at s = 0, VP gives 1 - e^{-beta s}."""
    _check_time(spec, s)
    if s == 0.0:
        return 0.0
    if spec.kind == VP:
        return -math.expm1(-spec.beta * s)
    if spec.kind == CONSTANT_OU:
        if spec.f0 == 0.0:
            return spec.g0 ** 2 * s
        return spec.g0 ** 2 * (-math.expm1(-2.0 * spec.f0 * s)) / (2.0 * spec.f0)
    Fs = spec.f_primitive(s)

    def integrand(u):
        return math.exp(-2.0 * (Fs - spec.f_primitive(u))) * spec.g_at(u) ** 2

    return adaptive_simpson(integrand, 0.0, s, quad, knots=spec.interior_knots(0.0, s))


def coeff_a_quad(spec: ScheduleSpec, s: float, quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """a(s) via generic quadrature of f; cross-check path for closed forms."""
    _check_time(spec, s)
    return math.exp(-adaptive_simpson(spec.f_at, 0.0, s, quad,
                                      knots=spec.interior_knots(0.0, s)))


def coeff_sigma2_quad(spec: ScheduleSpec, s: float, quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """sigma^2(s) via nested generic quadrature; cross-check path only."""
    _check_time(spec, s)
    if s == 0.0:
        return 0.0
    knots = spec.interior_knots(0.0, s)

    def exponent(u):
        return adaptive_simpson(spec.f_at, u, s, quad, knots=spec.interior_knots(u, s))

    def integrand(u):
        return math.exp(-2.0 * exponent(u)) * spec.g_at(u) ** 2

    return adaptive_simpson(integrand, 0.0, s, quad, knots=knots)


def _check_time(spec, s):
    if not 0.0 <= s <= spec.T * (1.0 + 1e-12):
        raise ValueError(f"time {s} outside [0, {spec.T}]")


# ---------------------------------------------------------------------------
# Window extrema
# ---------------------------------------------------------------------------

def golden_section(fn, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Location of the minimum of a unimodal scalar function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if (b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def window_extremum(fn_vec, lo: float, hi: float, mode: str = "min",
                    knots=(), n_scan: int = _SCAN_POINTS):
    """Extremum of fn over [lo, hi]: uniform scan + golden-section refinement.

    fn_vec must accept a numpy array.  Returns (argmin-or-argmax, value).
    """
    if hi < lo:
        raise ValueError("empty window")
    if hi == lo:
        v = float(fn_vec(np.array([lo]))[0])
        return lo, v
    xs = np.linspace(lo, hi, n_scan)
    extra = [k for k in knots if lo < k < hi]
    if extra:
        xs = np.sort(np.concatenate([xs, np.asarray(extra, dtype=float)]))
    ys = np.asarray(fn_vec(xs), dtype=float)
    idx = int(np.argmin(ys) if mode == "min" else np.argmax(ys))
    a = xs[max(idx - 1, 0)]
    b = xs[min(idx + 1, len(xs) - 1)]
    sign = 1.0 if mode == "min" else -1.0

    def scalar(x):
        return sign * float(fn_vec(np.array([x]))[0])

    x_star = golden_section(scalar, a, b)
    candidates = [(xs[idx], ys[idx]), (x_star, float(fn_vec(np.array([x_star]))[0]))]
    if mode == "min":
        best = min(candidates, key=lambda t: t[1])
    else:
        best = max(candidates, key=lambda t: t[1])
    return best


def _window_check(spec, s0):
    if s0 > spec.T:
        raise ValueError(f"empty window: s0={s0} exceeds horizon T={spec.T}")
    if s0 <= 0:
        raise ValueError("window start s0 must be positive")


def g_window_inf(spec: ScheduleSpec, s0: float) -> float:
    """inf of g over [s0, T]."""
    _window_check(spec, s0)
    _, v = window_extremum(lambda xs: spec.g_at(xs), s0, spec.T, "min",
                           knots=spec.interior_knots(s0, spec.T))
    return v


def f_window_sup(spec: ScheduleSpec, s0: float) -> float:
    """sup of f over [s0, T]."""
    _window_check(spec, s0)
    _, v = window_extremum(lambda xs: spec.f_at(xs), s0, spec.T, "max",
                           knots=spec.interior_knots(s0, spec.T))
    return v


def g2_window_sup(spec: ScheduleSpec, s0: float) -> float:
    """sup of g^2 over [s0, T]."""
    _window_check(spec, s0)
    _, v = window_extremum(lambda xs: np.asarray(spec.g_at(xs)) ** 2, s0, spec.T, "max",
                           knots=spec.interior_knots(s0, spec.T))
    return v
