"""Switch-level constants, the concave switch metric, and admissible switches.

For an admissible switch s0 (positive margin throughout [s0, T]) the whole
early window is compressed into a two-zone radial envelope: a near-field
band of half-width R_sw where the drift may expand at rate at most b_hi,
and a far field beyond R_sw with guaranteed contraction m_sw = m_lo / 2.
The associated concave cost

    phi(r) = int_0^r exp(-lam u^2) du            on [0, R_sw],
    phi(r) = phi(R_sw) + a_slope (r - R_sw)      beyond,

with lam = (max(b_hi, 0) + m_sw) / (4 g_lo^2) and a_slope = exp(-lam R_sw^2)
is a subsolution of the reflected radial generator:

    2 g_lo^2 phi''(r) - profile(r) r phi'(r) <= -c_rate phi(r),

at rate c_rate = m_sw * a_slope.  The Gaussian core pays for the near-field
load out of the reflected noise; the affine tail keeps sensitivity to large
separations.  When the defect vanishes on the window (G_hi = 0) the core is
empty and phi degenerates to the identity.

a_slope = exp(-lam R_sw^2) is mathematically positive but may underflow to
0.0 for violently nonconvex windows; downstream conversion constants then
become +inf, which is the honest value of the certificate there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf as _erf

from .errors import InfeasibleError
from .profile import RadialGeometry, _smoothed_arrays, margin_load_arrays, window_margin
from .schedule import g_window_inf, window_extremum

_SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True)
class SwitchGeometry:
    """All window-level constants attached to one admissible switch."""
    s0: float
    t_s: float          # early-window length T - s0
    g_lo: float         # inf of g on [s0, T]
    b_hi: float         # sup of the Euclidean load (stored signed)
    G_hi: float         # sup of g^2 sqrt(M_s)
    m_lo: float         # inf of the far-field margin
    R_sw: float         # uniform envelope radius 4 G_hi / m_lo
    m_sw: float         # far-field reserve m_lo / 2
    lam: float          # core curvature (b_hi^+ + m_sw) / (4 g_lo^2)
    a_slope: float      # affine tail slope exp(-lam R_sw^2)
    c_rate: float       # early contraction rate m_sw * a_slope


def build_switch(geom: RadialGeometry, s0: float) -> SwitchGeometry:
    """Assemble the switch constants for s0; fails if s0 is inadmissible."""
    T = geom.schedule.T
    m_lo = window_margin(geom, s0)
    if m_lo <= 0.0:
        raise InfeasibleError(
            f"switch s0={s0} inadmissible: window margin {m_lo:.6g} <= 0")
    g_lo = g_window_inf(geom.schedule, s0)
    if g_lo <= 0.0:
        raise InfeasibleError(f"switch s0={s0}: inf g over the window is 0")
    knots = geom.schedule.interior_knots(s0, T) + geom.score.ell.interior_knots(s0, T)
    _, b_hi = window_extremum(lambda xs: margin_load_arrays(geom, xs)[1],
                              s0, T, "max", knots=knots)

    def g2_sqrt_M(xs):
        _, g, _, M_s = _smoothed_arrays(geom, xs)
        return g * g * np.sqrt(M_s)

    _, G_hi = window_extremum(g2_sqrt_M, s0, T, "max", knots=knots)
    g_lo, b_hi, G_hi, m_lo = (float(g_lo), float(b_hi),
                              max(float(G_hi), 0.0), float(m_lo))
    m_sw = 0.5 * m_lo
    R_sw = 0.0 if G_hi == 0.0 else 4.0 * G_hi / m_lo
    lam = (max(b_hi, 0.0) + m_sw) / (4.0 * g_lo * g_lo)
    a_slope = math.exp(-lam * R_sw * R_sw)
    return SwitchGeometry(s0=float(s0), t_s=float(T - s0), g_lo=g_lo, b_hi=b_hi,
                          G_hi=G_hi, m_lo=m_lo, R_sw=R_sw, m_sw=m_sw, lam=lam,
                          a_slope=a_slope, c_rate=m_sw * a_slope)


def switch_profile(sw: SwitchGeometry, r):
    """Two-zone lower envelope: -b_hi on (0, R_sw], m_sw beyond."""
    if np.ndim(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= sw.R_sw, -sw.b_hi, sw.m_sw)
    if r <= 0:
        raise ValueError("switch_profile is defined for r > 0")
    return -sw.b_hi if r <= sw.R_sw else sw.m_sw


def _phi_core(lam: float, r):
    """int_0^r exp(-lam u^2) du via erf, with a 3-term series for lam r^2 < 1e-8."""
    if lam == 0.0:
        return np.asarray(r, dtype=float) if np.ndim(r) else float(r)
    if np.ndim(r):
        r = np.asarray(r, dtype=float)
        z = lam * r * r
        small = z < 1e-8
        out = np.empty_like(r)
        zs = z[small]
        out[small] = r[small] * (1.0 - zs / 3.0 + zs * zs / 10.0)
        out[~small] = 0.5 * _SQRT_PI / math.sqrt(lam) * _erf(math.sqrt(lam) * r[~small])
        return out
    z = lam * r * r
    if z < 1e-8:
        return r * (1.0 - z / 3.0 + z * z / 10.0)
    return 0.5 * _SQRT_PI / math.sqrt(lam) * math.erf(math.sqrt(lam) * r)


def phi_eval(sw: SwitchGeometry, r: float):
    """Metric value and derivatives at one radius.

    Returns (phi, dphi, d2phi_left, d2phi_right).  dphi is continuous at the
    core/tail kink R_sw; the second derivative is reported one-sided there
    (left = -2 lam R_sw a_slope, right = 0).
    """
    if r < 0:
        raise ValueError("phi is defined for r >= 0")
    lam, R = sw.lam, sw.R_sw
    if r < R:
        phi = _phi_core(lam, r)
        dphi = math.exp(-lam * r * r)
        d2 = -2.0 * lam * r * dphi
        return phi, dphi, d2, d2
    phi_R = _phi_core(lam, R)
    if r == R:
        return phi_R, sw.a_slope, -2.0 * lam * R * sw.a_slope, 0.0
    return phi_R + sw.a_slope * (r - R), sw.a_slope, 0.0, 0.0


def phi_many(sw: SwitchGeometry, r):
    """Vectorized phi; used by the couplers and the transport oracle."""
    r = np.asarray(r, dtype=float)
    core = r <= sw.R_sw
    out = np.empty_like(r)
    out[core] = _phi_core(sw.lam, r[core])
    phi_R = _phi_core(sw.lam, sw.R_sw)
    out[~core] = phi_R + sw.a_slope * (r[~core] - sw.R_sw)
    return out


def generator_residual(sw: SwitchGeometry, r: float) -> float:
    """Slack of the generator inequality at radius r; the contract is <= 0.

    Evaluates 2 g_lo^2 phi'' - profile(r) r phi' + c_rate phi.  The kink is
    excluded: call at R_sw * (1 +/- 1e-12) to check both one-sided second
    derivatives.
    """
    if r <= 0:
        raise ValueError("generator_residual is defined for r > 0")
    if r == sw.R_sw and sw.R_sw > 0:
        raise ValueError(
            "r equals the kink radius R_sw; evaluate one-sided at "
            "R_sw * (1 - 1e-12) and R_sw * (1 + 1e-12) instead")
    phi, dphi, d2l, d2r = phi_eval(sw, r)
    d2 = d2l if r < sw.R_sw else d2r
    kap = switch_profile(sw, r)
    return 2.0 * sw.g_lo ** 2 * d2 - kap * r * dphi + sw.c_rate * phi


@dataclass(frozen=True)
class AdmissibleSwitches:
    """Grid switches with positive window margin, plus a threshold bracket.

    entries: (s0, window_margin) for the admissible grid points, in grid
    order.  s_min_bracket brackets the admissibility threshold (where the
    margin crosses 0) whenever the admissible set is a proper nonempty
    suffix of the grid; the margin at the bracket midpoint is within ~1e-6
    of 0 for continuous-margin schedules.
    """
    entries: tuple
    s_min_bracket: tuple | None


def admissible_set(geom: RadialGeometry, switch_grid) -> AdmissibleSwitches:
    """Filter a switch grid by window margin; bracket the threshold if proper."""
    grid = sorted(float(s) for s in switch_grid)
    T = geom.schedule.T
    margins = []
    for s0 in grid:
        if not 0.0 < s0 <= T:
            raise ValueError(f"switch grid point {s0} outside (0, T]")
        margins.append(window_margin(geom, s0))
    entries = tuple((s0, m) for s0, m in zip(grid, margins) if m > 0.0)
    bracket = None
    below = [s0 for s0, m in zip(grid, margins) if m <= 0.0 and entries and s0 < entries[0][0]]
    if entries and len(entries) < len(grid) and below:
        lo = max(below)
        hi = entries[0][0]
        # refine the sign change of the window margin by bisection
        for _ in range(80):
            if hi - lo <= 1e-9:
                break
            mid = 0.5 * (lo + hi)
            if window_margin(geom, mid) > 0.0:
                hi = mid
            else:
                lo = mid
        bracket = (lo, hi)
    return AdmissibleSwitches(entries=entries, s_min_bracket=bracket)
