"""Routed and direct W2 error certificates and their exact comparison.

Both certificates propagate the same three inputs (initialization mismatch,
one-step discretization defects d_k, score forcing eps) to the data end of
the reverse trajectory.  With L(s0) the late-window term and
Gamma(s) = int_0^s load, they decompose as

    routed(s0) = L(s0) + e^{Gamma(s0)} * C_p * (early_budget(s0))^theta_p,
    direct     = L(s0) + e^{Gamma(s0)} * R_dir(s0),

where the early budget damps each pre-switch input by e^{-c (.)} in the
switch metric and R_dir weighs the same inputs by the residual Euclidean
factors e^{Gamma(.) - Gamma(s0)}.  The late term is literally shared, so the
routed-vs-direct comparison is an early-window statement only.

Variance-preserving schedules with constant envelope proxies admit closed
forms for everything (Gamma, margins, admissibility threshold, geometric
defect sums); those live in vp_closed_forms / vp_certificates and
cross-check the generic quadrature pipeline.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GridAlignmentError, InfeasibleError
from .profile import (RadialGeometry, ScoreErrorEnvelope, WeakLogParams,
                      load_scalar, window_margin)
from .profile import with_proxy_envelopes as proxy_inputs  # noqa: F401  (re-export)
from .schedule import ScheduleSpec, adaptive_simpson, window_extremum
from .switchgeom import SwitchGeometry, build_switch
from .transport import MomentBudget, conversion_constant, theta_p

PER_STEP = "per_step"
POWER_LAW = "power_law"


@dataclass(frozen=True)
class DiscretizationSpec:
    """Numerical grid 0 = t_0 < ... < t_N = T and one-step W2 defect bounds.

    defect_model "per_step" carries the N values d_k directly; "power_law"
    is d_k = C_sch * h^q on a uniform grid (spacing checked to 1e-12).
    """
    grid: tuple
    defect_model: str
    d: tuple = ()
    C_sch: float = 0.0
    q: float = 1.0

    def __post_init__(self):
        grid = tuple(float(t) for t in self.grid)
        object.__setattr__(self, "grid", grid)
        if len(grid) < 2:
            raise ConfigError("grid needs at least two points")
        if abs(grid[0]) > 0.0:
            raise ConfigError("grid must start at t_0 = 0")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("grid must be strictly increasing")
        n = len(grid) - 1
        if self.defect_model == PER_STEP:
            d = tuple(float(v) for v in self.d)
            object.__setattr__(self, "d", d)
            if len(d) != n:
                raise ConfigError(f"need one defect per step: {n}")
            if any(v < 0 for v in d):
                raise ConfigError("defects must be nonnegative")
        elif self.defect_model == POWER_LAW:
            if self.C_sch < 0 or self.q <= 0:
                raise ConfigError("power law needs C_sch >= 0 and q > 0")
            h = grid[1] - grid[0]
            diffs = np.diff(np.asarray(grid))
            if np.max(np.abs(diffs - h)) > 1e-12:
                raise ConfigError("power-law defects require a uniform grid (1e-12)")
        else:
            raise ConfigError(f"unknown defect model {self.defect_model!r}")

    @classmethod
    def per_step(cls, grid, d) -> "DiscretizationSpec":
        return cls(grid=tuple(grid), defect_model=PER_STEP, d=tuple(d))

    @classmethod
    def power_law(cls, grid, C_sch: float, q: float) -> "DiscretizationSpec":
        return cls(grid=tuple(grid), defect_model=POWER_LAW, C_sch=C_sch, q=q)

    @classmethod
    def uniform(cls, T: float, n_steps: int, C_sch: float, q: float) -> "DiscretizationSpec":
        return cls.power_law(np.linspace(0.0, T, n_steps + 1), C_sch, q)

    @property
    def n_steps(self):
        return len(self.grid) - 1

    @property
    def T(self):
        return self.grid[-1]

    def defect_array(self) -> np.ndarray:
        if self.defect_model == PER_STEP:
            return np.asarray(self.d, dtype=float)
        h = self.grid[1] - self.grid[0]
        return np.full(self.n_steps, self.C_sch * h ** self.q)


@dataclass(frozen=True)
class CertificateInputs:
    geom: RadialGeometry
    disc: DiscretizationSpec
    budget: MomentBudget
    init_w2: float = 0.0
    init_wphi: float | None = None   # defaults to init_w2 by cost dominance

    def __post_init__(self):
        if self.init_w2 < 0:
            raise ConfigError("init_w2 must be nonnegative")
        if self.init_wphi is not None:
            if self.init_wphi < 0:
                raise ConfigError("init_wphi must be nonnegative")
            if self.init_wphi > self.init_w2 * (1.0 + 1e-12) + 1e-300:
                raise ConfigError("init_wphi cannot exceed init_w2 (phi(r) <= r)")
        T = self.geom.schedule.T
        if abs(self.disc.T - T) > 1e-12 * max(1.0, T):
            raise ConfigError("grid horizon must match the schedule horizon")

    @property
    def wphi0(self) -> float:
        return self.init_w2 if self.init_wphi is None else self.init_wphi


@dataclass(frozen=True)
class CertificateReport:
    """Routed/direct bounds at one switch with their shared decomposition."""
    s0: float
    sw: SwitchGeometry
    gamma_s0: float
    early_budget: float            # damped switch-metric budget
    early_routed: float            # C_p * early_budget^theta_p
    shared_late: float
    routed: float
    early_direct: float | None = None
    direct: float | None = None
    winner: str | None = None      # "routed" | "direct" | "tie"


def _winner(routed: float, direct: float) -> str:
    if routed == direct:
        return "tie"
    if math.isfinite(routed) and math.isfinite(direct) \
            and abs(routed - direct) <= 1e-12 * max(1.0, abs(routed), abs(direct)):
        return "tie"
    return "routed" if routed < direct else "direct"


def grid_switch_index(disc: DiscretizationSpec, s0: float) -> int:
    """Index K with t_K = T - s0; alignment tolerance is 1e-12 * T."""
    T = disc.T
    target = T - s0
    tol = 1e-12 * max(1.0, T)
    grid = disc.grid
    k = bisect.bisect_left(grid, target - tol)
    if k < len(grid) and abs(grid[k] - target) <= tol:
        return k
    nearest = sorted(grid, key=lambda t: abs(t - target))[:3]
    raise GridAlignmentError(
        f"switch s0={s0} not grid-aligned: T - s0 = {target} is not a grid "
        f"time; nearest grid switches are "
        + ", ".join(f"{T - t:.12g}" for t in nearest))


class _CertEngine:
    """Shared Gamma/forcing tables so both certificates use identical numbers.

    Gamma is tabulated cumulatively on the union of grid times and their
    mirrors T - t_k; the late forcing primitive F(s) = int_0^s e^Gamma g^2 eps
    is tabulated on the same partition.  Arbitrary interior evaluations add a
    short local quadrature from the nearest knot below.
    """

    def __init__(self, inputs: CertificateInputs):
        self.inputs = inputs
        self.geom = inputs.geom
        self.disc = inputs.disc
        spec = self.geom.schedule
        T = spec.T
        grid = np.asarray(self.disc.grid)
        knots = np.unique(np.concatenate([
            grid, T - grid,
            np.asarray(spec.interior_knots(0.0, T)),
            np.asarray(self.geom.score.ell.interior_knots(0.0, T)),
            np.asarray(self.geom.score.eps.interior_knots(0.0, T)),
        ]))
        knots = knots[(knots >= 0.0) & (knots <= T)]
        self.knots = knots
        quad = self.geom.quad
        g = self.geom

        vals = np.empty_like(knots)
        vals[0] = 0.0
        for i in range(1, len(knots)):
            vals[i] = vals[i - 1] + adaptive_simpson(
                lambda u: load_scalar(g, u), knots[i - 1], knots[i], quad)
        self.gamma_vals = vals

        def forced(u):
            return math.exp(self.gamma(u)) * spec.g_at(u) ** 2 * g.score.eps(u)

        F = np.empty_like(knots)
        F[0] = 0.0
        for i in range(1, len(knots)):
            F[i] = F[i - 1] + adaptive_simpson(forced, knots[i - 1], knots[i], quad)
        self.forcing_vals = F

        d = self.disc.defect_array()
        mirrors = T - grid[1:]           # T - t_{k+1}, k = 0..N-1
        self.exp_gamma_mirror = np.exp(np.array([self.gamma(u) for u in mirrors]))
        self.defects = d
        self.gamma_T = self.gamma(T)

    def _locate(self, u: float) -> int:
        i = int(np.searchsorted(self.knots, u + 1e-15, side="right")) - 1
        return max(i, 0)

    def gamma(self, u: float) -> float:
        i = self._locate(u)
        base = self.knots[i]
        if u <= base + 1e-15:
            return float(self.gamma_vals[i])
        g = self.geom
        return float(self.gamma_vals[i]) + adaptive_simpson(
            lambda x: load_scalar(g, x), base, u, g.quad)

    def forcing_primitive(self, s: float) -> float:
        i = self._locate(s)
        base = self.knots[i]
        if s <= base + 1e-15:
            return float(self.forcing_vals[i])
        spec = self.geom.schedule
        g = self.geom

        def forced(u):
            return math.exp(self.gamma(u)) * spec.g_at(u) ** 2 * g.score.eps(u)

        return float(self.forcing_vals[i]) + adaptive_simpson(forced, base, s, g.quad)

    # -- budget pieces -----------------------------------------------------
    def early_budget(self, sw: SwitchGeometry) -> float:
        inputs = self.inputs
        K = grid_switch_index(self.disc, sw.s0)
        grid = np.asarray(self.disc.grid)
        t_s = sw.t_s
        c = sw.c_rate
        total = math.exp(-c * t_s) * inputs.wphi0
        if K > 0:
            w = np.exp(-c * (t_s - grid[1:K + 1]))
            total += float(np.dot(w, self.defects[:K]))
        spec = self.geom.schedule
        g = self.geom
        s0 = sw.s0

        def damped(u):
            return math.exp(-c * (u - s0)) * spec.g_at(u) ** 2 * g.score.eps(u)

        knots = spec.interior_knots(s0, spec.T) + g.score.eps.interior_knots(s0, spec.T)
        total += adaptive_simpson(damped, s0, spec.T, g.quad, knots=knots)
        return total

    def late_budget(self, s0: float) -> float:
        K = grid_switch_index(self.disc, s0)
        tail = float(np.dot(self.exp_gamma_mirror[K:], self.defects[K:]))
        return tail + self.forcing_primitive(s0)

    def direct_parts(self, s0: float):
        """(late, e^{Gamma(s0)}, R_dir) with direct = late + e^Gamma * R_dir."""
        K = grid_switch_index(self.disc, s0)
        gam0 = self.gamma(s0)
        e0 = math.exp(gam0)
        head = float(np.dot(self.exp_gamma_mirror[:K], self.defects[:K])) / e0
        init = math.exp(self.gamma_T - gam0) * self.inputs.init_w2
        forcing = (self.forcing_primitive(self.disc.T) - self.forcing_primitive(s0)) / e0
        return self.late_budget(s0), gam0, init + head + forcing

    def direct_bound(self) -> float:
        total = math.exp(self.gamma_T) * self.inputs.init_w2
        total += float(np.dot(self.exp_gamma_mirror, self.defects))
        total += self.forcing_primitive(self.disc.T)
        return total

    def compare(self, s0: float) -> CertificateReport:
        sw = build_switch(self.geom, s0)
        late, gam0, r_dir = self.direct_parts(s0)
        early = self.early_budget(sw)
        C = conversion_constant(sw, self.inputs.budget)
        th = theta_p(self.inputs.budget.p)
        early_routed = C * early ** th if early > 0.0 else 0.0
        e0 = math.exp(gam0)
        routed = late + e0 * early_routed
        direct = late + e0 * r_dir
        winner = _winner(routed, direct)
        return CertificateReport(
            s0=s0, sw=sw, gamma_s0=gam0, early_budget=early,
            early_routed=early_routed, shared_late=late, routed=routed,
            early_direct=r_dir, direct=direct, winner=winner)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def early_budget(inputs: CertificateInputs, sw: SwitchGeometry) -> float:
    """Damped pre-switch budget: initialization + defects + score forcing."""
    return _CertEngine(inputs).early_budget(sw)


def late_budget(inputs: CertificateInputs, s0: float) -> float:
    """Late-window Euclidean term shared by routed and direct bounds."""
    return _CertEngine(inputs).late_budget(s0)


def routed_bound(inputs: CertificateInputs, s0: float) -> CertificateReport:
    """Phase-aware bound at switch s0 (direct fields left unfilled)."""
    eng = _CertEngine(inputs)
    sw = build_switch(inputs.geom, s0)
    early = eng.early_budget(sw)
    late = eng.late_budget(s0)
    gam0 = eng.gamma(s0)
    C = conversion_constant(sw, inputs.budget)
    th = theta_p(inputs.budget.p)
    early_routed = C * early ** th if early > 0.0 else 0.0
    return CertificateReport(
        s0=s0, sw=sw, gamma_s0=gam0, early_budget=early,
        early_routed=early_routed, shared_late=late,
        routed=late + math.exp(gam0) * early_routed)


def direct_bound(inputs: CertificateInputs) -> float:
    """Full-horizon Euclidean propagation (candidate switch s0 = T)."""
    return _CertEngine(inputs).direct_bound()


def compare(inputs: CertificateInputs, s0: float) -> CertificateReport:
    """Routed vs direct at one switch, sharing the late term bit-for-bit."""
    return _CertEngine(inputs).compare(s0)


def optimize_switch(inputs: CertificateInputs, switch_grid):
    """Minimize the routed bound over admissible grid-aligned switches.

    Inadmissible or misaligned grid points are skipped; ties break toward
    the smallest s0.  Returns (s0_star, report); raises InfeasibleError with
    the margin profile when nothing is admissible.
    """
    eng = _CertEngine(inputs)
    best = None
    margins = []
    for s0 in sorted(float(s) for s in switch_grid):
        try:
            grid_switch_index(inputs.disc, s0)
        except GridAlignmentError:
            margins.append((s0, None))
            continue
        m = window_margin(inputs.geom, s0)
        margins.append((s0, m))
        if m <= 0.0:
            continue
        rep = eng.compare(s0)
        if best is None or rep.routed < best.routed:
            best = rep
    if best is None:
        detail = ", ".join(
            f"s0={s0:.6g}: " + ("misaligned" if m is None else f"margin={m:.6g}")
            for s0, m in margins)
        raise InfeasibleError(f"no admissible grid-aligned switch ({detail})")
    return best.s0, best


def reports_for_grid(inputs: CertificateInputs, switch_grid):
    """Compare at every admissible aligned switch; used by the CLI."""
    eng = _CertEngine(inputs)
    reports = []
    for s0 in sorted(float(s) for s in switch_grid):
        try:
            grid_switch_index(inputs.disc, s0)
        except GridAlignmentError:
            continue
        if window_margin(inputs.geom, s0) <= 0.0:
            continue
        reports.append(eng.compare(s0))
    return reports


# ---------------------------------------------------------------------------
# Variance-preserving closed forms
# ---------------------------------------------------------------------------

def _vp_D(beta, alpha, s):
    return alpha + (1.0 - alpha) * math.exp(-beta * s)


def vp_closed_forms(beta: float, alpha: float, M: float, ell_bar: float, s: float):
    """(Gamma, margin, load) of the VP proxy geometry, all closed-form.

    Gamma(s) = beta (ell + 1/2) s - log(alpha e^{beta s} + 1 - alpha) + M_VP(s)
    with M_VP(s) = M/(1-alpha) (1/D(s) - 1) for alpha != 1 and
    M (1 - e^{-beta s}) at alpha = 1, D(s) = alpha + (1-alpha) e^{-beta s}.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    D = _vp_D(beta, alpha, s)
    if alpha == 1.0:
        m_vp = M * (-math.expm1(-beta * s))
    else:
        m_vp = M / (1.0 - alpha) * (1.0 / D - 1.0)
    # log(alpha e^{beta s} + 1 - alpha) = beta s + log D(s), overflow-safe
    gamma_pr = beta * (ell_bar + 0.5) * s - (beta * s + math.log(D)) + m_vp
    m_pr = beta * (alpha / D - ell_bar - 0.5)
    b_pr = beta * (M * math.exp(-beta * s) / (D * D) + ell_bar + 0.5 - alpha / D)
    return gamma_pr, m_pr, b_pr


def vp_admissible_threshold(beta: float, alpha: float, ell_bar: float) -> float:
    """Noise level where VP proxy admissibility begins (alpha_s = ell + 1/2).

    0 when the reserve is already positive at s = 0; +inf when ell_bar >=
    1/2 makes it unreachable for alpha <= 1.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if ell_bar >= 0.5:
        return math.inf
    if alpha >= ell_bar + 0.5:
        return 0.0
    return max(0.0, math.log((ell_bar + 0.5) * (1.0 - alpha)
                             / (alpha * (0.5 - ell_bar))) / beta)


@dataclass(frozen=True)
class VpCertificateReport:
    """Closed-form VP proxy certificates at one switch.

    xi_dir is the early lower envelope of the direct route; it exists only
    when the window load floor is positive, so strict_improvement is False
    (inconclusive) whenever xi_dir is None.
    """
    s0: float
    L: float
    sw: SwitchGeometry
    conversion: float
    gamma_s0: float
    xi_sw: float
    xi_dir: float | None
    load_floor: float
    delta_late: float
    routed: float
    direct: float
    strict_improvement: bool
    winner: str

    @property
    def early_routed(self) -> float:
        return self.routed - self.delta_late


def vp_certificates(beta: float, alpha: float, M: float, ell_bar: float,
                    eps_bar: float, grid, C_sch: float, q: float, p: float,
                    M_bar: float, init_terms, s0: float) -> VpCertificateReport:
    """Closed-form routed/direct VP proxy certificates at one switch.

    All geometric sums over the early window are in closed form; the late
    sums use the closed-form Gamma directly.  init_terms = (w2, wphi).
    """
    grid = np.asarray([float(t) for t in grid])
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ConfigError("grid must increase from 0")
    h = grid[1] - grid[0]
    if np.max(np.abs(np.diff(grid) - h)) > 1e-12:
        raise ConfigError("vp_certificates requires a uniform grid")
    T = float(grid[-1])
    init_w2, init_wphi = (float(init_terms[0]), float(init_terms[1]))

    thresh = vp_admissible_threshold(beta, alpha, ell_bar)
    if not s0 >= thresh - 1e-12:
        raise InfeasibleError(
            f"s0={s0} below the proxy admissibility threshold {thresh:.6g}")
    spec = ScheduleSpec.vp(beta, T)
    geom = RadialGeometry(schedule=spec, weak=WeakLogParams(alpha, M),
                          score=ScoreErrorEnvelope.constants(ell_bar, eps_bar))
    sw = build_switch(geom, s0)
    K = grid_switch_index(DiscretizationSpec.power_law(grid, max(C_sch, 0.0), q), s0)
    L = T - s0
    c = sw.c_rate
    d = C_sch * h ** q

    # routed early budget: three closed-form terms
    if c > 0:
        geo_sw = (-math.expm1(-c * L)) / (-math.expm1(-c * h))
        force_sw = beta * eps_bar / c * (-math.expm1(-c * L))
    else:
        geo_sw = float(K)
        force_sw = beta * eps_bar * L
    xi_sw = math.exp(-c * L) * init_wphi + d * geo_sw + force_sw

    # direct early lower envelope, present only for a positive load floor
    def b_pr_vec(ss):
        Ds = alpha + (1.0 - alpha) * np.exp(-beta * ss)
        return beta * (M * np.exp(-beta * ss) / Ds ** 2 + ell_bar + 0.5 - alpha / Ds)

    _, load_floor = window_extremum(b_pr_vec, s0, T, "min")
    if load_floor > 0.0:
        bl = load_floor
        xi_dir = (math.exp(bl * L) * init_w2
                  + d * math.expm1(bl * L) / math.expm1(bl * h)
                  + beta * eps_bar / bl * math.expm1(bl * L))
    else:
        xi_dir = None

    def gamma_pr(s):
        return vp_closed_forms(beta, alpha, M, ell_bar, s)[0]

    mirrors = T - grid[1:]
    exp_gamma = np.exp(np.array([gamma_pr(u) for u in mirrors]))
    delta_late = d * float(np.sum(exp_gamma[K:])) + beta * eps_bar * adaptive_simpson(
        lambda u: math.exp(gamma_pr(u)), 0.0, s0, geom.quad)

    gam0 = gamma_pr(s0)
    C = conversion_constant(sw, MomentBudget(p=p, M_bar=M_bar))
    th = theta_p(p)
    routed = delta_late + math.exp(gam0) * (C * xi_sw ** th if xi_sw > 0 else 0.0)
    direct = (delta_late + math.exp(gamma_pr(T)) * init_w2
              + d * float(np.sum(exp_gamma[:K]))
              + beta * eps_bar * adaptive_simpson(
                  lambda u: math.exp(gamma_pr(u)), s0, T, geom.quad))

    improvement = xi_dir is not None and (C * xi_sw ** th if xi_sw > 0 else 0.0) < xi_dir
    winner = _winner(routed, direct)
    return VpCertificateReport(
        s0=s0, L=L, sw=sw, conversion=C, gamma_s0=gam0, xi_sw=xi_sw,
        xi_dir=xi_dir, load_floor=load_floor, delta_late=delta_late,
        routed=routed, direct=direct, strict_improvement=improvement,
        winner=winner)
