"""Command-line front end: one JSON config, one subcommand per analysis.

Subcommands: profile (radial envelope tables), admissible (switch set and
threshold bracket), certify (per-switch routed/direct reports, argmin
flagged), simulate (synchronous | reflection | end_to_end), sharpness
(conversion-exponent ceiling family).  Scalar config fields can be
overridden on the command line with repeated --set dotted.path=value flags;
--seed overrides the config seed.

Exit codes: 0 success, 2 config error, 3 numeric failure (quadrature or
trajectory explosion), 4 infeasible (no admissible switch where one is
required).  CSV output carries 17 significant digits so downstream plotting
is lossless; JSON outputs are validated against the schemas in
OUTPUT_SCHEMAS before they are written.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np
import jsonschema

from .errors import (ConfigError, ExplosionError, GridAlignmentError,
                     InfeasibleError, QuadratureError)
from .certificate import (CertificateInputs, DiscretizationSpec,
                          reports_for_grid, vp_admissible_threshold)
from .profile import (Envelope, RadialGeometry, ScoreErrorEnvelope,
                      WeakLogParams, kappa_lower, margin_load,
                      zero_cross_radius)
from .schedule import QuadratureConfig, ScheduleSpec
from .simulate import (ScoreErrorField, SimConfig, TargetModel,
                       certified_geometry, run_reflection, run_synchronous,
                       sample_and_w2_1d)
from .switchgeom import admissible_set, build_switch
from .transport import MomentBudget, moment_recursion, sharpness_pair, theta_p

SCHEMA_VERSION = 1

_NUM = {"type": "number"}

OUTPUT_SCHEMAS = {
    "admissible": {
        "type": "object",
        "required": ["schema_version", "admissible", "margins"],
        "properties": {
            "schema_version": {"type": "integer"},
            "admissible": {"type": "array", "items": _NUM},
            "margins": {"type": "array", "items": _NUM},
            "s_min_bracket": {"type": ["array", "null"],
                              "items": _NUM, "minItems": 2, "maxItems": 2},
            "vp_threshold": {"type": ["number", "string", "null"]},
        },
    },
    "certify": {
        "type": "object",
        "required": ["schema_version", "reports", "argmin_s0"],
        "properties": {
            "schema_version": {"type": "integer"},
            "argmin_s0": _NUM,
            "reports": {"type": "array", "items": {
                "type": "object",
                "required": ["s0", "routed", "direct", "shared_late", "winner"],
            }},
        },
    },
    "simulate": {
        "type": "object",
        "required": ["schema_version", "mode", "seed"],
        "properties": {
            "schema_version": {"type": "integer"},
            "mode": {"type": "string"},
            "seed": {"type": "integer"},
        },
    },
}


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _set_by_path(cfg: dict, dotted: str, raw: str):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def load_config(path: str, overrides=(), seed=None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs dotted.path=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        _set_by_path(cfg, dotted, raw)
    if seed is not None:
        cfg["seed"] = seed
    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    return cfg


def _require(cfg: dict, key: str) -> dict:
    if key not in cfg:
        raise ConfigError(f"config is missing the required block {key!r}")
    return cfg[key]


def build_schedule(block: dict) -> ScheduleSpec:
    kind = block.get("kind")
    try:
        if kind == "vp":
            return ScheduleSpec.vp(block["beta"], block["T"])
        if kind == "constant_ou":
            return ScheduleSpec.constant_ou(block["f0"], block["g0"], block["T"])
        if kind == "tabulated":
            return ScheduleSpec.tabulated(block["samples"], block["T"])
    except KeyError as exc:
        raise ConfigError(f"schedule block is missing field {exc}") from exc
    raise ConfigError(f"schedule.kind must be vp|constant_ou|tabulated, got {kind!r}")


def _build_envelope(value) -> Envelope:
    if isinstance(value, (int, float)):
        return Envelope.constant(value)
    if isinstance(value, dict) and "samples" in value:
        return Envelope.tabulated(value["samples"])
    raise ConfigError("envelope must be a number or {\"samples\": [[s, v], ...]}")


def build_geometry(cfg: dict) -> RadialGeometry:
    sched = build_schedule(_require(cfg, "schedule"))
    weak = _require(cfg, "weak")
    try:
        weak_params = WeakLogParams(alpha=weak["alpha"], M=weak["M"])
    except KeyError as exc:
        raise ConfigError(f"weak block is missing field {exc}") from exc
    score = cfg.get("score_error", {"ell": 0.0, "eps": 0.0})
    env = ScoreErrorEnvelope(ell=_build_envelope(score.get("ell", 0.0)),
                             eps=_build_envelope(score.get("eps", 0.0)))
    qblock = cfg.get("quadrature", {})
    quad = QuadratureConfig(
        abs_tol=qblock.get("abs_tol", 1e-10),
        rel_tol=qblock.get("rel_tol", 1e-8),
        max_subdivisions=qblock.get("max_subdivisions", 2 ** 20))
    return RadialGeometry(schedule=sched, weak=weak_params, score=env, quad=quad)


def build_discretization(cfg: dict, T: float) -> DiscretizationSpec:
    block = _require(cfg, "discretization")
    if "grid" in block:
        grid = block["grid"]
    elif "h" in block:
        n = int(round(T / block["h"]))
        if abs(n * block["h"] - T) > 1e-9 * max(1.0, T):
            raise ConfigError("discretization.h must divide the horizon T")
        grid = np.linspace(0.0, T, n + 1)
    else:
        raise ConfigError("discretization needs either grid or h")
    defects = cfg.get("defects", {"model": "power_law", "C_sch": 0.0, "q": 1.0})
    model = defects.get("model")
    if model == "power_law":
        return DiscretizationSpec.power_law(grid, defects.get("C_sch", 0.0),
                                            defects.get("q", 1.0))
    if model == "per_step":
        return DiscretizationSpec.per_step(grid, defects["d"])
    raise ConfigError(f"defects.model must be power_law|per_step, got {model!r}")


def build_budget(cfg: dict) -> MomentBudget:
    block = _require(cfg, "budget")
    p = block.get("p")
    if p is None:
        raise ConfigError("budget.p is required")
    if "M_bar" in block:
        return MomentBudget(p=p, M_bar=block["M_bar"])
    if "recursion" in block:
        rec = block["recursion"]
        m_bar = moment_recursion(rec["m0"], [tuple(x) for x in rec.get("steps", [])])
        extra = rec.get("target_moment", 0.0)
        return MomentBudget(p=p, M_bar=m_bar + extra)
    raise ConfigError("budget needs M_bar or recursion")


def build_switch_grid(cfg: dict, disc: DiscretizationSpec):
    block = cfg.get("switch_grid", {"count": 8})
    T = disc.T
    if "values" in block:
        return [float(v) for v in block["values"]]
    count = int(block.get("count", 8))
    interior = [T - t for t in disc.grid[1:-1]]
    if not interior:
        raise ConfigError("grid has no interior switch candidates")
    idx = np.unique(np.linspace(0, len(interior) - 1, min(count, len(interior)),
                                dtype=int))
    return sorted(interior[i] for i in idx)


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _write_json(path: Path, doc: dict, schema_key: str):
    jsonschema.validate(doc, OUTPUT_SCHEMAS[schema_key])
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_profile(cfg: dict, outdir: Path) -> int:
    geom = build_geometry(cfg)
    block = cfg.get("profile", {})
    s_values = block.get("s_values")
    if not s_values:
        raise ConfigError("profile.s_values is required")
    rblock = block.get("r_grid", {"min": 1e-6, "max": 1e3, "count": 64, "log": True})
    return _profile_rows(geom, s_values, rblock, outdir)


def _profile_rows(geom, s_values, rblock, outdir):
    if rblock.get("log", True):
        r_grid = np.logspace(math.log10(rblock["min"]), math.log10(rblock["max"]),
                             int(rblock["count"]))
    else:
        r_grid = np.linspace(rblock["min"], rblock["max"], int(rblock["count"]))
    rows = []
    for s in s_values:
        m, b = margin_load(geom, s)
        R = zero_cross_radius(geom, s)
        kappas = kappa_lower(geom, s, r_grid)
        for r, k in zip(r_grid, kappas):
            rows.append((s, r, k, m, b, R if math.isfinite(R) else math.inf))
    _write_csv(outdir / "profile.csv",
               ["s", "r", "kappa_lower", "margin", "load", "zero_cross_radius"],
               rows)
    print(f"wrote {outdir / 'profile.csv'} ({len(rows)} rows)")
    return 0


def cmd_admissible(cfg: dict, outdir: Path) -> int:
    geom = build_geometry(cfg)
    disc = build_discretization(cfg, geom.schedule.T)
    grid = build_switch_grid(cfg, disc)
    result = admissible_set(geom, grid)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "admissible": [s for s, _ in result.entries],
        "margins": [m for _, m in result.entries],
        "s_min_bracket": list(result.s_min_bracket) if result.s_min_bracket else None,
    }
    sched = cfg.get("schedule", {})
    if sched.get("kind") == "vp":
        ell = cfg.get("score_error", {}).get("ell", 0.0)
        if isinstance(ell, (int, float)):
            thr = vp_admissible_threshold(sched["beta"], cfg["weak"]["alpha"], ell)
            doc["vp_threshold"] = thr if math.isfinite(thr) else "inf"
    _write_json(outdir / "admissible.json", doc, "admissible")
    if not result.entries:
        print("no admissible switch on the supplied grid")
    print(f"wrote {outdir / 'admissible.json'}")
    return 0


def cmd_certify(cfg: dict, outdir: Path) -> int:
    geom = build_geometry(cfg)
    disc = build_discretization(cfg, geom.schedule.T)
    budget = build_budget(cfg)
    init = cfg.get("init", {})
    inputs = CertificateInputs(geom=geom, disc=disc, budget=budget,
                               init_w2=init.get("w2", 0.0),
                               init_wphi=init.get("wphi"))
    grid = build_switch_grid(cfg, disc)
    reports = reports_for_grid(inputs, grid)
    if not reports:
        raise InfeasibleError("no admissible grid-aligned switch in switch_grid")
    best = min(reports, key=lambda r: (r.routed, r.s0))
    rows = []
    for rep in reports:
        rows.append((rep.s0, rep.sw.m_lo, rep.sw.R_sw, rep.sw.lam, rep.sw.a_slope,
                     rep.sw.c_rate, rep.gamma_s0, rep.early_routed,
                     rep.early_direct, rep.shared_late, rep.routed, rep.direct,
                     rep.winner, "argmin" if rep is best else ""))
    _write_csv(outdir / "certify.csv",
               ["s0", "margin", "R_sw", "lambda", "a_slope", "c_rate", "gamma_s0",
                "early_routed", "early_direct", "shared_late", "routed", "direct",
                "winner", "flag"],
               rows)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "argmin_s0": best.s0,
        "reports": [{
            "s0": rep.s0, "margin": rep.sw.m_lo, "R_sw": rep.sw.R_sw,
            "lambda": rep.sw.lam, "a_slope": rep.sw.a_slope,
            "c_rate": rep.sw.c_rate, "gamma_s0": rep.gamma_s0,
            "early_routed": rep.early_routed, "early_direct": rep.early_direct,
            "shared_late": rep.shared_late, "routed": rep.routed,
            "direct": rep.direct, "winner": rep.winner,
        } for rep in reports],
    }
    _write_json(outdir / "certify.json", doc, "certify")
    print(f"wrote {outdir / 'certify.csv'} and certify.json; "
          f"argmin s0={best.s0:.6g} ({best.winner})")
    return 0


def _build_target(block: dict) -> TargetModel:
    kind = block.get("kind")
    if kind == "gaussian1d":
        return TargetModel.gaussian1d(block["alpha0"])
    if kind == "mixture1d":
        return TargetModel.mixture1d(block["m"], block["s2"])
    if kind == "rotation2d":
        return TargetModel.rotation2d(block["base"])
    raise ConfigError(f"target.kind must be gaussian1d|mixture1d|rotation2d, got {kind!r}")


def _build_field(block: dict) -> ScoreErrorField:
    kind = block.get("kind", "none")
    if kind == "none":
        return ScoreErrorField.none()
    if kind == "linear":
        return ScoreErrorField.linear(block["ell_bar"])
    if kind == "skew2d":
        return ScoreErrorField.skew_rotation_2d(block["omega"])
    if kind == "bump":
        return ScoreErrorField.bounded_bump(block["height"], block["width"])
    raise ConfigError(f"unknown error_field kind {kind!r}")


def cmd_simulate(cfg: dict, outdir: Path) -> int:
    block = _require(cfg, "simulate")
    sched = build_schedule(_require(cfg, "schedule"))
    target = _build_target(_require(block, "target"))
    field = _build_field(block.get("error_field", {"kind": "none"}))
    mode = block.get("mode", "reflection")
    seed = int(cfg.get("seed", 0))
    summary = {"schema_version": SCHEMA_VERSION, "mode": mode, "seed": seed}

    if mode in ("synchronous", "reflection"):
        sim = SimConfig(target=target, error_field=field, schedule=sched,
                        window=tuple(block.get("window", (0.0, sched.T / 2))),
                        step_h=block.get("step_h", 1e-3),
                        n_paths=int(block.get("n_paths", 10_000)), seed=seed,
                        coalesce_eps=block.get("coalesce_eps", 1e-6))
        gap = block.get("initial_gap", 1.0)
        res = (run_reflection if mode == "reflection" else run_synchronous)(sim, gap)
        rows = []
        for i, t in enumerate(res.times):
            rows.append((t,
                         res.mean_phi_r[i] if res.mean_phi_r is not None else math.nan,
                         res.stderr_phi_r[i] if res.stderr_phi_r is not None else math.nan,
                         res.mean_dist[i], res.coalesced_fraction[i]))
        _write_csv(outdir / "simulate_series.csv",
                   ["t", "mean_phi_r", "stderr_phi_r", "mean_dist",
                    "coalesced_fraction"], rows)
        summary.update({
            "fitted_rate": res.fitted_rate,
            "qv_realized": _nan_null(res.qv_realized),
            "qv_expected": _nan_null(res.qv_expected),
            "slack_violations": res.slack_violations,
            "per_path_seeds": res.per_path_seeds,
        })
        if res.switch is not None:
            summary["certified_rate"] = res.switch.c_rate
            summary["switch_s0"] = res.switch.s0
    elif mode == "end_to_end":
        geom = certified_geometry(target, field, sched,
                                  eps_bar=block.get("eps_bar", 0.0))
        disc = build_discretization(cfg, sched.T)
        sim = SimConfig(target=target, error_field=field, schedule=sched,
                        window=(0.0, sched.T), step_h=block.get("step_h", 1e-3),
                        n_paths=max(int(block.get("n_paths", 10_000)), 100),
                        seed=seed)
        est = sample_and_w2_1d(sim, disc, int(block.get("n_samples", 10_000)))
        summary.update({"w2_hat": est.w2_hat, "stderr": est.stderr,
                        "n_samples": est.n_samples, "init_w2": est.init_w2,
                        "warning": est.warning})
        if "budget" in cfg:
            inputs = CertificateInputs(
                geom=geom, disc=disc, budget=build_budget(cfg),
                init_w2=cfg.get("init", {}).get("w2", est.init_w2))
            reports = reports_for_grid(inputs, build_switch_grid(cfg, disc))
            if reports:
                best = min(reports, key=lambda r: (r.routed, r.s0))
                summary["routed"] = best.routed
                summary["direct"] = best.direct
                summary["certificate_s0"] = best.s0
    else:
        raise ConfigError(f"simulate.mode must be synchronous|reflection|end_to_end")
    _write_json(outdir / "simulate_summary.json", summary, "simulate")
    print(f"wrote {outdir / 'simulate_summary.json'}")
    return 0


def _nan_null(x: float):
    return None if (isinstance(x, float) and math.isnan(x)) else x


def cmd_sharpness(cfg: dict, outdir: Path) -> int:
    block = cfg.get("sharpness", {})
    p = block.get("p", 4.0)
    if p <= 2:
        raise ConfigError("sharpness.p must exceed 2")
    R_values = [float(R) for R in block.get("R_values", (10.0, 100.0, 1e3, 1e4))]
    geom = build_geometry(cfg)
    s0 = block.get("s0", geom.schedule.T / 2)
    sw = build_switch(geom, s0)
    th = theta_p(p)
    rows = []
    data = []
    for R in R_values:
        w2, wphi, mp = sharpness_pair(R, p, sw)
        ratio = w2 / (sw.a_slope ** (-th) * mp ** (1.0 / (2 * (p - 1))) * wphi ** th)
        rows.append((R, w2, wphi, mp, ratio))
        data.append((R, w2, wphi))
    slopes = []
    for (R0, w0, f0), (R1, w1, f1) in zip(data, data[1:]):
        dlog = math.log(R1) - math.log(R0)
        slopes.append(((math.log(w1) - math.log(w0)) / dlog,
                       (math.log(f1) - math.log(f0)) / dlog))
    _write_csv(outdir / "sharpness.csv",
               ["R", "w2", "w_phi", "p_moment", "ratio_to_theta_power"], rows)
    print(f"wrote {outdir / 'sharpness.csv'}")
    for (sl_w2, sl_phi), (R0, _, _) in zip(slopes, data):
        print(f"log-log slopes from R={R0:g}: w2 {sl_w2:.12g} (target {1 - p / 2:g}), "
              f"w_phi {sl_phi:.12g} (affine-tail target {1 - p:g})")
    return 0


# ---------------------------------------------------------------------------

_COMMANDS = {
    "profile": cmd_profile,
    "admissible": cmd_admissible,
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "sharpness": cmd_sharpness,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="w2route",
        description="Routed vs direct W2 certificates for reverse diffusion")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        help="override a scalar config field (dotted path)")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--output", default=None, help="output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.set, seed=args.seed)
        outdir = Path(args.output or cfg.get("output", {}).get("dir", "."))
        outdir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, outdir)
    except (ConfigError, GridAlignmentError, jsonschema.ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (QuadratureError, ExplosionError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
