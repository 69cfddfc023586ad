"""Command-line entry point: solves, duality checks and simulations from a config file.

Every file written is a pure function of (config, seed): no timestamps, no
timings, floats in repr form.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mc_sim
from .curves import Grid, ValueCurve, read_csv, write_csv
from .duality import DualityError, biconjugate_check, legendre_concave
from .fbp_dual import DegenerateRegion, ShootingError, alpha_star, solve_dual
from .mc_sim import SimConfig
from .model import REFERENCE, MarketParams, ParameterError, Params, load_params, validate
from .pde_primal import (SolverError, convexity_report, feedback_policy, hjb_residual, ladder_gap,
                         residual_order, solve_primal, solve_unbounded)

log = logging.getLogger("lifetime_ruin")

PRIMAL_HEADER = ["z", "phi", "dphi", "ddphi", "pi"]
DUAL_HEADER = ["y", "ghat", "dghat", "ddghat", "alpha"]
PASTING_TOL = 1e-8
RESIDUAL_RATIO = (1.3, 2.7)
SWEEP_BARRIERS = (40.0, 80.0, 160.0, 320.0)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    params: MarketParams = REFERENCE
    M: float = 40.0
    grid_n: int = 4001
    tol: float = 1e-10
    sim: SimConfig = field(default_factory=SimConfig)
    outdir: Path = Path("out")
    z0: float = 10.0

    def validate(self) -> None:
        problems = list(validate(self.params).problems)
        if not self.M > 0:
            problems.append(f"barrier M must be positive, got {self.M}")
        if self.grid_n < 101:
            problems.append(f"grid_n must be at least 101, got {self.grid_n}")
        if not self.tol > 0:
            problems.append("tol must be positive")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        """Everything that affects results; the output directory is excluded."""
        return {"params": self.params.to_mapping(), "M": self.M, "grid_n": self.grid_n,
                "tol": self.tol, "z0": self.z0, "sim": dataclasses.asdict(self.sim)}

    @property
    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def prm(self) -> Params:
        return Params.build(self.params)


def load_config(path: str | Path | None) -> RunConfig:
    """JSON run config, or a bare parameter file (JSON or key=value)."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text) if text.lstrip().startswith("{") else None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is None or "params" not in data:
        return RunConfig(params=load_params(path))
    known = {"params", "M", "grid_n", "tol", "sim", "outdir", "z0"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    try:
        sim = SimConfig(**data.get("sim", {}))
    except TypeError as exc:
        raise ConfigError(f"{path}: bad sim section: {exc}") from None
    cfg = RunConfig(params=MarketParams.from_mapping(data["params"]),
                    M=float(data.get("M", 40.0)), grid_n=int(data.get("grid_n", 4001)),
                    tol=float(data.get("tol", 1e-10)), sim=sim,
                    outdir=Path(data.get("outdir", "out")), z0=float(data.get("z0", 10.0)))
    return cfg


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    sim_kw = {}
    if args.seed is not None:
        sim_kw["seed"] = args.seed
    if args.paths is not None:
        sim_kw["n_paths"] = args.paths
    if args.dt is not None:
        sim_kw["dt"] = args.dt
    if args.workers is not None:
        sim_kw["workers"] = args.workers
    kw = {}
    if sim_kw:
        kw["sim"] = dataclasses.replace(cfg.sim, **sim_kw)
    if args.grid is not None:
        kw["grid_n"] = args.grid
    if args.barrier is not None:
        kw["M"] = args.barrier
    if args.outdir is not None:
        kw["outdir"] = Path(args.outdir)
    return dataclasses.replace(cfg, **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def read_primal_csv(path: str | Path, M: float | None = None) -> ValueCurve:
    """Load a primal.csv written by solve-primal back into a curve."""
    cols = read_csv(path, PRIMAL_HEADER)
    z = cols["z"]
    if not np.all(np.isfinite(np.column_stack(list(cols.values())))):
        raise ValueError(f"{path}: non-finite entries")
    grid = Grid(0.0, float(z[-1]), z.size)
    if z[0] != 0.0 or np.max(np.abs(z - grid.points)) > 1e-9 * grid.upper:
        raise ValueError(f"{path}: z column is not a uniform grid starting at 0")
    if M is not None and abs(grid.upper - M) > 1e-9 * M:
        raise ValueError(f"{path}: grid ends at {grid.upper}, config barrier is {M}")
    return ValueCurve(grid, cols["phi"], cols["dphi"], cols["ddphi"], "primal_M",
                      {"M": grid.upper})


# ---------------------------------------------------------------- stages

def _check(name: str, measured, tolerance, passed: bool, **extra) -> dict:
    return {"name": name, "measured": measured, "tolerance": tolerance, "passed": bool(passed),
            **extra}


def primal_stage(cfg: RunConfig, prm: Params, outdir: Path | None):
    curve = solve_primal(prm, cfg.M, cfg.grid_n, cfg.tol)
    policy = feedback_policy(curve, prm)
    conv = convexity_report(curve, prm)
    res = np.zeros(curve.grid.n)
    res[1:-1] = hjb_residual(curve, prm)
    if outdir is not None:
        write_csv(outdir / "primal.csv", PRIMAL_HEADER,
                  [curve.z, curve.values, curve.d1, curve.d2, policy.pi])
        write_csv(outdir / "residual.csv", ["z", "residual"], [curve.z, res])
        report = curve.meta["report"]
        write_json(outdir / "convexity.json", {
            **conv.to_dict(), "M": cfg.M, "grid_n": cfg.grid_n,
            "iterations": report.iterations, "clamped": report.clamped, "unresolved": report.unresolved,
            "sup_residual": float(np.max(np.abs(res))), "config_hash": cfg.hash})
    return curve, policy, conv


def dual_stage(cfg: RunConfig, prm: Params, outdir: Path | None):
    sol = solve_dual(prm, cfg.M, n=cfg.grid_n)
    alpha = alpha_star(sol, prm)
    if outdir is not None:
        c = sol.curve
        write_csv(outdir / "dual.csv", DUAL_HEADER,
                  [c.z, c.values, c.d1, c.d2, alpha.control(c.z)])
        write_json(outdir / "boundary.json", {**sol.to_dict(),
                   "ordered": sol.boundary.ordered(cfg.M, prm.lam),
                   "multiple_roots": sol.scan["roots"] > 1, "config_hash": cfg.hash})
    return sol, alpha


def cmd_solve_primal(cfg: RunConfig) -> int:
    primal_stage(cfg, cfg.prm, cfg.outdir)
    return 0


def cmd_solve_dual(cfg: RunConfig) -> int:
    dual_stage(cfg, cfg.prm, cfg.outdir)
    return 0


def cmd_legendre(cfg: RunConfig, primal_path: str | None = None) -> int:
    prm = cfg.prm
    primal = (read_primal_csv(primal_path, cfg.M) if primal_path
              else solve_primal(prm, cfg.M, cfg.grid_n, cfg.tol))
    sol, _ = dual_stage(cfg, prm, None)
    transform = legendre_concave(sol, prm, primal.grid.n)
    write_csv(cfg.outdir / "legendre.csv", ["z", "phi_legendre", "phi_primal", "gap"],
              [primal.z, transform.values, primal.values, transform.values - primal.values])
    report = biconjugate_check(sol, primal, prm)
    write_json(cfg.outdir / "duality.json", {**report.to_dict(), "config_hash": cfg.hash})
    return 0 if report.passed else 1


def cmd_simulate(cfg: RunConfig, target: str = "ruin", dump_paths: bool = False) -> int:
    prm = cfg.prm
    if target == "ruin":
        curve = solve_primal(prm, cfg.M, cfg.grid_n, cfg.tol)
        res = mc_sim.simulate_ruin(prm, cfg.M, feedback_policy(curve, prm), cfg.z0, cfg.sim)
        oracle = float(curve(cfg.z0))
    elif target == "ruin2d":
        curve = solve_unbounded(prm)
        res = mc_sim.simulate_ruin_2d(prm, curve, cfg.z0, 1.0, cfg.sim)
        oracle = float(curve(cfg.z0))
    elif target == "game":
        sol = solve_dual(prm, cfg.M, n=cfg.grid_n)
        y0 = 0.5 * (sol.boundary.y_M + sol.boundary.y_0)
        res = mc_sim.simulate_game(prm, cfg.M, sol, y0, cfg.sim)
        oracle = float(sol.value(y0))
    else:
        raise ConfigError(f"unknown simulation target {target!r}")
    tol = res.tolerance()
    write_json(cfg.outdir / "simulation.json", {
        **res.to_dict(), "target": target, "oracle": oracle, "gap": abs(res.estimate - oracle),
        "tolerance": tol, "passed": abs(res.estimate - oracle) <= tol, "config_hash": cfg.hash})
    if dump_paths:
        res.dump_paths(cfg.outdir / "paths.csv")
    return 0 if abs(res.estimate - oracle) <= tol else 1


def cmd_saddle(cfg: RunConfig) -> int:
    prm = cfg.prm
    sol = solve_dual(prm, cfg.M, n=cfg.grid_n)
    y0 = 0.5 * (sol.boundary.y_M + sol.boundary.y_0)
    report = mc_sim.saddle_test(prm, cfg.M, sol, y0, cfg.sim)
    write_json(cfg.outdir / "saddle.json", {**report, "config_hash": cfg.hash})
    return 0 if report["passed"] else 1


def cmd_sweep(cfg: RunConfig) -> int:
    """Barrier ladder at the spacing of the configured grid."""
    prm = cfg.prm
    h = cfg.M / (cfg.grid_n - 1)
    curves = [solve_primal(prm, M, int(round(M / h)) + 1, cfg.tol) for M in SWEEP_BARRIERS]
    gaps = [ladder_gap(a, b) for a, b in zip(curves[:-1], curves[1:])]
    write_csv(cfg.outdir / "sweep.csv", ["M", "M_next", "sup_gap"],
              [np.array(SWEEP_BARRIERS[:-1]), np.array(SWEEP_BARRIERS[1:]), np.array(gaps)])
    decreasing = all(b < a for a, b in zip(gaps[:-1], gaps[1:]))
    return 0 if decreasing else 1


def cmd_verify(cfg: RunConfig, primal_path: str | None = None) -> int:
    """Full acceptance pipeline; the report is written even when checks fail."""
    prm = cfg.prm
    out = cfg.outdir
    checks: list[dict] = []
    diagnostics: list[dict] = []

    if primal_path:
        primal = read_primal_csv(primal_path, cfg.M)
    else:
        primal, _, _ = primal_stage(cfg, prm, out)
    conv = convexity_report(primal, prm)
    v = primal.values
    checks.append(_check("primal_boundary_and_shape",
                         {"phi_0": v[0], "phi_M": v[-1], "max_first_difference": np.max(np.diff(v)),
                          "min_second_difference": np.min(np.diff(v, 2))}, "exact",
                         v[0] == 1.0 and v[-1] == 0.0 and np.all(np.diff(v) < 0)
                         and np.all(np.diff(v, 2) > 0)))
    checks.append(_check("convexity_lower_bound", conv.min_slack, 0.0, conv.all_pass))
    if not primal_path:
        order = residual_order(prm, cfg.M, cfg.grid_n, cfg.tol)
        checks.append(_check("hjb_residual_order", order, list(RESIDUAL_RATIO),
                             RESIDUAL_RATIO[0] <= order["ratio"] <= RESIDUAL_RATIO[1]))

    sol, alpha = dual_stage(cfg, prm, out)
    checks.append(_check("smooth_pasting", list(sol.pasting_residuals), PASTING_TOL,
                         max(sol.pasting_residuals) <= PASTING_TOL))
    b = sol.boundary
    checks.append(_check("boundary_ordering", {"y_M": b.y_M, "1/M": 1.0 / cfg.M, "lambda": prm.lam,
                                               "y_0": b.y_0}, "y_M < 1/M < lambda <= y_0",
                         b.ordered(cfg.M, prm.lam)))
    duality = biconjugate_check(sol, primal, prm)
    t = duality.tolerances
    checks.append(_check("duality_sup_gap", duality.sup_gap, t["sup_gap"],
                         duality.sup_gap <= t["sup_gap"]))
    checks.append(_check("biconjugate_gap", duality.biconjugate_gap, t["biconjugate"],
                         duality.biconjugate_gap <= t["biconjugate"]))
    checks.append(_check("free_boundary_cross_check", list(duality.boundary_gap), t["boundary"],
                         max(duality.boundary_gap) <= t["boundary"]))
    checks.append(_check("slope_and_curvature_match", duality.slope_checks,
                         {"slope": t["slope"], "curvature_rtol": t["curvature_rtol"]},
                         all(c["slope_ok"] and c["curvature_ok"] for c in duality.slope_checks)))

    bound = math.sqrt(2.0 * prm.derived.m) * alpha.y[1:-1]
    ratio = alpha.ratio[1:-1]
    diagnostics.append(_check(
        "control_bound", {"max_alpha_over_bound": float(np.max(ratio / bound)),
                          "min_alpha": float(np.min(ratio)),
                          "ratio_root_gap": float(np.max(np.abs(ratio - alpha.root[1:-1])))},
        "0 <= alpha* <= sqrt(2m) y", bool(np.all(ratio >= 0) and np.all(ratio <= bound)),
        note="reported, not gating: the bound fails near y_M when M r~ > 1"))

    # coupled pair: the reference run sums two fine increments per step
    sim = dataclasses.replace(cfg.sim, substeps=2 * cfg.sim.substeps)
    policy = feedback_policy(primal, prm)
    z0 = cfg.z0
    phi_z0 = float(primal(z0))
    ruin = mc_sim.simulate_ruin(prm, cfg.M, policy, z0, sim)
    gap = abs(ruin.estimate - phi_z0)
    checks.append(_check("mc_ruin_vs_pde", {**ruin.to_dict(), "oracle": phi_z0, "gap": gap},
                         ruin.tolerance(), gap <= ruin.tolerance()))
    fine = mc_sim.simulate_ruin(prm, cfg.M, policy, z0, sim.refined())
    gap_fine = abs(fine.estimate - phi_z0)
    checks.append(_check("mc_ruin_dt_halving", {"dt": sim.dt, "gap": gap, "dt_half": sim.dt / 2,
                                                "gap_half": gap_fine, "estimate_half": fine.estimate},
                         "gap_half < gap", gap_fine < gap))

    y_mid = 0.5 * (b.y_M + b.y_0)
    ghat = float(sol.value(y_mid))
    game = mc_sim.simulate_game(prm, cfg.M, sol, y_mid, cfg.sim, alpha)
    ggap = abs(game.estimate - ghat)
    checks.append(_check("mc_game_vs_dual", {**game.to_dict(), "oracle": ghat, "gap": ggap},
                         game.tolerance(), ggap <= game.tolerance()))
    saddle = mc_sim.saddle_test(prm, cfg.M, sol, y_mid, cfg.sim)
    for row in saddle["rows"]:
        checks.append(_check(f"saddle[{row['side']}]: {row['name']}",
                             {"estimate": row["estimate"], "value": saddle["value"],
                              "std_error": row["std_error"]}, row["tolerance"], row["passed"]))

    unbounded = solve_unbounded(prm)
    phi_inf = float(unbounded(z0))
    one_d = mc_sim.simulate_ruin(prm, None, feedback_policy(unbounded, prm), z0, cfg.sim)
    two_d = mc_sim.simulate_ruin_2d(prm, unbounded, z0, 1.0, cfg.sim)
    scaled = mc_sim.simulate_ruin_2d(prm, unbounded, 10.0 * z0, 10.0, cfg.sim)
    se = math.hypot(one_d.std_error, two_d.std_error)
    tol_2d = 3 * se + mc_sim.DISCRETIZATION_ALLOWANCE + max(one_d.capped_bias, two_d.capped_bias)
    checks.append(_check("mc_2d_vs_1d", {"estimate_2d": two_d.estimate, "estimate_1d": one_d.estimate,
                                         "oracle": phi_inf, "capped_2d": two_d.n_capped},
                         tol_2d, abs(two_d.estimate - one_d.estimate) <= tol_2d
                         and abs(two_d.estimate - phi_inf) <= two_d.tolerance()))
    se_scale = math.hypot(two_d.std_error, scaled.std_error)
    checks.append(_check("mc_2d_scale_invariance", abs(two_d.estimate - scaled.estimate),
                         3 * se_scale, abs(two_d.estimate - scaled.estimate) <= 3 * se_scale))

    passed = all(c["passed"] for c in checks)
    write_json(out / "verification.json", {"config": cfg.to_dict(), "config_hash": cfg.hash,
                                           "checks": checks, "diagnostics": diagnostics,
                                           "passed": passed})
    return 0 if passed else 1


# ---------------------------------------------------------------- argument handling

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config (JSON) or parameter file")
    common.add_argument("--outdir", help="output directory")
    common.add_argument("--seed", type=int, help="simulation seed, overrides the config")
    common.add_argument("--paths", type=int, help="number of simulated paths")
    common.add_argument("--dt", type=float, help="simulation time step in years")
    common.add_argument("--grid", type=int, help="number of grid points")
    common.add_argument("--barrier", type=float, help="upper barrier M")
    common.add_argument("--workers", type=int, help="simulation threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lifetime-ruin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-primal", parents=[common], help="ruin probability on [0, M]")
    sub.add_parser("solve-dual", parents=[common], help="free boundary and game value")
    p = sub.add_parser("legendre", parents=[common], help="transform the game value and compare")
    p.add_argument("--primal", help="use this primal.csv instead of solving")
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimate vs PDE value")
    p.add_argument("--target", choices=("ruin", "ruin2d", "game"), default="ruin")
    p.add_argument("--dump-paths", action="store_true", help="write per-path outcomes")
    sub.add_parser("saddle", parents=[common], help="deviation tests of the saddle pair")
    sub.add_parser("sweep", parents=[common], help="barrier ladder convergence table")
    p = sub.add_parser("verify", parents=[common], help="run every check, write verification.json")
    p.add_argument("--primal", help="use this primal.csv instead of solving")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        cfg.validate()
        cfg.outdir.mkdir(parents=True, exist_ok=True)
        cmd = args.command
        if cmd == "solve-primal":
            return cmd_solve_primal(cfg)
        if cmd == "solve-dual":
            return cmd_solve_dual(cfg)
        if cmd == "legendre":
            return cmd_legendre(cfg, args.primal)
        if cmd == "simulate":
            return cmd_simulate(cfg, args.target, args.dump_paths)
        if cmd == "saddle":
            return cmd_saddle(cfg)
        if cmd == "sweep":
            return cmd_sweep(cfg)
        return cmd_verify(cfg, args.primal)
    except (ConfigError, ParameterError, SolverError, ShootingError, DegenerateRegion,
            DualityError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
