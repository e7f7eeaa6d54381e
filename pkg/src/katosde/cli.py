"""Command-line entry point: certify / maximal / solve-pde / zvonkin /
simulate / couple / krylov / pipeline.

Exit codes: 0 all requested pass-criteria hold, 1 a stage failed (partial
results are preserved), 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import ConfigurationError, KatoSdeError, ValidationError
from .fields import mollify, sample_to_grid
from .kato import CertifyPolicy, certify
from .maximal import maximal
from .pde import GridSpec, choose_horizon, picard_solve, regularity_certificate
from .sde import (coupled_pair, density_envelope_check,
                  krylov_functional_convergence, simulate)
from .storage import (load_ensemble, load_solution_arrays, save_ensemble,
                      save_solution, write_csv, write_json)
from .zvonkin import build as build_zvonkin, ito_residual


def _field(cfg: ExperimentConfig, name: str, fallback: str = None):
    if name in cfg.fields:
        return cfg.fields[name]
    if fallback and fallback in cfg.fields:
        return cfg.fields[fallback]
    raise ConfigurationError(f"config defines no field {name!r}")


def stage_certify(cfg: ExperimentConfig, outdir: Path, args) -> bool:
    name = cfg.raw.get("certify_field", "b")
    f = _field(cfg, name)
    policy = CertifyPolicy(quad=cfg.quadrature)
    report = certify(f, policy)
    write_json(outdir / "kato_report.json", report.to_dict())
    if report.scan is not None:
        write_csv(outdir / "window_scan.csv", ["probe_id", "r", "value"],
                  report.scan.as_rows())
    return report.verdict == "certified"


def stage_maximal(cfg: ExperimentConfig, outdir: Path, args) -> bool:
    name = getattr(args, "field", None) or cfg.raw.get("maximal_field", "b")
    f = _field(cfg, name, "b")
    R = getattr(args, "R", None) or cfg.maximal["R"]
    grid = sample_to_grid(f, cfg.grid.box, 1 if f.time_constant
                          else cfg.grid.time_steps, cfg.grid.space_steps)
    mg = maximal(grid, float(R), int(cfg.maximal["radii_count"]))
    axis = grid.axis_nodes()
    rows = []
    slice0 = mg.values[0]
    for idx in np.ndindex(slice0.shape):
        rows.append([f"{axis[i]:.10g}" for i in idx] + [f"{slice0[idx]:.12g}"])
    write_csv(outdir / "maximal.csv",
              [f"x{k+1}" for k in range(f.dim)] + ["M_R_f"], rows)
    return True


def _solve(cfg: ExperimentConfig):
    b = _field(cfg, "b")
    f = cfg.fields.get("f", b)
    t_grid = cfg.raw.get("horizon_grid")
    budget = choose_horizon(b, f, t_grid=t_grid, quad=cfg.quadrature)
    tol = float(cfg.tolerances.get("picard_tol", 1e-6))
    sol = picard_solve(b, f, budget, cfg.grid, tol=tol)
    return b, f, budget, sol


def stage_solve(cfg: ExperimentConfig, outdir: Path, args) -> bool:
    b, f, budget, sol = _solve(cfg)
    save_solution(outdir / "sol.bin", sol)
    cert = regularity_certificate(sol, seed=cfg.seed)
    gsup = float(np.max(np.linalg.norm(sol.grad_u, axis=-1)))
    report = {
        "budget": budget.to_dict(),
        "iterations": sol.iterations,
        "grad_increments": sol.increments,
        "sup_grad": gsup,
        "grad_bound": 2.0 * budget.C0 * budget.n1f,
        "grad_bound_pass": gsup <= 2.0 * budget.C0 * budget.n1f * 1.05,
        "regularity": cert,
    }
    write_json(outdir / "pde_certificate.json", report)
    # plot-ready slices at t = 0
    axis = np.linspace(-sol.box, sol.box, sol.space_steps + 1)
    rows = []
    for idx in np.ndindex(sol.u.shape[1:-1]):
        unorm = float(np.linalg.norm(sol.u[(0,) + idx]))
        gnorm = float(np.linalg.norm(sol.grad_u[(0,) + idx]))
        rows.append([f"{axis[i]:.10g}" for i in idx]
                    + [f"{unorm:.12g}", f"{gnorm:.12g}"])
    write_csv(outdir / "solution_slice.csv",
              [f"x{k+1}" for k in range(sol.dim)] + ["abs_u", "abs_grad_u"],
              rows)
    return bool(report["grad_bound_pass"] and cert["lipschitz_pass"])


def stage_zvonkin(cfg: ExperimentConfig, outdir: Path, args) -> bool:
    b = _field(cfg, "b")
    sol_path = getattr(args, "solution", None)
    if sol_path:
        from .pde import ContractionBudget, MildSolutionGrid
        u, grad, header = load_solution_arrays(sol_path)
        bd = header["budget"]
        budget = ContractionBudget(C0=bd["C0"], t_star=bd["t_star"],
                                   n1b=bd["n1b"], n1f=bd["n1f"], table={})
        sol = MildSolutionGrid(dim=header["dim"], range_dim=header["range_dim"],
                               horizon=header["horizon"], box=header["box"],
                               u=u, grad_u=grad,
                               iterations=header["iterations"],
                               increments=[], u_increments=[], budget=budget)
    else:
        _, _, _, sol = _solve(cfg)
    paths_path = getattr(args, "paths", None)
    if paths_path:
        ens = load_ensemble(paths_path)
    else:
        mc = cfg.monte_carlo
        ens = simulate(b, np.zeros(cfg.dim), sol.horizon,
                       int(mc["steps"]), int(mc["paths"]), cfg.seed)
    zmap = build_zvonkin(sol, seed=cfg.seed)
    res = ito_residual(zmap, ens, b)
    report = {"c1": zmap.c1, "c2": zmap.c2, "residual": res}
    write_json(outdir / "zvonkin_report.json", report)
    return bool(res["pass"] and zmap.c1 >= 0.45 and zmap.c2 <= 1.55)


def stage_simulate(cfg: ExperimentConfig, outdir: Path, args) -> bool:
    b = _field(cfg, "b")
    mc = cfg.monte_carlo
    T = float(mc.get("T", cfg.horizon))
    ens = simulate(b, np.asarray(mc.get("x0", [0.0] * cfg.dim), dtype=float),
                   T, int(mc["steps"]), int(mc["paths"]), cfg.seed)
    save_ensemble(outdir / "paths.bin", ens)
    XT = ens.states[:, -1, :]
    report = {
        "mean_XT": XT.mean(axis=0).tolist(),
        "second_moment": float(np.mean(np.sum((XT - ens.start) ** 2, axis=1))),
        "n_paths": ens.n_paths, "dt": ens.dt,
    }
    ok = True
    t_check = mc.get("t_check")
    if t_check:
        env = density_envelope_check(ens, float(t_check))
        report["density_envelope"] = env
        ok = bool(env["pass"])
    write_json(outdir / "simulate_report.json", report)
    return ok


def stage_couple(cfg: ExperimentConfig, outdir: Path, args) -> bool:
    b = _field(cfg, "b")
    mc = cfg.monte_carlo
    T = float(mc.get("T", cfg.horizon))
    ladder = cfg.mollification_ladder
    pairs = [(n, m) for n, m in zip(ladder, ladder[2:])]
    entries = []
    bn_cache = {}

    def level(n):
        if n not in bn_cache:
            bn_cache[n] = mollify(b, n)
        return bn_cache[n]

    same = coupled_pair(level(ladder[0]), level(ladder[0]),
                        np.zeros(cfg.dim), T, int(mc["steps"]),
                        int(mc["paths"]), cfg.seed)
    entries.append({"n": ladder[0], "m": ladder[0], **same})
    for n, m in pairs:
        ent = coupled_pair(level(n), level(m), np.zeros(cfg.dim), T,
                           int(mc["steps"]), int(mc["paths"]), cfg.seed)
        entries.append({"n": n, "m": m, **ent})
    write_csv(outdir / "couple.csv", ["n", "m", "mean", "stderr"],
              [[e["n"], e["m"], f"{e['mean']:.12g}", f"{e['stderr']:.12g}"]
               for e in entries])
    means = [e["mean"] for e in entries[1:]]
    monotone = all(a > b2 for a, b2 in zip(means, means[1:]))
    report = {"entries": entries, "identical_zero": entries[0]["mean"] == 0.0,
              "monotone": monotone}
    write_json(outdir / "couple_report.json", report)
    return bool(report["identical_zero"] and (monotone or len(means) < 2))


def stage_krylov(cfg: ExperimentConfig, outdir: Path, args) -> bool:
    b = _field(cfg, "b")
    h = cfg.fields.get("h", b)
    mc = cfg.monte_carlo
    T = float(mc.get("T", cfg.horizon))
    ens = simulate(b, np.zeros(cfg.dim), T, int(mc["steps"]),
                   min(int(mc["paths"]), 4000), cfg.seed)
    table = krylov_functional_convergence(b, h, cfg.mollification_ladder, ens)
    write_csv(outdir / "krylov.csv", ["n", "mean", "stderr"],
              [[r["n"], f"{r['mean']:.12g}", f"{r['stderr']:.12g}"]
               for r in table["rows"]])
    write_json(outdir / "krylov_report.json", table)
    return bool(table["decreasing"])


_STAGES = {
    "certify": stage_certify,
    "maximal": stage_maximal,
    "solve-pde": stage_solve,
    "zvonkin": stage_zvonkin,
    "simulate": stage_simulate,
    "couple": stage_couple,
    "krylov": stage_krylov,
}


def run_pipeline(cfg: ExperimentConfig, outdir: Path, args) -> int:
    results = {}
    for stage in cfg.stages:
        if stage not in _STAGES:
            raise ConfigurationError(f"unknown pipeline stage {stage!r}")
        try:
            results[stage] = bool(_STAGES[stage](cfg, outdir, args))
        except KatoSdeError as exc:
            results[stage] = False
            write_json(outdir / "pipeline_report.json",
                       {"results": results, "failed_stage": stage,
                        "error": str(exc)})
            print(f"stage {stage} failed: {exc}", file=sys.stderr)
            return 1
    write_json(outdir / "pipeline_report.json", {"results": results,
                                                 "failed_stage": None})
    return 0 if all(results.values()) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kato-sde",
        description="Numerical laboratory for SDEs with Kato-class drift")
    parser.add_argument("command", choices=sorted(_STAGES) + ["pipeline"])
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--field", default=None, help="field name (maximal)")
    parser.add_argument("--R", type=float, default=None,
                        help="radius cap (maximal)")
    parser.add_argument("--solution", default=None,
                        help="existing solution lattice (zvonkin)")
    parser.add_argument("--paths", default=None,
                        help="existing path ensemble (zvonkin)")
    args = parser.parse_args(argv)

    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        if args.command == "pipeline":
            return run_pipeline(cfg, outdir, args)
        ok = _STAGES[args.command](cfg, outdir, args)
        if args.verbose:
            print(f"{args.command}: {'pass' if ok else 'fail'}")
        return 0 if ok else 1
    except (ConfigurationError, ValidationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except KatoSdeError as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
