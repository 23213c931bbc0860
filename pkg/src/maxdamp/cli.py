"""Command-line driver: one experiment per invocation, bit-stable outputs.

    maxdamp <subcommand> --config <path> [--out <dir>] [--seed <u64>] [--jobs <k>]

Subcommands: check, simulate, split, observe, control, decay, project,
oracle.  Results go to CSV time series plus a JSON summary; errors are
reported as a machine-readable JSON object on stderr.  Exit codes: 0 pass,
2 hypothesis-check failure, 1 error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import decay as decay_mod
from . import helmholtz, observability, output
from .config import ConfigError, ExperimentConfig, read_config
from .evolution import FieldState, energies, simulate
from .grid import assemble_complex, build_grid
from .materials import MaterialPreset, SigmaSpec, check_nontrapping, check_sigma_gap, sample_materials


def build_problem(cfg: ExperimentConfig):
    grid = build_grid(cfg.grid.n, cfg.grid.length)
    cplx = assemble_complex(grid)
    eps = MaterialPreset(cfg.materials.epsilon_kind, cfg.materials.epsilon_params)
    mu = MaterialPreset(cfg.materials.mu_kind, cfg.materials.mu_params)
    sigma = SigmaSpec(cfg.sigma.sigma0, cfg.sigma.a, cfg.sigma.profile)
    assembly = sample_materials(grid, eps, mu, sigma, x0=cfg.materials.x0)
    return grid, cplx, assembly


def make_initial(cfg: ExperimentConfig, grid, cplx, assembly, seed=None) -> FieldState:
    kind = cfg.initial.kind
    rng = np.random.default_rng(cfg.initial.seed if seed is None else seed)
    amp = cfg.initial.amplitude
    if kind == "zero":
        return FieldState.zero(assembly)
    if kind == "random_raw":
        # raw electric field (charges anywhere) with an admissible magnetic
        # flux: magnetic charges are excluded by the model for any datum
        e = np.where(cplx.pec_edge_mask, rng.standard_normal(grid.edge_count), 0.0)
        b = cplx.Cw @ rng.standard_normal(grid.edge_count)
        st = FieldState.from_flux(e, b, assembly)
        E0, _ = energies(st, None, assembly)
        if E0 > 0:
            st = FieldState.from_flux(e * (amp / np.sqrt(E0)), b * (amp / np.sqrt(E0)), assembly)
        return st
    if kind in ("random_charge_free", "random_x"):
        e, h = observability.random_charge_free_pair(assembly, cplx, rng, normalize=False)
        return _normalized_state(e, h, assembly, amp)
    if kind == "kernel_plus_x":
        proj = decay_mod.KernelProjector(assembly, cplx)
        e_k = np.zeros(grid.edge_count)
        if proj.G_F is not None:
            e_k = proj.G_F @ rng.standard_normal(proj.free_nodes.size)
        h_k = cplx.Gf[:, 1:] @ rng.standard_normal(cplx.Gf.shape[1] - 1)
        ex, hx = observability.random_charge_free_pair(assembly, cplx, rng)
        kernel = _normalized_state(e_k, h_k, assembly, amp)
        return FieldState.from_fields(kernel.e + amp * ex, kernel.h + amp * hx, assembly)
    if kind == "bump":
        mids = grid.edge_midpoints()
        c = np.full(3, grid.length / 2)
        w = 0.1 * grid.length
        prof = np.exp(-((mids - c) ** 2).sum(axis=1) / w**2)
        e = np.zeros(grid.edge_count)
        sl = slice(0, grid.edge_count_per_axis)  # x-edges only
        e[sl] = prof[sl]
        e = np.where(cplx.pec_edge_mask, e, 0.0)
        e = helmholtz.PotentialSolver(assembly, cplx).project_charge_free(e)
        return _normalized_state(e, np.zeros(grid.face_count), assembly, amp)
    if kind == "gradient":
        p0 = np.zeros(grid.node_count)
        p0[cplx.interior_node_mask] = rng.standard_normal(int(cplx.interior_node_mask.sum()))
        e = cplx.G @ p0
        return _normalized_state(e, np.zeros(grid.face_count), assembly, amp)
    raise ConfigError(f"unknown initial.kind {kind!r}", key="initial.kind")


def _normalized_state(e, h, assembly, amplitude) -> FieldState:
    nrm = np.sqrt(float(e @ (assembly.M_eps @ e)) + float(h @ (assembly.M_mu @ h)))
    if nrm > 0:
        e = e * (amplitude / nrm)
        h = h * (amplitude / nrm)
    return FieldState.from_fields(e, h, assembly)


# --- subcommands ------------------------------------------------------------


def cmd_check(cfg, outdir, seed, jobs):
    grid, cplx, assembly = build_problem(cfg)
    eps = MaterialPreset(cfg.materials.epsilon_kind, cfg.materials.epsilon_params)
    mu = MaterialPreset(cfg.materials.mu_kind, cfg.materials.mu_params)
    ntr = check_nontrapping(eps, mu, cfg.materials.x0, grid)
    gap = check_sigma_gap(assembly, cfg.sigma.sigma0)
    summary = {
        "subcommand": "check",
        "eta_eps": ntr.eta_eps,
        "eta_mu": ntr.eta_mu,
        "worst_point": list(ntr.worst_point),
        "nontrapping_pass": ntr.passes,
        "sigma_gap_pass": gap.passes,
        "undamped": gap.undamped,
        "offending_cells": [int(c) for c in gap.offending_cells[:16]],
    }
    code = 0 if (ntr.passes and gap.passes) else 2
    return code, summary, None


def cmd_simulate(cfg, outdir, seed, jobs):
    grid, cplx, assembly = build_problem(cfg)
    state0 = make_initial(cfg, grid, cplx, assembly, seed)
    res = simulate(
        state0,
        assembly,
        cplx,
        cfg.time.dt,
        cfg.time.T,
        scheme=cfg.time.scheme,
        record_every=cfg.time.record_every,
        solver_tol=cfg.solver.tol,
        max_iter=cfg.solver.max_iter,
    )
    bE, bD = res.series.max_balance_residuals()
    E = res.series.energy
    summary = {
        "subcommand": "simulate",
        "energy_initial": E[0],
        "energy_final": E[-1],
        "dissipation_total": res.series.dissipation_cum[-1],
        "max_balance_residual_E": bE,
        "max_balance_residual_D": bD,
        "charge_upsilon_max": float(np.max(res.series.charge_upsilon)),
        "charge_total_max": float(np.max(res.series.charge_total)),
    }
    if cfg.output.snapshots:
        output.write_snapshot(outdir, "final_e", "edge", res.state.e, grid, res.state.t)
        output.write_snapshot(outdir, "final_h", "face", res.state.h, grid, res.state.t)
    return 0, summary, res.series


def cmd_split(cfg, outdir, seed, jobs):
    grid, cplx, assembly = build_problem(cfg)
    state0 = make_initial(cfg, grid, cplx, assembly, seed)
    split = helmholtz.run_split(
        state0,
        assembly,
        cplx,
        cfg.time.dt,
        cfg.time.T,
        record_every=cfg.time.record_every,
        solver_tol=cfg.solver.tol,
    )
    series = split.full.series
    series.split_residual[:] = split.residuals
    summary = {
        "subcommand": "split",
        "max_split_residual": float(np.max(split.residuals)),
        "init_derivative_norm": split.init_derivative_norm,
        "hom_denergy_drift": float(
            abs(split.hom.series.denergy[-1] - split.hom.series.denergy[0])
            / max(split.hom.series.denergy[0], 1e-300)
        ),
    }
    return 0, summary, series


def cmd_observe(cfg, outdir, seed, jobs):
    grid, cplx, assembly = build_problem(cfg)
    seed_val = cfg.observe.seed if seed is None else seed

    def one(T):
        return observability.estimate_obs_constant(
            assembly,
            cplx,
            T=T,
            a=cfg.observe.a,
            iters=cfg.observe.iters,
            seed=seed_val,
            solver_tol=cfg.solver.tol,
        )
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(one, cfg.observe.horizons))
    else:
        reports = [one(T) for T in cfg.observe.horizons]
    if cfg.output.snapshots:
        for r in reports:
            tag = f"worst_T{r.T:g}".replace(".", "p")
            output.write_snapshot(outdir, tag + "_e", "edge", r.worst_e, grid, 0.0)
            output.write_snapshot(outdir, tag + "_h", "face", r.worst_h, grid, 0.0)
    summary = {
        "subcommand": "observe",
        "a": cfg.observe.a,
        "horizons": [
            {
                "T": r.T,
                "c_obs": r.c_obs,
                "lambda_min": r.lambda_min,
                "lambda_max": r.lambda_max,
                "observable": r.observable,
                "applies": r.iterations,
            }
            for r in reports
        ],
    }
    return 0, summary, None


def cmd_control(cfg, outdir, seed, jobs):
    grid, cplx, assembly = build_problem(cfg)
    rng = np.random.default_rng(cfg.control.seed if seed is None else seed)
    asm0 = helmholtz.sigma_free(assembly)
    if cfg.control.target == "zero":
        target = (np.zeros(grid.edge_count), np.zeros(grid.face_count))
    elif cfg.control.target == "random_charge_free":
        target = observability.random_charge_free_pair(asm0, cplx, rng)
    elif cfg.control.target == "reachable":
        z = observability.random_charge_free_pair(asm0, cplx, rng)
        g = observability.Gramian(assembly, cplx, cfg.control.T, cfg.time.dt, cfg.control.a)
        target = g.evolve(z)
    else:
        raise ConfigError(f"unknown control.target {cfg.control.target!r}", key="control.target")
    ctl = observability.hum_control(
        target,
        assembly,
        cplx,
        T=cfg.control.T,
        a=cfg.control.a,
        tol=cfg.control.tol,
        dt=cfg.time.dt,
        solver_tol=cfg.solver.tol,
    )
    summary = {
        "subcommand": "control",
        "relative_miss": ctl.relative_miss,
        "cg_iterations": ctl.cg_iterations,
        "cg_residual": ctl.cg_residual,
        "control_norm": ctl.control_norm,
        "max_divergence": ctl.max_divergence,
        "T": cfg.control.T,
        "a": cfg.control.a,
    }
    return 0, summary, None


def cmd_decay(cfg, outdir, seed, jobs):
    grid, cplx, assembly = build_problem(cfg)
    state0 = make_initial(cfg, grid, cplx, assembly, seed)
    window = None if cfg.decay.window == (0.0, 0.0) else cfg.decay.window
    report = decay_mod.run_decay_analysis(
        state0,
        assembly,
        cplx,
        cfg.time.dt,
        cfg.time.T,
        gamma_horizons=cfg.decay.T_list,
        window=window,
        record_every=cfg.time.record_every,
        sigma0=cfg.sigma.sigma0,
        solver_tol=cfg.solver.tol,
    )
    summary = {
        "subcommand": "decay",
        "omega_fit": report.omega_fit,
        "M_fit": report.M_fit,
        "window": list(report.window),
        "envelope_ok": report.envelope_ok,
        "gamma_table": [{"T": T, "gamma": g} for T, g in report.gamma_table],
        "ratio_ED": report.ratio_ED,
        "ratio_hypothesis_violation": report.ratio_hypothesis_violation,
        "dtH_constant": report.dtH_constant,
    }
    return 0, summary, report.result.series


def cmd_project(cfg, outdir, seed, jobs):
    grid, cplx, assembly = build_problem(cfg)
    state0 = make_initial(cfg, grid, cplx, assembly, seed)
    kp = decay_mod.KernelProjector(assembly, cplx)
    proj = kp.apply(state0.e, state0.h)
    twice = kp.apply(proj.e_part, proj.h_part)
    idem = np.sqrt(
        float((twice.e_part - proj.e_part) @ (assembly.M_eps @ (twice.e_part - proj.e_part)))
        + float((twice.h_part - proj.h_part) @ (assembly.M_mu @ (twice.h_part - proj.h_part)))
    )
    re = state0.e - proj.e_part
    rh = state0.h - proj.h_part
    cross = float(re @ (assembly.M_eps @ proj.e_part) + rh @ (assembly.M_mu @ proj.h_part))
    pnorm = np.sqrt(
        float(proj.e_part @ (assembly.M_eps @ proj.e_part))
        + float(proj.h_part @ (assembly.M_mu @ proj.h_part))
    )
    summary = {
        "subcommand": "project",
        "kernel_dim_e": proj.kernel_dim_e,
        "kernel_dim_h": proj.kernel_dim_h,
        "kernel_dim": proj.kernel_dim,
        "curl_residual": proj.curl_residual,
        "collar_residual": proj.collar_residual,
        "idempotence_residual": idem,
        "orthogonality": cross,
        "projection_norm": pnorm,
    }
    return 0, summary, None


def cmd_oracle(cfg, outdir, seed, jobs):
    grid, cplx, assembly = build_problem(cfg)
    orc = decay_mod.dense_oracle(assembly, cplx)
    state0 = make_initial(cfg, grid, cplx, assembly, seed)
    from .evolution import MidpointStepper

    stepper = MidpointStepper(assembly, cplx, cfg.time.dt, solver_tol=1e-14)
    s = state0
    ec, hc = state0.e.copy(), state0.h.copy()
    dev = 0.0
    for _ in range(10):
        s, _ = stepper.step(s)
        ec, hc = orc.cayley_step(ec, hc, cfg.time.dt)
        dev = max(dev, float(np.linalg.norm(s.e - ec) + np.linalg.norm(s.h - hc)))
    summary = {
        "subcommand": "oracle",
        "dofs": int(orc.A.shape[0]),
        "kernel_dim": orc.kernel_dim,
        "predicted_kernel_dim": decay_mod.predicted_kernel_dim(assembly, cplx),
        "spectral_abscissa": orc.spectral_abscissa,
        "max_real_part": float(np.max(orc.eigenvalues.real)),
        "cayley_deviation": dev,
    }
    return 0, summary, None


_COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "split": cmd_split,
    "observe": cmd_observe,
    "control": cmd_control,
    "decay": cmd_decay,
    "project": cmd_project,
    "oracle": cmd_oracle,
}


def run_cli(argv) -> int:
    parser = argparse.ArgumentParser(prog="maxdamp", description=__doc__)
    parser.add_argument("subcommand", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=1)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        cfg = read_config(args.config)
        outdir = args.out or os.environ.get("MAXDAMP_OUT") or cfg.output.directory
        os.makedirs(outdir, exist_ok=True)
        code, summary, series = _COMMANDS[args.subcommand](cfg, outdir, args.seed, max(args.jobs, 1))
        summary["config_digest"] = output.config_digest(cfg.raw_text)
        summary["exit_code"] = code
        if series is not None and "csv" in cfg.output.formats:
            csv_path = os.path.join(outdir, f"{args.subcommand}.csv")
            output.write_csv(csv_path, series)
            summary["csv"] = os.path.basename(csv_path)
        if "json" in cfg.output.formats:
            output.write_summary(os.path.join(outdir, f"{args.subcommand}.summary.json"), summary)
        return code
    except Exception as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
