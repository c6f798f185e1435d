"""Command-line entry point: ``ksrobust {solve,robust,rsc,mms} --config FILE [--out DIR]``.

Exit status: 0 on success or convergence, 2 when an iteration stops without
converging (cap reached or line search stalled), 1 on any error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adjoint import CoupledSolveConfig
from .errors import KSError
from .fem import build_mesh, indicator_mask
from .forward import ForwardProblem, solve_forward
from .io import (
    COMMANDS,
    RunConfig,
    SpaceTimeField,
    desired_state,
    initial_datum,
    parse_config,
    serialize_config,
    write_field_csv,
    write_report_csv,
    write_table_csv,
)
from .mms import convergence_table, reference_case
from .robust import run_robust
from .stackelberg import RscConfig, run_rsc

log = logging.getLogger("ksrobust")

EXIT_OK, EXIT_ERROR, EXIT_MAXITER = 0, 1, 2


def _coupled_cfg(cfg: RunConfig) -> CoupledSolveConfig:
    return CoupledSolveConfig(cfg.ell, cfg.gamma, cfg.O, cfg.O_d, cfg.theta,
                              cfg.picard_tol, cfg.picard_max, cfg.relaxation)


def _write_fields(out: Path, mesh, grid, stride, **fields):
    for name, values in fields.items():
        if values is not None:
            write_field_csv(SpaceTimeField.on(values, mesh, grid), out / f"{name}.csv", stride)


def run_command(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg))
    mesh = build_mesh(cfg.L, cfg.n_elems)
    grid = cfg.grid

    if cfg.command == "solve":
        prob = ForwardProblem(mesh, grid, initial_datum(cfg.u0, mesh), cfg.theta)
        u, w = solve_forward(prob)
        _write_fields(out, mesh, grid, cfg.stride, u=u, w=w)
        log.info("solved %d steps, max |u(T)| = %.6g", grid.n_steps, float(np.abs(u[-1]).max()))
        return EXIT_OK

    if cfg.command == "robust":
        u_d = desired_state(cfg.u_d, mesh, grid)
        state, report = run_robust(mesh, grid, initial_datum(cfg.u0, mesh), None, u_d, _coupled_cfg(cfg),
                                   tol=cfg.tol, max_iter=cfg.max_iter, omega=cfg.omega)
        write_report_csv(report, out / "report.csv")
        _write_fields(out, mesh, grid, cfg.stride, u=state.u, z=state.z, v=state.v, psi=state.psi)
        log.info("robust: %s after %d iterations (|grad| = %.3e)", report.reason, state.k, state.grad_norm)
        return EXIT_OK if report.converged else EXIT_MAXITER

    if cfg.command == "rsc":
        rsc = RscConfig(cfg.beta, _coupled_cfg(cfg), cfg.omega, cfg.tol, cfg.rtol, cfg.max_iter,
                        continuation=cfg.continuation)
        # u_d is the target trajectory (zero) unless a preset is named
        u_d = None if cfg.u_d == "zero" else desired_state(cfg.u_d, mesh, grid)
        state, report = run_rsc(mesh, grid, initial_datum(cfg.u0, mesh), u_d, rsc)
        write_report_csv(report, out / "report.csv")
        v = np.where(indicator_mask(mesh, cfg.O), -state.z / cfg.ell**2, 0.0)
        _write_fields(out, mesh, grid, cfg.stride, h=state.h, u=state.u, z=state.z, v=v,
                      psi=state.z / cfg.gamma**2, phi1=state.phi1, phi2=state.phi2)
        log.info("rsc: %s, terminal error %.6e", report.reason, state.terminal_error)
        return EXIT_OK if report.converged else EXIT_MAXITER

    if cfg.command == "mms":
        n_list = cfg.n_list or (cfg.n_elems,)
        dt_list = cfg.dt_list or (cfg.dt,)
        case = replace(reference_case(), T=cfg.T) if cfg.T != 1.0 else reference_case()
        rows = convergence_table(case, dt_list, n_list, cfg.theta)
        write_table_csv(rows, out / "mms_table.csv")
        for r in rows:
            log.info("dt=%g n=%d linf=%.3e l2=%.3e %s", r.dt, r.n_elems, r.linf_error, r.l2_error, r.failure or "")
        return EXIT_ERROR if any(r.failure for r in rows) else EXIT_OK

    raise ValueError(f"unknown command {cfg.command!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ksrobust", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path, help="flat key=value file")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides 'out' in the config)")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = parse_config(args.config.read_text(), command=args.command)
        if args.out is not None:
            cfg = replace(cfg, out=str(args.out))
        return run_command(cfg, Path(cfg.out))
    except (KSError, ValueError, OSError) as exc:
        log.error("error: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
