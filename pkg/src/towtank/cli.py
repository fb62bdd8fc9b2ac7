"""Command line driver: ``towtank --scenario case.ini --mode steady --cycles 4``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .bem import BemError
from .dae import NewtonError
from .mesh import MeshError
from .postproc import (ForceRecord, OutputError, ensure_dir, hull_forces, spheroid_lift, state_fields,
                       write_cycle_table, write_force_history, write_vtk)
from .scenario import Scenario, ScenarioError, parse_scenario

log = logging.getLogger("towtank")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def build_parser():
    p = argparse.ArgumentParser(prog="towtank", description="Fully nonlinear potential-flow towing tank.")
    p.add_argument("--scenario", type=Path, help="scenario file (defaults apply when omitted)")
    p.add_argument("--mode", choices=["steady", "unsteady", "ramped"])
    p.add_argument("--cycles", type=int, help="number of elevation refinement cycles")
    p.add_argument("--dt", type=float, help="time step (s)")
    p.add_argument("--t-end", type=float, dest="t_end", help="final time (s)")
    p.add_argument("--output-dir", dest="output_dir", help="directory for VTK, CSV and the run log")
    p.add_argument("--threads", type=int, help="threads used by the BEM assembly")
    p.add_argument("--dump-matrices", action="store_true", dest="dump_matrices",
                   help="write the BEM matrices of the first configuration to matrices.npz")
    return p


def apply_overrides(sc: Scenario, args) -> Scenario:
    if args.mode is not None:
        sc.run.mode = args.mode
    if args.cycles is not None:
        if args.cycles < 0:
            raise ScenarioError("--cycles must be >= 0")
        sc.refinement.cycles = args.cycles
    if args.dt is not None:
        if args.dt <= 0:
            raise ScenarioError("--dt must be positive")
        sc.solver.dt = args.dt
    if args.t_end is not None:
        sc.run.t_end = args.t_end
    if args.output_dir is not None:
        sc.run.output_dir = args.output_dir
    if args.threads is not None:
        if args.threads < 1:
            raise ScenarioError("--threads must be >= 1")
        sc.run.threads = args.threads
    return sc.validate()


def _set_threads(n):
    try:
        import numba
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except (ImportError, ValueError):  # pragma: no cover
        pass


def _dump_matrices(tank, path):
    X, B, _, _ = tank.bem_matrices(tank.rest_state()[2 * tank.n:])
    try:
        np.savez(path, N=B.N, D=B.D, alpha=B.alpha, nodes=X)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def run(sc: Scenario, dump_matrices=False):
    """Run a validated scenario and write its artifacts; returns the cycle records."""
    from .adaptivity import run_cycles
    from .domain import build_domain_mesh
    from .tank import TowingTank

    out = Path(sc.run.output_dir)
    steady = sc.run.mode == "steady"
    L0 = spheroid_lift(sc)
    stride = max(1, sc.run.snapshot_stride)
    forces_path = out / "forces.csv"
    write_force_history([], forces_path)
    step_count = [0]
    tank_time = [0.0]

    def snapshot(tank, y, name):
        X, fields = state_fields(tank, y)
        write_vtk(tank.mesh, fields, out / name, nodes=X)

    def on_cycle(rec, tank, y, yd):
        if steady:  # the t column holds the cycle index
            snapshot(tank, y, f"cycle_{rec.cycle:02d}.vtk")
            write_force_history([ForceRecord(rec.cycle, rec.drag, rec.lift, L0)], forces_path, append=True)
        else:
            snapshot(tank, y, f"cycle_{rec.cycle:02d}_t{tank_time[0]:09.4f}.vtk")

    def on_step(tank, integ):
        step_count[0] += 1
        tank_time[0] = integ.t
        R, L = hull_forces(tank, integ.y, integ.yd, integ.t)
        write_force_history([ForceRecord(integ.t, R, L, L0)], forces_path, append=True)
        if step_count[0] % stride == 0:
            snapshot(tank, integ.y, f"step_{step_count[0]:06d}.vtk")

    mesh = build_domain_mesh(sc)
    log.info("mesh: %d nodes, %d cells", mesh.n_nodes, mesh.n_cells)
    if dump_matrices:
        _dump_matrices(TowingTank(sc, mesh, unsteady=not steady), out / "matrices.npz")
    records, tank, y, yd = run_cycles(sc, sc.refinement.cycles, sc.run.mode, mesh=mesh,
                                      on_cycle=on_cycle, on_step=None if steady else on_step)
    write_cycle_table(records, out / "cycles.csv")
    return records


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = parse_scenario(args.scenario) if args.scenario is not None else Scenario()
        sc = apply_overrides(sc, args)
    except ScenarioError as exc:
        print(f"towtank: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        ensure_dir(sc.run.output_dir)
        handler = logging.FileHandler(Path(sc.run.output_dir) / "run.log", mode="w")
    except OSError as exc:
        print(f"towtank: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    _set_threads(sc.run.threads)
    stage = "setup"
    t0 = time.perf_counter()
    try:
        log.info("scenario: mode=%s Fr=%.4f U=%.4f cycles=%d", sc.run.mode, sc.Fr, sc.U, sc.refinement.cycles)
        stage = "solve"
        run(sc, dump_matrices=args.dump_matrices)
        log.info("finished in %.1f s", time.perf_counter() - t0)
        return EXIT_OK
    except (NewtonError, BemError, MeshError, np.linalg.LinAlgError) as exc:
        log.error("solver failure during %s: %s", stage, exc)
        print(f"towtank: solver failure during {stage}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        log.error("I/O failure during %s: %s", stage, exc)
        print(f"towtank: I/O failure during {stage}: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        root.removeHandler(handler)
        handler.close()


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
