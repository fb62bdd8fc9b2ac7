"""Steady wave resistance of the submerged spheroid with free-surface refinement.

Runs the shared residual with every time derivative set to zero, refines the
top fraction of free-surface cells by the Kelly indicator on the elevation and
re-solves from the interpolated state.  Writes one VTK file per cycle.

    python3 demos/steady_cycles.py [Fr] [cycles]
"""
import sys
from pathlib import Path

from towtank.adaptivity import run_cycles
from towtank.postproc import spheroid_lift, state_fields, write_vtk
from towtank.scenario import Scenario

fr = float(sys.argv[1]) if len(sys.argv) > 1 else 0.7
cycles = int(sys.argv[2]) if len(sys.argv) > 2 else 3

sc = Scenario()
sc.flow.Fr = fr
sc.mesh.curvature_cycles = 3
sc.domain.fs_grading = 0.5
sc.refinement.fraction = 0.2
out = Path("out/steady_demo")
out.mkdir(parents=True, exist_ok=True)
L0 = spheroid_lift(sc)


def report(rec, tank, y, yd):
    X, fields = state_fields(tank, y)
    write_vtk(tank.mesh, fields, out / f"cycle_{rec.cycle:02d}.vtk", nodes=X)
    print(f"cycle {rec.cycle}: {rec.nodes:5d} nodes, {rec.newton_iters} Newton its, "
          f"{rec.jacobians} Jacobian(s), R* = {rec.drag / L0:+.5f}, L* = {(rec.lift - L0) / L0:+.5f}")


run_cycles(sc, cycles, "steady", on_cycle=report)
print(f"VTK files in {out}/")
