"""Start from rest with a sin^2 ramp and compare against the steady answer.

    python3 demos/ramped_start.py [t_end] [t_ramp]

Prints R and L every 2.5 s, then the steady values on the same grid.
"""
import sys

import numpy as np

from towtank.dae import BdfIntegrator, NewtonConfig, steady_solve
from towtank.postproc import hull_forces
from towtank.scenario import Scenario
from towtank.tank import TowingTank

t_end = float(sys.argv[1]) if len(sys.argv) > 1 else 30.0
t_ramp = float(sys.argv[2]) if len(sys.argv) > 2 else 7.5

sc = Scenario()
sc.flow.Fr = 0.8
sc.mesh.curvature_cycles = 3
sc.domain.fs_grading = 0.5
sc.run.mode = "ramped"
sc.run.t_ramp = t_ramp

tank = TowingTank(sc, unsteady=True)
y0 = tank.rest_state()
integ = BdfIntegrator(tank, y0, np.zeros_like(y0), config=NewtonConfig(max_iter=10))
print(f"{tank.n} DOFs, dt = {sc.solver.dt} s")
k = 0
while integ.t < t_end - 1e-9:
    integ.step(sc.solver.dt)
    k += 1
    if k % 25 == 0:
        R, L = hull_forces(tank, integ.y, integ.yd, integ.t)
        print(f"t = {integ.t:6.2f} s   R = {R:10.2f} N   L = {L:11.1f} N")

steady = TowingTank(sc, tank.mesh, unsteady=False)
y, stats = steady_solve(steady, steady.rest_state())
R, L = hull_forces(steady, y, np.zeros_like(y), 0.0)
print(f"steady       R = {R:10.2f} N   L = {L:11.1f} N   ({stats.iterations} Newton iterations)")
