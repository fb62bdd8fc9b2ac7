import numpy as np
import pytest

from towtank.domain import box_mesh
from towtank.scenario import Scenario


def coarse_scenario(**flow):
    """The spheroid campaign on a mesh small enough for unit tests (about 550 DOFs)."""
    sc = Scenario()
    sc.mesh.curvature_cycles = 3
    sc.domain.fs_min_cell = 6.25
    sc.domain.fs_grading = 0.5
    for k, v in flow.items():
        setattr(sc.flow, k, v)
    return sc


def flat_patch(nx=2, ny=2, size=1.0):
    """Only the top face (z = 1) of a box, as a standalone free-surface patch."""
    from towtank.mesh import Region, SurfaceMesh

    box = box_mesh(hi=(size * nx, size * ny, 1.0), n=(nx, ny, 1))
    top = box.cells_of(5)
    used = np.unique(box.cells[top])
    remap = -np.ones(box.n_nodes, dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes = box.nodes[used].copy()
    nodes[:, 2] = 0.0
    return SurfaceMesh(nodes, remap[box.cells[top]], np.full(len(top), Region.FREE_SURFACE))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def coarse_tank():
    from towtank.tank import TowingTank

    return TowingTank(coarse_scenario(Fr=0.7), unsteady=False)


@pytest.fixture
def acceptance(request, capsys):
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def report(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
