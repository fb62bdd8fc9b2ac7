"""Scenario description and the ``key = value`` scenario file format.

A scenario file is line oriented::

    # comment
    [flow]
    Fr = 0.7          # or U = 2.9714
    a = 0.02
    lambda = 40

    [run]
    mode = ramped

Keys may also be written with a dotted prefix (``flow.Fr = 0.3``) outside
of any section.  Unknown sections or keys are rejected with the line number.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

G = 9.81


class ScenarioError(ValueError):
    pass


@dataclass
class HullSpec:
    length: float = 10.0
    radius: float = 1.0
    submergence: float = 2.5  # depth of the axis below z = 0


@dataclass
class FlowSpec:
    U: float | None = None
    Fr: float | None = None
    a: float = 0.0
    wavelength: float | None = None
    k: float | None = None
    depth: float = 50.0
    rho: float = 1000.0


@dataclass
class DomainSpec:
    upstream: float = 15.0  # multiples of L
    downstream: float = 15.0
    width: float = 10.0
    fs_cell: float = 25.0  # coarse cell size on the outer boundary (m)
    fs_min_cell: float = 6.25  # finest free-surface cell near the hull (m)
    fs_grading: float = 0.35  # growth of the target size with distance
    wall_cell: float = 25.0


@dataclass
class BeachSpec:
    x_d: float = 50.0
    L_d: float = 100.0
    strength: float = 10.0  # m/s, scales the damping pressure


@dataclass
class MeshSpec:
    curvature_cycles: int = 7
    curvature_angle: float = 15.0  # degrees
    max_diagonal: float = 1.5  # m, hull cells above this are refined
    aspect_ratio: float = 3.5
    aspect_cycles: int = 3


@dataclass
class SolverSpec:
    rtol: float = 1e-5
    atol: float = 1e-10
    max_iter: int = 12
    bdf_order: int = 2
    dt: float = 0.1
    dt_min: float = 1e-4
    dt_max: float = 1.0
    tau: float = 0.5  # SUPG length as a fraction of the cell diagonal
    gauss_far: int = 4
    gauss_near: int = 8
    gauss_singular: int = 6
    near_factor: float = 2.0
    fem_order: int = 3
    jacobian: str = "finite-difference"


@dataclass
class RefinementSpec:
    cycles: int = 0
    fraction: float = 0.04


@dataclass
class RunSpec:
    mode: str = "steady"
    t_ramp: float = 7.5
    t_end: float = 60.0
    output_dir: str = "output"
    snapshot_stride: int = 10
    threads: int = 1


@dataclass
class Scenario:
    hull: HullSpec = field(default_factory=HullSpec)
    flow: FlowSpec = field(default_factory=FlowSpec)
    domain: DomainSpec = field(default_factory=DomainSpec)
    beach: BeachSpec = field(default_factory=BeachSpec)
    mesh: MeshSpec = field(default_factory=MeshSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    refinement: RefinementSpec = field(default_factory=RefinementSpec)
    run: RunSpec = field(default_factory=RunSpec)

    # ---- derived quantities -------------------------------------------
    @property
    def U(self) -> float:
        if self.flow.U is not None:
            return float(self.flow.U)
        fr = 0.7 if self.flow.Fr is None else self.flow.Fr
        return float(fr * np.sqrt(G * self.hull.length))

    @property
    def Fr(self) -> float:
        return self.U / np.sqrt(G * self.hull.length)

    @property
    def k(self) -> float:
        if self.flow.k is not None:
            return float(self.flow.k)
        if self.flow.wavelength is not None:
            return 2.0 * np.pi / self.flow.wavelength
        return 0.0

    @property
    def x_min(self):
        return -self.domain.upstream * self.hull.length

    @property
    def x_max(self):
        return self.domain.downstream * self.hull.length

    @property
    def half_width(self):
        return 0.5 * self.domain.width * self.hull.length

    def validate(self):
        h, f = self.hull, self.flow
        if f.U is not None and f.Fr is not None:
            raise ScenarioError("give only one of flow.U and flow.Fr")
        if h.length <= 0 or h.radius <= 0:
            raise ScenarioError("hull length and radius must be positive")
        if h.submergence <= h.radius:
            raise ScenarioError(
                f"hull pierces the free surface: submergence {h.submergence} <= radius {h.radius}")
        if h.submergence + h.radius >= f.depth:
            raise ScenarioError("hull touches the bottom")
        if f.a < 0:
            raise ScenarioError("wave amplitude must be >= 0")
        if f.a > 0 and self.k <= 0:
            raise ScenarioError("wave amplitude given without a positive wavelength")
        if self.beach.x_d <= 0 or self.beach.L_d <= 0:
            raise ScenarioError("beach x_d and L_d must be positive")
        if self.run.mode not in ("steady", "unsteady", "ramped"):
            raise ScenarioError(f"unknown run mode {self.run.mode!r}")
        if self.run.mode != "steady" and self.run.t_end <= 0:
            raise ScenarioError("t_end must be positive for unsteady runs")
        if not 0 < self.refinement.fraction <= 1:
            raise ScenarioError("refinement fraction must be in (0, 1]")
        if self.solver.bdf_order not in (1, 2):
            raise ScenarioError("bdf_order must be 1 or 2")
        if self.solver.rtol <= 0:
            raise ScenarioError("solver tolerance must be positive")
        return self


# aliases accepted in scenario files
_ALIASES = {("flow", "lambda"): "wavelength", ("hull", "f"): "submergence",
            ("hull", "L"): "length", ("flow", "h"): "depth"}


def _convert(value: str, typ, where: str):
    value = value.strip()
    base = typ
    if isinstance(typ, str):
        base = typ.replace(" | None", "").strip()
    try:
        if base in ("float", float):
            return float(value)
        if base in ("int", int):
            return int(value)
        if base in ("str", str):
            return value.strip('"').strip("'")
    except ValueError as exc:
        raise ScenarioError(f"{where}: cannot parse {value!r} as {base}") from exc
    raise ScenarioError(f"{where}: unsupported field type {typ}")


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    return parse_scenario_text(text, str(path))


def parse_scenario_text(text: str, name: str = "<scenario>") -> Scenario:
    sc = Scenario()
    sections = {f.name: getattr(sc, f.name) for f in dataclasses.fields(sc)}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        where = f"{name}:{lineno}"
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in sections:
                raise ScenarioError(f"{where}: unknown section [{current}]")
            continue
        if "=" not in line:
            raise ScenarioError(f"{where}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        sect = current
        if "." in key:
            sect, key = key.split(".", 1)
        if sect is None or sect not in sections:
            raise ScenarioError(f"{where}: key {key!r} outside a known section")
        key = _ALIASES.get((sect, key), key)
        obj = sections[sect]
        types = {f.name: f.type for f in dataclasses.fields(obj)}
        if key not in types:
            raise ScenarioError(f"{where}: unknown key {sect}.{key}")
        setattr(obj, key, _convert(value, types[key], where))
    return sc.validate()
