"""Problem definitions for density-based topology optimization.

Grids are structured and made of unit squares (2D) or unit cubes (3D).
Nodes are numbered column-major with the row index counted from the top
edge, the convention of the 88-line MATLAB code::

    node(ix, iy, iz) = iz * (nx + 1) * (ny + 1) + ix * (ny + 1) + iy

and elements follow the same pattern with ``nx, ny`` in place of
``nx + 1, ny + 1``. Each node carries 2 (2D) or 3 (3D) displacement dofs
ordered x, y[, z], with y pointing *up*.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

X, Y, Z = 0, 1, 2


@dataclass(frozen=True)
class GridSpec:
    """Structured grid of ``nx * ny * nz`` unit elements (``nz == 1`` is 2D)."""

    nx: int
    ny: int
    nz: int = 1

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    element_size = 1.0

    @property
    def ndim(self) -> int:
        return 2 if self.nz == 1 else 3

    @property
    def shape(self) -> tuple:
        """Element-array shape in storage order ``(nz, nx, ny)`` (3D) or ``(nx, ny)``."""
        if self.ndim == 2:
            return (self.nx, self.ny)
        return (self.nz, self.nx, self.ny)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def n_nodes(self) -> int:
        if self.ndim == 2:
            return (self.nx + 1) * (self.ny + 1)
        return (self.nx + 1) * (self.ny + 1) * (self.nz + 1)

    @property
    def dofs_per_node(self) -> int:
        return self.ndim

    @property
    def n_dofs(self) -> int:
        return self.dofs_per_node * self.n_nodes

    def node(self, ix, iy, iz=0):
        """Node number(s) for grid coordinates; ``iy`` counts rows from the top."""
        ix, iy, iz = np.asarray(ix), np.asarray(iy), np.asarray(iz)
        return iz * (self.nx + 1) * (self.ny + 1) + ix * (self.ny + 1) + iy

    def dof(self, node, component):
        return self.dofs_per_node * np.asarray(node) + component


@dataclass(frozen=True)
class MaterialSpec:
    young_modulus_solid: float = 1.0
    young_modulus_void: float = 1e-9
    poisson_ratio: float = 0.3
    penalization: float = 3.0

    def __post_init__(self):
        if not self.young_modulus_solid > self.young_modulus_void >= 0:
            raise ValueError("need young_modulus_solid > young_modulus_void >= 0")
        if not 0 < self.poisson_ratio < 0.5:
            raise ValueError(f"poisson_ratio must lie in (0, 0.5), got {self.poisson_ratio}")
        if self.penalization < 1:
            raise ValueError(f"penalization must be >= 1, got {self.penalization}")


@dataclass(frozen=True)
class LoadCase:
    """Point loads ``(dof, magnitude)`` and the constrained dofs of one analysis."""

    forces: tuple
    fixed_dofs: tuple

    def __post_init__(self):
        forces = tuple((int(d), float(v)) for d, v in self.forces)
        fixed = tuple(sorted({int(d) for d in self.fixed_dofs}))
        object.__setattr__(self, "forces", forces)
        object.__setattr__(self, "fixed_dofs", fixed)

    def force_vector(self, n_dofs: int) -> np.ndarray:
        f = np.zeros(n_dofs)
        for dof, value in self.forces:
            f[dof] += value
        return f


@dataclass(frozen=True)
class SpringAttachment:
    dof: int
    stiffness: float

    def __post_init__(self):
        if self.stiffness < 0:
            raise ValueError(f"spring stiffness must be >= 0, got {self.stiffness}")


class ObjectiveKind(str, enum.Enum):
    MIN_COMPLIANCE = "min_compliance"
    MAX_GEOMETRIC_ADVANTAGE = "max_geometric_advantage"


FILTER_KINDS = ("gaussian", "hat", "close", "none")


@dataclass(frozen=True)
class FilterConfig:
    """Density and sensitivity regularization settings.

    ``gaussian`` uses ``sigma = sigma_ratio * radius`` truncated at
    ``truncation_ratio * radius``. ``hat`` is the linear cone weight of the
    88-line code (for sensitivities: its density-weighted heuristic).
    ``close`` is a grayscale morphological closing (sensitivities only).
    """

    density_radius: float = 1.1
    sensitivity_radius: float = 0.55
    density_kind: str = "gaussian"
    sensitivity_kind: str = "gaussian"
    sigma_ratio: float = 0.5
    truncation_ratio: float = 1.0
    close_composite: bool = True

    def __post_init__(self):
        if self.density_radius < 0 or self.sensitivity_radius < 0:
            raise ValueError("filter radii must be >= 0")
        if self.density_kind not in ("gaussian", "hat", "none"):
            raise ValueError(f"unknown density filter kind {self.density_kind!r}")
        if self.sensitivity_kind not in FILTER_KINDS:
            raise ValueError(f"unknown sensitivity filter kind {self.sensitivity_kind!r}")
        if self.sigma_ratio <= 0 or self.truncation_ratio <= 0:
            raise ValueError("sigma_ratio and truncation_ratio must be positive")


@dataclass(frozen=True)
class OptimizerConfig:
    clip_multiplier: float = 5.0
    delta_upper: float = 0.3
    delta_lower: float = 0.3
    max_iter: int = 200
    tol: float = 0.01
    clip_before_filter: bool = False
    move_limit: float = 0.2
    oc_damping: float = 0.5

    def __post_init__(self):
        if self.clip_multiplier <= 0:
            raise ValueError("clip_multiplier must be positive")
        if self.delta_upper < 0 or self.delta_lower < 0:
            raise ValueError("suppression thresholds must be >= 0")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0 < self.move_limit <= 1:
            raise ValueError("move_limit must lie in (0, 1]")


@dataclass(frozen=True)
class ProblemDefinition:
    grid: GridSpec
    material: MaterialSpec
    load_cases: tuple
    volume_fraction: float
    objective_kind: ObjectiveKind = ObjectiveKind.MIN_COMPLIANCE
    springs: tuple = ()
    input_dof: Optional[int] = None
    output_dof: Optional[int] = None
    # k_o enters the geometric-advantage formula; it is not added to K
    output_spring: Optional[SpringAttachment] = None
    filter_config: FilterConfig = field(default_factory=FilterConfig)
    optimizer_config: OptimizerConfig = field(default_factory=OptimizerConfig)
    baseline_filter_config: FilterConfig = field(
        default_factory=lambda: FilterConfig(2.4, 2.4, "none", "hat"))
    name: str = "custom"

    x_min = 0.0
    x_max = 1.0

    def __post_init__(self):
        object.__setattr__(self, "objective_kind", ObjectiveKind(self.objective_kind))
        object.__setattr__(self, "load_cases", tuple(self.load_cases))
        object.__setattr__(self, "springs", tuple(self.springs))
        if not 0 < self.volume_fraction < 1:
            raise ValueError(f"volume_fraction must lie in (0, 1), got {self.volume_fraction}")
        n_dofs = self.grid.n_dofs
        expected = 1 if self.objective_kind is ObjectiveKind.MIN_COMPLIANCE else 2
        if len(self.load_cases) != expected:
            raise ValueError(
                f"{self.objective_kind.value} needs {expected} load case(s), "
                f"got {len(self.load_cases)}")
        for case in self.load_cases:
            if not case.fixed_dofs:
                raise ValueError("every load case needs at least one fixed dof")
            dofs = [d for d, _ in case.forces] + list(case.fixed_dofs)
            if min(dofs) < 0 or max(dofs) >= n_dofs:
                raise ValueError("load case references a dof outside the grid")
            fixed = set(case.fixed_dofs)
            if not any(v != 0 and d not in fixed for d, v in case.forces):
                raise ValueError("load case has no nonzero force on a free dof")
        for spring in self.springs:
            if not 0 <= spring.dof < n_dofs:
                raise ValueError("spring dof outside the grid")
        if self.objective_kind is ObjectiveKind.MAX_GEOMETRIC_ADVANTAGE:
            if self.input_dof is None or self.output_dof is None:
                raise ValueError("geometric advantage needs input_dof and output_dof")
        cap = min(0.3, 0.75 * self.volume_fraction)
        cfg = self.optimizer_config
        if cfg.delta_upper > cap + 1e-12 or cfg.delta_lower > cap + 1e-12:
            raise ValueError(
                f"suppression thresholds must not exceed min(0.3, 0.75 f) = {cap:g}")

    @property
    def n_elements(self) -> int:
        return self.grid.n_elements

    @property
    def target_volume(self) -> float:
        return self.volume_fraction * self.grid.n_elements

    def replace(self, **changes) -> "ProblemDefinition":
        return dataclasses.replace(self, **changes)


def make_mbb_problem(nx: int = 60, ny: int = 20) -> ProblemDefinition:
    """Half MBB beam: symmetry on the left edge, roller at the bottom right,
    unit downward load at the top-left node."""
    if nx < 4 or ny < 2:
        raise ValueError(f"MBB grid {nx}x{ny} too small; need nx >= 4 and ny >= 2")
    grid = GridSpec(nx, ny)
    left = grid.node(0, np.arange(ny + 1))
    fixed = np.union1d(grid.dof(left, X), [grid.dof(grid.node(nx, ny), Y)])
    load = LoadCase(forces=((int(grid.dof(grid.node(0, 0), Y)), -1.0),),
                    fixed_dofs=tuple(fixed.tolist()))
    return ProblemDefinition(
        grid=grid,
        material=MaterialSpec(),
        load_cases=(load,),
        volume_fraction=0.5,
        filter_config=FilterConfig(density_radius=1.1, sensitivity_radius=0.55),
        optimizer_config=OptimizerConfig(delta_upper=0.3, delta_lower=0.3),
        baseline_filter_config=FilterConfig(2.4, 2.4, "none", "hat"),
        name="mbb",
    )


def make_inverter_problem(nx: int = 100, ny: int = 100) -> ProblemDefinition:
    """Force inverter: input at the left-edge midpoint pushing right, output
    port at the right-edge midpoint with a spring and a leftward dummy load,
    two nodes clamped at each left corner."""
    if nx < 4 or ny < 4:
        raise ValueError(f"inverter grid {nx}x{ny} too small; need nx, ny >= 4")
    grid = GridSpec(nx, ny)
    mid = ny // 2
    corner_nodes = grid.node(0, np.array([0, 1, ny - 1, ny]))
    fixed = np.sort(np.concatenate([grid.dof(corner_nodes, X), grid.dof(corner_nodes, Y)]))
    input_dof = int(grid.dof(grid.node(0, mid), X))
    output_dof = int(grid.dof(grid.node(nx, mid), X))
    fixed_t = tuple(fixed.tolist())
    cases = (
        LoadCase(forces=((input_dof, 1.0),), fixed_dofs=fixed_t),
        LoadCase(forces=((output_dof, -1.0),), fixed_dofs=fixed_t),
    )
    return ProblemDefinition(
        grid=grid,
        material=MaterialSpec(),
        load_cases=cases,
        volume_fraction=0.2,
        objective_kind=ObjectiveKind.MAX_GEOMETRIC_ADVANTAGE,
        input_dof=input_dof,
        output_dof=output_dof,
        output_spring=SpringAttachment(output_dof, 0.1),
        filter_config=FilterConfig(density_radius=1.0, sensitivity_radius=1.84,
                                   sensitivity_kind="close"),
        optimizer_config=OptimizerConfig(delta_upper=0.15, delta_lower=0.15),
        name="inverter",
    )


def make_cantilever3d_problem(nx: int = 60, ny: int = 20, nz: int = 10) -> ProblemDefinition:
    """Prismatic cantilever clamped at ``ix = 0`` with a unit total downward
    load spread over the bottom edge of the free end."""
    if min(nx, ny, nz) < 2:
        raise ValueError(f"cantilever grid {nx}x{ny}x{nz} too small; need every axis >= 2")
    grid = GridSpec(nx, ny, nz)
    iy, iz = np.meshgrid(np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
    face = grid.node(0, iy.ravel(), iz.ravel())
    fixed = np.sort(np.concatenate([grid.dof(face, c) for c in (X, Y, Z)]))
    edge = grid.node(nx, ny, np.arange(nz + 1))
    per_node = -1.0 / (nz + 1)
    load = LoadCase(forces=tuple((int(d), per_node) for d in grid.dof(edge, Y)),
                    fixed_dofs=tuple(fixed.tolist()))
    return ProblemDefinition(
        grid=grid,
        material=MaterialSpec(),
        load_cases=(load,),
        volume_fraction=0.3,
        filter_config=FilterConfig(density_radius=1.0, sensitivity_radius=1.5),
        optimizer_config=OptimizerConfig(delta_upper=0.1, delta_lower=0.1),
        baseline_filter_config=FilterConfig(1.5, 1.5, "hat", "none"),
        name="cantilever3d",
    )


PRESETS = {
    "mbb": make_mbb_problem,
    "inverter": make_inverter_problem,
    "cantilever3d": make_cantilever3d_problem,
}
