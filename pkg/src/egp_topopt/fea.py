"""Linear elastic finite elements on structured grids.

Bilinear quadrilaterals (plane stress) in 2D, trilinear hexahedra in 3D,
unit-sized elements, SIMP-scaled moduli, Dirichlet conditions applied by
eliminating the fixed rows and columns.
"""

from __future__ import annotations

import functools
import hashlib
import itertools
import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._validation import check_density
from .model import GridSpec, MaterialSpec, ProblemDefinition

logger = logging.getLogger(__name__)

SOLVER_RTOL = 1e-8
MAX_REFINEMENT_STEPS = 4
# CHOLMOD (scikit-sparse) is used when importable; SuperLU otherwise
USE_CHOLMOD = True


class FeaError(RuntimeError):
    pass


class SingularStiffnessError(FeaError):
    pass


class SolverConvergenceError(FeaError):
    pass


def _check_poisson(nu):
    if not 0 < nu < 0.5:
        raise ValueError(f"poisson_ratio must lie in (0, 0.5), got {nu}")


def element_stiffness_q4(poisson_ratio: float) -> np.ndarray:
    """8x8 plane-stress stiffness of a unit square with E = 1.

    Local nodes run counter-clockwise from the lower-left corner, dofs
    interleaved ``(u_x, u_y)`` per node.
    """
    _check_poisson(poisson_ratio)
    nu = poisson_ratio
    A11 = np.array([[12, 3, -6, -3], [3, 12, 3, 0], [-6, 3, 12, -3], [-3, 0, -3, 12]])
    A12 = np.array([[-6, -3, 0, 3], [-3, -6, -3, -6], [0, -3, -6, 3], [3, -6, 3, -6]])
    B11 = np.array([[-4, 3, -2, 9], [3, -4, -9, 4], [-2, -9, -4, -3], [9, 4, -3, -4]])
    B12 = np.array([[2, -3, 4, -9], [-3, 2, 9, -2], [4, 9, 2, 3], [-9, -2, 3, 2]])
    A = np.block([[A11, A12], [A12.T, A11]])
    B = np.block([[B11, B12], [B12.T, B11]])
    return (A + nu * B) / (24.0 * (1.0 - nu**2))


# 1D integrals over [0, 1] of the linear shape functions (1 - t, t):
# mass <phi_p phi_q>, stiffness <phi_p' phi_q'>, mixed <phi_p' phi_q>
_MASS_1D = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
_GRAD_1D = np.array([[1.0, -1.0], [-1.0, 1.0]])
_MIXED_1D = np.array([[-0.5, -0.5], [0.5, 0.5]])

HEX_NODES = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                      (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)])


def _derivative_products(corners: np.ndarray) -> np.ndarray:
    """``D[i, j, a, b] = integral of dN_a/dx_i * dN_b/dx_j`` on the unit cell,
    evaluated exactly by separation into 1D integrals."""
    ndim = corners.shape[1]
    n = len(corners)
    D = np.ones((ndim, ndim, n, n))
    for i, j in itertools.product(range(ndim), repeat=2):
        for k in range(ndim):
            p = corners[:, k][:, None]
            q = corners[:, k][None, :]
            if k == i and k == j:
                table = _GRAD_1D
            elif k == i:
                table = _MIXED_1D
            elif k == j:
                table = _MIXED_1D.T
            else:
                table = _MASS_1D
            D[i, j] *= table[p, q]
    return D


def _isotropic_stiffness(corners, lam, mu):
    ndim = corners.shape[1]
    n = len(corners)
    D = _derivative_products(corners)
    laplace = np.trace(D, axis1=0, axis2=1)
    ke = np.zeros((n, ndim, n, ndim))
    for i, j in itertools.product(range(ndim), repeat=2):
        ke[:, i, :, j] = lam * D[i, j] + mu * D[j, i] + (mu * laplace if i == j else 0.0)
    return ke.reshape(n * ndim, n * ndim)


def element_stiffness_h8(poisson_ratio: float) -> np.ndarray:
    """24x24 stiffness of a unit cube with E = 1 (isotropic, 3D elasticity).

    Local node ``a`` sits at ``HEX_NODES[a]``; dofs interleaved ``(x, y, z)``.
    """
    _check_poisson(poisson_ratio)
    nu = poisson_ratio
    lam = nu / ((1 + nu) * (1 - 2 * nu))
    mu = 1 / (2 * (1 + nu))
    return _isotropic_stiffness(HEX_NODES, lam, mu)


def element_dofs(grid: GridSpec) -> np.ndarray:
    """Connectivity table, one row of global dof numbers per element."""
    nx, ny, nz = grid.nx, grid.ny, grid.nz
    if grid.ndim == 2:
        ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        ex, ey = ex.ravel(), ey.ravel()
        nodes = np.stack([grid.node(ex, ey + 1), grid.node(ex + 1, ey + 1),
                          grid.node(ex + 1, ey), grid.node(ex, ey)], axis=1)
    else:
        ez, ex, ey = np.meshgrid(np.arange(nz), np.arange(nx), np.arange(ny), indexing="ij")
        ex, ey, ez = ex.ravel(), ey.ravel(), ez.ravel()
        # HEX_NODES[a] = (dx, dy_up, dz); rows are counted from the top
        nodes = np.stack([grid.node(ex + dx, ey + 1 - dy, ez + dz)
                          for dx, dy, dz in HEX_NODES], axis=1)
    d = grid.dofs_per_node
    return (d * nodes[:, :, None] + np.arange(d)).reshape(len(nodes), -1)


class Assembler:
    """Precomputed sparsity pattern for repeated assembly on one grid."""

    def __init__(self, grid: GridSpec, poisson_ratio: float):
        self.grid = grid
        if grid.ndim == 2:
            self.ke = element_stiffness_q4(poisson_ratio)
        else:
            self.ke = element_stiffness_h8(poisson_ratio)
        self.edof = element_dofs(grid)
        nd = self.edof.shape[1]
        rows = np.repeat(self.edof, nd, axis=1).ravel()
        cols = np.tile(self.edof, (1, nd)).ravel()
        n = grid.n_dofs
        keys = rows.astype(np.int64) * n + cols
        unique, self._slot = np.unique(keys, return_inverse=True)
        self._indices = (unique % n).astype(np.int32)
        self._indptr = np.searchsorted(unique // n, np.arange(n + 1)).astype(np.int32)
        self._ke_flat = self.ke.ravel()

    def assemble(self, moduli: np.ndarray) -> sp.csr_matrix:
        values = (moduli[:, None] * self._ke_flat[None, :]).ravel()
        data = np.bincount(self._slot, weights=values, minlength=len(self._indices))
        n = self.grid.n_dofs
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(n, n))


@functools.lru_cache(maxsize=8)
def get_assembler(grid: GridSpec, poisson_ratio: float) -> Assembler:
    return Assembler(grid, poisson_ratio)


def density_hash(x: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(x, dtype=float).tobytes()).hexdigest()


def simp_modulus(x, material: MaterialSpec):
    """Modified SIMP: ``E_min + x**r * (E0 - E_min)``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1) or np.any(~np.isfinite(x)):
        raise ValueError("densities must lie in [0, 1]")
    e0, emin = material.young_modulus_solid, material.young_modulus_void
    return emin + x**material.penalization * (e0 - emin)


def simp_modulus_derivative(x, material: MaterialSpec):
    x = np.asarray(x, dtype=float)
    r = material.penalization
    return r * x ** (r - 1) * (material.young_modulus_solid - material.young_modulus_void)


@dataclass(frozen=True)
class GlobalStiffness:
    matrix: sp.csr_matrix
    edof: np.ndarray
    element_matrix: np.ndarray
    density_hash: str


@dataclass(frozen=True)
class FeaSolution:
    displacements: tuple
    forces: tuple
    residuals: tuple
    wall_time: float
    density_hash: str

    @property
    def u(self) -> np.ndarray:
        return self.displacements[0]


def assemble(problem: ProblemDefinition, x) -> GlobalStiffness:
    """Global stiffness ``sum_e E(x_e) K_e`` for physical densities ``x``."""
    x = check_density(x, problem.n_elements)
    assembler = get_assembler(problem.grid, problem.material.poisson_ratio)
    K = assembler.assemble(simp_modulus(x, problem.material))
    return GlobalStiffness(K, assembler.edof, assembler.ke, density_hash(x))


def _cholmod_factor(Kr):
    try:
        from sksparse.cholmod import CholmodNotPositiveDefiniteError, cholesky
    except ImportError:
        return None
    try:
        return cholesky(Kr.tocsc())
    except CholmodNotPositiveDefiniteError as exc:
        raise SingularStiffnessError(f"reduced stiffness is not positive definite: {exc}") from exc


def _superlu_factor(Kr):
    try:
        lu = spla.splu(Kr.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SingularStiffnessError(f"reduced stiffness is singular: {exc}") from exc
    pivots = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(pivots)) or pivots.min() <= 1e-14 * pivots.max():
        raise SingularStiffnessError("reduced stiffness is singular (rigid-body mode left free?)")
    return lu.solve


def _make_solver(Kr):
    """Direct SPD solve with a few steps of iterative refinement.

    Near-void regions (E_min = 1e-9) push the condition number towards
    1e13. Residuals are formed in extended precision, since in float64 the
    rounding of ``K u`` alone exceeds the tolerance once ``|u|`` is large.
    Returns ``solve(b) -> (u, relative residual)`` keeping the best iterate.
    """
    solve = _cholmod_factor(Kr) if USE_CHOLMOD else None
    if solve is None:
        solve = _superlu_factor(Kr)
    K_ext = Kr.astype(np.longdouble)

    def residual(b, u):
        r = b.astype(np.longdouble) - K_ext @ u
        return r.astype(float)

    def refined(b):
        bnorm = np.linalg.norm(b)
        u = solve(b)
        r = residual(b, u)
        best_u, best = u, np.linalg.norm(r) / bnorm
        for _ in range(MAX_REFINEMENT_STEPS):
            if not np.isfinite(best) or best <= 0.01 * SOLVER_RTOL:
                break
            u = u + solve(r)
            r = residual(b, u)
            res = np.linalg.norm(r) / bnorm
            if res < best:
                best_u, best = u, res
        return best_u, float(best)

    return refined


def rigid_body_modes(grid: GridSpec) -> np.ndarray:
    """Columns spanning the rigid-body motions (3 in 2D, 6 in 3D) over all dofs."""
    if grid.ndim == 2:
        ix, iy = np.meshgrid(np.arange(grid.nx + 1), np.arange(grid.ny + 1), indexing="ij")
        iz = np.zeros_like(ix)
    else:
        ix, iy, iz = np.meshgrid(np.arange(grid.nx + 1), np.arange(grid.ny + 1),
                                 np.arange(grid.nz + 1), indexing="ij")
    order = grid.node(ix, iy, iz).ravel()
    coords = np.zeros((grid.n_nodes, 3))
    coords[order] = np.stack([ix.ravel(), -iy.ravel(), iz.ravel()], axis=1)
    x, y, z = coords.T
    d = grid.dofs_per_node
    if d == 2:
        modes = np.zeros((grid.n_dofs, 3))
        modes[0::2, 0] = 1
        modes[1::2, 1] = 1
        modes[0::2, 2], modes[1::2, 2] = -y, x
        return modes
    modes = np.zeros((grid.n_dofs, 6))
    for c in range(3):
        modes[c::3, c] = 1
    modes[0::3, 3], modes[1::3, 3] = -y, x
    modes[1::3, 4], modes[2::3, 4] = -z, y
    modes[0::3, 5], modes[2::3, 5] = z, -x
    return modes


def _check_supports(grid, fixed, springs):
    supported = np.union1d(fixed, [s.dof for s in springs if s.stiffness > 0]).astype(int)
    modes = rigid_body_modes(grid)
    if len(supported) == 0 or np.linalg.matrix_rank(modes[supported]) < modes.shape[1]:
        raise SingularStiffnessError(
            "supports leave a rigid-body mode unconstrained; the reduced stiffness is singular")


def _rounding_floor(Kr, u, b):
    """Relative residual that float64 storage of ``u`` alone can cause."""
    knorm = float(abs(Kr).sum(axis=0).max())
    return 64 * np.finfo(float).eps * knorm * np.linalg.norm(u) / np.linalg.norm(b)


def solve_equilibrium(K: GlobalStiffness, problem: ProblemDefinition,
                      strict: bool = True) -> FeaSolution:
    """Solve ``K U = F`` for every load case of ``problem``.

    Springs in ``problem.springs`` are added to the diagonal first. Raises
    :class:`SingularStiffnessError` when the constrained system still has
    rigid-body modes, and :class:`SolverConvergenceError` when the relative
    residual exceeds ``SOLVER_RTOL``. With ``strict=False`` a residual above
    the tolerance is accepted (and logged) when it is within the rounding
    floor of float64 displacements, which happens when loads sit on
    near-void material and ``|u|`` reaches 1e9 or more.
    """
    start = time.perf_counter()
    Kfull = K.matrix
    if problem.springs:
        extra = np.zeros(Kfull.shape[0])
        for spring in problem.springs:
            extra[spring.dof] += spring.stiffness
        Kfull = Kfull + sp.diags(extra, format="csr")
    n = Kfull.shape[0]
    solvers = {}
    displacements, forces, residuals = [], [], []
    for case in problem.load_cases:
        f = case.force_vector(n)
        u = np.zeros(n)
        fixed = np.asarray(case.fixed_dofs, dtype=int)
        free = np.setdiff1d(np.arange(n), fixed)
        _check_supports(problem.grid, fixed, problem.springs)
        fr = f[free]
        Kr = Kfull[free][:, free]
        if not np.any(fr):
            residual = 0.0
        else:
            key = case.fixed_dofs
            if key not in solvers:
                solvers[key] = _make_solver(Kr)
            u[free], residual = solvers[key](fr)
            if not np.isfinite(residual):
                raise SingularStiffnessError("solution is not finite")
            if residual > SOLVER_RTOL:
                floor = _rounding_floor(Kr, u[free], fr)
                if strict or residual > floor:
                    raise SolverConvergenceError(
                        f"relative residual {residual:.3e} exceeds {SOLVER_RTOL:g}")
                logger.warning("relative residual %.3e at the float64 floor %.3e",
                               residual, floor)
        displacements.append(u)
        forces.append(f)
        residuals.append(residual)
    return FeaSolution(tuple(displacements), tuple(forces), tuple(residuals),
                       time.perf_counter() - start, K.density_hash)


def element_energies(K: GlobalStiffness, ui: np.ndarray, uj: np.ndarray = None) -> np.ndarray:
    """Per-element ``u_i,e^T K_e u_j,e`` for the unit-modulus element matrix."""
    ue_i = ui[K.edof]
    ue_j = ue_i if uj is None else uj[K.edof]
    return np.einsum("ea,ab,eb->e", ue_i, K.element_matrix, ue_j)
