import inspect
from dataclasses import dataclass
from typing import Callable
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, factorized
from exceptions import NumericalError, PicardDivergedError, ShapeMismatchError, SolverDivergedError
from fem.assembly import assemble_mass, assemble_stiffness
from fem.fields import Field, SparseOperator, Trajectory
from fem.grid import MeshPair

DEFAULT_TOL = 1e-10
PICARD_TOL = 1e-8
PICARD_MAX_ITER = 50
OVERFLOW_GUARD = 30.0

# scipy renamed cg's relative tolerance from `tol` to `rtol`
_CG_TOL_KEYWORD = "rtol" if "rtol" in inspect.signature(cg).parameters else "tol"


@dataclass
class FemSettings:
    cg_tol: float = DEFAULT_TOL
    picard_tol: float = PICARD_TOL
    picard_max_iter: int = PICARD_MAX_ITER
    overflow_guard: float = OVERFLOW_GUARD
    direct_time_stepping: bool = True

    @staticmethod
    def from_config(config: dict | None) -> "FemSettings":
        config = config or {}
        return FemSettings(
            cg_tol=float(config.get("cg_tol", DEFAULT_TOL)),
            picard_tol=float(config.get("picard_tol", PICARD_TOL)),
            picard_max_iter=int(config.get("picard_max_iter", PICARD_MAX_ITER)),
            overflow_guard=float(config.get("overflow_guard", OVERFLOW_GUARD)),
            direct_time_stepping=bool(config.get("direct_time_stepping", True)),
        )


def solve_spd(
    op: SparseOperator | sp.spmatrix,
    rhs: np.ndarray,
    tol: float = DEFAULT_TOL,
    x0: np.ndarray | None = None,
    maxiter: int | None = None,
) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients down to ||b - Ax|| <= tol * ||b||."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    matrix = op.matrix if isinstance(op, SparseOperator) else sp.csr_matrix(op)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != (matrix.shape[0],):
        raise ShapeMismatchError(f"rhs has shape {rhs.shape}, operator is {matrix.shape}")

    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)

    diagonal = matrix.diagonal()
    if np.any(diagonal <= 0):
        raise SolverDivergedError("operator has a non-positive diagonal entry, it is not SPD")
    inverse_diagonal = 1.0 / diagonal
    preconditioner = LinearOperator(
        matrix.shape, matvec=lambda v: inverse_diagonal * np.ravel(v), dtype=np.float64
    )

    maxiter = maxiter or max(10 * matrix.shape[0], 1000)
    solution, info = cg(
        matrix,
        rhs,
        x0=x0,
        M=preconditioner,
        maxiter=maxiter,
        atol=0.0,
        **{_CG_TOL_KEYWORD: tol},
    )
    residual = np.linalg.norm(rhs - matrix @ solution) / rhs_norm
    if info != 0 or not np.isfinite(residual):
        raise SolverDivergedError(
            f"CG stopped after {maxiter} iterations at relative residual {residual:.3e} "
            "(indefinite or ill-conditioned system?)"
        )
    return solution


def nodal_load(mass: SparseOperator, density: np.ndarray) -> np.ndarray:
    """Load vector (f, phi_j) of a nodal source density, for every row of `density`."""
    return np.asarray(mass.matrix @ np.asarray(density, dtype=np.float64).T).T


def solve_steady(
    mesh: MeshPair, kappa: Field, f: np.ndarray, tol: float = DEFAULT_TOL
) -> np.ndarray:
    """-div(kappa grad u) = f with u = 0 on the boundary; `f` is the assembled nodal load."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (mesh.n_nodes,):
        raise ShapeMismatchError(f"load has shape {f.shape}, mesh has {mesh.n_nodes} nodes")
    stiffness = assemble_stiffness(mesh, kappa)
    free = mesh.free_nodes
    solution = np.zeros(mesh.n_nodes)
    solution[free] = solve_spd(stiffness.restrict(free), f[free], tol)
    return solution


def backward_euler(
    mass: sp.spmatrix,
    stiffness: sp.spmatrix,
    loads: np.ndarray,
    dt: float,
    initial: np.ndarray | None = None,
    solver: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """(M + dt A) u^i = M u^{i-1} + dt b_i on an already reduced (interior) system.

    Args:
        loads: (m0, n_free) assembled loads b_i = (f(t_i), phi)
        solver: solves with M + dt A; a sparse LU is built when omitted

    Returns:
        (m0, n_free) states u^1 .. u^m0
    """
    mass = sp.csr_matrix(mass)
    if solver is None:
        solver = factorized(sp.csc_matrix(mass + dt * sp.csr_matrix(stiffness)))

    state = np.zeros(mass.shape[0]) if initial is None else np.asarray(initial, dtype=np.float64)
    states = np.empty((loads.shape[0], mass.shape[0]))
    for i, load in enumerate(loads):
        state = solver(mass @ state + dt * load)
        states[i] = state
    return states


def time_step_solver(
    mesh: MeshPair, kappa: Field, dt: float, settings: FemSettings | None = None
) -> Callable[[np.ndarray], np.ndarray]:
    """Factorizes the interior system M + dt A once so it can be reused across samples."""
    settings = settings or FemSettings()
    free = mesh.free_nodes
    mass = assemble_mass(mesh, Field.constant(mesh, 1.0)).restrict(free)
    stiffness = assemble_stiffness(mesh, kappa).restrict(free)
    system = (mass + dt * stiffness).tocsr()
    if settings.direct_time_stepping:
        return factorized(system.tocsc())
    return lambda rhs: solve_spd(system, rhs, settings.cg_tol)


def solve_parabolic_linear(
    mesh: MeshPair,
    kappa: Field,
    source: np.ndarray,
    m0: int,
    T: float,
    initial: np.ndarray | None = None,
    settings: FemSettings | None = None,
    solver: Callable[[np.ndarray], np.ndarray] | None = None,
) -> Trajectory:
    """u_t = div(kappa grad u) + f, u = 0 on the boundary, u(0) = `initial` (zero by default).

    `source` is the (m0, n) matrix of nodal source values at t_1..t_m0.
    """
    settings = settings or FemSettings()
    source = _check_source(mesh, source, m0)
    dt = T / m0
    free = mesh.free_nodes
    mass = assemble_mass(mesh, Field.constant(mesh, 1.0))
    stiffness = assemble_stiffness(mesh, kappa)
    loads = nodal_load(mass, source)[:, free]
    if solver is None:
        solver = time_step_solver(mesh, kappa, dt, settings)

    states = backward_euler(
        mass.restrict(free),
        stiffness.restrict(free),
        loads,
        dt,
        initial=None if initial is None else np.asarray(initial)[free],
        solver=solver,
    )
    return Trajectory(_embed(mesh, states), T)


def solve_parabolic_nonlinear(
    mesh: MeshPair,
    kappa: Field,
    gamma: float,
    source: np.ndarray,
    m0: int,
    T: float,
    initial: np.ndarray | None = None,
    settings: FemSettings | None = None,
) -> Trajectory:
    """u_t = div(kappa exp(gamma u) grad u) + f by backward Euler with Picard iterations.

    The coefficient is frozen at the previous iterate and evaluated per fine element
    from the element average of the nodal solution.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    settings = settings or FemSettings()
    source = _check_source(mesh, source, m0)
    kappa.check_against(mesh, "elemental")
    kappa.require_positive("kappa")

    dt = T / m0
    free = mesh.free_nodes
    mass_full = assemble_mass(mesh, Field.constant(mesh, 1.0))
    mass = mass_full.restrict(free)
    loads = nodal_load(mass_full, source)[:, free]

    state = np.zeros(mesh.n_nodes) if initial is None else np.array(initial, dtype=np.float64)
    states = np.empty((m0, mesh.n_nodes))
    for step in range(m0):
        rhs = mass @ state[free] + dt * loads[step]
        state = _picard_step(mesh, kappa, gamma, mass, rhs, dt, state, step, settings)
        states[step] = state
    return Trajectory(states, T)


def picard_coefficient(mesh: MeshPair, kappa: Field, gamma: float, nodal: np.ndarray) -> Field:
    element_mean = nodal[mesh.elements].mean(axis=1)
    return Field(kappa.values * np.exp(gamma * element_mean))


def _picard_step(
    mesh: MeshPair,
    kappa: Field,
    gamma: float,
    mass: sp.csr_matrix,
    rhs: np.ndarray,
    dt: float,
    previous: np.ndarray,
    step: int,
    settings: FemSettings,
) -> np.ndarray:
    free = mesh.free_nodes
    iterate = previous.copy()
    for _ in range(settings.picard_max_iter):
        if gamma * np.max(np.abs(iterate)) > settings.overflow_guard:
            raise PicardDivergedError(
                f"gamma * u exceeded {settings.overflow_guard} at time step {step + 1} (blow-up)",
                step + 1,
            )
        coefficient = picard_coefficient(mesh, kappa, gamma, iterate)
        stiffness = assemble_stiffness(mesh, coefficient).restrict(free)
        system = (mass + dt * stiffness).tocsr()
        try:
            solved = solve_spd(system, rhs, settings.cg_tol, x0=iterate[free])
        except NumericalError as e:
            raise PicardDivergedError(f"time step {step + 1}: {e}", step + 1) from e

        update = np.zeros(mesh.n_nodes)
        update[free] = solved
        change = np.linalg.norm(update - iterate)
        scale = np.linalg.norm(update)
        iterate = update
        if change <= settings.picard_tol * scale or scale == 0.0:
            return iterate

    raise PicardDivergedError(
        f"Picard iteration did not converge in {settings.picard_max_iter} iterations "
        f"at time step {step + 1}",
        step + 1,
    )


def _check_source(mesh: MeshPair, source: np.ndarray, m0: int) -> np.ndarray:
    source = np.asarray(source, dtype=np.float64)
    if source.shape != (m0, mesh.n_nodes):
        raise ShapeMismatchError(f"source has shape {source.shape}, expected ({m0}, {mesh.n_nodes})")
    return source


def _embed(mesh: MeshPair, interior_states: np.ndarray) -> np.ndarray:
    full = np.zeros((interior_states.shape[0], mesh.n_nodes))
    full[:, mesh.free_nodes] = interior_states
    return full
