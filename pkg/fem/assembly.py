import numpy as np
import scipy.sparse as sp
from fem.fields import Field, SparseOperator
from fem.grid import MeshPair

# Q1 on a square, counter-clockwise local nodes, exact integration.
# The stiffness of a square does not depend on its side length in 2D.
LOCAL_STIFFNESS = (
    np.array(
        [
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ]
    )
    / 6.0
)
LOCAL_MASS_UNIT = (
    np.array(
        [
            [4.0, 2.0, 1.0, 2.0],
            [2.0, 4.0, 2.0, 1.0],
            [1.0, 2.0, 4.0, 2.0],
            [2.0, 1.0, 2.0, 4.0],
        ]
    )
    / 36.0
)


def local_mass(h: float) -> np.ndarray:
    return LOCAL_MASS_UNIT * h**2


def assemble_stiffness(mesh: MeshPair, kappa: Field) -> SparseOperator:
    """sum_e kappa_e * int_e grad(phi_i) . grad(phi_j) over all fine elements."""
    kappa.check_against(mesh, "elemental")
    kappa.require_positive("kappa")
    return SparseOperator(_assemble(mesh.elements, kappa.values, LOCAL_STIFFNESS, mesh.n_nodes))


def assemble_mass(mesh: MeshPair, weight: Field) -> SparseOperator:
    weight.check_against(mesh, "elemental")
    weight.require_positive("mass weight")
    return SparseOperator(_assemble(mesh.elements, weight.values, local_mass(mesh.h), mesh.n_nodes))


def assemble_patch(
    mesh: MeshPair,
    element_ids: np.ndarray,
    coefficient: np.ndarray,
    local_matrix: np.ndarray,
    nodes: np.ndarray | None = None,
) -> tuple[np.ndarray, sp.csr_matrix]:
    """Assembles a form over a subset of fine elements in a local numbering.

    Args:
        element_ids: fine elements to integrate over
        coefficient: per-element constant weight, indexed like the global elements
        local_matrix: 4x4 reference element matrix
        nodes: local node numbering (ascending global ids); derived from the elements if omitted

    Returns:
        (nodes, matrix) with matrix rows/cols following `nodes`
    """
    connectivity = mesh.elements[element_ids]
    if nodes is None:
        nodes = np.unique(connectivity)
    local = np.searchsorted(nodes, connectivity)
    matrix = _assemble(local, coefficient[element_ids], local_matrix, len(nodes))
    return nodes, matrix


def _assemble(
    connectivity: np.ndarray,
    coefficient: np.ndarray,
    local_matrix: np.ndarray,
    size: int,
) -> sp.csr_matrix:
    rows = np.repeat(connectivity, 4, axis=1).ravel()
    cols = np.tile(connectivity, (1, 4)).ravel()
    data = (coefficient[:, None] * local_matrix.ravel()[None, :]).ravel()
    # duplicates are summed by the COO -> CSR conversion
    return sp.coo_matrix((data, (rows, cols)), shape=(size, size)).tocsr()
