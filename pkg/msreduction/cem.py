import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
import numpy as np
from scipy import linalg
from scipy.sparse.linalg import splu
from tqdm import tqdm
from exceptions import InvalidInputError, ShapeMismatchError, SingularSystemError
from fem.assembly import LOCAL_STIFFNESS, assemble_patch
from fem.fields import Field
from fem.grid import MeshPair
from msreduction.partition import kappa_tilde
from msreduction.spectral import AuxiliarySpace, auxiliary_spectrum
from services.artifact_store import read_array, read_json, write_array, write_json
from services.printr import Printr
from services.version_info import VersionInfo

printr = Printr()

BASIS_MANIFEST = "manifest.json"
BASIS_BLOB = "basis.bin"


def oversample_bounds(mesh: MeshPair, i: int, ell: int) -> tuple[int, int, int, int]:
    """Inclusive coarse index box (cx0, cy0, cx1, cy1) of K_{i,ell}, clipped to the domain."""
    if ell < 0:
        raise InvalidInputError(f"oversampling layers must be >= 0, got {ell}")
    if not 0 <= i < mesh.n_coarse:
        raise InvalidInputError(f"coarse element {i} is not in [0, {mesh.n_coarse})")
    cx, cy = mesh.coarse_position(i)
    last = mesh.coarse_cells_per_side - 1
    return max(cx - ell, 0), max(cy - ell, 0), min(cx + ell, last), min(cy + ell, last)


def oversample_region(mesh: MeshPair, i: int, ell: int) -> np.ndarray:
    """Coarse elements of K_{i,ell}: K_i grown by `ell` layers of vertex neighbours, ascending."""
    cx0, cy0, cx1, cy1 = oversample_bounds(mesh, i, ell)
    cx = np.arange(cx0, cx1 + 1)
    cy = np.arange(cy0, cy1 + 1)
    return (cy[:, None] * mesh.coarse_cells_per_side + cx[None, :]).ravel()


@dataclass(frozen=True, eq=False)
class MultiscaleBasis:
    """CEM basis matrix R (n x N_basis); column i * L + (j - 1) belongs to element i, mode j."""

    matrix: np.ndarray
    ell: int
    modes_per_element: int
    eigenvalues: np.ndarray
    mesh_digest: str
    kappa_digest: str
    aux: AuxiliarySpace | None = None

    @property
    def n_basis(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]

    def column_index(self, i: int, j: int) -> int:
        """Column of coarse element i, mode j (1-based like the eigen-index)."""
        if not 1 <= j <= self.modes_per_element:
            raise InvalidInputError(f"mode index {j} is not in [1, {self.modes_per_element}]")
        return i * self.modes_per_element + (j - 1)

    def columns_for_mode(self, j: int) -> np.ndarray:
        """All columns with eigen-index j, one per coarse element."""
        self.column_index(0, j)
        return np.arange(j - 1, self.n_basis, self.modes_per_element)

    def columns_for_element(self, i: int) -> np.ndarray:
        start = i * self.modes_per_element
        return np.arange(start, start + self.modes_per_element)

    def support(self, column: int, mesh: MeshPair) -> np.ndarray:
        """Coarse elements of the oversampled region a column lives on."""
        return oversample_region(mesh, column // self.modes_per_element, self.ell)

    @cached_property
    def gram(self) -> np.ndarray:
        return self.matrix.T @ self.matrix

    @cached_property
    def gram_factor(self):
        try:
            return linalg.cho_factor(self.gram)
        except linalg.LinAlgError as e:
            raise SingularSystemError(f"basis Gram matrix R^T R is singular: {e}") from e

    def save(self, directory: str, extra: dict | None = None):
        os.makedirs(directory, exist_ok=True)
        write_array(os.path.join(directory, BASIS_BLOB), self.matrix, kind="basis")
        if self.aux is not None:
            write_array(os.path.join(directory, "modes.bin"), self.aux.modes, kind="modes")
            write_array(
                os.path.join(directory, "weighted_modes.bin"), self.aux.weighted_modes, kind="modes"
            )
            write_array(
                os.path.join(directory, "kappa_tilde.bin"), self.aux.kappa_tilde.values, kind="elemental"
            )
        manifest = {
            "kind": "basis",
            "mesh": self.mesh_digest,
            "kappa": self.kappa_digest,
            "ell": self.ell,
            "modes_per_element": self.modes_per_element,
            "n_basis": self.n_basis,
            "eigenvalues": self.eigenvalues,
            "has_aux": self.aux is not None,
            "versions": VersionInfo().get_package_versions(),
            **(extra or {}),
        }
        write_json(os.path.join(directory, BASIS_MANIFEST), manifest)

    @staticmethod
    def load(directory: str, mesh: MeshPair | None = None) -> "MultiscaleBasis":
        manifest_path = os.path.join(directory, BASIS_MANIFEST)
        manifest = read_json(manifest_path)
        VersionInfo().check_layout(manifest, manifest_path)
        if mesh is not None and manifest["mesh"] != mesh.digest():
            raise ShapeMismatchError(f"basis in {directory} was built on another mesh")

        matrix = read_array(os.path.join(directory, BASIS_BLOB))
        eigenvalues = np.asarray(manifest["eigenvalues"], dtype=np.float64)
        aux = None
        if manifest.get("has_aux"):
            aux = AuxiliarySpace(
                eigenvalues,
                read_array(os.path.join(directory, "modes.bin")),
                read_array(os.path.join(directory, "weighted_modes.bin")),
                Field(read_array(os.path.join(directory, "kappa_tilde.bin"))),
            )
        return MultiscaleBasis(
            matrix,
            int(manifest["ell"]),
            int(manifest["modes_per_element"]),
            eigenvalues,
            manifest["mesh"],
            manifest["kappa"],
            aux,
        )


def localized_functions(
    mesh: MeshPair, kappa: Field, aux: AuxiliarySpace, i: int, ell: int
) -> tuple[np.ndarray, np.ndarray]:
    """Minimizes a(psi, psi) on K_i^+ subject to s(psi, phi') = delta for every mode inside K_i^+.

    The saddle system [[A, C^T], [C, 0]] is reduced to its Schur complement C A^-1 C^T,
    with a sparse LU for A and a Cholesky factor for the complement.

    Returns:
        (interior fine nodes of K_i^+, (n_interior, L) values of psi_1..psi_L there)
    """
    bounds = oversample_bounds(mesh, i, ell)
    region = oversample_region(mesh, i, ell)
    elements = mesh.block_elements(*bounds)
    nodes = mesh.block_nodes(*bounds)
    interior = mesh.block_nodes(*bounds, interior=True)
    modes = aux.modes_per_element
    if interior.size == 0:
        raise SingularSystemError(f"coarse element {i}: oversampled region has no interior nodes")

    _, stiffness = assemble_patch(mesh, elements, kappa.values, LOCAL_STIFFNESS, nodes)
    positions = np.searchsorted(nodes, interior)
    system = stiffness[positions][:, positions].tocsc()

    constraints = np.zeros((region.size * modes, interior.size))
    for row, cell in enumerate(region):
        cell_nodes = mesh.coarse_nodes_fine[cell]
        where = np.searchsorted(interior, cell_nodes)
        inside = (where < interior.size) & (interior[np.minimum(where, interior.size - 1)] == cell_nodes)
        for j in range(modes):
            constraints[row * modes + j, where[inside]] = aux.weighted_modes[cell, j][inside]

    own_row = int(np.flatnonzero(region == i)[0])
    unit = np.zeros((region.size * modes, modes))
    unit[own_row * modes : (own_row + 1) * modes] = np.eye(modes)

    try:
        lu = splu(system)
        solved = lu.solve(np.ascontiguousarray(constraints.T))
        schur = linalg.cho_factor(constraints @ solved)
    except (RuntimeError, linalg.LinAlgError) as e:
        raise SingularSystemError(f"coarse element {i}: constrained minimization is singular ({e})") from e
    psi = solved @ linalg.cho_solve(schur, unit)
    return interior, psi


def cem_basis(
    mesh: MeshPair, kappa: Field, aux: AuxiliarySpace, ell: int, workers: int = 1
) -> MultiscaleBasis:
    if ell < 1:
        raise InvalidInputError(f"the CEM basis needs at least one oversampling layer, got {ell}")
    kappa.check_against(mesh, "elemental")
    kappa.require_positive("kappa")
    if aux.n_elements != mesh.n_coarse:
        raise ShapeMismatchError(f"auxiliary space covers {aux.n_elements} elements, mesh has {mesh.n_coarse}")

    modes = aux.modes_per_element
    matrix = np.zeros((mesh.n_nodes, mesh.n_coarse * modes))

    def build(i):
        return localized_functions(mesh, kappa, aux, i, ell)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = pool.map(build, range(mesh.n_coarse))
        for i, (interior, psi) in enumerate(
            tqdm(results, total=mesh.n_coarse, desc="CEM basis", disable=printr.is_quiet(), leave=False)
        ):
            matrix[interior, i * modes : (i + 1) * modes] = psi

    printr.print_info(f"CEM basis: {matrix.shape[1]} functions, ell = {ell}")
    return MultiscaleBasis(matrix, ell, modes, aux.eigenvalues.copy(), mesh.digest(), kappa.digest(), aux)


def constraint_matrix(mesh: MeshPair, aux: AuxiliarySpace, basis: MultiscaleBasis) -> np.ndarray:
    """s(psi_col, phi_row) for every basis column against every auxiliary mode."""
    blocks = []
    for cell in range(mesh.n_coarse):
        values = basis.matrix[mesh.coarse_nodes_fine[cell]]
        blocks.append(aux.weighted_modes[cell] @ values)
    return np.vstack(blocks)


def constraint_residual(mesh: MeshPair, aux: AuxiliarySpace, basis: MultiscaleBasis) -> float:
    s = constraint_matrix(mesh, aux, basis)
    return float(np.max(np.abs(s - np.eye(s.shape[0]))))


def element_energies(mesh: MeshPair, kappa: Field, nodal: np.ndarray) -> np.ndarray:
    """kappa_e * int_e |grad v|^2 per fine element; `nodal` may be (n,) or (n, k)."""
    values = np.asarray(nodal)[mesh.elements]
    if values.ndim == 2:
        return kappa.values * np.einsum("ea,ab,eb->e", values, LOCAL_STIFFNESS, values)
    return kappa.values[:, None] * np.einsum("eak,ab,ebk->ek", values, LOCAL_STIFFNESS, values)


def basis_energy(mesh: MeshPair, kappa: Field, basis: MultiscaleBasis) -> np.ndarray:
    return element_energies(mesh, kappa, basis.matrix).sum(axis=0)


def energy_outside(mesh: MeshPair, kappa: Field, basis: MultiscaleBasis, column: int, layers: int) -> float:
    """Share of a column's energy carried by fine elements outside K_{i,layers}."""
    i = column // basis.modes_per_element
    energies = element_energies(mesh, kappa, basis.matrix[:, column])
    total = energies.sum()
    inside = np.isin(mesh.element_to_coarse, oversample_region(mesh, i, layers))
    return float(energies[~inside].sum() / total) if total > 0 else 0.0


def build_basis(mesh: MeshPair, kappa: Field, modes: int, ell: int, workers: int = 1) -> MultiscaleBasis:
    """Partition of unity, auxiliary spectrum and localized basis in one go."""
    weight = kappa_tilde(mesh, kappa)
    aux = auxiliary_spectrum(mesh, kappa, weight, modes)
    return cem_basis(mesh, kappa, aux, ell, workers)
