from dataclasses import dataclass
import numpy as np
from scipy import linalg
from tqdm import tqdm
from exceptions import InvalidInputError, SingularSystemError
from fem.assembly import LOCAL_STIFFNESS, assemble_patch, local_mass
from fem.fields import Field
from fem.grid import MeshPair
from services.printr import Printr

printr = Printr()


@dataclass(frozen=True, eq=False)
class AuxiliarySpace:
    """Low eigenpairs of the local problems A_i phi = lambda S_i phi, one set per coarse element.

    `modes[i, j]` lives on `mesh.coarse_nodes_fine[i]`; `weighted_modes[i, j]` is S_i @ modes[i, j],
    so s_i(v, phi_j) = v[nodes_i] . weighted_modes[i, j].
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    weighted_modes: np.ndarray
    kappa_tilde: Field

    @property
    def modes_per_element(self) -> int:
        return self.eigenvalues.shape[1]

    @property
    def n_elements(self) -> int:
        return self.eigenvalues.shape[0]

    def s_gram(self, i: int) -> np.ndarray:
        """s_i(phi_j, phi_k) for the retained modes of element i."""
        return self.modes[i] @ self.weighted_modes[i].T


def local_spectral_matrices(
    mesh: MeshPair, kappa: Field, kappa_tilde: Field, i: int
) -> tuple[np.ndarray, np.ndarray]:
    """Dense (A_i, S_i) on the fine nodes of coarse element i, natural boundary conditions."""
    elements = mesh.coarse_elements_fine[i]
    nodes = mesh.coarse_nodes_fine[i]
    _, stiffness = assemble_patch(mesh, elements, kappa.values, LOCAL_STIFFNESS, nodes)
    _, mass = assemble_patch(mesh, elements, kappa_tilde.values, local_mass(mesh.h), nodes)
    return stiffness.toarray(), mass.toarray()


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flips columns so that each one's largest-magnitude entry is positive."""
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def auxiliary_spectrum(
    mesh: MeshPair, kappa: Field, kappa_tilde: Field, modes: int
) -> AuxiliarySpace:
    kappa.check_against(mesh, "elemental")
    kappa.require_positive("kappa")
    kappa_tilde.check_against(mesh, "elemental")
    local_dofs = (mesh.refinement + 1) ** 2
    if modes < 1 or modes > local_dofs:
        raise InvalidInputError(
            f"modes per element must be in [1, {local_dofs}] for refinement {mesh.refinement}, got {modes}"
        )

    eigenvalues = np.empty((mesh.n_coarse, modes))
    vectors = np.empty((mesh.n_coarse, modes, local_dofs))
    weighted = np.empty_like(vectors)
    for i in tqdm(
        range(mesh.n_coarse), desc="auxiliary modes", disable=printr.is_quiet(), leave=False
    ):
        stiffness, mass = local_spectral_matrices(mesh, kappa, kappa_tilde, i)
        try:
            values, phi = linalg.eigh(stiffness, mass, subset_by_index=[0, modes - 1])
        except linalg.LinAlgError as e:
            raise SingularSystemError(
                f"local weighted mass of coarse element {i} is not positive definite "
                f"(check kappa tilde): {e}"
            ) from e

        phi = fix_signs(phi)
        # eigh already returns S-orthonormal vectors, renormalize to absorb round-off
        phi = phi / np.sqrt(np.einsum("kj,kl,lj->j", phi, mass, phi))
        eigenvalues[i] = values
        vectors[i] = phi.T
        weighted[i] = (mass @ phi).T

    printr.print_info(
        f"auxiliary spectrum: {mesh.n_coarse} elements x {modes} modes, "
        f"largest retained eigenvalue {eigenvalues[:, -1].max():.4g}"
    )
    return AuxiliarySpace(eigenvalues, vectors, weighted, kappa_tilde)
