import numpy as np
from fem.fields import Field
from fem.grid import MeshPair


def coarse_hats_1d(mesh: MeshPair) -> np.ndarray:
    """(n_c + 1, side) values of the 1D coarse hats at the fine node ticks."""
    ticks = np.arange(mesh.side) / mesh.fine_cells_per_side
    centers = np.arange(mesh.coarse_cells_per_side + 1)
    return np.maximum(0.0, 1.0 - np.abs(ticks[None, :] / mesh.H - centers[:, None]))


def partition_of_unity(mesh: MeshPair) -> np.ndarray:
    """Bilinear coarse hats interpolated to the fine nodes.

    Returns:
        (n_coarse_nodes, n_nodes) array, row j is chi_j; coarse node j = b * (n_c + 1) + a
        sits at (a * H, b * H)
    """
    hats = coarse_hats_1d(mesh)
    # chi_(b,a)(x, y) = hat_a(x) * hat_b(y), nodes are numbered [iy, ix]
    chi = hats[:, None, :, None] * hats[None, :, None, :]
    return chi.reshape(mesh.n_coarse_nodes, mesh.n_nodes)


def element_gradients(mesh: MeshPair, nodal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the Q1 interpolant at every fine element center.

    `nodal` may carry leading axes; the element axis comes last in the result.
    """
    values = np.asarray(nodal)[..., mesh.elements]
    v0, v1, v2, v3 = (values[..., k] for k in range(4))
    dx = ((v1 - v0) + (v2 - v3)) / (2.0 * mesh.h)
    dy = ((v3 - v0) + (v2 - v1)) / (2.0 * mesh.h)
    return dx, dy


def kappa_tilde(mesh: MeshPair, kappa: Field, chi: np.ndarray | None = None) -> Field:
    """kappa * sum_j |grad chi_j|^2 with the gradients taken at the fine element centers."""
    kappa.check_against(mesh, "elemental")
    if chi is None:
        chi = partition_of_unity(mesh)
    dx, dy = element_gradients(mesh, chi)
    energy = np.sum(dx**2 + dy**2, axis=0)
    return Field(kappa.values * energy)
