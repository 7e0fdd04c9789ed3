import numpy as np
from scipy import linalg
from exceptions import InvalidInputError, ShapeMismatchError
from msreduction.cem import MultiscaleBasis


def coarse_target(u_h: np.ndarray, basis: MultiscaleBasis) -> np.ndarray:
    """Least-squares coefficients u_H = (R^T R)^-1 R^T u_h; rows of a 2D `u_h` are projected one by one."""
    u_h = np.asarray(u_h, dtype=np.float64)
    if u_h.shape[-1] != basis.n_nodes:
        raise ShapeMismatchError(f"fine vector has {u_h.shape[-1]} entries, basis has {basis.n_nodes} rows")
    moments = basis.matrix.T @ u_h.T
    return linalg.cho_solve(basis.gram_factor, moments).T


def reconstruct(coefficients: np.ndarray, basis: MultiscaleBasis) -> np.ndarray:
    """R u_H for one coefficient vector or a batch of rows."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape[-1] != basis.n_basis:
        raise ShapeMismatchError(
            f"coarse vector has {coefficients.shape[-1]} entries, basis has {basis.n_basis} columns"
        )
    return (basis.matrix @ coefficients.T).T


def project_source(F0: np.ndarray, basis: MultiscaleBasis, columns: np.ndarray | None = None) -> np.ndarray:
    """F0 R[:, S]; F0 is (m0, n) or a batch (samples, m0, n). All columns when S is omitted."""
    if columns is None:
        columns = np.arange(basis.n_basis)
    columns = np.asarray(columns, dtype=np.int64)
    if columns.size == 0:
        raise InvalidInputError("column selection for the source projection is empty")
    F0 = np.asarray(F0, dtype=np.float64)
    if F0.shape[-1] != basis.n_nodes:
        raise ShapeMismatchError(f"source has {F0.shape[-1]} nodal values, basis has {basis.n_nodes} rows")
    return F0 @ basis.matrix[:, columns]
