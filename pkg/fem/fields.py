from dataclasses import dataclass
from typing import Literal
import numpy as np
import scipy.sparse as sp
from exceptions import NonPositiveCoefficientError, ShapeMismatchError
from fem.grid import MeshPair
from services.artifact_store import array_digest, read_array, read_sidecar, write_array

FIELD_KIND = Literal["nodal", "elemental"]


@dataclass(frozen=True, eq=False)
class Field:
    """Real values per fine node (solutions) or per fine element (coefficients)."""

    values: np.ndarray
    kind: FIELD_KIND = "elemental"

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @staticmethod
    def constant(mesh: MeshPair, value: float, kind: FIELD_KIND = "elemental") -> "Field":
        size = mesh.n_elements if kind == "elemental" else mesh.n_nodes
        return Field(np.full(size, float(value)), kind)

    def check_against(self, mesh: MeshPair, kind: FIELD_KIND | None = None):
        expected_kind = kind or self.kind
        if self.kind != expected_kind:
            raise ShapeMismatchError(f"expected a {expected_kind} field, got {self.kind}")
        size = mesh.n_elements if self.kind == "elemental" else mesh.n_nodes
        if self.values.shape != (size,):
            raise ShapeMismatchError(
                f"{self.kind} field has shape {self.values.shape}, mesh needs ({size},)"
            )

    def require_positive(self, name: str = "coefficient"):
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            worst = int(np.argmin(self.values))
            raise NonPositiveCoefficientError(
                f"{name} must be strictly positive; entry {worst} is {self.values[worst]!r}"
            )

    def scaled(self, factor: float) -> "Field":
        return Field(self.values * factor, self.kind)

    def digest(self) -> str:
        return array_digest(self.values)

    def save(self, file_path: str, mesh: MeshPair):
        write_array(file_path, self.values, kind=self.kind, mesh=mesh.digest())

    @staticmethod
    def load(file_path: str, mesh: MeshPair) -> "Field":
        sidecar = read_sidecar(file_path)
        kind = sidecar.get("kind", "elemental")
        size = mesh.n_elements if kind == "elemental" else mesh.n_nodes
        values = read_array(file_path, expected_shape=(size,))
        return Field(values, kind)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Assembled bilinear form on fine nodes, row-compressed."""

    matrix: sp.csr_matrix
    symmetric: bool = True

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def asymmetry(self) -> float:
        """max|K - K^T| relative to max|K|."""
        scale = abs(self.matrix).max()
        if scale == 0:
            return 0.0
        return abs(self.matrix - self.matrix.T).max() / scale

    def restrict(self, rows: np.ndarray, cols: np.ndarray | None = None) -> sp.csr_matrix:
        cols = rows if cols is None else cols
        return self.matrix[rows][:, cols].tocsr()

    def __matmul__(self, other):
        return self.matrix @ other

    def scaled(self, factor: float) -> "SparseOperator":
        return SparseOperator((self.matrix * factor).tocsr(), self.symmetric)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Nodal values at t_1..t_m0 with t_i = i * T / m0; u(t_0) is not stored."""

    values: np.ndarray
    T: float

    @property
    def m0(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return time_levels(self.m0, self.T)

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def save(self, file_path: str, mesh: MeshPair):
        write_array(file_path, self.values, kind="trajectory", mesh=mesh.digest(), T=self.T)

    @staticmethod
    def load(file_path: str) -> "Trajectory":
        sidecar = read_sidecar(file_path)
        return Trajectory(read_array(file_path), float(sidecar["T"]))


def time_levels(m0: int, T: float) -> np.ndarray:
    return np.arange(1, m0 + 1) * (T / m0)
