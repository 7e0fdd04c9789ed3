from dataclasses import dataclass, field
from functools import cached_property
import numpy as np
from exceptions import InvalidInputError
from services.artifact_store import digest


@dataclass(frozen=True, eq=False)
class MeshPair:
    """Nested structured meshes on the unit square.

    Node numbering - row-wise, starting bottom left; node k = iy * (side) + ix
    with coordinates (ix / n_f, iy / n_f).
    Fine element e = ey * n_f + ex with counter-clockwise local nodes
    (ex, ey), (ex + 1, ey), (ex + 1, ey + 1), (ex, ey + 1).
    Coarse element i = cy * n_c + cx, coarse nodes numbered like fine nodes.
    """

    coarse_cells_per_side: int
    refinement: int
    fine_cells_per_side: int = field(init=False)
    H: float = field(init=False)
    h: float = field(init=False)

    def __post_init__(self):
        if int(self.coarse_cells_per_side) < 1 or int(self.refinement) < 1:
            raise InvalidInputError(
                f"mesh needs positive sizes, got coarse={self.coarse_cells_per_side} refinement={self.refinement}"
            )
        fine = int(self.coarse_cells_per_side) * int(self.refinement)
        object.__setattr__(self, "coarse_cells_per_side", int(self.coarse_cells_per_side))
        object.__setattr__(self, "refinement", int(self.refinement))
        object.__setattr__(self, "fine_cells_per_side", fine)
        object.__setattr__(self, "H", 1.0 / self.coarse_cells_per_side)
        object.__setattr__(self, "h", 1.0 / fine)

    # ─────────────────────────────── sizes ─────────────────────────────── #

    @property
    def side(self) -> int:
        """Fine nodes per side."""
        return self.fine_cells_per_side + 1

    @property
    def n_nodes(self) -> int:
        return self.side**2

    @property
    def n_elements(self) -> int:
        return self.fine_cells_per_side**2

    @property
    def n_coarse(self) -> int:
        return self.coarse_cells_per_side**2

    @property
    def n_coarse_nodes(self) -> int:
        return (self.coarse_cells_per_side + 1) ** 2

    def digest(self) -> str:
        return digest(
            {
                "coarse_cells_per_side": self.coarse_cells_per_side,
                "refinement": self.refinement,
            }
        )

    # ───────────────────────────── geometry ───────────────────────────── #

    @cached_property
    def coordinates(self) -> np.ndarray:
        ticks = np.arange(self.side) / self.fine_cells_per_side
        y, x = np.meshgrid(ticks, ticks, indexing="ij")
        return np.column_stack((x.ravel(), y.ravel()))

    @property
    def x(self) -> np.ndarray:
        return self.coordinates[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.coordinates[:, 1]

    @cached_property
    def element_centers(self) -> np.ndarray:
        ticks = (np.arange(self.fine_cells_per_side) + 0.5) / self.fine_cells_per_side
        y, x = np.meshgrid(ticks, ticks, indexing="ij")
        return np.column_stack((x.ravel(), y.ravel()))

    @cached_property
    def elements(self) -> np.ndarray:
        """(n_elements, 4) node indices per fine element."""
        n_f = self.fine_cells_per_side
        ey, ex = np.meshgrid(np.arange(n_f), np.arange(n_f), indexing="ij")
        first = (ey * self.side + ex).ravel()
        return np.column_stack((first, first + 1, first + self.side + 1, first + self.side))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        ix = np.arange(self.n_nodes) % self.side
        iy = np.arange(self.n_nodes) // self.side
        last = self.side - 1
        return (ix == 0) | (iy == 0) | (ix == last) | (iy == last)

    @cached_property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    # ─────────────────────── coarse → fine indexing ─────────────────────── #

    def coarse_position(self, i: int) -> tuple[int, int]:
        return i % self.coarse_cells_per_side, i // self.coarse_cells_per_side

    @cached_property
    def element_to_coarse(self) -> np.ndarray:
        n_f = self.fine_cells_per_side
        e = np.arange(self.n_elements)
        ex, ey = e % n_f, e // n_f
        r = self.refinement
        return (ey // r) * self.coarse_cells_per_side + ex // r

    @cached_property
    def coarse_elements_fine(self) -> np.ndarray:
        """(N, r^2) fine element indices of each coarse element, ascending."""
        rows = []
        for i in range(self.n_coarse):
            cx, cy = self.coarse_position(i)
            rows.append(self.block_elements(cx, cy, cx, cy))
        return np.asarray(rows, dtype=np.int64).reshape(self.n_coarse, self.refinement**2)

    @cached_property
    def coarse_nodes_fine(self) -> np.ndarray:
        """(N, (r+1)^2) fine node indices of each coarse element, ascending.

        Nodes on a coarse edge appear in the list of every adjacent coarse element.
        """
        r = self.refinement
        rows = []
        for i in range(self.n_coarse):
            cx, cy = self.coarse_position(i)
            rows.append(self.block_nodes(cx, cy, cx, cy))
        return np.asarray(rows, dtype=np.int64).reshape(self.n_coarse, (r + 1) ** 2)

    def block_elements(self, cx0: int, cy0: int, cx1: int, cy1: int) -> np.ndarray:
        """Fine elements of the coarse block [cx0, cx1] x [cy0, cy1] (inclusive), ascending."""
        r = self.refinement
        ex = np.arange(cx0 * r, (cx1 + 1) * r)
        ey = np.arange(cy0 * r, (cy1 + 1) * r)
        return (ey[:, None] * self.fine_cells_per_side + ex[None, :]).ravel()

    def block_nodes(self, cx0: int, cy0: int, cx1: int, cy1: int, interior=False) -> np.ndarray:
        """Fine nodes of the coarse block [cx0, cx1] x [cy0, cy1], ascending.

        With interior=True the nodes on the block's boundary are left out.
        """
        r = self.refinement
        shift = 1 if interior else 0
        ix = np.arange(cx0 * r + shift, (cx1 + 1) * r + 1 - shift)
        iy = np.arange(cy0 * r + shift, (cy1 + 1) * r + 1 - shift)
        return (iy[:, None] * self.side + ix[None, :]).ravel()

    @cached_property
    def coarse_node_coordinates(self) -> np.ndarray:
        ticks = np.arange(self.coarse_cells_per_side + 1) * self.H
        y, x = np.meshgrid(ticks, ticks, indexing="ij")
        return np.column_stack((x.ravel(), y.ravel()))

    def grid(self, nodal: np.ndarray) -> np.ndarray:
        """Reshapes trailing nodal axis to (side, side) indexed [iy, ix]."""
        nodal = np.asarray(nodal)
        return nodal.reshape(nodal.shape[:-1] + (self.side, self.side))


def build_mesh_pair(coarse_cells_per_side: int, refinement: int) -> MeshPair:
    return MeshPair(coarse_cells_per_side, refinement)
