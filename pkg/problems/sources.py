from dataclasses import dataclass
import numpy as np
from fem.fields import time_levels
from fem.grid import MeshPair

N_REGIONS = 5
XI_HALF_WIDTH = 0.5

# closed rectangles [x0, x1] x [y0, y1] carrying the five source branches
SOURCE_REGIONS = (
    ((0.15, 0.25), (0.80, 0.90)),
    ((0.80, 0.90), (0.30, 0.40)),
    ((0.20, 0.30), (0.15, 0.25)),
    ((0.80, 0.90), (0.45, 0.55)),
    ((0.20, 0.30), (0.30, 0.40)),
)
_EDGE_TOL = 1e-12


def region_indicators(mesh: MeshPair) -> np.ndarray:
    """(5, n) 0/1 masks of the source rectangles on the fine nodes; boundary nodes belong to the region."""
    x, y = mesh.x, mesh.y
    masks = np.zeros((N_REGIONS, mesh.n_nodes))
    for k, ((x0, x1), (y0, y1)) in enumerate(SOURCE_REGIONS):
        inside = (
            (x >= x0 - _EDGE_TOL) & (x <= x1 + _EDGE_TOL) & (y >= y0 - _EDGE_TOL) & (y <= y1 + _EDGE_TOL)
        )
        masks[k, inside] = 1.0
    return masks


def time_profiles(times: np.ndarray) -> np.ndarray:
    """(m0, 5) deterministic part of each branch at the given times."""
    t = np.asarray(times, dtype=np.float64)
    return np.column_stack(
        (
            np.exp(1.0 + np.cos(t)),
            -np.exp(1.0 + np.cos(t)),
            6.0 * np.cos(t),
            t**2 / 2.0 + 0.5,
            -((np.pi - t) ** 2) / 2.0,
        )
    )


def source_amplitudes(xi: np.ndarray, m0: int, T: float) -> np.ndarray:
    """(m0, 5) branch values g_k(t_i) + xi_k, so that F0 = amplitudes @ region_indicators."""
    return time_profiles(time_levels(m0, T)) + np.asarray(xi, dtype=np.float64)[None, :]


@dataclass(frozen=True, eq=False)
class SourceSample:
    """One draw of the random source; F0[i, j] = f(t_i, x_j)."""

    xi: np.ndarray
    F0: np.ndarray

    @property
    def m0(self) -> int:
        return self.F0.shape[0]


def draw_xi(rng: np.random.Generator, half_width: float = XI_HALF_WIDTH) -> np.ndarray:
    return rng.uniform(-half_width, half_width, size=N_REGIONS) if half_width > 0 else np.zeros(N_REGIONS)


def build_source(xi: np.ndarray, mesh: MeshPair, m0: int, T: float, indicators: np.ndarray | None = None) -> SourceSample:
    if indicators is None:
        indicators = region_indicators(mesh)
    xi = np.asarray(xi, dtype=np.float64)
    return SourceSample(xi, source_amplitudes(xi, m0, T) @ indicators)


def sample_source(
    rng: np.random.Generator, mesh: MeshPair, m0: int, T: float, half_width: float = XI_HALF_WIDTH
) -> SourceSample:
    return build_source(draw_xi(rng, half_width), mesh, m0, T)
