from dataclasses import dataclass
import numpy as np
from exceptions import NonPositiveCoefficientError
from fem.fields import Field
from fem.grid import MeshPair
from problems.pooling import max_pool_reduce

EPSILON = 0.1
P_RANGES = ((-2.0, 2.0), (-1.2, 1.2), (-1.5, 1.5))
N_COMPONENTS = len(P_RANGES)


def kappa_components(points: np.ndarray, p: np.ndarray, epsilon: float = EPSILON) -> np.ndarray:
    """(3, len(points)) values of kappa^0, kappa^1, kappa^2 at the given (x1, x2) points."""
    x1, x2 = points[:, 0], points[:, 1]
    p0, p1, p2 = p
    wave = 2.0 * np.pi / epsilon
    return np.vstack(
        (
            np.full(x1.shape, 8.0 + p0),
            np.exp(x1 + x2 + p1) * np.cos(wave * x2) * np.sin(wave * x1),
            np.exp(x1 * x2 + p2) * np.cos(wave * x1) * np.sin(wave * x2),
        )
    )


def draw_parameters(rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.uniform(low, high) for low, high in P_RANGES])


def steady_features(component: np.ndarray | Field, mesh: MeshPair) -> np.ndarray:
    """Average of a nodal component over the fine nodes of every coarse element.

    Nodes on a coarse edge count in each adjacent element.
    """
    values = component.values if isinstance(component, Field) else np.asarray(component, dtype=np.float64)
    return values[..., mesh.coarse_nodes_fine].mean(axis=-1)


def steady_target(u_f: np.ndarray, mesh: MeshPair) -> np.ndarray:
    return steady_features(u_f, mesh)


@dataclass(frozen=True, eq=False)
class SteadySample:
    """One parameter draw with its kappa components and derived inputs.

    `components` and `kappa` hold nodal values (features); `kappa_cells` is kappa at the
    fine element centers (what the solver sees).
    """

    p: np.ndarray
    components: np.ndarray
    kappa: np.ndarray
    kappa_cells: Field
    features: np.ndarray

    def pooled_kappa(self, pool: int, stride: int, mesh: MeshPair) -> np.ndarray:
        return max_pool_reduce(self.kappa, pool, stride, mesh)


def build_steady_sample(p: np.ndarray, mesh: MeshPair, epsilon: float = EPSILON) -> SteadySample | None:
    """None when kappa is not strictly positive on every fine element."""
    p = np.asarray(p, dtype=np.float64)
    cells = kappa_components(mesh.element_centers, p, epsilon).sum(axis=0)
    if np.any(cells <= 0):
        return None
    components = kappa_components(mesh.coordinates, p, epsilon)
    return SteadySample(
        p=p,
        components=components,
        kappa=components.sum(axis=0),
        kappa_cells=Field(cells),
        features=steady_features(components, mesh),
    )


def sample_steady(
    rng: np.random.Generator, mesh: MeshPair, epsilon: float = EPSILON, max_draws: int = 1000
) -> tuple[SteadySample, int]:
    """Draws until kappa is positive; returns the sample and the number of rejected draws."""
    for rejected in range(max_draws):
        sample = build_steady_sample(draw_parameters(rng), mesh, epsilon)
        if sample is not None:
            return sample, rejected
    raise NonPositiveCoefficientError(f"no positive kappa within {max_draws} parameter draws")
