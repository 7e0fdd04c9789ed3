import numpy as np
from exceptions import InvalidInputError
from fem.grid import MeshPair


def pool_windows(side: int, pool: int, stride: int) -> list[tuple[int, int]]:
    """Half-open index windows along one grid axis.

    Windows start at 0, stride, 2 * stride, ... as long as a full window fits;
    nodes past the last full window are absorbed by it.
    """
    if pool < 1 or stride < 1:
        raise InvalidInputError(f"pool and stride must be >= 1, got pool={pool} stride={stride}")
    if pool > side:
        raise InvalidInputError(f"pool size {pool} exceeds the grid side {side}")
    starts = list(range(0, side - pool + 1, stride))
    windows = [(start, start + pool) for start in starts]
    last_start, _ = windows[-1]
    windows[-1] = (last_start, side)
    return windows


def pooled_width(side: int, pool: int, stride: int) -> int:
    return len(pool_windows(side, pool, stride)) ** 2


def max_pool_reduce(F0: np.ndarray, pool: int, stride: int, mesh: MeshPair | int) -> np.ndarray:
    """2D max-pooling of nodal rows over the (side x side) grid.

    Args:
        F0: (..., n) nodal values, every leading index is pooled separately
        mesh: mesh or grid side

    Returns:
        (..., r) pooled values, windows ordered row-wise like the nodes
    """
    side = mesh if isinstance(mesh, int) else mesh.side
    F0 = np.asarray(F0, dtype=np.float64)
    if F0.shape[-1] != side * side:
        raise InvalidInputError(f"rows hold {F0.shape[-1]} values, a {side}x{side} grid needs {side * side}")
    grid = F0.reshape(F0.shape[:-1] + (side, side))
    windows = pool_windows(side, pool, stride)

    pooled = np.empty(F0.shape[:-1] + (len(windows), len(windows)))
    for wy, (y0, y1) in enumerate(windows):
        for wx, (x0, x1) in enumerate(windows):
            pooled[..., wy, wx] = grid[..., y0:y1, x0:x1].max(axis=(-2, -1))
    return pooled.reshape(F0.shape[:-1] + (len(windows) ** 2,))
