import os
import numpy as np
from exceptions import ConfigError
from fem.fields import Field
from fem.grid import MeshPair
from services.printr import Printr

printr = Printr()

SYNTHETIC_DEFAULTS = {
    "background": 1.0,
    "inclusion": 1.0e4,
    "channels": 4,
    "inclusions": 30,
    "channel_width": 0.02,
    "inclusion_size": [0.02, 0.06],
    "seed": 1234,
}


def synthetic_kappa(mesh: MeshPair, settings: dict | None = None) -> Field:
    """High-contrast field: `background` everywhere, `inclusion` on seeded channels and blocks.

    Channels run horizontally across most of the domain, inclusions are axis-aligned
    squares; all sizes are fractions of the unit square so the pattern survives refinement.
    """
    settings = {**SYNTHETIC_DEFAULTS, **(settings or {})}
    background = float(settings["background"])
    inclusion = float(settings["inclusion"])
    if background <= 0 or inclusion <= 0:
        raise ConfigError("kappa.background and kappa.inclusion must be positive")

    rng = np.random.default_rng(int(settings["seed"]))
    n_f = mesh.fine_cells_per_side
    cells = np.full((n_f, n_f), background)  # [ey, ex]
    centers = (np.arange(n_f) + 0.5) / n_f

    width = float(settings["channel_width"])
    for _ in range(int(settings["channels"])):
        y0 = rng.uniform(0.1, 0.9 - width)
        x0, x1 = sorted(rng.uniform(0.0, 1.0, size=2))
        x0, x1 = min(x0, 0.2), max(x1, 0.8)
        rows = _band(centers, y0, width)
        cols = _band(centers, x0, x1 - x0)
        cells[np.ix_(rows, cols)] = inclusion

    low, high = settings["inclusion_size"]
    for _ in range(int(settings["inclusions"])):
        size = rng.uniform(low, high)
        x0, y0 = rng.uniform(0.0, 1.0 - size, size=2)
        rows = _band(centers, y0, size)
        cols = _band(centers, x0, size)
        cells[np.ix_(rows, cols)] = inclusion

    return Field(cells.ravel())


def load_or_generate_kappa(spec: dict | float | str, mesh: MeshPair, root_dir: str = ".") -> Field:
    """Resolves the `kappa` config section to an elemental field.

    Accepted forms: a number (constant), a path, or a dict with
    `type` constant | file | synthetic and the matching keys.
    """
    if isinstance(spec, (int, float)):
        spec = {"type": "constant", "value": spec}
    elif isinstance(spec, str):
        spec = {"type": "file", "path": spec}

    kind = spec.get("type", "synthetic")
    if kind == "constant":
        kappa = Field.constant(mesh, float(spec.get("value", 1.0)))
    elif kind == "file":
        path = spec.get("path")
        if not path:
            raise ConfigError("kappa.path is required for a kappa file")
        if not os.path.isabs(path):
            path = os.path.join(root_dir, path)
        if not os.path.exists(_blob_path(path)):
            raise ConfigError(f"kappa file {path} not found")
        kappa = Field.load(path, mesh)
    elif kind == "synthetic":
        kappa = synthetic_kappa(mesh, spec)
    else:
        raise ConfigError(f"kappa.type must be constant, file or synthetic, got '{kind}'")

    kappa.check_against(mesh, "elemental")
    kappa.require_positive("kappa")
    printr.print_info(
        f"kappa ({kind}): min {kappa.values.min():.4g}, max {kappa.values.max():.4g}"
    )
    return kappa


def _blob_path(path: str) -> str:
    root, ending = os.path.splitext(path)
    return path if ending == ".bin" else f"{root if ending == '.json' else path}.bin"


def _band(centers: np.ndarray, start: float, length: float) -> np.ndarray:
    """Cells whose centers fall in [start, start + length]; never empty on coarse grids."""
    band = (centers >= start) & (centers <= start + length)
    if not band.any():
        band[np.argmin(np.abs(centers - (start + length / 2.0)))] = True
    return band
