from dataclasses import dataclass
from importlib import import_module
from typing import Any
import numpy as np
from exceptions import ConfigError
from fem.grid import MeshPair
from msreduction.cem import MultiscaleBasis
from problems.dataset import SampleSet
from problems.pooling import max_pool_reduce, pooled_width
from problems.sources import region_indicators, source_amplitudes
from problems.steady import EPSILON, kappa_components
from services.printr import Printr

printr = Printr()

TIME_DEPENDENT = ("linear", "nonlinear")


@dataclass
class StageContext:
    """Read-only data a selector may need to turn samples into stage inputs."""

    mesh: MeshPair
    problem: str
    m0: int = 31
    T: float = float(np.pi)
    basis: MultiscaleBasis | None = None
    epsilon: float = EPSILON


class StageInput:
    """Base class of the reduced-order inputs D_k that feed one stage.

    Subclasses turn a SampleSet into one array per sample: an (m0, r0) matrix for
    attention stages or an r0-vector for dense (steady) stages. Custom selectors can be
    loaded from any module with `class: {module: ..., name: ...}` in the stage config.
    """

    kind = "attention"
    problems: tuple[str, ...] = TIME_DEPENDENT

    def __init__(self, name: str, config: dict[str, Any] | None = None, **kwargs):
        self.name = name
        self.config = config or {}
        self.args = kwargs

    @staticmethod
    def create_dynamically(module_path: str, class_name: str, name: str, config: dict[str, Any], **kwargs):
        """Imports `class_name` from `module_path` (dotted, case-sensitive) and instantiates it."""
        module = import_module(module_path)
        DerivedInputClass = getattr(module, class_name)
        return DerivedInputClass(name=name, config=config, **kwargs)

    def validate(self, context: StageContext) -> list[str]:
        """Problems that keep this input from being used; an empty list means it is fine."""
        errors = []
        if context.problem not in self.problems:
            errors.append(f"input '{self.describe()}' does not apply to the {context.problem} problem")
        return errors

    def width(self, context: StageContext) -> int:
        """r0, the spatial width of one input row."""
        raise NotImplementedError

    def build(self, dataset: SampleSet, context: StageContext) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        return self.name


class BasisProjection(StageInput):
    """F0 R[:, S]; computed through the five source rectangles so F0 is never materialized."""

    def columns(self, basis: MultiscaleBasis) -> np.ndarray:
        raise NotImplementedError

    def validate(self, context: StageContext) -> list[str]:
        errors = super().validate(context)
        if context.basis is None:
            errors.append(f"input '{self.describe()}' needs a multiscale basis")
        return errors

    def width(self, context: StageContext) -> int:
        return len(self.columns(context.basis))

    def build(self, dataset: SampleSet, context: StageContext) -> np.ndarray:
        basis = context.basis
        projected_regions = region_indicators(context.mesh) @ basis.matrix[:, self.columns(basis)]
        amplitudes = np.stack([source_amplitudes(xi, context.m0, context.T) for xi in dataset.params])
        return amplitudes.reshape(dataset.count, context.m0, -1) @ projected_regions


class AllBasisProjection(BasisProjection):
    def columns(self, basis: MultiscaleBasis) -> np.ndarray:
        return np.arange(basis.n_basis)

    def describe(self) -> str:
        return "all basis"


class BasisIndexProjection(BasisProjection):
    def __init__(self, name: str, config: dict[str, Any] | None = None, j: int = 1, **kwargs):
        super().__init__(name, config, **kwargs)
        self.j = int(j)

    def validate(self, context: StageContext) -> list[str]:
        errors = super().validate(context)
        if context.basis is not None and not 1 <= self.j <= context.basis.modes_per_element:
            errors.append(f"basis index {self.j} is not in [1, {context.basis.modes_per_element}]")
        return errors

    def columns(self, basis: MultiscaleBasis) -> np.ndarray:
        return basis.columns_for_mode(self.j)

    def describe(self) -> str:
        return f"basis j={self.j}"


class MaxPool(StageInput):
    def __init__(self, name: str, config: dict[str, Any] | None = None, pool: int = 10, stride: int = 10, **kwargs):
        super().__init__(name, config, **kwargs)
        self.pool = int(pool)
        self.stride = int(stride)

    def validate(self, context: StageContext) -> list[str]:
        errors = super().validate(context)
        if self.pool < 1 or self.stride < 1 or self.pool > context.mesh.side:
            errors.append(f"pool {self.pool} / stride {self.stride} do not fit a {context.mesh.side}-node grid")
        return errors

    def width(self, context: StageContext) -> int:
        return pooled_width(context.mesh.side, self.pool, self.stride)

    def build(self, dataset: SampleSet, context: StageContext) -> np.ndarray:
        indicators = region_indicators(context.mesh)
        pooled = np.empty((dataset.count, context.m0, self.width(context)))
        for k, xi in enumerate(dataset.params):
            F0 = source_amplitudes(xi, context.m0, context.T) @ indicators
            pooled[k] = max_pool_reduce(F0, self.pool, self.stride, context.mesh)
        return pooled

    def describe(self) -> str:
        return f"max pool {self.pool}/{self.stride}"


class SteadyFeature(StageInput):
    kind = "dense"
    problems = ("steady",)

    def __init__(self, name: str, config: dict[str, Any] | None = None, j: int = 0, **kwargs):
        super().__init__(name, config, **kwargs)
        self.j = int(j)

    def validate(self, context: StageContext) -> list[str]:
        errors = super().validate(context)
        if not 0 <= self.j <= 2:
            errors.append(f"steady feature index {self.j} is not in [0, 2]")
        return errors

    def width(self, context: StageContext) -> int:
        return context.mesh.n_coarse

    def build(self, dataset: SampleSet, context: StageContext) -> np.ndarray:
        return dataset.features[f"f{self.j}"]

    def describe(self) -> str:
        return f"feature f{self.j}"


class SteadyPooledKappa(StageInput):
    """Max-pooled summed kappa at the fine nodes."""

    kind = "dense"
    problems = ("steady",)

    def __init__(self, name: str, config: dict[str, Any] | None = None, pool: int = 10, stride: int = 10, **kwargs):
        super().__init__(name, config, **kwargs)
        self.pool = int(pool)
        self.stride = int(stride)

    def validate(self, context: StageContext) -> list[str]:
        errors = super().validate(context)
        if self.pool < 1 or self.stride < 1 or self.pool > context.mesh.side:
            errors.append(f"pool {self.pool} / stride {self.stride} do not fit a {context.mesh.side}-node grid")
        return errors

    def width(self, context: StageContext) -> int:
        return pooled_width(context.mesh.side, self.pool, self.stride)

    def build(self, dataset: SampleSet, context: StageContext) -> np.ndarray:
        settings = dataset.manifest.get("settings", {})
        stored = dataset.features.get("kappa_pool")
        if stored is not None and (settings.get("pool"), settings.get("stride")) == (self.pool, self.stride):
            return stored
        pooled = np.empty((dataset.count, self.width(context)))
        for k, p in enumerate(dataset.params):
            kappa = kappa_components(context.mesh.coordinates, p, context.epsilon).sum(axis=0)
            pooled[k] = max_pool_reduce(kappa, self.pool, self.stride, context.mesh)
        return pooled

    def describe(self) -> str:
        return f"pooled kappa {self.pool}/{self.stride}"


SELECTORS: dict[str, type[StageInput]] = {
    "all_basis": AllBasisProjection,
    "basis_index": BasisIndexProjection,
    "max_pool": MaxPool,
    "steady_feature": SteadyFeature,
    "steady_pooled_kappa": SteadyPooledKappa,
}


def create_selector(name: str, config: dict[str, Any]) -> StageInput:
    """Builds the input of a stage from its `input` config section.

    Either `{type: <registered name>, ...args}` or `{class: {module, name}, args: {...}}`.
    """
    class_config = config.get("class")
    if class_config:
        return StageInput.create_dynamically(
            module_path=class_config.get("module"),
            class_name=class_config.get("name"),
            name=name,
            config=config,
            **config.get("args", {}),
        )

    kind = config.get("type")
    if kind not in SELECTORS:
        raise ConfigError(f"stage '{name}': input type must be one of {', '.join(SELECTORS)}, got '{kind}'")
    args = {key: value for key, value in config.items() if key not in ("type", "class", "args")}
    return SELECTORS[kind](name=name, config=config, **args)
