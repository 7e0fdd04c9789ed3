import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal
import numpy as np
from tqdm import tqdm
from exceptions import ConfigError, DatasetNotFoundError, NumericalError, SampleFailedError
from fem.assembly import assemble_mass
from fem.fields import Field
from fem.grid import MeshPair
from fem.solvers import FemSettings, solve_parabolic_linear, solve_parabolic_nonlinear, solve_steady, time_step_solver
from msreduction.cem import MultiscaleBasis
from msreduction.projection import coarse_target
from problems.pooling import pooled_width
from problems.sources import XI_HALF_WIDTH, build_source, draw_xi, region_indicators
from problems.steady import EPSILON, sample_steady, steady_target
from services.artifact_store import read_array, read_json, write_array, write_json
from services.printr import Printr
from services.version_info import VersionInfo
from stages.metrics import relative_l2_rows

printr = Printr()

PROBLEM = Literal["linear", "nonlinear", "steady"]
PROBLEMS = ("linear", "nonlinear", "steady")
DATASET_MANIFEST = "manifest.json"
STEADY_FEATURES = ("f0", "f1", "f2")


@dataclass
class ProblemSettings:
    problem: PROBLEM = "linear"
    m0: int = 31
    T: float = float(np.pi)
    gamma: float = 20.0
    epsilon: float = EPSILON
    xi_half_width: float = XI_HALF_WIDTH
    steady_source: float = 1.0
    pool: int = 10
    stride: int = 10
    train_fraction: float = 0.75
    workers: int = 1
    fem: FemSettings = field(default_factory=FemSettings)

    def validate(self) -> list[str]:
        errors = []
        if self.problem not in PROBLEMS:
            errors.append(f"problem must be one of {', '.join(PROBLEMS)}, got '{self.problem}'")
        if self.m0 < 1:
            errors.append("time.m0 must be >= 1")
        if self.T <= 0:
            errors.append("time.T must be positive")
        if self.gamma < 0:
            errors.append("problem.gamma must be >= 0")
        if not 0 < self.train_fraction < 1:
            errors.append("dataset.train_fraction must be in (0, 1)")
        if self.workers < 1:
            errors.append("dataset.workers must be >= 1")
        return errors

    def describe(self) -> dict:
        """Settings that change the generated numbers (worker count does not)."""
        content = {"problem": self.problem, "train_fraction": self.train_fraction}
        if self.problem == "steady":
            content.update(epsilon=self.epsilon, steady_source=self.steady_source, pool=self.pool, stride=self.stride)
        else:
            content.update(m0=self.m0, T=self.T, xi_half_width=self.xi_half_width)
            if self.problem == "nonlinear":
                content.update(gamma=self.gamma, picard_tol=self.fem.picard_tol)
        return content


@dataclass(eq=False)
class SampleSet:
    """Generated samples in generation order; the first `len(train_index)` are the training split.

    params: xi (time-dependent) or p (steady) per sample
    targets: coarse targets per sample
    fine: fine solution at the final time (steady: the solution)
    features: extra per-sample inputs (steady: f0, f1, f2, kappa_pool)
    """

    problem: str
    params: np.ndarray
    targets: np.ndarray
    fine: np.ndarray
    train_index: np.ndarray
    test_index: np.ndarray
    features: dict[str, np.ndarray] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.params.shape[0]

    @property
    def target_width(self) -> int:
        return self.targets.shape[1]

    def train(self, values: np.ndarray) -> np.ndarray:
        return values[self.train_index]

    def test(self, values: np.ndarray) -> np.ndarray:
        return values[self.test_index]

    def save(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        blobs = {"inputs_params": self.params, "targets_coarse": self.targets, "targets_fine": self.fine}
        blobs.update({f"inputs_{name}": values for name, values in self.features.items()})
        digests = {}
        for name, values in blobs.items():
            digests[name] = write_array(os.path.join(directory, f"{name}.bin"), values, kind=name)["sha256"]

        manifest = {
            **self.manifest,
            "kind": "dataset",
            "problem": self.problem,
            "count": self.count,
            "features": sorted(self.features),
            "split": {"train": self.train_index, "test": self.test_index},
            "blobs": digests,
            "versions": VersionInfo().get_package_versions(),
        }
        write_json(os.path.join(directory, DATASET_MANIFEST), manifest)
        self.manifest = manifest

    @staticmethod
    def load(directory: str) -> "SampleSet":
        manifest_path = os.path.join(directory, DATASET_MANIFEST)
        if not os.path.isfile(manifest_path):
            raise DatasetNotFoundError(f"dataset not found: {directory}")
        manifest = read_json(manifest_path)
        VersionInfo().check_layout(manifest, manifest_path)

        def blob(name):
            return read_array(os.path.join(directory, f"{name}.bin"))

        return SampleSet(
            problem=manifest["problem"],
            params=blob("inputs_params"),
            targets=blob("targets_coarse"),
            fine=blob("targets_fine"),
            train_index=np.asarray(manifest["split"]["train"], dtype=np.int64),
            test_index=np.asarray(manifest["split"]["test"], dtype=np.int64),
            features={name: blob(f"inputs_{name}") for name in manifest.get("features", [])},
            manifest=manifest,
        )


def split_indices(count: int, train_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """First share for training, the rest for testing, in generation order."""
    n_train = int(round(count * train_fraction))
    return np.arange(n_train), np.arange(n_train, count)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per sample so results do not depend on the worker count."""
    return np.random.default_rng([int(seed), int(index)])


def generate_dataset(
    problem: PROBLEM,
    count: int,
    seed: int,
    mesh: MeshPair,
    kappa: Field | None = None,
    basis: MultiscaleBasis | None = None,
    settings: ProblemSettings | None = None,
) -> SampleSet:
    settings = settings or ProblemSettings(problem=problem)
    settings.problem = problem
    errors = settings.validate()
    if count < 0:
        errors.append(f"dataset.count must be >= 0, got {count}")
    if problem != "steady":
        if basis is None:
            errors.append(f"the {problem} problem needs a multiscale basis for its targets")
        if kappa is None:
            errors.append(f"the {problem} problem needs a permeability field")
    if errors:
        raise ConfigError("; ".join(errors))

    if problem == "steady":
        sample_set = _generate_steady(count, seed, mesh, settings)
    else:
        sample_set = _generate_parabolic(problem, count, seed, mesh, kappa, basis, settings)

    sample_set.manifest.update(
        {
            "seed": int(seed),
            "mesh": mesh.digest(),
            "kappa": kappa.digest() if kappa is not None else None,
            "basis": {"mesh": basis.mesh_digest, "kappa": basis.kappa_digest, "ell": basis.ell}
            if basis is not None and problem != "steady"
            else None,
            "settings": settings.describe(),
        }
    )
    printr.print_info(f"generated {count} {problem} samples ({len(sample_set.train_index)} train)")
    return sample_set


def _run_samples(count: int, worker, settings: ProblemSettings, label: str) -> list:
    def guarded(index):
        try:
            return worker(index)
        except NumericalError as e:
            raise SampleFailedError(f"sample {index} failed: {e}", index) from e

    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        return list(
            tqdm(pool.map(guarded, range(count)), total=count, desc=label, disable=printr.is_quiet(), leave=False)
        )


def _generate_parabolic(
    problem: PROBLEM,
    count: int,
    seed: int,
    mesh: MeshPair,
    kappa: Field,
    basis: MultiscaleBasis,
    settings: ProblemSettings,
) -> SampleSet:
    indicators = region_indicators(mesh)
    m0, T = settings.m0, settings.T
    # one factorization per worker thread, SuperLU handles are not shared
    local = threading.local()

    def thread_solver():
        if not hasattr(local, "solver"):
            local.solver = time_step_solver(mesh, kappa, T / m0, settings.fem)
        return local.solver

    def solve(index):
        xi = draw_xi(sample_rng(seed, index), settings.xi_half_width)
        source = build_source(xi, mesh, m0, T, indicators)
        if problem == "linear":
            trajectory = solve_parabolic_linear(mesh, kappa, source.F0, m0, T, settings=settings.fem, solver=thread_solver())
        else:
            trajectory = solve_parabolic_nonlinear(mesh, kappa, settings.gamma, source.F0, m0, T, settings=settings.fem)
        return xi, trajectory.final

    results = _run_samples(count, solve, settings, f"{problem} samples")
    params = np.array([xi for xi, _ in results]).reshape(count, 5)
    fine = np.array([u for _, u in results]).reshape(count, mesh.n_nodes)
    targets = coarse_target(fine, basis).reshape(count, basis.n_basis)
    train, test = split_indices(count, settings.train_fraction)
    return SampleSet(problem, params, targets, fine, train, test)


def _generate_steady(count: int, seed: int, mesh: MeshPair, settings: ProblemSettings) -> SampleSet:
    mass = assemble_mass(mesh, Field.constant(mesh, 1.0))
    load = mass @ np.full(mesh.n_nodes, settings.steady_source)

    def solve(index):
        sample, rejected = sample_steady(sample_rng(seed, index), mesh, settings.epsilon)
        u = solve_steady(mesh, sample.kappa_cells, load, settings.fem.cg_tol)
        return sample, rejected, u

    results = _run_samples(count, solve, settings, "steady samples")
    n_features = mesh.n_coarse
    params = np.array([sample.p for sample, _, _ in results]).reshape(count, 3)
    fine = np.array([u for _, _, u in results]).reshape(count, mesh.n_nodes)
    targets = steady_target(fine, mesh).reshape(count, n_features)
    features = {
        name: np.array([sample.features[j] for sample, _, _ in results]).reshape(count, n_features)
        for j, name in enumerate(STEADY_FEATURES)
    }
    pooled = [sample.pooled_kappa(settings.pool, settings.stride, mesh) for sample, _, _ in results]
    features["kappa_pool"] = np.array(pooled).reshape(count, pooled_width(mesh.side, settings.pool, settings.stride))
    train, test = split_indices(count, settings.train_fraction)

    sample_set = SampleSet("steady", params, targets, fine, train, test, features)
    rejected = int(sum(r for _, r, _ in results))
    sample_set.manifest["rejected_draws"] = rejected
    if rejected:
        printr.print_info(f"{rejected} parameter draws redrawn for a non-positive kappa")
    return sample_set


def mean_baseline(train_targets: np.ndarray, test_targets: np.ndarray) -> float:
    """Mean relative l2 error of predicting the training mean for every test sample."""
    train_targets = np.atleast_2d(train_targets)
    test_targets = np.atleast_2d(test_targets)
    if train_targets.shape[0] == 0 or test_targets.shape[0] == 0:
        raise ConfigError("mean baseline needs non-empty training and test targets")
    prediction = np.broadcast_to(train_targets.mean(axis=0), test_targets.shape)
    errors = relative_l2_rows(prediction, test_targets)
    skipped = int(np.isnan(errors).sum())
    if skipped:
        printr.print_warn(f"mean baseline: {skipped} test targets with zero norm excluded")
    if skipped == errors.size:
        raise ConfigError("every test target has zero norm")
    return float(np.nanmean(errors))
