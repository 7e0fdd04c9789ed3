import argparse
import copy
import os
import sys
import numpy as np
from exceptions import ConfigError, DatasetNotFoundError, MultistageError, NumericalError, StaleArtifactError
from fem.fields import Field
from fem.grid import MeshPair, build_mesh_pair
from fem.solvers import FemSettings
from msreduction.cem import MultiscaleBasis, build_basis, oversample_bounds
from neuralnet.checkpoint import load_checkpoint, save_checkpoint
from problems.dataset import PROBLEMS, ProblemSettings, SampleSet, generate_dataset
from problems.permeability import load_or_generate_kappa
from problems.sources import XI_HALF_WIDTH
from problems.steady import EPSILON
from services.artifact_store import canonical_json, read_array, read_json, write_array, write_json
from services.config_manager import ConfigManager, get_value
from services.printr import Printr
from services.splashscreen import Splashscreen
from services.version_info import VersionInfo
from services.workspace import MANIFEST, Workspace
from stages.pipeline import Pipeline, PipelineConfig, parameter_comparison
from stages.report import EvalReport, parameter_table, sweep_table
from stages.selectors import StageContext
from stages.steady import steady_config

printr = Printr()

SUBCOMMANDS = ("mesh-info", "build-basis", "gen-data", "train", "eval", "report")
REPORT_STEM = "report"
RUN_SECTIONS = ("network", "training", "stages", "steady")
DEFAULT_STAGE_COUNT = 3


def get_application_root():
    return os.path.dirname(os.path.abspath(__file__))


class MultistageApp:
    def __init__(self, workspace_dir: str | None = None):
        self.app_root_dir = get_application_root()
        self.config_manager = ConfigManager(self.app_root_dir)
        self.workspace = Workspace(workspace_dir)
        self.config: dict = {}

    def load_config(self, config_name: str | None = None, overrides: dict | None = None, dims=None) -> dict:
        self.config = self.config_manager.load(config_name, overrides)
        if dims is not None:
            network = self.config.setdefault("network", {})
            network["m1"], network["r1"] = int(dims[0]), int(dims[1])
            self.config["sweep"] = []
        return self.config

    # ───────────────────────── configured objects ───────────────────────── #

    @property
    def problem(self) -> str:
        tag = get_value(self.config, "problem", "tag", "linear", str)
        if tag not in PROBLEMS:
            raise ConfigError(f"problem.tag must be one of {', '.join(PROBLEMS)}, got '{tag}'")
        return tag

    def mesh(self) -> MeshPair:
        return build_mesh_pair(
            get_value(self.config, "mesh", "coarse", 10, int),
            get_value(self.config, "mesh", "refinement", 10, int),
        )

    def kappa(self, mesh: MeshPair) -> Field:
        return load_or_generate_kappa(self.config.get("kappa") or {"type": "synthetic"}, mesh, os.getcwd())

    def problem_settings(self) -> ProblemSettings:
        config = self.config
        settings = ProblemSettings(
            problem=self.problem,
            m0=get_value(config, "time", "m0", 31, int),
            T=get_value(config, "time", "T", np.pi),
            gamma=get_value(config, "problem", "gamma", 20.0),
            epsilon=get_value(config, "problem", "epsilon", EPSILON),
            xi_half_width=get_value(config, "problem", "xi_half_width", XI_HALF_WIDTH),
            steady_source=get_value(config, "problem", "steady_source", 1.0),
            pool=get_value(config, "problem", "pool", 10, int),
            stride=get_value(config, "problem", "stride", 10, int),
            train_fraction=get_value(config, "dataset", "train_fraction", 0.75),
            workers=get_value(config, "dataset", "workers", 1, int),
            fem=FemSettings.from_config(config.get("fem")),
        )
        errors = settings.validate()
        if errors:
            raise ConfigError("; ".join(errors))
        return settings

    def basis_inputs(self, mesh: MeshPair, kappa: Field) -> dict:
        return {
            "mesh": mesh.digest(),
            "kappa": kappa.digest(),
            "ell": get_value(self.config, "basis", "ell", 3, int),
            "modes": get_value(self.config, "basis", "modes", 3, int),
        }

    def data_inputs(self, mesh: MeshPair, settings: ProblemSettings, kappa: Field | None, basis_hash: str | None) -> dict:
        inputs = {
            "mesh": mesh.digest(),
            "count": get_value(self.config, "dataset", "count", 1600, int),
            "seed": get_value(self.config, "dataset", "seed", 7, int),
            "settings": settings.describe(),
        }
        if settings.problem != "steady":
            inputs.update(kappa=kappa.digest(), basis=basis_hash)
        return inputs

    def run_configs(self, mesh: MeshPair) -> list[tuple[tuple[int, int] | None, dict]]:
        """One effective config per sweep row (or the config itself without a sweep)."""
        base = copy.deepcopy(self.config)
        if self.problem == "steady":
            base = steady_config(base, mesh.n_coarse)
        sweep = base.get("sweep") or []
        if not sweep or self.problem == "steady":
            base["sweep"] = []
            return [(None, base)]
        runs = []
        for row in sweep:
            if not isinstance(row, (list, tuple)) or len(row) != 2:
                raise ConfigError(f"sweep rows must be [m1, r1] pairs, got {row!r}")
            m1, r1 = int(row[0]), int(row[1])
            config = copy.deepcopy(base)
            config["network"] = {**(config.get("network") or {}), "m1": m1, "r1": r1}
            config["sweep"] = []
            runs.append(((m1, r1), config))
        return runs

    def run_key(self, config: dict, data_hash: str, basis_hash: str | None) -> tuple[str, str]:
        config_hash = ConfigManager.config_hash(config)
        inputs = {"data": data_hash, "basis": basis_hash, "run": {key: config.get(key) for key in RUN_SECTIONS}}
        return self.workspace.key("runs", inputs), config_hash

    # ─────────────────────────────── artifacts ─────────────────────────────── #

    def build_basis(self, mesh: MeshPair | None = None, kappa: Field | None = None) -> tuple[MultiscaleBasis, str, bool]:
        mesh = mesh if mesh is not None else self.mesh()
        kappa = kappa if kappa is not None else self.kappa(mesh)
        inputs = self.basis_inputs(mesh, kappa)
        basis_hash, hit = self.workspace.lookup("basis", inputs)
        directory = self.workspace.directory("basis", basis_hash)
        if hit:
            return MultiscaleBasis.load(directory, mesh), basis_hash, True

        printr.print(
            f"building CEM basis: {mesh.n_coarse} coarse elements, {inputs['modes']} modes, ell = {inputs['ell']}",
            tags="blue",
        )
        basis = build_basis(
            mesh, kappa, inputs["modes"], inputs["ell"], get_value(self.config, "dataset", "workers", 1, int)
        )
        self.workspace.prepare("basis", basis_hash)
        basis.save(directory, extra={"inputs": inputs})
        return basis, basis_hash, False

    def gen_data(self) -> tuple[SampleSet, str, bool]:
        mesh = self.mesh()
        settings = self.problem_settings()
        kappa = basis = basis_hash = None
        if settings.problem != "steady":
            kappa = self.kappa(mesh)
            basis, basis_hash, _ = self.build_basis(mesh, kappa)

        inputs = self.data_inputs(mesh, settings, kappa, basis_hash)
        data_hash, hit = self.workspace.lookup("data", inputs)
        directory = self.workspace.directory("data", data_hash)
        if hit:
            return SampleSet.load(directory), data_hash, True

        dataset = generate_dataset(settings.problem, inputs["count"], inputs["seed"], mesh, kappa, basis, settings)
        dataset.manifest["inputs"] = inputs
        self.workspace.prepare("data", data_hash)
        dataset.save(directory)
        return dataset, data_hash, False

    def input_hashes(self, mesh: MeshPair, settings: ProblemSettings) -> tuple[str, str | None]:
        """(data hash, basis hash) the loaded config points at, without building anything."""
        kappa = basis_hash = None
        if settings.problem != "steady":
            kappa = self.kappa(mesh)
            basis_hash = self.workspace.key("basis", self.basis_inputs(mesh, kappa))
        return self.workspace.key("data", self.data_inputs(mesh, settings, kappa, basis_hash)), basis_hash

    def locate_inputs(self, data_hash: str | None = None, basis_hash: str | None = None):
        """Existing dataset and basis for the loaded config; nothing is generated here."""
        mesh = self.mesh()
        settings = self.problem_settings()
        if data_hash is None:
            data_hash, basis_hash = self.input_hashes(mesh, settings)
        if not self.workspace.is_complete("data", data_hash):
            raise DatasetNotFoundError(
                f"dataset not found: {self.workspace.directory('data', data_hash)} (run gen-data with this config first)"
            )
        dataset = SampleSet.load(self.workspace.directory("data", data_hash))

        basis = None
        if settings.problem != "steady":
            if not self.workspace.is_complete("basis", basis_hash):
                raise ConfigError(f"basis not found: {self.workspace.directory('basis', basis_hash)} (run build-basis)")
            basis = MultiscaleBasis.load(self.workspace.directory("basis", basis_hash), mesh)
        context = StageContext(mesh, settings.problem, settings.m0, settings.T, basis, settings.epsilon)
        return context, dataset, data_hash, basis_hash

    # ─────────────────────────────── commands ─────────────────────────────── #

    def mesh_info(self) -> dict:
        mesh = self.mesh()
        ell = get_value(self.config, "basis", "ell", 3, int)
        modes = get_value(self.config, "basis", "modes", 3, int)
        n_c = mesh.coarse_cells_per_side
        regions = {}
        for label, i in (("corner", 0), ("center", (n_c // 2) * n_c + n_c // 2)):
            cx0, cy0, cx1, cy1 = oversample_bounds(mesh, i, ell)
            regions[label] = {
                "coarse_elements": (cx1 - cx0 + 1) * (cy1 - cy0 + 1),
                "interior_dofs": len(mesh.block_nodes(cx0, cy0, cx1, cy1, interior=True)),
            }
        return {
            "H": mesh.H,
            "h": mesh.h,
            "N": mesh.n_coarse,
            "N_c": mesh.n_coarse_nodes,
            "n": mesh.n_nodes,
            "basis_functions": mesh.n_coarse * modes,
            "ell": ell,
            "regions": regions,
        }

    def train(self) -> list[tuple[tuple[int, int] | None, EvalReport, str]]:
        context, dataset, data_hash, basis_hash = self.locate_inputs()
        outcomes = []
        for dims, config in self.run_configs(context.mesh):
            run_hash, config_hash = self.run_key(config, data_hash, basis_hash)
            directory = self.workspace.directory("runs", run_hash)
            if self.workspace.is_complete("runs", run_hash):
                printr.print(f"run {run_hash[:12]} is already trained, reusing its report", tags="green")
                outcomes.append((dims, EvalReport.load(os.path.join(directory, REPORT_STEM)), run_hash))
                continue

            pipeline = Pipeline(PipelineConfig.from_config(config, context.problem), context, config_hash)
            Splashscreen.show(pipeline, context.problem, run_hash)
            report, results = pipeline.run(dataset)

            self.workspace.prepare("runs", run_hash)
            self.config_manager.write(os.path.join(directory, "config.yaml"), config)
            for k, result in enumerate(results):
                name = f"stage{k + 1}"
                save_checkpoint(
                    directory,
                    name,
                    result.model,
                    stage=k + 1,
                    selector=pipeline.get_stages()[k].selector.describe(),
                    epochs_run=result.epochs_run,
                    losses=result.losses,
                )
                write_array(os.path.join(directory, f"{name}_predictions.bin"), result.predictions, kind="predictions")
            report.save(os.path.join(directory, REPORT_STEM))
            write_json(
                os.path.join(directory, MANIFEST),
                {
                    "kind": "run",
                    "config_hash": config_hash,
                    "data": data_hash,
                    "basis": basis_hash,
                    "dims": list(dims) if dims else None,
                    "stages": len(results),
                    "seeds": report.seeds,
                    "versions": VersionInfo().get_package_versions(),
                },
            )
            printr.print(f"run saved to {directory}", tags="green")
            outcomes.append((dims, report, run_hash))
        return outcomes

    def evaluate(self, run_hash: str | None = None) -> tuple[EvalReport, str]:
        """Recomputes the report of a run from its checkpoints and compares it with the stored files."""
        run_hash = run_hash or self.workspace.latest("runs")
        if run_hash is None or not self.workspace.is_complete("runs", run_hash):
            raise ConfigError(f"no trained run found{f' for {run_hash}' if run_hash else ''} in {self.workspace.root_dir}")
        directory = self.workspace.directory("runs", run_hash)
        manifest = read_json(os.path.join(directory, MANIFEST))
        self.config = self.config_manager.load(os.path.join(directory, "config.yaml"))

        context, dataset, _, _ = self.locate_inputs(manifest["data"], manifest["basis"])
        models = [load_checkpoint(directory, f"stage{k + 1}")[0] for k in range(manifest["stages"])]
        pipeline = Pipeline(PipelineConfig.from_config(self.config, context.problem), context, manifest["config_hash"])
        report, predictions = pipeline.evaluate(dataset, models)

        stem = os.path.join(directory, REPORT_STEM)
        mismatches = []
        for k, values in enumerate(predictions):
            if not np.array_equal(values, read_array(os.path.join(directory, f"stage{k + 1}_predictions.bin"))):
                mismatches.append(f"stage {k + 1} predictions")
        if canonical_json(report.to_dict()) != canonical_json(read_json(f"{stem}.json")):
            mismatches.append("report.json")
        for suffix, rendered in ((".csv", report.to_csv()), (".md", report.to_markdown())):
            with open(stem + suffix, "r", encoding="UTF-8") as stream:
                if stream.read() != rendered:
                    mismatches.append(f"report{suffix}")
        if mismatches:
            raise NumericalError(f"run {run_hash[:12]} does not reproduce: {', '.join(mismatches)} differ")
        printr.print(f"run {run_hash[:12]} reproduces its stored report", tags="green")
        return report, run_hash

    def report(self, run_hash: str | None = None, params: bool = False, fmt: str = "md") -> str:
        if params:
            return self.parameter_report()
        if run_hash:
            return self.render_run(run_hash, fmt)

        mesh = self.mesh()
        problem = self.problem
        data_hash, basis_hash = self.input_hashes(mesh, self.problem_settings())
        found = {}
        for dims, config in self.run_configs(mesh):
            candidate, _ = self.run_key(config, data_hash, basis_hash)
            if self.workspace.is_complete("runs", candidate):
                found[dims] = candidate
        if not found:
            raise ConfigError("no trained run matches this config (run train first)")
        if len(found) == 1 or fmt == "csv":
            return "".join(self.render_run(candidate, fmt) for candidate in found.values())
        reports = {dims: EvalReport.load(os.path.join(self.workspace.directory("runs", h), REPORT_STEM)) for dims, h in found.items()}
        return sweep_table(reports, f"{problem}: test error per stage")

    def render_run(self, run_hash: str, fmt: str) -> str:
        if not self.workspace.is_complete("runs", run_hash):
            raise ConfigError(f"run {run_hash} not found in {self.workspace.root_dir}")
        report = EvalReport.load(os.path.join(self.workspace.directory("runs", run_hash), REPORT_STEM))
        return report.to_csv() if fmt == "csv" else report.to_markdown()

    def parameter_report(self) -> str:
        mesh = self.mesh()
        modes = get_value(self.config, "basis", "modes", 3, int)
        m0 = get_value(self.config, "time", "m0", 31, int)
        network = self.config.get("network") or {}
        dims = [(int(m1), int(r1)) for m1, r1 in (self.config.get("sweep") or [])]
        if not dims:
            dims = [(get_value(self.config, "network", "m1", 10, int), get_value(self.config, "network", "r1", 30, int))]
        n_stages = len(self.config.get("stages") or []) or DEFAULT_STAGE_COUNT
        rows = parameter_comparison(dims, m0, mesh.n_coarse * modes, modes, network, n_stages)
        return parameter_table(rows)


# ───────────────────────────────── CLI ───────────────────────────────── #


def parse_dims(value: str) -> tuple[int, int]:
    try:
        m1, r1 = (int(part) for part in value.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"--dims expects m1,r1, got '{value}'") from e
    return m1, r1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (path or name under configs/)")
    common.add_argument("--workspace", help="artifact root (default: $MSSTAGE_WORKSPACE or ./workspace)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--problem", choices=PROBLEMS)
    common.add_argument("--count", type=int)
    common.add_argument("--pool", type=int)
    common.add_argument("--stride", type=int)
    common.add_argument("--ell", type=int)
    common.add_argument("--dims", type=parse_dims, help="m1,r1 (replaces the sweep)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true")
    verbosity.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="multistage", description="Multistage surrogates for multiscale PDEs")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        command = commands.add_parser(name, parents=[common])
        if name in ("eval", "report"):
            command.add_argument("--run", help="run hash (default: latest / the config's runs)")
        if name == "report":
            command.add_argument("--params", action="store_true", help="coupled vs decoupled parameter counts")
            command.add_argument("--format", choices=("md", "csv"), default="md")
    return parser


def run_command(app: MultistageApp, args) -> None:
    if args.command == "mesh-info":
        info = app.mesh_info()
        printr.print(f"H = {info['H']:.6g}, h = {info['h']:.6g}")
        printr.print(f"N = {info['N']} coarse elements, N_c = {info['N_c']} coarse nodes, n = {info['n']} fine nodes")
        printr.print(f"basis functions = {info['basis_functions']}")
        for label, region in info["regions"].items():
            printr.print(
                f"oversampled region (ell = {info['ell']}, {label}): "
                f"{region['coarse_elements']} coarse elements, {region['interior_dofs']} interior DOFs"
            )
    elif args.command == "build-basis":
        basis, basis_hash, hit = app.build_basis()
        state = "cache hit" if hit else "built"
        printr.print(f"basis {basis_hash[:12]} ({basis.n_basis} functions): {state}", tags="green")
    elif args.command == "gen-data":
        dataset, data_hash, hit = app.gen_data()
        state = "cache hit" if hit else "generated"
        printr.print(
            f"dataset {data_hash[:12]}: {len(dataset.train_index)} train / {len(dataset.test_index)} test, {state}",
            tags="green",
        )
    elif args.command == "train":
        outcomes = app.train()
        if len(outcomes) > 1:
            printr.print(sweep_table({dims: report for dims, report, _ in outcomes}))
        else:
            printr.print(outcomes[0][1].to_markdown())
    elif args.command == "eval":
        report, _ = app.evaluate(args.run)
        printr.print(report.to_markdown())
    elif args.command == "report":
        printr.print(app.report(args.run, args.params, args.format).rstrip("\n"))


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    printr.set_verbosity("quiet" if args.quiet else "verbose" if args.verbose else "normal")
    overrides = {key: getattr(args, key) for key in ("seed", "count", "workers", "problem", "pool", "stride", "ell")}
    try:
        app = MultistageApp(args.workspace)
        app.load_config(args.config, overrides, args.dims)
        run_command(app, args)
    except StaleArtifactError as e:
        printr.print_err(f"stale artifact: {e}")
        return e.exit_code
    except MultistageError as e:
        printr.print_err(f"{type(e).__name__}: {e}")
        return e.exit_code
    return 0


# ─────────────────────────────────── ↓ START ↓ ─────────────────────────────────────────
if __name__ == "__main__":
    sys.exit(dispatch())
