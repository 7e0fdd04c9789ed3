import copy
from dataclasses import dataclass, field
import numpy as np
import torch
from exceptions import ConfigError, MultistageError
from fem.assembly import assemble_mass
from fem.fields import Field, SparseOperator
from neuralnet.attention import DTYPE
from neuralnet.stage_model import StageArchitecture, StageModel, parameter_count
from problems.dataset import SampleSet, mean_baseline
from services.config_manager import POOLED_INPUTS, deep_merge
from services.printr import Printr
from stages.metrics import fine_relative_L2, relative_l2_rows
from stages.report import EvalReport, StageRow
from stages.selectors import StageContext, create_selector
from stages.stage import Standardizer, StageResult, StageSpec, TrainingSettings, predict, train_stage

printr = Printr()

MERGED_SECTIONS = ("training", "network")
POOL_KEYS = ("pool", "stride")


def target_width(context: StageContext) -> int:
    if context.problem == "steady":
        return context.mesh.n_coarse
    if context.basis is None:
        raise ConfigError(f"the {context.problem} problem needs a multiscale basis")
    return context.basis.n_basis


@dataclass
class PipelineConfig:
    """Ordered stages of one run; stages that could not be built end up in `broken`."""

    problem: str
    stages: list[StageSpec] = field(default_factory=list)
    broken: list[dict] = field(default_factory=list)

    @staticmethod
    def from_config(config: dict, problem: str) -> "PipelineConfig":
        pipeline = PipelineConfig(problem)
        general = {section: config.get(section, {}) for section in MERGED_SECTIONS}
        pooling = {key: config["problem"][key] for key in POOL_KEYS if key in (config.get("problem") or {})}
        for k, stage_config in enumerate(config.get("stages", [])):
            name = stage_config.get("name", f"stage{k + 1}")
            if stage_config.get("disabled") is True:
                continue
            merged = PipelineConfig.merge_stage_config(general, stage_config)
            stage_input = merged.get("input", {})
            if isinstance(stage_input, dict) and stage_input.get("type") in POOLED_INPUTS:
                stage_input = {**pooling, **stage_input}
            try:
                selector = create_selector(name, stage_input)
                spec = StageSpec(
                    name=name,
                    selector=selector,
                    network=merged.get("network", {}),
                    training=TrainingSettings.from_config(merged.get("training", {})),
                )
            except Exception as e:  # pylint: disable=broad-except
                msg = str(e).strip() or type(e).__name__
                pipeline.broken.append({"name": name, "error": msg})
            else:
                pipeline.stages.append(spec)
        return pipeline

    @staticmethod
    def merge_stage_config(general: dict, stage: dict) -> dict:
        """General `training`/`network` sections with the stage's own keys on top."""
        merged = copy.deepcopy(stage)
        for section in MERGED_SECTIONS:
            merged[section] = deep_merge(copy.deepcopy(general.get(section, {})), stage.get(section, {}))
        return merged

    def validate(self, context: StageContext) -> list[str]:
        errors = [f"{stage['name']}: {stage['error']}" for stage in self.broken]
        if not self.stages and not self.broken:
            errors.append("the pipeline needs at least one stage")
        if context.problem != self.problem:
            errors.append(f"pipeline is configured for {self.problem}, the dataset holds {context.problem}")
        if errors:
            return errors
        width = target_width(context)
        for k, spec in enumerate(self.stages):
            errors += [f"{spec.name}: {e}" for e in spec.validate(context, width, k > 0)]
        return errors


class Pipeline:
    """Trains the stages one after another; every stage sees the frozen predictions of its predecessor."""

    def __init__(self, config: PipelineConfig, context: StageContext, config_hash: str = ""):
        self.config = config
        self.context = context
        self.config_hash = config_hash
        self.mass: SparseOperator | None = None
        if context.basis is not None and context.problem != "steady":
            self.mass = assemble_mass(context.mesh, Field.constant(context.mesh, 1.0))

    def get_stages(self) -> list[StageSpec]:
        return self.config.stages

    def get_broken_stages(self) -> list[dict]:
        return self.config.broken

    def check(self, dataset: SampleSet):
        errors = self.config.validate(self.context)
        if dataset.problem != self.context.problem:
            errors.append(f"dataset holds {dataset.problem} samples, the run expects {self.context.problem}")
        if len(dataset.train_index) == 0 or len(dataset.test_index) == 0:
            errors.append("dataset needs non-empty training and test splits")
        if errors:
            raise ConfigError("pipeline cannot run: " + "; ".join(errors))

    def new_report(self, dataset: SampleSet) -> EvalReport:
        report = EvalReport(
            problem=self.context.problem,
            seeds=[spec.training.seed for spec in self.config.stages],
            config_hash=self.config_hash,
        )
        report.mean_baseline = mean_baseline(dataset.train(dataset.targets), dataset.test(dataset.targets))
        if self.mass is not None:
            computed = fine_relative_L2(
                dataset.test(dataset.targets), dataset.test(dataset.fine), self.context.basis, self.mass
            )
            report.computed_fine_L2 = float(np.mean(computed))
        return report

    def stage_row(self, k: int, spec: StageSpec, model: StageModel, predictions: np.ndarray, dataset: SampleSet) -> StageRow:
        train_err = float(np.nanmean(relative_l2_rows(dataset.train(predictions), dataset.train(dataset.targets))))
        test_err = float(np.nanmean(relative_l2_rows(dataset.test(predictions), dataset.test(dataset.targets))))
        fine, below = None, 0
        if self.mass is not None:
            test_fine = dataset.test(dataset.fine)
            learned = fine_relative_L2(dataset.test(predictions), test_fine, self.context.basis, self.mass)
            computed = fine_relative_L2(dataset.test(dataset.targets), test_fine, self.context.basis, self.mass)
            fine = float(np.mean(learned))
            below = int(np.sum(learned < computed))
        architecture = model.architecture
        attention = architecture.kind == "attention"
        return StageRow(
            stage=k + 1,
            selector=spec.selector.describe(),
            m1=architecture.m1 if attention else None,
            r1=architecture.r1 if attention else None,
            train_err=train_err,
            test_err=test_err,
            fine_L2=fine,
            params=parameter_count(model),
            below_projection=below,
        )

    def run(self, dataset: SampleSet) -> tuple[EvalReport, list[StageResult]]:
        self.check(dataset)
        report = self.new_report(dataset)
        results: list[StageResult] = []
        prev = None
        for k, spec in enumerate(self.config.stages):
            printr.print(f"training stage {k + 1}/{len(self.config.stages)}: {spec.selector.describe()}", tags="blue")
            try:
                result = train_stage(spec, dataset, self.context, k + 1, prev)
            except MultistageError:
                printr.print_err(f"stage {k + 1} ({spec.name}) failed")
                raise
            prev = result.predictions
            results.append(result)
            row = self.stage_row(k, spec, result.model, result.predictions, dataset)
            report.add_row(row)
            printr.print(
                f"  stage {k + 1}: train {row.train_err:.5f}, test {row.test_err:.5f} after {result.epochs_run} epochs",
                tags="green",
            )
        for note in report.flagged():
            printr.print_warn(note)
        return report, results

    def evaluate(self, dataset: SampleSet, models: list[StageModel]) -> tuple[EvalReport, list[np.ndarray]]:
        """Rebuilds the report and the stage predictions from trained models without training."""
        self.check(dataset)
        if len(models) != len(self.config.stages):
            raise ConfigError(f"{len(models)} checkpoints for {len(self.config.stages)} stages")
        report = self.new_report(dataset)
        outputs = []
        prev = None
        for k, (spec, model) in enumerate(zip(self.config.stages, models)):
            torch.set_num_threads(max(1, spec.training.threads))
            inputs = spec.selector.build(dataset, self.context)
            standardizer = Standardizer.fit(dataset.train(inputs))
            x = torch.as_tensor(standardizer(inputs), dtype=DTYPE)
            previous = None if prev is None else torch.as_tensor(prev, dtype=DTYPE)
            predictions = predict(model, x, previous)
            report.add_row(self.stage_row(k, spec, model, predictions, dataset))
            outputs.append(predictions)
            prev = predictions
        return report, outputs


def run_pipeline(config: PipelineConfig, dataset: SampleSet, context: StageContext, config_hash: str = "") -> EvalReport:
    report, _ = Pipeline(config, context, config_hash).run(dataset)
    return report


def parameter_comparison(
    dims: list[tuple[int, int]], m0: int, n_basis: int, modes: int, network: dict, n_stages: int = 3
) -> list[tuple[int, int, int, int]]:
    """Summed parameter counts of an n-stage run fed with all basis columns vs one eigen-index per stage."""
    rows = []
    for m1, r1 in dims:
        totals = []
        for r0 in (n_basis, n_basis // modes):
            total = 0
            for k in range(n_stages):
                architecture = StageArchitecture(
                    kind="attention",
                    r0=r0,
                    l=n_basis,
                    m0=m0,
                    m1=m1,
                    r1=r1,
                    heads=int(network.get("heads", 6)),
                    layers=int(network.get("layers", 1)),
                    ff_multiplier=int(network.get("ff_multiplier", 2)),
                    combination=k > 0,
                    combination_hidden=int(network.get("combination_hidden", 0)),
                )
                total += parameter_count(StageModel(architecture))
            totals.append(total)
        rows.append((m1, r1, totals[0], totals[1]))
    return rows
