import copy
from fem.grid import MeshPair
from problems.dataset import SampleSet
from stages.pipeline import Pipeline, PipelineConfig
from stages.report import EvalReport
from stages.selectors import StageContext

# Two-layer combination for the steady stages: hidden width 2l lets it start as a pass-through.
STEADY_COMBINATION_HIDDEN = "2l"


def steady_stages(pooled: bool = False, third_stage: bool = False, pool: int = 10, stride: int = 10) -> list[dict]:
    """Stage list of the steady runs: f0, then f1 (or pooled kappa), optionally f2."""
    stages = [{"name": "coarse average", "input": {"type": "steady_feature", "j": 0}}]
    if pooled:
        stages.append({"name": "pooled kappa", "input": {"type": "steady_pooled_kappa", "pool": pool, "stride": stride}})
    else:
        stages.append({"name": "first scale", "input": {"type": "steady_feature", "j": 1}})
    if third_stage:
        stages.append({"name": "second scale", "input": {"type": "steady_feature", "j": 2}})
    return stages


def steady_config(config: dict, target_width: int) -> dict:
    """Fills in the steady stage list and the two-layer combination width when the config leaves them out."""
    config = copy.deepcopy(config)
    variant = config.get("steady", {})
    if not config.get("stages"):
        config["stages"] = steady_stages(
            pooled=bool(variant.get("pooled", False)),
            third_stage=bool(variant.get("third_stage", False)),
            pool=int(variant.get("pool", 10)),
            stride=int(variant.get("stride", 10)),
        )
    network = config.setdefault("network", {})
    if network.get("combination_hidden") in (None, 0, STEADY_COMBINATION_HIDDEN):
        network["combination_hidden"] = 2 * target_width
    return config


def steady_two_stage(config: dict, dataset: SampleSet, mesh: MeshPair, config_hash: str = "") -> EvalReport:
    """Stage 1 learns the coarse solution from f0 with a dense generator; stage 2 corrects it from f1 or pooled kappa."""
    config = steady_config(config, dataset.target_width)
    context = StageContext(mesh=mesh, problem="steady", epsilon=float(config.get("problem", {}).get("epsilon", 0.1)))
    pipeline = Pipeline(PipelineConfig.from_config(config, "steady"), context, config_hash)
    report, _ = pipeline.run(dataset)
    return report
