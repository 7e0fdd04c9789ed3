import pytest
import yaml
from main import MultistageApp

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def steady_workspace(tmp_path_factory):
    return str(tmp_path_factory.mktemp("steady"))


def steady_outcome(workspace: str, config: str):
    app = MultistageApp(workspace)
    app.load_config(config, {"problem": "steady", "count": 1600, "seed": 7})
    dataset, _, _ = app.gen_data()
    assert (len(dataset.train_index), len(dataset.test_index)) == (1200, 400)
    [(_, report, _)] = app.train()
    return report


def test_steady_two_stage_reproduction(steady_workspace):
    report = steady_outcome(steady_workspace, "steady2")
    first, second = report.test_errors
    assert 0.15 <= first <= 0.30
    assert 0.07 <= second <= 0.15
    assert first / second >= 1.5
    assert 0.25 <= report.mean_baseline <= 0.41


def test_steady_pooled_reproduction(steady_workspace):
    report = steady_outcome(steady_workspace, "steady2_pooled")
    assert 0.07 <= report.test_errors[1] <= 0.16


def linear_outcomes(workspace: str, config: str, overrides: dict | None = None) -> list:
    app = MultistageApp(workspace)
    app.load_config(config, {"problem": "linear", **(overrides or {})})
    app.gen_data()
    return [report for _, report, _ in app.train()]


def decreasing(report) -> bool:
    first, second, third = report.test_errors
    return first > second > third


@pytest.fixture(scope="module")
def linear_workspace(tmp_path_factory):
    return str(tmp_path_factory.mktemp("linear"))


def test_linear_sweep_improves_stage_by_stage(linear_workspace):
    coupled = linear_outcomes(linear_workspace, "linear_coupled", {"count": 1600, "seed": 7})
    decoupled = linear_outcomes(linear_workspace, "linear_decoupled", {"count": 1600, "seed": 7})
    assert len(coupled) == len(decoupled) == 5
    assert sum(decreasing(report) for report in coupled) >= 4
    assert sum(decreasing(report) for report in decoupled) >= 4
    wins = sum(d.test_errors[-1] <= c.test_errors[-1] for c, d in zip(coupled, decoupled))
    assert wins >= 3


def test_smoke_runs_improve_stage_by_stage(linear_workspace, tmp_path):
    with open(MultistageApp(linear_workspace).config_manager.resolve("smoke"), "r", encoding="UTF-8") as stream:
        config = yaml.safe_load(stream)
    config["stages"] = [
        {"name": f"stage{k + 1}", "input": {"type": "all_basis"}, "training": {"seed": k}} for k in range(3)
    ]
    coupled_config = tmp_path / "smoke_coupled.yaml"
    coupled_config.write_text(yaml.safe_dump(config), encoding="UTF-8")

    [decoupled] = linear_outcomes(linear_workspace, "smoke")
    [coupled] = linear_outcomes(linear_workspace, str(coupled_config))
    assert decreasing(decoupled)
    assert decreasing(coupled)
    assert decoupled.test_errors[-1] <= coupled.test_errors[-1]
