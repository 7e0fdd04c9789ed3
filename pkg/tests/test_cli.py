import os
import pytest
import yaml
from exceptions import DatasetNotFoundError
from fem.grid import build_mesh_pair
from main import MultistageApp, build_parser, dispatch, parse_dims
from stages.pipeline import PipelineConfig
from stages.selectors import StageContext

TINY = {
    "mesh": {"coarse": 2, "refinement": 3},
    "time": {"m0": 3},
    "basis": {"ell": 1, "modes": 2},
    "kappa": {"type": "synthetic", "inclusion": 50.0, "channels": 1, "inclusions": 2, "seed": 5},
    "problem": {"tag": "linear", "pool": 3, "stride": 3},
    "dataset": {"count": 8, "seed": 3},
    "network": {"m1": 2, "r1": 3, "heads": 3},
    "training": {"epochs": 3, "patience": 5, "batch_size": 4},
    "stages": [
        {"name": "stage1", "input": {"type": "basis_index", "j": 1}},
        {"name": "stage2", "input": {"type": "basis_index", "j": 2}, "training": {"seed": 1}},
    ],
    "sweep": [],
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY), encoding="UTF-8")
    return str(path)


@pytest.fixture
def workspace(tmp_path):
    return str(tmp_path / "ws")


def run(config, workspace, *args, quiet=True):
    flags = ["--quiet"] if quiet else []
    return dispatch([args[0], "--config", config, "--workspace", workspace, *flags, *args[1:]])


def test_parse_dims():
    assert parse_dims("10,30") == (10, 30)
    with pytest.raises(Exception):
        parse_dims("10")


def test_parser_rejects_unknown_problem():
    assert dispatch(["gen-data", "--problem", "wave"]) == 2
    assert build_parser().parse_args(["report", "--params"]).params


def test_mesh_info_on_default_grid(capsys):
    assert dispatch(["mesh-info"]) == 0
    out = capsys.readouterr().out
    assert "N = 100 coarse elements, N_c = 121 coarse nodes, n = 10201 fine nodes" in out
    assert "basis functions = 300" in out
    assert "center): 49 coarse elements, 4761 interior DOFs" in out
    assert "corner): 16 coarse elements, 1521 interior DOFs" in out


def test_mesh_info_honours_overrides():
    app = MultistageApp()
    app.load_config(None, {"ell": 1})
    info = app.mesh_info()
    assert info["ell"] == 1
    assert info["regions"]["center"] == {"coarse_elements": 9, "interior_dofs": 29**2}


def test_build_basis_is_cached(tiny_config, workspace):
    app = MultistageApp(workspace)
    app.load_config(tiny_config)
    basis, first_hash, hit = app.build_basis()
    assert not hit
    assert basis.n_basis == 8
    again, second_hash, hit = app.build_basis()
    assert hit
    assert second_hash == first_hash
    assert (again.matrix == basis.matrix).all()


def test_train_without_dataset(tiny_config, workspace):
    assert run(tiny_config, workspace, "train") == 2
    app = MultistageApp(workspace)
    app.load_config(tiny_config)
    with pytest.raises(DatasetNotFoundError, match="dataset not found"):
        app.train()


def test_unparsable_config(tmp_path, workspace):
    broken = tmp_path / "broken.yaml"
    broken.write_text("mesh:\n  coarse: [1, 2\n", encoding="UTF-8")
    assert run(str(broken), workspace, "mesh-info") == 2


def test_bad_config_value(tmp_path, workspace):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"mesh": {"coarse": "ten"}}), encoding="UTF-8")
    assert run(str(path), workspace, "mesh-info") == 2


def test_full_workflow(tiny_config, workspace, capsys):
    assert run(tiny_config, workspace, "gen-data") == 0
    assert run(tiny_config, workspace, "gen-data") == 0
    assert len(os.listdir(os.path.join(workspace, "data"))) == 1

    assert run(tiny_config, workspace, "train") == 0
    runs = os.listdir(os.path.join(workspace, "runs"))
    assert len(runs) == 1
    run_dir = os.path.join(workspace, "runs", runs[0])
    for name in ("config.yaml", "stage1.bin", "stage2.manifest.json", "stage2_predictions.bin", "report.csv", "manifest.json"):
        assert os.path.isfile(os.path.join(run_dir, name)), name

    capsys.readouterr()
    assert run(tiny_config, workspace, "eval") == 0
    assert run(tiny_config, workspace, "report", "--format", "csv", quiet=False) == 0
    out = capsys.readouterr().out
    assert "stage,selector,m1,r1,train_err,test_err,fine_L2,params" in out
    assert "basis j=2" in out

    assert run(tiny_config, workspace, "report", "--params", quiet=False) == 0
    assert "| (2, 3) |" in capsys.readouterr().out

    with open(os.path.join(run_dir, "report.csv"), "a", encoding="UTF-8") as stream:
        stream.write("tampered\n")
    assert run(tiny_config, workspace, "eval", "--run", runs[0]) == 1


def test_eval_without_runs(tiny_config, workspace):
    assert run(tiny_config, workspace, "eval") == 2


def test_quiet_mesh_info_prints_nothing(capsys):
    assert dispatch(["mesh-info", "--quiet"]) == 0
    assert capsys.readouterr().out == ""


def pooled_stage(config_name: str, overrides: dict, problem: str):
    app = MultistageApp()
    app.load_config(config_name, overrides)
    config = app.run_configs(app.mesh())[0][1]
    return PipelineConfig.from_config(config, problem).stages[-1].selector


def test_pool_flags_resize_pooled_stages():
    context = StageContext(build_mesh_pair(10, 10), "linear")
    assert pooled_stage("linear_pooled", {}, "linear").width(context) == 100
    resized = pooled_stage("linear_pooled", {"pool": 3, "stride": 3}, "linear")
    assert (resized.pool, resized.stride) == (3, 3)
    # windows start at 0, 3, ..., 98 on the 101-node side
    assert resized.width(context) == 33**2


def test_pool_flags_reach_the_steady_pooled_variant():
    stage = pooled_stage("steady2_pooled", {"pool": 5, "stride": 5}, "steady")
    assert stage.describe() == "pooled kappa 5/5"
    app = MultistageApp()
    app.load_config("steady3", {"pool": 5})
    assert app.config["steady"]["pool"] == 5


def test_pool_flags_parse_into_overrides():
    args = build_parser().parse_args(["train", "--pool", "3", "--stride", "2"])
    assert (args.pool, args.stride) == (3, 2)
