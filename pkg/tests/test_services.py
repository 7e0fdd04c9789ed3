import json
import re
import numpy as np
import pytest
from exceptions import ConfigError, ShapeMismatchError, StaleArtifactError
from services.artifact_store import (
    array_digest,
    canonical_json,
    digest,
    file_digest,
    read_array,
    read_sidecar,
    write_array,
    write_json,
)
from services.config_manager import ConfigManager, deep_merge, get_value
from services.file_creator import FileCreator
from services.printr import Printr
from services.splashscreen import Splashscreen
from services.version_info import WORKSPACE_LAYOUT_VERSION, VersionInfo
from services.workspace import Workspace
from fem.grid import build_mesh_pair
from main import MultistageApp, get_application_root
from msreduction.cem import MultiscaleBasis
from stages.pipeline import Pipeline, PipelineConfig
from stages.selectors import StageContext

# ─────────────────────────────── artifacts ─────────────────────────────── #


def test_canonical_json_is_order_independent():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'
    assert digest({"a": 1, "b": 2}) == digest({"b": 2, "a": 1})
    assert canonical_json({"x": np.arange(2), "y": np.float64(0.5)}) == '{"x":[0,1],"y":0.5}'


def test_array_round_trip(tmp_path):
    values = np.arange(6, dtype=float).reshape(2, 3)
    sidecar = write_array(str(tmp_path / "values.bin"), values, kind="test", note="x")
    assert sidecar["shape"] == [2, 3]
    assert sidecar["sha256"] == array_digest(values)
    assert read_sidecar(str(tmp_path / "values"))["note"] == "x"
    assert np.array_equal(read_array(str(tmp_path / "values.json")), values)
    assert (tmp_path / "values.bin").stat().st_size == 6 * 8
    with pytest.raises(ShapeMismatchError):
        read_array(str(tmp_path / "values.bin"), expected_shape=(3, 2))


def test_modified_blob_is_stale(tmp_path):
    write_array(str(tmp_path / "values.bin"), np.ones(4))
    np.full(4, 2.0, dtype="<f8").tofile(tmp_path / "values.bin")
    with pytest.raises(StaleArtifactError):
        read_array(str(tmp_path / "values.bin"))


def test_truncated_blob_is_rejected(tmp_path):
    write_array(str(tmp_path / "values.bin"), np.ones(4))
    np.ones(3, dtype="<f8").tofile(tmp_path / "values.bin")
    with pytest.raises(ShapeMismatchError):
        read_array(str(tmp_path / "values.bin"))


def test_json_files_are_stable(tmp_path):
    write_json(str(tmp_path / "a.json"), {"b": 1, "a": np.int64(2)})
    text = (tmp_path / "a.json").read_text(encoding="UTF-8")
    assert text == '{\n  "a": 2,\n  "b": 1\n}\n'
    assert len(file_digest(str(tmp_path / "a.json"))) == 64


# ─────────────────────────────── config ─────────────────────────────── #


def test_deep_merge_copies_nested_values():
    source = {"a": {"x": 1, "y": 2}, "b": 1}
    update = {"a": {"y": 3, "z": [1]}, "c": 4}
    merged = deep_merge(source, update)
    assert merged == {"a": {"x": 1, "y": 3, "z": [1]}, "b": 1, "c": 4}
    update["a"]["z"].append(2)
    assert merged["a"]["z"] == [1]


def test_get_value_names_the_field():
    config = {"mesh": {"coarse": "ten", "flag": "yes"}}
    assert get_value(config, "mesh", "refinement", 10, int) == 10
    with pytest.raises(ConfigError, match="mesh.coarse"):
        get_value(config, "mesh", "coarse", 10, int)
    with pytest.raises(ConfigError, match="mesh.flag"):
        get_value(config, "mesh", "flag", False, bool)
    with pytest.raises(ConfigError):
        get_value({"mesh": [1]}, "mesh", "coarse", 10, int)


def test_config_layers_and_overrides():
    manager = ConfigManager(get_application_root())
    config = manager.load("smoke", {"seed": 99, "ell": None})
    assert config["mesh"]["coarse"] == 5
    assert config["basis"]["ell"] == 2
    assert config["basis"]["modes"] == 3
    assert config["dataset"]["seed"] == 99
    with pytest.raises(ConfigError, match="unknown override"):
        manager.load(None, {"colour": "red"})


def test_yaml_errors_report_their_position(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("mesh:\n  coarse: 5\n   refinement: 3\n", encoding="UTF-8")
    manager = ConfigManager(get_application_root())
    with pytest.raises(ConfigError, match=r"line 3, column"):
        manager.load(str(path))
    with pytest.raises(ConfigError, match="not found"):
        manager.load("no_such_config")


SHIPPED_CONFIGS = (
    "linear_coupled",
    "linear_decoupled",
    "linear_pooled",
    "nonlinear_coupled",
    "nonlinear_decoupled",
    "nonlinear_pooled",
    "steady2",
    "steady2_pooled",
    "steady3",
    "smoke",
)


def shaped_basis(mesh, modes: int) -> MultiscaleBasis:
    """Basis of the right shape; stage validation only reads its column layout."""
    n_basis = mesh.n_coarse * modes
    return MultiscaleBasis(
        matrix=np.zeros((mesh.n_nodes, n_basis)),
        ell=1,
        modes_per_element=modes,
        eigenvalues=np.zeros(n_basis),
        mesh_digest=mesh.digest(),
        kappa_digest="",
    )


def sweep_errors(app: MultistageApp, basis: MultiscaleBasis | None) -> list[str]:
    mesh = app.mesh()
    settings = app.problem_settings()
    context = StageContext(mesh, settings.problem, settings.m0, settings.T, basis)
    errors = []
    for dims, config in app.run_configs(mesh):
        pipeline = PipelineConfig.from_config(config, settings.problem)
        errors += [f"{dims}: {e}" for e in pipeline.validate(context)]
    return errors


@pytest.mark.parametrize("name", SHIPPED_CONFIGS)
def test_shipped_configs_validate_on_their_mesh(tmp_path, name):
    app = MultistageApp(str(tmp_path))
    app.load_config(name)
    basis = None
    if app.problem != "steady":
        basis = shaped_basis(app.mesh(), app.config["basis"]["modes"])
    assert sweep_errors(app, basis) == []


@pytest.mark.slow
def test_smoke_config_validates_against_a_built_basis(tmp_path):
    app = MultistageApp(str(tmp_path))
    app.load_config("smoke")
    basis, _, _ = app.build_basis()
    assert basis.n_basis == 75
    assert sweep_errors(app, basis) == []


def test_sweep_rows_wider_than_the_inputs_are_reported(tmp_path):
    app = MultistageApp(str(tmp_path))
    app.load_config("smoke")
    app.config["sweep"] = [[10, 30]]
    errors = sweep_errors(app, shaped_basis(app.mesh(), 3))
    assert len(errors) == 3
    assert all("r1=30 must not exceed r0=25" in e for e in errors)


def test_config_written_as_yaml_reads_back(tmp_path):
    manager = ConfigManager(get_application_root())
    config = manager.load("smoke")
    manager.write(str(tmp_path / "config.yaml"), config)
    assert manager.load(str(tmp_path / "config.yaml")) == config
    assert ConfigManager.config_hash(config) == ConfigManager.config_hash(json.loads(json.dumps(config)))


# ─────────────────────────────── workspace ─────────────────────────────── #


def test_workspace_keys_and_lookup(tmp_path):
    workspace = Workspace(str(tmp_path))
    key = workspace.key("basis", {"ell": 3})
    assert key == workspace.key("basis", {"ell": 3})
    assert key != workspace.key("basis", {"ell": 2})
    assert key != workspace.key("data", {"ell": 3})
    with pytest.raises(ValueError):
        workspace.key("models", {})

    assert workspace.lookup("basis", {"ell": 3}) == (key, False)
    assert workspace.latest("basis") is None
    creator = workspace.prepare("basis", key)
    write_json(creator.get_full_file_path("manifest.json"), {"versions": VersionInfo().get_package_versions()})
    assert creator.has_file("manifest.json")
    assert workspace.lookup("basis", {"ell": 3}) == (key, True)
    assert workspace.latest("basis") == key


def test_workspace_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("MSSTAGE_WORKSPACE", str(tmp_path))
    assert Workspace().root_dir == str(tmp_path)


def test_layout_versions():
    info = VersionInfo()
    assert info.get_package_versions()["layout"] == WORKSPACE_LAYOUT_VERSION
    info.check_layout({"versions": {"layout": "1.7"}}, "ok")
    with pytest.raises(StaleArtifactError):
        info.check_layout({"versions": {"layout": "2.0"}}, "newer")
    with pytest.raises(StaleArtifactError):
        info.check_layout({}, "none")
    with pytest.raises(StaleArtifactError):
        info.check_layout({"versions": {"layout": "one"}}, "garbled")


def test_file_creator_makes_directories(tmp_path):
    creator = FileCreator(str(tmp_path), "a/b")
    assert (tmp_path / "a" / "b").is_dir()
    assert not creator.has_file("x.txt")


# ─────────────────────────────── console ─────────────────────────────── #


def test_printr_channels(capsys):
    printr = Printr()
    printr.set_colors(False)
    try:
        printr.set_verbosity("normal")
        printr.print("main text")
        printr.print_info("hidden info")
        printr.print_err("error text")
        printr.set_verbosity("quiet")
        printr.print("muted")
        printr.print_warn("still shown")
    finally:
        printr.set_colors(True)
    out = capsys.readouterr().out
    assert "main text" in out and "error text" in out and "still shown" in out
    assert "hidden info" not in out and "muted" not in out
    assert ("info", "hidden info") in printr.history


def test_splashscreen_lists_broken_stages(capsys):
    Printr().set_verbosity("normal")
    config = {"stages": [{"name": "ok", "input": {"type": "all_basis"}}, {"name": "bad", "input": {"type": "x"}}]}
    pipeline = Pipeline(PipelineConfig.from_config(config, "linear"), StageContext(build_mesh_pair(1, 1), "linear"))
    Splashscreen.show(pipeline, "linear", "f" * 64)
    out = re.sub(r"\033\[[0-9;]*[A-Za-z]", "", capsys.readouterr().out)
    assert "1 stage registered" in out
    assert "could not be built" in out
