import numpy as np
import pytest
from exceptions import InvalidInputError, ShapeMismatchError
from fem.assembly import assemble_mass
from fem.fields import Field
from msreduction.projection import coarse_target
from stages.metrics import fine_relative_L2, mass_norm, mean_relative_l2, relative_l2, relative_l2_rows
from stages.report import CSV_COLUMNS, EvalReport, StageRow, parameter_table, sweep_table


def row(stage: int, test_err: float, **kwargs) -> StageRow:
    values = dict(
        stage=stage, selector=f"basis j={stage}", m1=10, r1=30, train_err=test_err / 2,
        test_err=test_err, fine_L2=test_err / 4, params=1000 * stage,
    )
    values.update(kwargs)
    return StageRow(**values)


def sample_report() -> EvalReport:
    report = EvalReport(problem="linear", computed_fine_L2=0.0002, mean_baseline=0.9, seeds=[0, 1, 2])
    for k, error in enumerate((0.04, 0.02, 0.01)):
        report.add_row(row(k + 1, error))
    return report


# ─────────────────────────────── metrics ─────────────────────────────── #


def test_relative_l2():
    assert relative_l2([1.0, 1.0], [2.0, 2.0]) == pytest.approx(0.5)
    assert relative_l2([3.0, 4.0], [3.0, 4.0]) == 0.0
    with pytest.raises(InvalidInputError):
        relative_l2([1.0], [0.0])
    with pytest.raises(ShapeMismatchError):
        relative_l2([1.0], [1.0, 2.0])


def test_relative_l2_rows_mark_zero_targets():
    errors = relative_l2_rows(np.array([[1.0, 0.0], [1.0, 1.0]]), np.array([[2.0, 0.0], [0.0, 0.0]]))
    assert errors[0] == pytest.approx(0.5)
    assert np.isnan(errors[1])
    assert mean_relative_l2(np.array([[1.0, 0.0], [1.0, 1.0]]), np.array([[2.0, 0.0], [0.0, 0.0]])) == pytest.approx(0.5)
    with pytest.raises(InvalidInputError):
        mean_relative_l2(np.ones((2, 2)), np.zeros((2, 2)))


def test_mass_norm_of_constant(small_mesh):
    mass = assemble_mass(small_mesh, Field.constant(small_mesh, 1.0))
    assert mass_norm(mass, np.ones(small_mesh.n_nodes))[0] == pytest.approx(1.0)


def test_fine_error_of_exact_projection_is_projection_error(small_mesh, small_basis, rng):
    mass = assemble_mass(small_mesh, Field.constant(small_mesh, 1.0))
    coefficients = rng.normal(size=small_basis.n_basis)
    u_h = small_basis.matrix @ coefficients
    assert fine_relative_L2(coefficients, u_h, small_basis, mass) == pytest.approx(0.0, abs=1e-12)
    batch = np.stack([u_h, 2.0 * u_h + 0.1])
    errors = fine_relative_L2(coarse_target(batch, small_basis), batch, small_basis, mass)
    assert errors.shape == (2,)
    assert errors[0] == pytest.approx(0.0, abs=1e-10)
    assert errors[1] > 0


# ─────────────────────────────── reports ─────────────────────────────── #


def test_regression_flag():
    report = EvalReport(problem="linear")
    report.add_row(row(1, 0.10))
    report.add_row(row(2, 0.104))
    report.add_row(row(3, 0.12))
    assert [r.regressed for r in report.rows] == [False, False, True]
    notes = report.flagged()
    assert len(notes) == 1 and notes[0].startswith("stage 3")


def test_below_projection_is_flagged():
    report = EvalReport(problem="linear")
    report.add_row(row(1, 0.1, below_projection=3))
    assert "3 test samples beat the projection error" in report.flagged()[0]


def test_csv_layout():
    lines = sample_report().to_csv().splitlines()
    assert lines[0].split(",") == CSV_COLUMNS
    assert lines[1] == "1,basis j=1,10,30,0.02,0.04,0.01,1000"
    assert len(lines) == 4


def test_csv_leaves_missing_values_empty():
    report = EvalReport(problem="steady")
    report.add_row(row(1, 0.1, m1=None, r1=None, fine_L2=None, selector="feature f0"))
    assert report.to_csv().splitlines()[1] == "1,feature f0,,,0.05,0.1,,1000"


def test_markdown_summary():
    text = sample_report().to_markdown()
    assert "| Stage 1 Error | Stage 2 Error | Stage 3 Error |" in text
    assert "| 0.04000 | 0.02000 | 0.01000 |" in text
    assert "Computed (projection) fine L2 error: 0.00020" in text
    assert "Mean baseline error: 0.90000" in text
    assert "Total parameters: 6000" in text
    assert "WARNING" not in text


def test_report_round_trip(tmp_path):
    report = sample_report()
    report.save(str(tmp_path / "report"))
    loaded = EvalReport.load(str(tmp_path / "report"))
    assert loaded.to_dict() == report.to_dict()
    assert (tmp_path / "report.csv").read_text(encoding="UTF-8") == report.to_csv()
    assert (tmp_path / "report.md").read_text(encoding="UTF-8") == report.to_markdown()


def test_sweep_table():
    short = EvalReport(problem="linear")
    short.add_row(row(1, 0.05))
    text = sweep_table({(10, 30): sample_report(), (5, 20): short}, "linear")
    lines = text.splitlines()
    assert lines[0] == "## linear"
    assert "| (10, 30) | 0.04000 | 0.02000 | 0.01000 |" in lines
    assert "| (5, 20) | 0.05000 | - | - |" in lines
    assert sweep_table({}) == ""


def test_parameter_table():
    text = parameter_table([(10, 30, 12345, 6789)])
    assert text.splitlines()[-1] == "| (10, 30) | 12345 | 6789 |"
