import csv
import io
import math
from dataclasses import asdict, dataclass, field
from services.artifact_store import read_json, write_json

CSV_COLUMNS = ["stage", "selector", "m1", "r1", "train_err", "test_err", "fine_L2", "params"]
REGRESSION_TOLERANCE = 0.05


@dataclass
class StageRow:
    stage: int
    selector: str
    m1: int | None
    r1: int | None
    train_err: float
    test_err: float
    fine_L2: float | None
    params: int
    below_projection: int = 0
    regressed: bool = False


@dataclass
class EvalReport:
    """Per-stage errors of one pipeline run plus the reference numbers it is judged against."""

    problem: str
    rows: list[StageRow] = field(default_factory=list)
    computed_fine_L2: float | None = None
    mean_baseline: float | None = None
    seeds: list[int] = field(default_factory=list)
    config_hash: str = ""

    @property
    def total_params(self) -> int:
        return sum(row.params for row in self.rows)

    @property
    def test_errors(self) -> list[float]:
        return [row.test_err for row in self.rows]

    def add_row(self, row: StageRow):
        if self.rows:
            previous = self.rows[-1].test_err
            row.regressed = row.test_err > previous * (1.0 + REGRESSION_TOLERANCE)
        self.rows.append(row)

    def flagged(self) -> list[str]:
        """Human-readable warnings: regressing stages and learned errors under the projection error."""
        notes = []
        for row in self.rows:
            if row.regressed:
                notes.append(f"stage {row.stage} ({row.selector}) regressed by more than 5% on the test split")
            if row.below_projection:
                notes.append(
                    f"stage {row.stage}: {row.below_projection} test samples beat the projection error"
                )
        return notes

    # ──────────────────────────── serialization ──────────────────────────── #

    def to_csv(self) -> str:
        stream = io.StringIO()
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_cell(getattr(row, column)) for column in CSV_COLUMNS])
        return stream.getvalue()

    def to_markdown(self) -> str:
        stages = [f"Stage {row.stage} Error" for row in self.rows]
        lines = [
            f"## {self.problem} ({', '.join(row.selector for row in self.rows)})",
            "",
            "| " + " | ".join(stages) + " |",
            "|" + "|".join(" --- " for _ in stages) + "|",
            "| " + " | ".join(f"{row.test_err:.5f}" for row in self.rows) + " |",
            "",
            "| stage | input | (m1, r1) | train | test | fine L2 | params |",
            "| --- | --- | --- | --- | --- | --- | --- |",
        ]
        for row in self.rows:
            dims = f"({row.m1}, {row.r1})" if row.m1 is not None else "-"
            fine = f"{row.fine_L2:.5f}" if row.fine_L2 is not None else "-"
            lines.append(
                f"| {row.stage} | {row.selector} | {dims} | {row.train_err:.5f} | {row.test_err:.5f} "
                f"| {fine} | {row.params} |"
            )
        lines.append("")
        if self.computed_fine_L2 is not None:
            lines.append(f"Computed (projection) fine L2 error: {self.computed_fine_L2:.5f}")
        if self.mean_baseline is not None:
            lines.append(f"Mean baseline error: {self.mean_baseline:.5f}")
        lines.append(f"Total parameters: {self.total_params}")
        for note in self.flagged():
            lines.append(f"WARNING: {note}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(content: dict) -> "EvalReport":
        rows = [StageRow(**row) for row in content.get("rows", [])]
        return EvalReport(**{**content, "rows": rows})

    def save(self, stem: str):
        """Writes `<stem>.json`, `<stem>.csv` and `<stem>.md`."""
        write_json(f"{stem}.json", self.to_dict())
        with open(f"{stem}.csv", "w", encoding="UTF-8") as stream:
            stream.write(self.to_csv())
        with open(f"{stem}.md", "w", encoding="UTF-8") as stream:
            stream.write(self.to_markdown())

    @staticmethod
    def load(stem: str) -> "EvalReport":
        return EvalReport.from_dict(read_json(f"{stem}.json"))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def sweep_table(reports: dict[tuple[int, int], EvalReport], title: str = "") -> str:
    """One row per (m1, r1), one column per stage: the layout of the dimension-sweep tables."""
    if not reports:
        return ""
    n_stages = max(len(report.rows) for report in reports.values())
    header = ["(m1, r1)"] + [f"Stage {k + 1} Error" for k in range(n_stages)]
    lines = [f"## {title}", ""] if title else []
    lines += ["| " + " | ".join(header) + " |", "|" + "|".join(" --- " for _ in header) + "|"]
    for (m1, r1), report in reports.items():
        errors = [f"{error:.5f}" for error in report.test_errors]
        errors += ["-"] * (n_stages - len(errors))
        lines.append(f"| ({m1}, {r1}) | " + " | ".join(errors) + " |")
    return "\n".join(lines) + "\n"


def parameter_table(rows: list[tuple[int, int, int, int]]) -> str:
    """rows: (m1, r1, coupled count, decoupled count)."""
    lines = [
        "| (m1, r1) | coupled inputs | decoupled inputs |",
        "| --- | --- | --- |",
    ]
    for m1, r1, coupled, decoupled in rows:
        lines.append(f"| ({m1}, {r1}) | {coupled} | {decoupled} |")
    return "\n".join(lines) + "\n"
