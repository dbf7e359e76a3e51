import json
import math
import os

import pytest

from src.config import SweepSpec
from src.results_writer import CSV_HEADER, ResultsWriter, SweepRow


@pytest.fixture
def writer(tmp_path):
    """Create a writer in a throwaway results directory."""
    return ResultsWriter(output_directory=str(tmp_path / "results"))


@pytest.fixture
def rows():
    return [
        SweepRow("osm", 2, 1.5, 0.0, 0, -0.123456789012345678, 1e-3, 2e-3, False, 50),
        SweepRow("dcs-rjmin", 4, 20.0, 1.0, 0, math.inf, 1e13, 3e14, True, 7),
        SweepRow("dcs-rjmin", 4, 1.0, 1.0, 1, -2.0 / 3.0, 0.1, 0.2, False, 50, wall_time=0.5),
        SweepRow("dcs-rjmin", 2, 3.0, 40.0, 0, -5.5, 1.0 / 3.0, 0.0, False, 50),
    ]


def test_empty_table_writes_header_only(writer):
    path = writer.emit_csv([])
    with open(path, encoding="utf-8") as f:
        assert f.read() == ",".join(CSV_HEADER) + "\n"
    assert writer.emit_plotdata([]) == []
    assert not os.path.exists(os.path.join(writer.output_directory, "plotdata"))


def test_single_row_is_two_lines(writer, rows):
    path = writer.emit_csv(rows[:1])
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert len(lines) == 2
    assert lines[1].startswith("osm,2,1.5,0,0,")
    assert lines[1].endswith(",false,50")


def test_csv_round_trip_is_exact(writer, rows):
    loaded = ResultsWriter.read_csv(writer.emit_csv(rows))
    expected = sorted(rows, key=SweepRow.sort_key)
    assert len(loaded) == len(expected)
    for got, want in zip(loaded, expected):
        assert got.sort_key() == want.sort_key()
        assert got.log_ratio == want.log_ratio
        assert got.J_p_final == want.J_p_final
        assert got.J_q_final == want.J_q_final
        assert got.diverged == want.diverged
        assert got.iters == want.iters


def test_rows_are_sorted(writer, rows):
    loaded = ResultsWriter.read_csv(writer.emit_csv(rows))
    assert [(r.method, r.layout, r.p) for r in loaded] == [
        ("dcs-rjmin", 2, 3.0),
        ("dcs-rjmin", 4, 1.0),
        ("dcs-rjmin", 4, 20.0),
        ("osm", 2, 1.5),
    ]


def test_read_rejects_foreign_header(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
    with pytest.raises(ValueError, match="unexpected CSV header"):
        ResultsWriter.read_csv(str(path))


def test_plotdata_files(writer, rows):
    paths = writer.emit_plotdata(rows)
    names = sorted(os.path.basename(p) for p in paths)
    assert names == ["dcs-rjmin_layout2_q40.dat", "dcs-rjmin_layout4_q1.dat", "osm_layout2_q0.dat"]

    with open(os.path.join(writer.output_directory, "plotdata", "dcs-rjmin_layout4_q1.dat"), encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert len(lines) == 2
    assert lines[0].split()[0] == "1"
    assert lines[1] == "20 inf diverged"


def test_failed_rows_are_marked(writer):
    failed = SweepRow("osm", 2, 1.0, 0.0, 0, math.nan, math.nan, math.nan, False, 0, error="boom")
    (path,) = writer.emit_plotdata([failed])
    with open(path, encoding="utf-8") as f:
        assert f.read().strip().endswith("failed")


def test_metadata(writer, rows):
    failed = SweepRow("osm", 2, 1.0, 0.0, 0, math.nan, math.nan, math.nan, False, 0, error="boom")
    spec = SweepSpec(layouts=[2, 4])
    path = writer.write_metadata(spec, rows + [failed], metadata={"qualitative": {"coarse_beats_osm": True}})
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    assert data["spec"]["layouts"] == [2, 4]
    assert data["spec"]["problem"]["source"] == "0.0"
    assert data["rows"] == 5
    assert data["diverged"] == 1
    assert [entry["error"] for entry in data["failures"]] == ["boom"]
    assert data["wall_time_total"] == pytest.approx(0.5)
    assert data["metadata"]["qualitative"]["coarse_beats_osm"] is True
