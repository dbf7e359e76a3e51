import os

import pytest

from src import cli
from src.cli import (
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_SOLVER_FAILURE,
    main,
    parse_config,
    qualitative_report,
    run_sweep,
    sweep_size,
)
from src.config import ConfigError, Method, RunConfig, SweepSpec
from src.fvcore import SolverError
from src.results_writer import ResultsWriter, SweepRow


@pytest.fixture
def tiny_spec():
    return SweepSpec(p=[2.0, 3.0], q=[4.0], layouts=[2], cells=4, iterations=3)


def make_row(method, p, q, log_ratio, diverged=False):
    return SweepRow(method, 4, p, q, 0, log_ratio, 0.0, 0.0, diverged, 50)


def test_single_run_flags():
    config = parse_config(["--p", "5", "--q", "5", "--layout", "4"])
    assert isinstance(config, RunConfig)
    assert config.p == 5.0
    assert config.q == 5.0
    assert config.decomposition.subdomains_x == 4
    assert config.decomposition.cells_x == 20
    assert config.method is Method.DCS_RJMIN


def test_sweep_flags():
    spec = parse_config(["--p", "2", "3", "--layout", "2", "--seeds", "3"])
    assert isinstance(spec, SweepSpec)
    assert spec.p == [2.0, 3.0]
    assert spec.seeds == [0, 1, 2]
    assert isinstance(parse_config(["--p", "5", "--sweep"]), SweepSpec)
    assert isinstance(parse_config([]), SweepSpec)


def test_negative_p_rejected():
    with pytest.raises(ConfigError, match="p must be > 0"):
        parse_config(["--p", "-1"])


def test_unknown_flag_rejected():
    with pytest.raises(ConfigError):
        parse_config(["--bogus"])


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "sweep.yml"
    path.write_text("sweep:\n  cells: 8\n  iterations: 7\n", encoding="utf-8")
    config = parse_config(["--config", str(path), "--p", "2", "--iters", "3"])
    assert config.decomposition.cells_x == 8
    assert config.iterations == 3


def test_default_sweep_size():
    assert sweep_size(SweepSpec()) == 39 * 4 + 39 * 8 * 4


def test_tiny_sweep_rows(tiny_spec):
    rows = run_sweep(tiny_spec, progress=False)
    assert len(rows) == sweep_size(tiny_spec) == 4
    assert [(r.method, r.p, r.q) for r in rows] == [
        ("dcs-rjmin", 2.0, 4.0),
        ("dcs-rjmin", 3.0, 4.0),
        ("osm", 2.0, 0.0),
        ("osm", 3.0, 0.0),
    ]
    assert all(r.iters == 3 and r.error is None for r in rows)

    rerun = run_sweep(tiny_spec, progress=False)
    assert [(r.log_ratio, r.J_p_final, r.J_q_final) for r in rows] == [
        (r.log_ratio, r.J_p_final, r.J_q_final) for r in rerun
    ]


def test_single_cell_sweep():
    spec = SweepSpec(p=[5.0], q=[10.0], layouts=[2], cells=4, iterations=2, methods=["dcs-rjmin"])
    rows = run_sweep(spec, progress=False)
    assert len(rows) == 1
    assert rows[0].method == "dcs-rjmin"


def test_failed_runs_are_recorded(tiny_spec, monkeypatch):
    def fail(*args, **kwargs):
        raise SolverError("factorization failed")

    monkeypatch.setattr(cli, "run", fail)
    rows = run_sweep(tiny_spec, progress=False)
    assert len(rows) == 4
    assert all(r.error == "factorization failed" for r in rows)


def test_main_single_run(tmp_path):
    out = str(tmp_path / "out")
    code = main(["--p", "4", "--q", "8", "--layout", "2", "--cells", "4", "--iters", "2", "--out", out])
    assert code == EXIT_OK
    rows = ResultsWriter.read_csv(os.path.join(out, "run.csv"))
    assert len(rows) == 1
    assert rows[0].q == 8.0
    assert rows[0].iters == 2


def test_main_sweep(tmp_path):
    out = str(tmp_path / "out")
    argv = ["--p", "2", "3", "--q", "4", "--layout", "2", "--cells", "4", "--iters", "2", "--out", out]
    assert main(argv) == EXIT_OK
    assert len(ResultsWriter.read_csv(os.path.join(out, "sweep.csv"))) == 4
    assert sorted(os.listdir(os.path.join(out, "plotdata"))) == ["dcs-rjmin_layout2_q4.dat", "osm_layout2_q0.dat"]
    assert os.path.exists(os.path.join(out, "sweep_metadata.json"))


def test_main_exit_codes(tmp_path, monkeypatch):
    out = str(tmp_path / "out")
    assert main(["--p", "-1", "--out", out]) == EXIT_CONFIG_ERROR
    assert main(["--layout", "0", "--out", out]) == EXIT_CONFIG_ERROR

    def fail(*args, **kwargs):
        raise SolverError("residual too large")

    monkeypatch.setattr(cli, "run", fail)
    assert main(["--p", "4", "--layout", "2", "--cells", "4", "--out", out]) == EXIT_SOLVER_FAILURE
    assert main(["--p", "4", "5", "--layout", "2", "--cells", "4", "--out", out]) == EXIT_SOLVER_FAILURE


def test_qualitative_report():
    p_values = [1.0 + 0.5 * k for k in range(19)]
    rows = [make_row("osm", p, 0.0, -1.0) for p in p_values]
    rows += [make_row("dcs-rjmin", p, 40.0, -3.0) for p in p_values]
    rows += [make_row("dcs-rjmin", 18.0, 1.0, 5.0, diverged=True)]
    report = qualitative_report(rows)
    assert report["coarse_wins"] == 19
    assert report["coarse_beats_osm"]
    assert report["divergence_observed"]


def test_qualitative_report_flags_mismatch(caplog):
    p_values = [1.0 + 0.5 * k for k in range(19)]
    rows = [make_row("osm", p, 0.0, -3.0) for p in p_values]
    rows += [make_row("dcs-rjmin", p, 40.0, -1.0) for p in p_values]
    report = qualitative_report(rows)
    assert not report["coarse_beats_osm"]
    assert "divergence_observed" not in report
    assert "qualitative mismatch" in caplog.text


def test_single_run_takes_grid_values_from_config_file(tmp_path):
    path = tmp_path / "sweep.yml"
    path.write_text("sweep:\n  q: [40.0]\n  seeds: [7]\n  layouts: [4]\n  methods: [osm]\n", encoding="utf-8")
    config = parse_config(["--config", str(path), "--p", "5"])
    assert isinstance(config, RunConfig)
    assert config.jump_coefficient == 40.0
    assert config.seed == 7
    assert config.decomposition.subdomains_x == 4
    assert config.method is Method.OSM


def test_several_values_in_config_file_make_a_sweep(tmp_path):
    path = tmp_path / "sweep.yml"
    path.write_text("sweep:\n  q: [40.0]\n  seeds: [0, 1]\n", encoding="utf-8")
    spec = parse_config(["--config", str(path), "--p", "5"])
    assert isinstance(spec, SweepSpec)
    assert spec.seeds == [0, 1]
    assert spec.q == [40.0]

    single = parse_config(["--config", str(path), "--p", "5", "--seed", "3"])
    assert isinstance(single, RunConfig)
    assert single.seed == 3
