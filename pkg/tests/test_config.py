import pytest

from src.config import (
    DEFAULT_CONFIG_PATH,
    ConfigError,
    DecompositionSpec,
    Method,
    ProblemSpec,
    RunConfig,
    SweepSpec,
    default_p_values,
    default_q_values,
    load_config,
    sweep_spec_from_sections,
)


def write_config(tmp_path, text):
    path = tmp_path / "sweep.yml"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_default_grid():
    p_values = default_p_values()
    assert len(p_values) == 39
    assert p_values[0] == 1.0 and p_values[-1] == 20.0
    assert default_q_values() == [1.0, 2.0, 4.0, 8.0, 10.0, 20.0, 40.0, 80.0]

    spec = SweepSpec()
    assert spec.layouts == [2, 4, 6, 8]
    assert spec.cells == 20
    assert spec.iterations == 50
    assert spec.seeds == [0]
    assert spec.methods == [Method.OSM, Method.DCS_RJMIN]


def test_shipped_config_matches_defaults():
    spec = SweepSpec.load(DEFAULT_CONFIG_PATH)
    assert spec.p == pytest.approx(default_p_values())
    assert spec.q == default_q_values()
    assert spec.layouts == [2, 4, 6, 8]
    assert spec.problem == ProblemSpec()
    assert spec.domain_side == 4.0


def test_empty_config_file(tmp_path):
    assert load_config(write_config(tmp_path, "")) == {}
    assert sweep_spec_from_sections({}) == SweepSpec()


def test_range_mapping(tmp_path):
    path = write_config(tmp_path, "sweep:\n  p: {start: 2.0, stop: 4.0, step: 0.5}\n  q: 10\n")
    spec = SweepSpec.load(path)
    assert spec.p == [2.0, 2.5, 3.0, 3.5, 4.0]
    assert spec.q == [10.0]


def test_overrides_take_precedence(tmp_path):
    path = write_config(tmp_path, "problem:\n  eta: 1.0\nsweep:\n  layouts: [2, 4]\n  cells: 8\n")
    spec = SweepSpec.load(path, {"layouts": [6], "eta": 2.0})
    assert spec.layouts == [6]
    assert spec.cells == 8
    assert spec.problem.eta == 2.0


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config sections"):
        load_config(write_config(tmp_path, "solver:\n  p: 1\n"))
    with pytest.raises(ConfigError, match="colour"):
        SweepSpec.load(write_config(tmp_path, "sweep:\n  colour: red\n"))
    with pytest.raises(ConfigError, match="gamma"):
        SweepSpec.load(write_config(tmp_path, "problem:\n  gamma: 1\n"))


def test_malformed_yaml(tmp_path):
    with pytest.raises(ConfigError, match="malformed"):
        load_config(write_config(tmp_path, "sweep: [unclosed\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "missing.yml"))


def test_invalid_values_name_their_key():
    with pytest.raises(ConfigError, match="p: p must be > 0"):
        sweep_spec_from_sections({"sweep": {"p": [1.0, -1.0]}})
    with pytest.raises(ConfigError, match="layouts must not be empty"):
        sweep_spec_from_sections({"sweep": {"layouts": []}})
    with pytest.raises(ConfigError, match="eta must be >= 0"):
        sweep_spec_from_sections({"problem": {"eta": -1.0}})


def test_run_config_validation():
    decomposition = DecompositionSpec.square(2, 4)
    with pytest.raises(ValueError, match="p must be > 0"):
        RunConfig(decomposition=decomposition, p=0.0)
    with pytest.raises(ValueError, match="q must be > 0"):
        RunConfig(decomposition=decomposition, p=1.0, q=-2.0)
    config = RunConfig(decomposition=decomposition, p=3.0)
    assert config.jump_coefficient == 3.0
    assert config.model_copy(update={"q": 8.0}).jump_coefficient == 8.0


def test_decomposition_properties():
    spec = DecompositionSpec.square(4, 20)
    assert spec.h == pytest.approx(0.05)
    assert spec.global_cells_x == 80
    assert spec.total_cells == 6400
    assert spec.subdomain_count == 16


def test_callable_source_is_not_homogeneous():
    assert ProblemSpec().is_homogeneous
    assert not ProblemSpec(source=1.0).is_homogeneous
    assert not ProblemSpec(source=lambda x, y: x * y).is_homogeneous
