import io
import logging
import sys

import pytest
import structlog
from pydantic import ValidationError

from hmtml.core.config import EncodingConfig, HmtmlConfig, Settings
from hmtml.core.errors import (
    ErrorCategory,
    HmtmlError,
    IngestionError,
    RejectedInputError,
    SolverDivergenceError,
)
from hmtml.core.logging import setup_logging
from hmtml.services.harness.models import ExperimentConfig, SynthSpec


def test_solver_defaults():
    """Test the solver defaults and the drop_reg coupling weight."""
    config = HmtmlConfig()
    assert (config.gamma, config.gamma_m, config.rank) == (1.0, 0.01, 5)
    assert (config.rho, config.sigma, config.kappa, config.beta, config.mu0) == (3.0, 0.5, 0.01, 0.1, 1.0)
    assert config.effective_gamma == 1.0
    assert config.model_copy(update={"drop_reg": True}).effective_gamma == 0.0


@pytest.mark.parametrize(
    "field, value",
    [("gamma", -1.0), ("rank", 0), ("kappa", 1.0), ("beta", 0.0), ("rho", 0.0), ("unknown", 1)],
)
def test_solver_rejects_bad_values(field, value):
    """Test range validation of solver fields."""
    with pytest.raises(ValidationError):
        HmtmlConfig(**{field: value})


def test_configs_are_frozen():
    """Test that configs are immutable and validated."""
    with pytest.raises(ValidationError):
        HmtmlConfig().gamma = 2.0
    with pytest.raises(ValidationError):
        EncodingConfig(log_base=1.0)


def test_settings_read_environment(monkeypatch, tmp_path):
    """Test HMTML_ environment variables."""
    monkeypatch.setenv("HMTML_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("HMTML_OUTPUT_DIR", str(tmp_path))
    settings = Settings()
    assert settings.log_level == "DEBUG"
    assert settings.output_dir == tmp_path
    assert settings.metrics_path is None


def test_experiment_config_needs_one_source(tmp_path):
    """Test that an experiment takes exactly one data source."""
    with pytest.raises(ValidationError, match="exactly one"):
        ExperimentConfig()
    with pytest.raises(ValidationError, match="exactly one"):
        ExperimentConfig(domain_paths=[tmp_path / "a.csv"], synth=SynthSpec())
    with pytest.raises(ValidationError):
        ExperimentConfig(synth=SynthSpec(), ablations=["drop_everything"])


def test_experiment_config_from_file(tmp_path):
    """Test loading an experiment from JSON with grid defaults."""
    path = tmp_path / "config.json"
    path.write_text('{"synth": {"seed": 3}, "ranks": [2, 4], "repetitions": 2}', encoding="utf-8")
    config = ExperimentConfig.from_file(path)
    assert config.ranks == [2, 4]
    assert config.synth.seed == 3
    assert len(config.gamma_grid) == 10 and config.gamma_grid[0] == pytest.approx(1e-5)


def test_error_to_dict():
    """Test the structured form of an error."""
    error = RejectedInputError("shape mismatch", expected=3, got=4)
    assert isinstance(error, ValueError)
    assert error.to_dict() == {
        "error": "RejectedInputError",
        "category": "validation",
        "message": "shape mismatch",
        "expected": 3,
        "got": 4,
    }


def test_ingestion_error_location():
    """Test file and line prefixes of ingestion errors."""
    error = IngestionError("missing label", path="a.csv", line=7)
    assert str(error) == "a.csv:7: missing label"
    assert error.category is ErrorCategory.DATA
    assert str(IngestionError("file not found", path="b.csv")) == "b.csv: file not found"


def test_divergence_keeps_trace_out_of_dict():
    """Test that the objective trace stays on the exception only."""
    error = SolverDivergenceError("objective became non-finite", trace=[3.0, 2.5], domain=1)
    assert isinstance(error, HmtmlError)
    assert error.trace == [3.0, 2.5]
    assert "trace" not in error.to_dict()
    assert error.to_dict()["domain"] == 1


def test_setup_logging_filters_by_level(capsys):
    """Test level filtering and JSON rendering."""
    setup_logging("WARNING", json=True)
    log = structlog.get_logger("test")
    log.info("hidden")
    log.warning("shown", value=1)
    err = capsys.readouterr().err
    assert "hidden" not in err
    assert '"event": "shown"' in err
    setup_logging(logging.getLevelName(logging.INFO), json=False)


def test_logging_follows_replaced_stderr(monkeypatch):
    """Test that records go to the stderr in place at write time, not at setup."""
    setup_logging("INFO", json=True)
    replaced = io.StringIO()
    monkeypatch.setattr(sys, "stderr", replaced)
    structlog.get_logger("test").info("after.swap", value=2)
    assert '"event": "after.swap"' in replaced.getvalue()
