import logging

import numpy as np
import pytest
import structlog

from hmtml.core.config import EncodingConfig, HmtmlConfig, Settings
from hmtml.core.logging import StderrHandler
from hmtml.services.harness.models import ExperimentConfig, SynthSpec
from tests.helpers import make_domains, unit_columns


@pytest.fixture(autouse=True)
def reset_logging():
    """Undo any logging configuration a test installed."""
    root = logging.getLogger()
    level = root.level
    yield
    structlog.reset_defaults()
    for handler in [h for h in root.handlers if isinstance(h, StderrHandler)]:
        root.removeHandler(handler)
    root.setLevel(level)


@pytest.fixture
def rng():
    """Seeded generator shared by a test."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_domains():
    """Three tiny two-class domains of different dimension."""
    return make_domains(7)


@pytest.fixture
def small_weights(small_domains):
    """Unit-norm task weights aligned with ``small_domains``, P = 3."""
    rng = np.random.default_rng(11)
    return [unit_columns(rng, d.dim, 3) for d in small_domains]


@pytest.fixture
def solver_config():
    """Solver settings sized for unit tests."""
    return HmtmlConfig(rank=2, gamma=1.0, gamma_m=0.01, max_outer=8, max_inner=40, seed=3)


@pytest.fixture
def encoding_config():
    return EncodingConfig(code_length=6)


@pytest.fixture
def settings(tmp_path):
    """Settings writing into a temporary directory."""
    return Settings(output_dir=tmp_path / "results", metrics_path=None)


@pytest.fixture
def tiny_experiment(tmp_path):
    """One-repetition experiment on a small synthetic set."""
    return ExperimentConfig(
        synth=SynthSpec(latent_dim=3, n_domains=2, dims=[5, 4], n_classes=3, per_class=10, seed=5),
        labels_per_class=[2],
        ranks=[2],
        gamma_grid=[0.1, 1.0],
        gamma_m_grid=[0.01],
        repetitions=1,
        seed=9,
        solver=HmtmlConfig(max_outer=5, max_inner=30),
        encoding=EncodingConfig(code_length=8),
        output=tmp_path / "table.csv",
    )
