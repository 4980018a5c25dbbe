import math
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from hmtml.core.config import HmtmlConfig, Settings
from hmtml.core.encoding import encode_tasks
from hmtml.core.errors import SolverDivergenceError
from hmtml.core.metric import recover_metric
from hmtml.core.optimizer import build_pair_sets, initialize_factors, solve_subproblem
from hmtml.services.harness import service as service_module
from hmtml.services.harness.data import split_labeled
from hmtml.services.harness.evaluation import evaluate_domains
from hmtml.services.harness.models import ALL_ABLATIONS
from hmtml.services.harness.service import BASELINE, FULL, ExperimentService


@pytest.fixture
def experiment_service(settings):
    """Service writing into a temporary directory."""
    return ExperimentService(settings)


def test_experiment_produces_scored_rows(experiment_service, tiny_experiment):
    """Test the full protocol on a tiny synthetic set."""
    table = experiment_service.run_experiment(tiny_experiment)

    for method in (FULL, BASELINE):
        row = table.cell(method, 2, 2)
        assert 0.0 <= row.accuracy_mean <= 1.0
        assert 0.0 <= row.macro_f1_mean <= 1.0
        assert row.runs == 1 and row.failures == 0
        assert row.accuracy_std == 0.0
        for domain in ("0", "1"):
            table.cell(method, 2, 2, domain)

    frame = pd.read_csv(tiny_experiment.output)
    assert set(frame["method"]) == {FULL, BASELINE}
    assert len(frame) == len(table.rows) == 6


def test_experiment_is_deterministic(experiment_service, tiny_experiment, tmp_path):
    """Test that the same seed writes byte-identical tables."""
    second = tiny_experiment.model_copy(update={"output": tmp_path / "again.csv"})
    experiment_service.run_experiment(tiny_experiment)
    experiment_service.run_experiment(second)
    assert tiny_experiment.output.read_bytes() == second.output.read_bytes()


def test_baseline_matches_euclidean_nearest_neighbour(experiment_service, tiny_experiment):
    """Test the EU rows against a direct 1-NN computation."""
    table = experiment_service.run_experiment(tiny_experiment)
    domains = experiment_service.load(tiny_experiment)
    labeled, test = split_labeled(domains, 2, tiny_experiment.seed)

    for train, pool in zip(labeled, test):
        squared = ((pool.samples[:, None, :] - train.samples[None, :, :]) ** 2).sum(axis=2)
        predicted = train.labels[np.argmin(squared, axis=1)]
        expected = float(np.mean(predicted == pool.labels))
        row = table.cell(BASELINE, 2, 2, str(train.domain_id))
        assert row.accuracy_mean == pytest.approx(expected, abs=1e-12)


def test_ablation_rows(experiment_service, tiny_experiment, tmp_path):
    """Test that every self-comparison variant gets a row."""
    config = tiny_experiment.model_copy(
        update={"curves_path": tmp_path / "curves.csv", "timing_path": tmp_path / "timing.csv"}
    )
    table = experiment_service.run_ablation(config)
    methods = {row.method for row in table.rows}
    assert methods == {FULL, BASELINE, *ALL_ABLATIONS}

    curves = pd.read_csv(config.curves_path)
    assert set(curves["method"]) == methods
    timing = pd.read_csv(config.timing_path)
    assert set(timing["method"]) == {FULL, *ALL_ABLATIONS}
    assert (timing["seconds"] >= 0).all()


def test_failed_fit_is_recorded(experiment_service, tiny_experiment):
    """Test that a diverging variant leaves a failure marker and the rest of the table."""
    real_fit = service_module.fit

    def diverge_without_projection(domains, weights, config, **kwargs):
        if config.no_nonneg:
            raise SolverDivergenceError("objective became non-finite", trace=[1.0, math.inf])
        return real_fit(domains, weights, config, **kwargs)

    config = tiny_experiment.model_copy(update={"ablations": ["no_nonneg"]})
    with patch.object(service_module, "fit", side_effect=diverge_without_projection):
        table = experiment_service.run_experiment(config)

    failed = table.cell("no_nonneg", 2, 2)
    assert failed.failures == 1 and failed.runs == 0
    assert math.isnan(failed.accuracy_mean)
    assert table.cell(FULL, 2, 2).failures == 0


def test_unexpected_error_flushes_partial_table(experiment_service, tiny_experiment):
    """Test that an unexpected error still leaves a table on disk."""
    with patch.object(service_module, "evaluate_domains", side_effect=RuntimeError("boom")):
        with pytest.raises(RuntimeError, match="boom"):
            experiment_service.run_experiment(tiny_experiment)
    assert tiny_experiment.output.exists()


def test_insensitivity_report(experiment_service, tiny_experiment, tmp_path):
    """Test the spread over initializations and update orders."""
    report = experiment_service.run_insensitivity(tiny_experiment, n_inits=2)
    kinds = [run.kind for run in report.runs]
    assert kinds == ["init", "init", "order", "order"]
    assert {run.label for run in report.runs if run.kind == "order"} == {"0-1", "1-0"}
    assert all(np.isfinite(run.objective) for run in report.runs)
    assert all(0.0 <= run.accuracy <= 1.0 for run in report.runs)
    assert report.spread("init") >= 0.0
    assert report.spread("order", "accuracy") >= 0.0

    report.to_csv(tmp_path / "insensitivity.csv")
    assert len(pd.read_csv(tmp_path / "insensitivity.csv")) == 4


def test_metrics_textfile(tiny_experiment, tmp_path):
    """Test that fit counters are exported after a run."""
    settings = Settings(output_dir=tmp_path, metrics_path=tmp_path / "metrics" / "hmtml.prom")
    ExperimentService(settings).run_experiment(tiny_experiment)
    text = settings.metrics_path.read_text()
    assert 'hmtml_fits_total{method="HMTML",status="ok"}' in text
    assert "hmtml_fit_seconds_bucket" in text


def test_default_output_path(settings, tiny_experiment):
    """Test that the table defaults into the output directory."""
    service = ExperimentService(settings)
    config = tiny_experiment.model_copy(update={"output": None})
    assert service.output_path(config) == settings.output_dir / "table.csv"


def test_uncoupled_run_matches_isolated_domains(experiment_service, tiny_experiment):
    """Test that gamma = 0 and drop_reg both score like per-domain fits."""
    config = tiny_experiment.model_copy(
        update={
            "gamma_grid": [0.0],
            "gamma_m_grid": [0.01],
            "ablations": ["drop_reg"],
            "solver": HmtmlConfig(max_outer=1, max_inner=30),
        }
    )
    table = experiment_service.run_experiment(config)

    seed = config.seed
    domains = experiment_service.load(config)
    labeled, test = split_labeled(domains, 2, seed)
    code = experiment_service.make_codebook(3, config.encoding, seed)
    weights = encode_tasks(labeled, code, config.encoding, seed)
    solver = config.solver.model_copy(
        update={"rank": 2, "seed": seed, "gamma": 0.0, "gamma_m": 0.01}
    )
    init = initialize_factors([d.dim for d in labeled], solver)
    pair_sets = build_pair_sets(labeled, solver)

    for m, (train, pool) in enumerate(zip(labeled, test)):
        alone, _ = solve_subproblem(init[m], m, init, pair_sets[m], weights, solver)
        (score,) = evaluate_domains([train], [pool], [recover_metric(alone)], 3)
        for method in (FULL, "drop_reg"):
            row = table.cell(method, 2, 2, str(train.domain_id))
            assert row.accuracy_mean == pytest.approx(score.accuracy, abs=1e-8)
            assert row.macro_f1_mean == pytest.approx(score.macro_f1, abs=1e-8)
