import itertools
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

from hmtml.core.config import EncodingConfig, HmtmlConfig, Settings, get_settings
from hmtml.core.encoding import encode_tasks, generate_codebook, num_tasks
from hmtml.core.errors import HmtmlError
from hmtml.core.metric import recover_metric
from hmtml.core.models import Codebook, DomainData, Metric, SolverState, TaskWeights
from hmtml.core.optimizer import fit, initialize_factors
from hmtml.core.preprocess import preprocess_domain
from hmtml.services.harness.data import load_domains, split_labeled, synth_generate
from hmtml.services.harness.evaluation import DomainScore, evaluate_domains, loocv_select
from hmtml.services.harness.models import (
    ALL_ABLATIONS,
    FLOAT_FORMAT,
    ExperimentConfig,
    InsensitivityReport,
    InsensitivityRun,
    ResultTable,
    RunRecord,
)

logger = structlog.get_logger(__name__)

# Prometheus metrics
REGISTRY = CollectorRegistry()
FITS = Counter(
    "hmtml_fits_total",
    "Metric learning fits run",
    ["method", "status"],
    registry=REGISTRY,
)
FIT_SECONDS = Histogram(
    "hmtml_fit_seconds",
    "Wall time of one metric learning fit",
    ["method"],
    registry=REGISTRY,
)
OUTER_ITERATIONS = Histogram(
    "hmtml_outer_iterations",
    "Alternating sweeps per fit",
    buckets=(1, 2, 3, 5, 10, 20, 50),
    registry=REGISTRY,
)

BASELINE = "EU"
FULL = "HMTML"


class ExperimentService:
    """Runs the train / select / evaluate pipeline over seeds, label budgets and ranks."""

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()

    def load(self, config: ExperimentConfig) -> List[DomainData]:
        """Read or generate the domains, then preprocess each one on all of its samples."""
        if config.synth is not None:
            domains = synth_generate(config.synth)
        else:
            domains = load_domains(config.domain_paths)
        return [
            preprocess_domain(d, config.preprocess, config.n_components, config.energy)
            for d in domains
        ]

    def make_codebook(self, n_classes: int, encoding: EncodingConfig, seed: int) -> Codebook:
        n_tasks = encoding.code_length or num_tasks(n_classes, encoding.log_base)
        return generate_codebook(n_classes, n_tasks, seed, encoding.max_codebook_attempts)

    def fit(
        self,
        method: str,
        domains: Sequence[DomainData],
        weights: Sequence[TaskWeights],
        config: HmtmlConfig,
        **kwargs,
    ) -> Tuple[SolverState, float]:
        start = time.perf_counter()
        try:
            state = fit(domains, weights, config, **kwargs)
        except HmtmlError:
            FITS.labels(method=method, status="failed").inc()
            raise
        elapsed = time.perf_counter() - start
        FITS.labels(method=method, status="ok").inc()
        FIT_SECONDS.labels(method=method).observe(elapsed)
        OUTER_ITERATIONS.observe(state.outer_iterations)
        return state, elapsed

    def train_model(
        self,
        domains: Sequence[DomainData],
        solver: HmtmlConfig,
        encoding: EncodingConfig,
        seed: int,
    ) -> Tuple[SolverState, List[TaskWeights]]:
        """Encode all samples against a fresh codebook and fit the joint metrics."""
        n_classes = max(int(d.labels.max()) for d in domains)
        code = self.make_codebook(n_classes, encoding, seed)
        weights = encode_tasks(domains, code, encoding, seed)
        state, _ = self.fit(FULL, domains, weights, solver.model_copy(update={"seed": seed}))
        return state, weights

    def evaluate_model(
        self,
        factors: Sequence[np.ndarray],
        train: Sequence[DomainData],
        test: Sequence[DomainData],
        k: int = 1,
    ) -> List[DomainScore]:
        n_classes = max(int(d.labels.max()) for d in list(train) + list(test))
        return evaluate_domains(train, test, [recover_metric(u) for u in factors], n_classes, k)

    def run_experiment(self, config: ExperimentConfig) -> ResultTable:
        """
        For every label budget and repetition: split, encode, select (gamma,
        gamma_m) by cross validation for each rank, fit, and score with k-NN.
        Ablation variants reuse the pair chosen for the full method. A failed
        fit is recorded as a failure marker; any other error flushes the
        partial table and propagates.
        """
        domains = self.load(config)
        n_classes = max(int(d.labels.max()) for d in domains)
        records: List[RunRecord] = []
        timings: List[dict] = []
        log = logger.bind(domains=len(domains), classes=n_classes)
        log.info("experiment.start", repetitions=config.repetitions, ranks=config.ranks)

        try:
            for budget in config.labels_per_class:
                for rep in range(config.repetitions):
                    records.extend(
                        self._run_repetition(config, domains, n_classes, budget, rep, timings)
                    )
                    log.info("experiment.repetition_done", labels_per_class=budget, repetition=rep)
                    self._flush(config, records, timings)
        except Exception:
            log.error("experiment.aborted", completed_records=len(records))
            self._flush(config, records, timings)
            raise

        table = ResultTable.from_records(records)
        self._flush(config, records, timings)
        self.export_metrics()
        log.info("experiment.done", rows=len(table.rows))
        return table

    def run_ablation(self, config: ExperimentConfig) -> ResultTable:
        """The full method next to every self-comparison variant."""
        return self.run_experiment(config.model_copy(update={"ablations": list(ALL_ABLATIONS)}))

    def _run_repetition(
        self,
        config: ExperimentConfig,
        domains: List[DomainData],
        n_classes: int,
        budget: int,
        rep: int,
        timings: List[dict],
    ) -> List[RunRecord]:
        seed = config.seed + rep
        labeled, test = split_labeled(domains, budget, seed)
        code = self.make_codebook(n_classes, config.encoding, seed)
        weights = encode_tasks(labeled, code, config.encoding, seed)
        baseline = None
        if config.include_baseline:
            identity = [Metric.identity(d.dim) for d in labeled]
            baseline = evaluate_domains(labeled, test, identity, n_classes, config.k)

        records: List[RunRecord] = []
        for rank in config.ranks:
            cell = dict(rank=rank, labels_per_class=budget, repetition=rep)
            if baseline is not None:
                records.extend(self._records(BASELINE, baseline, **cell))
            scored = self._run_rank(
                config, labeled, test, weights, code, n_classes, seed, timings, **cell
            )
            records.extend(scored)
        return records

    def _run_rank(
        self,
        config: ExperimentConfig,
        labeled: List[DomainData],
        test: List[DomainData],
        weights: List[TaskWeights],
        code: Codebook,
        n_classes: int,
        seed: int,
        timings: List[dict],
        **cell,
    ) -> List[RunRecord]:
        methods = [FULL] + list(config.ablations)
        base = config.solver.model_copy(update={"rank": cell["rank"], "seed": seed})
        try:
            gamma, gamma_m, _ = loocv_select(
                labeled,
                config.gamma_grid,
                config.gamma_m_grid,
                base,
                code,
                config.encoding,
                seed,
                config.k,
            )
        except HmtmlError as exc:
            logger.error("experiment.selection_failed", error=exc.message, **cell)
            return [r for m in methods for r in self._failed(m, labeled, **cell)]
        chosen = base.model_copy(update={"gamma": gamma, "gamma_m": gamma_m})

        records: List[RunRecord] = []
        for method in methods:
            variant = chosen if method == FULL else chosen.model_copy(update={method: True})
            try:
                state, elapsed = self.fit(method, labeled, weights, variant)
                metrics = [recover_metric(u) for u in state.factors]
                scores = evaluate_domains(labeled, test, metrics, n_classes, config.k)
            except HmtmlError as exc:
                logger.error("experiment.fit_failed", method=method, error=exc.message, **cell)
                records.extend(self._failed(method, labeled, **cell))
                continue
            timings.append({"method": method, **cell, "seconds": elapsed})
            records.extend(self._records(method, scores, **cell))
        return records

    @staticmethod
    def _records(method: str, scores: Sequence[DomainScore], **cell) -> List[RunRecord]:
        return [
            RunRecord(
                method=method, domain=s.domain, accuracy=s.accuracy, macro_f1=s.macro_f1, **cell
            )
            for s in scores
        ]

    @staticmethod
    def _failed(method: str, domains: Sequence[DomainData], **cell) -> List[RunRecord]:
        return [RunRecord(method=method, domain=d.domain_id, failed=True, **cell) for d in domains]

    def output_path(self, config: ExperimentConfig) -> Path:
        return config.output or self.settings.output_dir / "table.csv"

    def _flush(
        self, config: ExperimentConfig, records: List[RunRecord], timings: List[dict]
    ) -> None:
        table = ResultTable.from_records(records)
        table.to_csv(self.output_path(config))
        if config.curves_path is not None:
            table.write_curves(config.curves_path)
        if config.timing_path is not None:
            config.timing_path.parent.mkdir(parents=True, exist_ok=True)
            columns = ["method", "rank", "labels_per_class", "repetition", "seconds"]
            pd.DataFrame(timings, columns=columns).to_csv(
                config.timing_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
            )

    def insensitivity_study(
        self,
        labeled: Sequence[DomainData],
        weights: Sequence[TaskWeights],
        config: HmtmlConfig,
        n_inits: int = 5,
        test: Optional[Sequence[DomainData]] = None,
        k: int = 1,
    ) -> InsensitivityReport:
        """
        Refit from ``n_inits`` random initializations and under every update
        order, recording the final objective (and k-NN accuracy on ``test``).
        """
        dims = [d.dim for d in labeled]
        report = InsensitivityReport()

        def score(state: SolverState) -> Optional[float]:
            if test is None:
                return None
            scores = self.evaluate_model(state.factors, labeled, test, k)
            return float(np.mean([s.accuracy for s in scores]))

        for i in range(n_inits):
            init = initialize_factors(dims, config, seed=config.seed + i)
            state, _ = self.fit(FULL, labeled, weights, config, init=init)
            report.runs.append(
                InsensitivityRun(
                    kind="init",
                    label=f"seed={config.seed + i}",
                    objective=state.objective,
                    accuracy=score(state),
                )
            )
        for order in itertools.permutations(range(len(labeled))):
            state, _ = self.fit(FULL, labeled, weights, config, update_order=order)
            report.runs.append(
                InsensitivityRun(
                    kind="order",
                    label="-".join(str(m) for m in order),
                    objective=state.objective,
                    accuracy=score(state),
                )
            )
        logger.info(
            "insensitivity.done",
            init_spread=report.spread("init"),
            order_spread=report.spread("order"),
        )
        return report

    def run_insensitivity(self, config: ExperimentConfig, n_inits: int = 5) -> InsensitivityReport:
        """
        Insensitivity study on the first label budget and rank of ``config``,
        using the solver's own (gamma, gamma_m).
        """
        domains = self.load(config)
        n_classes = max(int(d.labels.max()) for d in domains)
        labeled, test = split_labeled(domains, config.labels_per_class[0], config.seed)
        code = self.make_codebook(n_classes, config.encoding, config.seed)
        weights = encode_tasks(labeled, code, config.encoding, config.seed)
        solver = config.solver.model_copy(update={"rank": config.ranks[0], "seed": config.seed})
        report = self.insensitivity_study(labeled, weights, solver, n_inits, test, config.k)
        self.export_metrics()
        return report

    def export_metrics(self) -> None:
        if self.settings.metrics_path is not None:
            self.settings.metrics_path.parent.mkdir(parents=True, exist_ok=True)
            write_to_textfile(str(self.settings.metrics_path), REGISTRY)
