"""
Domain files, synthetic domains, labeled/test splits and model files.

Domain CSV: header ``label,f1,...,fd`` then one sample per line. Labels are
strings; the union vocabulary is mapped to 1..C in sorted order (numeric
order when every label is an integer).

Model file::

    HMTML v1 M r
    m d_m            (M blocks, each followed by d_m rows of r values)
    tasks P          (optional)
    m d_m            (M blocks, each followed by d_m rows of P values)
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from hmtml.core.errors import IngestionError, ModelFileError, RejectedInputError
from hmtml.core.models import DomainData
from hmtml.services.harness.models import FLOAT_FORMAT, SynthSpec

logger = structlog.get_logger(__name__)

MODEL_MAGIC = "HMTML"
MODEL_VERSION = "v1"


def _label_order(labels: Sequence[str]) -> List[str]:
    try:
        return sorted(labels, key=lambda s: int(s))
    except ValueError:
        return sorted(labels)


def _read_domain_frame(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise IngestionError("file not found", path=str(path))
    try:
        frame = pd.read_csv(path, dtype={"label": str}, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot parse CSV ({exc})", path=str(path)) from exc

    columns = list(frame.columns)
    if not columns or columns[0] != "label":
        raise IngestionError("first header column must be 'label'", path=str(path), line=1)
    if len(columns) < 2:
        raise IngestionError("no feature columns", path=str(path), line=1)
    if frame.empty:
        raise IngestionError("no samples", path=str(path))

    missing_label = frame["label"].isna().to_numpy()
    if missing_label.any():
        line = int(np.argmax(missing_label)) + 2
        raise IngestionError("missing label", path=str(path), line=line)
    features = frame[columns[1:]]
    for name in features.columns:
        if features[name].dtype == object:
            bad = pd.to_numeric(features[name], errors="coerce").isna().to_numpy()
            line = int(np.argmax(bad)) + 2
            raise IngestionError(f"non-numeric value in column '{name}'", path=str(path), line=line)
    invalid = ~np.isfinite(features.to_numpy(dtype=np.float64)).all(axis=1)
    if invalid.any():
        line = int(np.argmax(invalid)) + 2
        raise IngestionError("missing or non-finite value", path=str(path), line=line)
    return frame


def load_domains(paths: Sequence[Path]) -> List[DomainData]:
    """Read one CSV per domain; every file must use the same label set."""
    if not paths:
        raise RejectedInputError("no domain files given")
    frames = [_read_domain_frame(Path(p)) for p in paths]

    label_sets = [set(f["label"]) for f in frames]
    reference = label_sets[0]
    for path, labels in zip(paths[1:], label_sets[1:]):
        if labels != reference:
            raise IngestionError(
                "label set differs from the first domain",
                path=str(path),
                missing=sorted(reference - labels),
                extra=sorted(labels - reference),
            )
    ordered = _label_order(list(reference))
    vocabulary: Dict[str, int] = {label: i + 1 for i, label in enumerate(ordered)}

    domains = []
    for m, (path, frame) in enumerate(zip(paths, frames)):
        samples = frame.iloc[:, 1:].to_numpy(dtype=np.float64)
        labels = frame["label"].map(vocabulary).to_numpy(dtype=np.int64)
        try:
            domains.append(DomainData(samples, labels, domain_id=m))
        except RejectedInputError as exc:
            raise IngestionError(exc.message, path=str(path)) from exc
        logger.info(
            "data.domain_loaded", path=str(path), samples=samples.shape[0], dim=samples.shape[1]
        )
    logger.debug("data.vocabulary", classes=len(vocabulary))
    return domains


def save_domain(data: DomainData, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(data.samples, columns=[f"f{j + 1}" for j in range(data.dim)])
    frame.insert(0, "label", data.labels)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def synth_generate(spec: SynthSpec) -> List[DomainData]:
    """
    Class c gets a Gaussian latent mean z_c; domain m maps it through a
    nonnegative-leaning matrix and adds noise whose scale differs per
    feature, so a good metric has to reweight features.
    """
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_domains + 1)
    means = np.random.default_rng(seeds[0]).standard_normal((spec.n_classes, spec.latent_dim))
    labels = np.repeat(np.arange(1, spec.n_classes + 1), spec.per_class)

    domains = []
    for m, dim in enumerate(spec.dims):
        rng = np.random.default_rng(seeds[m + 1])
        if spec.identity_map:
            mapping = np.eye(spec.latent_dim)
        else:
            mapping = rng.uniform(-0.25, 1.0, size=(dim, spec.latent_dim))
        scales = rng.uniform(0.2, 3.0, size=dim)
        clean = means[labels - 1] @ mapping.T
        samples = clean + spec.noise * scales * rng.standard_normal(clean.shape)
        if spec.center:
            samples = samples - samples.mean(axis=0)
        domains.append(DomainData(samples, labels, domain_id=m))
    logger.debug(
        "data.synth_generated", domains=spec.n_domains, classes=spec.n_classes, seed=spec.seed
    )
    return domains


def split_labeled(
    domains: Sequence[DomainData], per_class: int, seed: int
) -> Tuple[List[DomainData], List[DomainData]]:
    """Draw ``per_class`` labeled samples of every class per domain; the rest is the test pool."""
    if per_class < 1:
        raise RejectedInputError("per-class label budget must be positive", per_class=per_class)
    seeds = np.random.SeedSequence(seed).spawn(len(domains))
    labeled, test = [], []
    for data, child in zip(domains, seeds):
        classes = np.unique(data.labels)
        if per_class * classes.size > data.n_samples / 2:
            raise RejectedInputError(
                "label budget exceeds half of the domain",
                domain=data.domain_id,
                per_class=per_class,
                n_classes=int(classes.size),
                n_samples=data.n_samples,
            )
        rng = np.random.default_rng(child)
        chosen = []
        for c in classes:
            members = np.flatnonzero(data.labels == c)
            if members.size < per_class:
                raise RejectedInputError(
                    "class has fewer samples than the label budget",
                    domain=data.domain_id,
                    label=int(c),
                )
            chosen.append(rng.choice(members, size=per_class, replace=False))
        picked = np.sort(np.concatenate(chosen))
        rest = np.setdiff1d(np.arange(data.n_samples), picked)
        labeled.append(data.subset(picked))
        test.append(data.subset(rest))
    return labeled, test


def _write_block(lines: List[str], m: int, matrix: np.ndarray) -> None:
    lines.append(f"{m} {matrix.shape[0]}")
    for row in matrix:
        lines.append(" ".join(FLOAT_FORMAT % v for v in row))


def save_model(
    path: Path, factors: Sequence[np.ndarray], task_weights: Optional[Sequence[np.ndarray]] = None
) -> None:
    if not factors:
        raise RejectedInputError("no factors to save")
    rank = factors[0].shape[1]
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION} {len(factors)} {rank}"]
    for m, factor in enumerate(factors):
        _write_block(lines, m, np.asarray(factor, dtype=np.float64))
    if task_weights is not None:
        lines.append(f"tasks {task_weights[0].shape[1]}")
        for m, weights in enumerate(task_weights):
            _write_block(lines, m, np.asarray(weights, dtype=np.float64))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class _Reader:
    def __init__(self, path: Path):
        self.path = path
        self.lines = path.read_text(encoding="utf-8").splitlines()
        self.pos = 0

    def fail(self, message: str) -> ModelFileError:
        return ModelFileError(
            f"{self.path}:{self.pos}: {message}", path=str(self.path), line=self.pos
        )


    def at_end(self) -> bool:
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        return self.pos >= len(self.lines)

    def next_tokens(self) -> List[str]:
        if self.at_end():
            raise self.fail("unexpected end of file")
        self.pos += 1
        return self.lines[self.pos - 1].split()

    def block(self, m: int, width: int) -> np.ndarray:
        header = self.next_tokens()
        if len(header) != 2 or header[0] != str(m):
            raise self.fail(f"expected block header '{m} d'")
        try:
            rows = int(header[1])
        except ValueError:
            raise self.fail("block dimension is not an integer") from None
        matrix = np.empty((rows, width))
        for i in range(rows):
            tokens = self.next_tokens()
            if len(tokens) != width:
                raise self.fail(f"expected {width} values, got {len(tokens)}")
            try:
                matrix[i] = [float(t) for t in tokens]
            except ValueError:
                raise self.fail("non-numeric value") from None
        return matrix


def load_model(path: Path) -> Tuple[List[np.ndarray], Optional[List[np.ndarray]]]:
    """Read factors U_m and, when present, the task weight matrices."""
    path = Path(path)
    if not path.is_file():
        raise ModelFileError(f"{path}: file not found", path=str(path))
    reader = _Reader(path)
    header = reader.next_tokens()
    if len(header) != 4 or header[0] != MODEL_MAGIC or header[1] != MODEL_VERSION:
        raise reader.fail(f"expected '{MODEL_MAGIC} {MODEL_VERSION} M r'")
    try:
        n_domains, rank = int(header[2]), int(header[3])
    except ValueError:
        raise reader.fail("M and r must be integers") from None

    factors = [reader.block(m, rank) for m in range(n_domains)]
    task_weights = None
    if not reader.at_end():
        tokens = reader.next_tokens()
        if len(tokens) != 2 or tokens[0] != "tasks" or not tokens[1].isdigit():
            raise reader.fail("expected 'tasks P'")
        n_tasks = int(tokens[1])
        task_weights = [reader.block(m, n_tasks) for m in range(n_domains)]
        for m, (factor, weights) in enumerate(zip(factors, task_weights)):
            if factor.shape[0] != weights.shape[0]:
                raise reader.fail(f"domain {m}: task weights and factor disagree on d_m")
    if not reader.at_end():
        raise reader.fail("trailing content")
    return factors, task_weights
