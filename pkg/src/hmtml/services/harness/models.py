from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from hmtml.core.config import EncodingConfig, HmtmlConfig

Ablation = Literal["drop_loss", "drop_reg", "frobenius_reg", "no_nonneg"]
ALL_ABLATIONS: List[str] = ["drop_loss", "drop_reg", "frobenius_reg", "no_nonneg"]
DEFAULT_GRID: List[float] = [10.0**i for i in range(-5, 5)]
DEFAULT_RANKS: List[int] = [1, 2, 5, 8, 10, 20, 30, 50, 80, 100]

FLOAT_FORMAT = "%.17g"


class SynthSpec(BaseModel):
    """Recipe for a synthetic set of heterogeneous domains sharing C classes."""

    model_config = ConfigDict(extra="forbid")

    latent_dim: int = Field(default=5, ge=1)
    n_domains: int = Field(default=3, ge=1)
    dims: List[int] = Field(default_factory=lambda: [12, 9, 7])
    n_classes: int = Field(default=4, ge=2)
    per_class: int = Field(default=60, ge=1)
    noise: float = Field(default=1.0, ge=0.0)
    seed: int = 0
    identity_map: bool = False
    center: bool = True

    @model_validator(mode="after")
    def _check_dims(self) -> "SynthSpec":
        if len(self.dims) != self.n_domains:
            raise ValueError(f"dims has {len(self.dims)} entries for {self.n_domains} domains")
        if any(d < 1 for d in self.dims):
            raise ValueError("every domain dimension must be positive")
        if self.identity_map and any(d != self.latent_dim for d in self.dims):
            raise ValueError("identity_map needs every dimension equal to latent_dim")
        return self


class ExperimentConfig(BaseModel):
    """One end-to-end evaluation protocol: data, grids, repetitions and outputs."""

    model_config = ConfigDict(extra="forbid")

    domain_paths: List[Path] = Field(default_factory=list)
    synth: Optional[SynthSpec] = None

    labels_per_class: List[int] = Field(default_factory=lambda: [5], min_length=1)
    ranks: List[int] = Field(default_factory=lambda: [5], min_length=1)
    gamma_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_GRID), min_length=1)
    gamma_m_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_GRID), min_length=1)
    seed: int = 0
    repetitions: int = Field(default=10, ge=1)
    ablations: List[Ablation] = Field(default_factory=list)
    include_baseline: bool = True
    k: int = Field(default=1, ge=1)

    preprocess: Literal["none", "center", "normalize", "kpca", "pca"] = "none"
    n_components: Optional[int] = Field(default=None, ge=1)
    energy: Optional[float] = Field(default=None, gt=0.0, le=1.0)

    solver: HmtmlConfig = Field(default_factory=HmtmlConfig)
    encoding: EncodingConfig = Field(default_factory=EncodingConfig)

    output: Optional[Path] = None  # defaults to <output_dir>/table.csv
    curves_path: Optional[Path] = None
    timing_path: Optional[Path] = None

    @model_validator(mode="after")
    def _check_source(self) -> "ExperimentConfig":
        if bool(self.domain_paths) == (self.synth is not None):
            raise ValueError("give exactly one of domain_paths or synth")
        if any(n < 1 for n in self.labels_per_class):
            raise ValueError("labels_per_class entries must be positive")
        if any(r < 1 for r in self.ranks):
            raise ValueError("ranks must be positive")
        if any(g < 0 for g in self.gamma_grid + self.gamma_m_grid):
            raise ValueError("grid values must be nonnegative")
        return self

    @classmethod
    def from_file(cls, path: Path) -> "ExperimentConfig":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


class RunRecord(BaseModel):
    """Scores of one method on one domain for one repetition."""

    method: str
    rank: int
    labels_per_class: int
    repetition: int
    domain: int
    accuracy: float = float("nan")
    macro_f1: float = float("nan")
    failed: bool = False


class ResultRow(BaseModel):
    method: str
    rank: int
    labels_per_class: int
    domain: str  # domain index, or "mean" for the average over domains
    accuracy_mean: float
    accuracy_std: float = Field(ge=0.0)
    macro_f1_mean: float
    macro_f1_std: float = Field(ge=0.0)
    runs: int
    failures: int = 0


class ResultTable(BaseModel):
    """Mean and standard deviation over repetitions per (method, r, labels, domain)."""

    rows: List[ResultRow] = Field(default_factory=list)

    @classmethod
    def from_records(cls, records: List[RunRecord]) -> "ResultTable":
        if not records:
            return cls()
        frame = pd.DataFrame([r.model_dump() for r in records])
        keys = ["method", "rank", "labels_per_class"]
        per_domain = frame.assign(domain=frame["domain"].astype(str))
        # the domain average of a repetition fails if any of its domains failed
        averaged = (
            frame.groupby(keys + ["repetition"], sort=False)
            .agg(
                accuracy=("accuracy", "mean"),
                macro_f1=("macro_f1", "mean"),
                failed=("failed", "any"),
            )
            .reset_index()
            .assign(domain="mean")
        )
        averaged.loc[averaged["failed"], ["accuracy", "macro_f1"]] = np.nan

        rows: List[ResultRow] = []
        for part in (per_domain, averaged):
            for key, group in part.groupby(keys + ["domain"], sort=False):
                ok = group[~group["failed"]]
                rows.append(
                    ResultRow(
                        method=key[0],
                        rank=int(key[1]),
                        labels_per_class=int(key[2]),
                        domain=str(key[3]),
                        accuracy_mean=float(ok["accuracy"].mean()) if len(ok) else float("nan"),
                        accuracy_std=float(ok["accuracy"].std(ddof=0)) if len(ok) else 0.0,
                        macro_f1_mean=float(ok["macro_f1"].mean()) if len(ok) else float("nan"),
                        macro_f1_std=float(ok["macro_f1"].std(ddof=0)) if len(ok) else 0.0,
                        runs=int(len(ok)),
                        failures=int(group["failed"].sum()),
                    )
                )
        return cls(rows=rows)

    def to_frame(self) -> pd.DataFrame:
        columns = list(ResultRow.model_fields)
        return pd.DataFrame([r.model_dump() for r in self.rows], columns=columns)

    def cell(
        self, method: str, rank: int, labels_per_class: int, domain: str = "mean"
    ) -> ResultRow:
        key = (method, rank, labels_per_class, domain)
        for row in self.rows:
            if (row.method, row.rank, row.labels_per_class, row.domain) == key:
                return row
        raise KeyError(key)

    def to_csv(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    def curves(self) -> pd.DataFrame:
        """Domain-averaged scores over r, one line per (method, labels)."""
        frame = self.to_frame()
        frame = frame[frame["domain"] == "mean"]
        columns = [
            "method",
            "labels_per_class",
            "rank",
            "accuracy_mean",
            "accuracy_std",
            "macro_f1_mean",
            "macro_f1_std",
        ]
        return frame[columns].sort_values(["method", "labels_per_class", "rank"], kind="stable")

    def write_curves(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.curves().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


class InsensitivityRun(BaseModel):
    kind: Literal["init", "order"]
    label: str
    objective: float
    accuracy: Optional[float] = None


class InsensitivityReport(BaseModel):
    """Final objective (and accuracy) across initializations and update orders."""

    runs: List[InsensitivityRun] = Field(default_factory=list)

    def spread(self, kind: str, field: str = "objective") -> float:
        """(max - min) / |mean| over the runs of one kind."""
        values = [getattr(r, field) for r in self.runs if r.kind == kind]
        values = [v for v in values if v is not None]
        if not values:
            return 0.0
        center = abs(float(np.mean(values)))
        if center == 0.0:
            return 0.0
        return float((max(values) - min(values)) / center)

    def to_csv(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = list(InsensitivityRun.model_fields)
        frame = pd.DataFrame([r.model_dump() for r in self.runs], columns=columns)

        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
