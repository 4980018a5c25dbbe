"""Command line entry point: ``hmtml <command> ...``."""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import structlog
from pydantic import ValidationError

from hmtml import __version__
from hmtml.core.config import EncodingConfig, HmtmlConfig, get_settings
from hmtml.core.errors import HmtmlError
from hmtml.core.logging import setup_logging
from hmtml.core.models import DomainData
from hmtml.services.harness.data import (
    load_domains,
    load_model,
    save_domain,
    save_model,
    synth_generate,
)
from hmtml.services.harness.models import ExperimentConfig, SynthSpec
from hmtml.services.harness.service import ExperimentService

logger = structlog.get_logger(__name__)


def _synth_parser(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("synth", help="write synthetic heterogeneous domains as CSV files")
    p.add_argument("--config", type=Path, help="JSON file with a synthetic data spec")
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", type=Path, required=True)


def _solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--gamma-m", type=float, default=0.01)


def _experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--domains", type=Path, nargs="+", help="domain CSV files (instead of synth)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--labels", type=int, nargs="+", help="labeled samples per class (grid)")
    p.add_argument("--ranks", type=int, nargs="+")
    p.add_argument("--gamma-grid", type=float, nargs="+")
    p.add_argument("--gamma-m-grid", type=float, nargs="+")
    p.add_argument("--preprocess", choices=["none", "center", "normalize", "kpca", "pca"])
    p.add_argument("--output", type=Path)
    p.add_argument("--curves", type=Path)
    p.add_argument("--timing", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmtml", description="Heterogeneous multi-task metric learning"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="override HMTML_LOG_LEVEL")
    parser.add_argument("--log-json", action="store_true", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    _synth_parser(sub)

    p = sub.add_parser("train", help="fit joint metrics on labeled domain files")
    p.add_argument("--domains", type=Path, nargs="+", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    _solver_args(p)

    p = sub.add_parser("eval", help="k-NN evaluation of a saved model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--train", type=Path, nargs="+", required=True)
    p.add_argument("--test", type=Path, nargs="+", required=True)
    p.add_argument("--k", type=int, default=1)

    for name, help_text in (
        ("experiment", "full protocol with cross-validated hyperparameters"),
        ("ablate", "full method plus every self-comparison variant"),
        ("insensitivity", "objective spread over initializations and update orders"),
    ):
        p = sub.add_parser(name, help=help_text)
        _experiment_args(p)
        if name == "insensitivity":
            p.add_argument("--inits", type=int, default=5)
    return parser


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        data = ExperimentConfig.from_file(args.config).model_dump(exclude_unset=True)
    overrides = {
        "seed": args.seed,
        "repetitions": args.repetitions,
        "labels_per_class": args.labels,
        "ranks": args.ranks,
        "gamma_grid": args.gamma_grid,
        "gamma_m_grid": args.gamma_m_grid,
        "preprocess": args.preprocess,
        "output": args.output,
        "curves_path": args.curves,
        "timing_path": args.timing,
    }
    if args.domains:
        data.pop("synth", None)
        overrides["domain_paths"] = args.domains
    data.update({k: v for k, v in overrides.items() if v is not None})
    if not data.get("domain_paths") and data.get("synth") is None:
        data["synth"] = SynthSpec(seed=args.seed)
    return ExperimentConfig.model_validate(data)


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = {}
    if args.config is not None:
        spec = SynthSpec.model_validate_json(args.config.read_text(encoding="utf-8")).model_dump()
    overrides = {
        "latent_dim": args.latent_dim,
        "dims": args.dims,
        "n_classes": args.classes,
        "per_class": args.per_class,
        "noise": args.noise,
        "seed": args.seed,
    }
    spec.update({k: v for k, v in overrides.items() if v is not None})
    if args.dims is not None:
        spec["n_domains"] = len(args.dims)
    domains = synth_generate(SynthSpec.model_validate(spec))
    for data in domains:
        path = args.out_dir / f"domain_{data.domain_id}.csv"
        save_domain(data, path)
        print(path)
    return 0


def _cmd_train(args: argparse.Namespace, service: ExperimentService) -> int:
    domains = load_domains(args.domains)
    solver = HmtmlConfig(rank=args.rank, gamma=args.gamma, gamma_m=args.gamma_m)
    state, weights = service.train_model(domains, solver, EncodingConfig(), args.seed)
    save_model(args.out, state.factors, [w.weights for w in weights])
    print(
        f"objective {state.objective:.17g} sweeps {state.outer_iterations} "
        f"converged {state.converged}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace, service: ExperimentService) -> int:
    if len(args.train) != len(args.test):
        raise HmtmlError("need one test file per training file")
    factors, _ = load_model(args.model)
    domains = load_domains(list(args.train) + list(args.test))
    train = domains[: len(args.train)]
    test = [DomainData(d.samples, d.labels, m) for m, d in enumerate(domains[len(args.train) :])]
    if len(factors) != len(train):
        raise HmtmlError("model and data disagree on the number of domains")
    scores = service.evaluate_model(factors, train, test, args.k)
    print("domain,accuracy,macro_f1")
    for s in scores:
        print(f"{s.domain},{s.accuracy:.17g},{s.macro_f1:.17g}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_json)
    service = ExperimentService(get_settings())
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "train":
            return _cmd_train(args, service)
        if args.command == "eval":
            return _cmd_eval(args, service)
        config = _experiment_config(args)
        if args.command == "insensitivity":
            report = service.run_insensitivity(config, args.inits)
            report.to_csv(service.output_path(config))
            print(
                f"init spread {report.spread('init'):.6g} "
                f"order spread {report.spread('order'):.6g}"
            )
            return 0
        if args.command == "ablate":
            table = service.run_ablation(config)
        else:
            table = service.run_experiment(config)

        print(service.output_path(config))
        logger.info("cli.done", command=args.command, rows=len(table.rows))
        return 0
    except HmtmlError as exc:
        print(f"hmtml: error: {exc}", file=sys.stderr)
        logger.error("cli.failed", command=args.command, **exc.to_dict())
        return 1
    except (ValidationError, OSError) as exc:
        print(f"hmtml: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
