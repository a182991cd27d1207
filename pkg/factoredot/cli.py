"""
Command-line harness.

    factoredot gen       draw a synthetic source/target pair into two CSVs
    factoredot estimate  one estimate between two CSV point clouds, as JSON
    factoredot sweep     a full-factorial experiment, as a CSV table
    factoredot adapt     label transfer from a target CSV onto a source CSV

Exit codes: 0 on success, 1 when a run (or any sweep row) failed, 2 on bad
arguments.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from factoredot.core.adapt import DEFAULT_KNN_K, adapt_labels
from factoredot.core.estimator import estimate
from factoredot.core.exception import AdaptError, ConfigError, FactoredOTError
from factoredot.core.gateway import configure_logger, make_backend
from factoredot.core.sink.to_csv import ResultWriter
from factoredot.core.sweep import DEFAULT_N_VALUES, run_sweep
from factoredot.core.synthgen import gen_pair
from factoredot.file_io.point_cloud import load_csv, write_csv
from factoredot.types import (
    ExperimentSpec,
    FotConfig,
    GenSpec,
    RunTweaks,
    SinkhornConfig,
)

logger = logging.getLogger("factoredot.cli")

ADAPT_EPSILON_GRID = (1e-3, 10**-2.5, 1e-2, 10**-1.5, 1e-1)
ADAPT_K_GRID = (3, 6, 9, 12, 20, 30)

_GLOBAL_DESTS = {"command", "config", "handler", "log_level", "quiet"}


def _ints(value) -> Tuple[int, ...]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(int(v) for v in value)


def _floats(value) -> Optional[Tuple[float, ...]]:
    if value is None:
        return None
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(float(v) for v in value)


def _strs(value) -> Tuple[str, ...]:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    return tuple(str(v) for v in value)


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--method", default="fot", help="Estimation method")
    p.add_argument("--k", type=int, default=4, help="Transport-rank budget (number of hubs)")
    p.add_argument("--epsilon", type=float, default=0.1, help="Entropic regularization")
    p.add_argument("--tol", type=float, default=1e-6, help="Sinkhorn L1 marginal tolerance")
    p.add_argument("--max-iter", type=int, default=10_000, help="Sinkhorn iteration cap")
    p.add_argument("--outer-tol", type=float, default=1e-6, help="Outer-loop relative tolerance")
    p.add_argument("--outer-max-iter", type=int, default=200)
    p.add_argument(
        "--init",
        default="kmeans_source",
        choices=["kmeans_source", "kmeans_target", "kmeans_pooled"],
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps-scaling", action="store_true", help="Anneal epsilon from the cost scale")
    p.add_argument("--exact-cap", type=int, default=5_000_000, help="Largest n0*n1 for exact OT")


def _add_gen_flags(p: argparse.ArgumentParser, *, n_default: int):
    p.add_argument(
        "--kind",
        default="hypercube",
        choices=["hypercube", "disk_annulus", "gaussian_mixture"],
    )
    p.add_argument("--d", type=int, default=2, help="Dimension")
    p.add_argument("--n", type=int, default=n_default, help="Points per sample")
    p.add_argument("--components", type=int, default=3, help="Mixture components")
    p.add_argument("--sigma", type=float, default=1.0, help="Mixture standard deviation")
    p.add_argument("--separation", type=float, default=5.0, help="Distance between mixture means")
    p.add_argument("--shift", default=None, help="Comma-separated target translation (mixtures)")


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="factoredot", description=__doc__.split("\n\n")[0])
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    parser.add_argument("--config", default=None, help="JSON file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("gen", help="Write a synthetic source/target pair")
    _add_gen_flags(p, n_default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Path prefix; writes <out>_source.csv and <out>_target.csv")
    p.add_argument("--force", action="store_true", help="Overwrite existing files")
    p.set_defaults(handler=cmd_gen)
    subparsers["gen"] = p

    p = sub.add_parser("estimate", help="Estimate W2^2 between two CSV point clouds")
    p.add_argument("source")
    p.add_argument("target")
    _add_solver_flags(p)
    p.add_argument("--header", action="store_true", help="Input files have a header line")
    p.add_argument("--labels", action="store_true", help="Last column of the inputs is a label")
    p.add_argument(
        "--no-compare", action="store_true", help="Skip the plug-in and kOT costs in the record"
    )
    p.set_defaults(handler=cmd_estimate)
    subparsers["estimate"] = p

    p = sub.add_parser("sweep", help="Run a full-factorial experiment sweep")
    _add_gen_flags(p, n_default=300)
    _add_solver_flags(p)
    p.add_argument("--sweep", default="n", choices=["n", "d", "k"])
    p.add_argument("--values", default=",".join(str(v) for v in DEFAULT_N_VALUES))
    p.add_argument("--methods", default=None, help="Comma-separated methods (default: --method)")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--n-per-d", type=int, default=None, help="With --sweep d, use n = n_per_d * d")
    p.add_argument("--protocol", default="default", help="Tag written into the output header")
    p.add_argument("--workers", type=int, default=1, help="Concurrent cells (capped by FOT_THREADS)")
    p.add_argument("--dashboard", action="store_true", help="Show the live progress line")
    p.add_argument("--no-runtime", action="store_true", help="Leave the runtime column empty")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_sweep)
    subparsers["sweep"] = p

    p = sub.add_parser("adapt", help="Transfer target labels onto the source points")
    p.add_argument("source")
    p.add_argument("target")
    _add_solver_flags(p)
    p.add_argument("--knn-k", type=int, default=DEFAULT_KNN_K)
    p.add_argument("--unlabeled-source", action="store_true", help="Source file has no label column")
    p.add_argument("--header", action="store_true")
    p.add_argument("--grid", action="store_true", help="Loop over the epsilon and k grid")
    p.add_argument("--out", default=None, help="Write the source with a predicted-label column")
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_adapt)
    subparsers["adapt"] = p

    return parser, subparsers


def _load_config(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"Config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """
    Parse the command line. Keys of the --config file become defaults of the
    chosen subcommand, so explicit flags still win.

    :raises ConfigError: on unknown config keys.
    """
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args

    overrides = _load_config(args.config)
    known = set(vars(args)) - _GLOBAL_DESTS
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ConfigError(f"Unknown config key(s) for '{args.command}': {', '.join(unknown)}")
    subparsers[args.command].set_defaults(**overrides)
    return parser.parse_args(argv)


def fot_config(args: argparse.Namespace) -> FotConfig:
    sinkhorn = SinkhornConfig(
        epsilon=args.epsilon,
        max_iter=args.max_iter,
        tol=args.tol,
        eps_scaling=bool(args.eps_scaling),
    )
    return FotConfig(
        k=args.k,
        sinkhorn=sinkhorn,
        outer_tol=args.outer_tol,
        outer_max_iter=args.outer_max_iter,
        init=args.init,
        seed=args.seed,
    )


def gen_spec(args: argparse.Namespace) -> GenSpec:
    return GenSpec(
        kind=args.kind,
        d=args.d,
        n=args.n,
        seed=args.seed,
        sigma=args.sigma,
        n_components=args.components,
        separation=args.separation,
        shift=_floats(args.shift),
    )


def cmd_gen(args: argparse.Namespace) -> int:
    spec = gen_spec(args)
    source, target = gen_pair(spec)
    out = Path(args.out)
    paths = [out.with_name(out.name + "_source.csv"), out.with_name(out.name + "_target.csv")]
    if not args.force:
        for path in paths:
            if path.exists():
                raise FileExistsError(f"{path} exists; pass --force to overwrite")
    for path, dataset in zip(paths, (source, target)):
        write_csv(path, dataset, force=args.force)
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    source = load_csv(args.source, has_labels=args.labels, header=args.header)
    target = load_csv(args.target, has_labels=args.labels, header=args.header)
    tweaks = RunTweaks(exact_cap=args.exact_cap)
    record = estimate(
        source.measure, target.measure, args.method, fot_config(args), tweaks, compare=not args.no_compare
    )
    print(json.dumps(record))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    methods = _strs(args.methods) if args.methods is not None else (args.method,)
    spec = ExperimentSpec(
        generator=gen_spec(args),
        sweep=args.sweep,
        values=_ints(args.values),
        methods=methods,
        replicates=args.replicates,
        base=fot_config(args),
        n_per_d=args.n_per_d,
        protocol=args.protocol,
    )
    tweaks = RunTweaks(
        max_workers=args.workers,
        dashboard=args.dashboard,
        exact_cap=args.exact_cap,
        record_runtime=not args.no_runtime,
    )
    if Path(args.out).exists() and not args.force:
        raise FileExistsError(f"{args.out} exists; pass --force to overwrite")
    writer = ResultWriter(Path(args.out), protocol=spec.protocol, force=args.force)

    dash_logger = configure_logger(logging.getLogger("factoredot").level, dashboard=tweaks.dashboard)
    with make_backend(tweaks, dash_logger) as backend:
        rows = run_sweep(spec, backend, tweaks)
    dash_logger.finalize_line()

    writer.extend(rows)
    writer.commit()
    return 1 if any(r["status"] != "ok" for r in rows) else 0


def _grid(args: argparse.Namespace, n_min: int) -> List[Tuple[Optional[int], Optional[float]]]:
    ks = [k for k in ADAPT_K_GRID if k <= n_min]
    if args.method == "fot":
        return [(k, eps) for eps in ADAPT_EPSILON_GRID for k in ks]
    if args.method == "sinkhorn":
        return [(None, eps) for eps in ADAPT_EPSILON_GRID]
    if args.method == "kot":
        return [(k, None) for k in ks]
    return [(None, None)]


def cmd_adapt(args: argparse.Namespace) -> int:
    source = load_csv(args.source, has_labels=not args.unlabeled_source, header=args.header)
    target = load_csv(args.target, has_labels=True, header=args.header)
    tweaks = RunTweaks(exact_cap=args.exact_cap)

    if not args.grid:
        cfg = fot_config(args)
        result = adapt_labels(source, target, args.method, cfg, args.knn_k, tweaks)
        report = {"method": args.method, "k": cfg.k, "epsilon": cfg.sinkhorn.epsilon,
                  "knn_k": args.knn_k, "error_rate": result.error_rate}
        best = result
    else:
        if not source.has_labels:
            raise AdaptError("--grid scores every setting and needs a labeled source")
        base = fot_config(args)
        trials = []
        for k, eps in _grid(args, min(source.measure.n, target.measure.n)):
            cfg = replace(
                base,
                k=base.k if k is None else k,
                sinkhorn=replace(base.sinkhorn, epsilon=base.sinkhorn.epsilon if eps is None else eps),
            )
            try:
                result = adapt_labels(source, target, args.method, cfg, args.knn_k, tweaks)
            except FactoredOTError as e:
                logger.error(f"k={k} epsilon={eps}: {type(e).__name__}: {e}")
                trials.append(({"k": k, "epsilon": eps, "error_rate": None}, None))
                continue
            trials.append(({"k": k, "epsilon": eps, "error_rate": result.error_rate}, result))
        ok = [t for t in trials if t[1] is not None]
        if not ok:
            raise AdaptError("Every grid setting failed")
        trials.sort(key=lambda t: (t[0]["error_rate"] is None, t[0]["error_rate"] or 0.0))
        report = {"method": args.method, "knn_k": args.knn_k, "grid": [t[0] for t in trials]}
        best = trials[0][1]

    if args.out is not None:
        write_csv(args.out, source, extra_column=best.predicted_labels, force=args.force)
    print(json.dumps(report))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logger(logging.INFO)
    try:
        args = parse_args(argv)
    except ConfigError as e:
        logger.error(str(e))
        return 2

    level = logging.WARNING if args.quiet else getattr(logging, args.log_level)
    logging.getLogger("factoredot").setLevel(level)

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"ConfigError: {e}")
        return 2
    except FactoredOTError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except (FileExistsError, FileNotFoundError) as e:
        logger.error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
