"""``cyltrack`` command-line driver.

Verbs: ``simulate``, ``estimate``, ``connect``, ``evaluate``, ``sweep``.
Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import io
from .estimators import EstimationError
from .experiment import (
    ESTIMATE_HEADER,
    PARAM_SOURCES,
    ConfigError,
    ExperimentSpec,
    _estimate,
    connect_sample,
    estimation_row,
    reference_report,
    resolve_params,
    run_simulate,
    run_sweep,
    true_params_from_meta,
)
from .evaluation import adjusted_rand_index, configuration_to_partition, ground_truth_partition
from .model import ParameterError
from .simulator import true_configuration
from .stats import QuadratureError

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

logger = logging.getLogger("cyltrack")


def load_spec(args) -> ExperimentSpec:
    data = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: top level must be a mapping")
    spec = ExperimentSpec.from_mapping(data)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.replications is not None:
        overrides["replications"] = args.replications
    if args.params is not None:
        overrides["params"] = [args.params]
    if args.k_best is not None:
        overrides["k_best"] = args.k_best
    return dataclasses.replace(spec, **overrides).validate()


def _sample_paths(args, spec: ExperimentSpec) -> list[Path]:
    roots = args.samples or [Path(spec.out) / "samples"]
    paths = []
    for root in roots:
        if not Path(root).exists():
            raise FileNotFoundError(f"sample path {root} does not exist")
        paths.extend(io.sample_dirs(root))
    return paths


def cmd_simulate(args, spec):
    path = run_simulate(spec, args.workers)
    print(f"wrote {path}")


def cmd_estimate(args, spec):
    rows = []
    for d in _sample_paths(args, spec):
        sample = io.read_sample(d)
        meta = io.read_meta(d)
        report, err = _estimate(sample)
        try:
            true_params = true_params_from_meta(meta)
        except EstimationError:
            true_params = None
        if true_params is None:
            # no ground truth: fill the comparison columns with blanks
            row = [None] * len(ESTIMATE_HEADER)
            if report is not None:
                row[ESTIMATE_HEADER.index("tau_alpha_hat")] = report.tau_alpha_hat
                row[ESTIMATE_HEADER.index("tau_d_hat")] = report.tau_d_hat
            row[-1] = err
        else:
            row = estimation_row(sample, true_params, report, err)
        rows.append([str(d), *row])
    path = Path(spec.out) / "estimates.csv"
    io.write_rows(path, ["sample", *ESTIMATE_HEADER], rows)
    print(f"wrote {path}")


def cmd_connect(args, spec):
    summary = []
    for d in _sample_paths(args, spec):
        sample = io.read_sample(d)
        meta = io.read_meta(d)
        for source in spec.params:
            target = Path(spec.out) / "connect" / d.name / source
            try:
                report, err = _estimate(sample) if source in ("hat", "mixed") else (None, "")
                reference = None
                if source == "tilde":
                    ref_spec = dataclasses.replace(spec, seed=int(meta["seed"]))
                    reference = reference_report(ref_spec, meta)
                true_params = (
                    true_params_from_meta(meta) if source != "hat" else _hat_fallback(meta, report)
                )
                params = resolve_params(source, true_params, report, reference)
                problem, rows = connect_sample(sample, params, spec.k_best)
            except (EstimationError, ParameterError, QuadratureError, KeyError) as exc:
                summary.append([str(d), source, None, None, None, None, None, "", f"{exc}"])
                continue
            io.write_problem(problem, target)
            io.write_results([r for r, _, _ in rows], target / "results.csv", problem.p, problem.q)
            io.write_rows(target / "source.csv", ["key", "value"],
                          [("sample", str(d)), ("params", source)])
            for res, ari, gap in rows:
                summary.append([str(d), source, res.rank, res.K, res.log_Q, ari, gap,
                                io.format_pairs(res.configuration), ""])
    path = Path(spec.out) / "connections.csv"
    io.write_rows(path, ["sample", "params", "rank", "K", "log_Q", "ARI", "K_gap", "pairs", "error"],
                  summary)
    print(f"wrote {path}")


def _hat_fallback(meta, report):
    # "hat" needs no truth; birth rate is only carried along for provenance
    if report is None:
        raise EstimationError("estimation failed")
    return report.to_params(float(meta.get("birth_rate") or 0.0))


def cmd_evaluate(args, spec):
    root = Path(spec.out) / "connect"
    if not root.exists():
        raise FileNotFoundError(f"{root} does not exist; run 'connect' first")
    rows = []
    for src in sorted(root.rglob("source.csv")):
        info = {r["key"]: r["value"] for r in io.read_rows(src)}
        sample = io.read_sample(info["sample"])
        problem = io.read_problem(src.parent)
        results = io.read_results(src.parent / "results.csv")
        truth = None
        if sample.true_links is not None:
            truth = problem.objective(true_configuration(sample))
            gt = ground_truth_partition(sample)
        for res in results:
            ari = gap = None
            if truth is not None:
                gap = truth - problem.objective(res.configuration)
                ari = (adjusted_rand_index(gt, configuration_to_partition(res.configuration, sample))
                       if len(sample.segments) >= 2 else 1.0)
            rows.append([info["sample"], info["params"], res.rank, res.K, ari, gap,
                         len(sample.segments)])
    path = Path(spec.out) / "evaluation.csv"
    io.write_rows(path, ["sample", "params", "rank", "K", "ARI", "K_gap", "n_segments"], rows)
    print(f"wrote {path}")


def cmd_sweep(args, spec):
    paths = run_sweep(spec, args.workers)
    for p in paths.values():
        print(f"wrote {p}")


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "connect": cmd_connect,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file")
    common.add_argument("--seed", type=int, help="root seed (non-negative integer)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--replications", type=int)
    common.add_argument("--params", choices=PARAM_SOURCES, help="parameter provenance")
    common.add_argument("--k-best", dest="k_best", type=int, help="number of ranked configurations")
    common.add_argument("--workers", type=int, help="worker processes (default: CYLTRACK_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cyltrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("estimate", "connect"):
            sp.add_argument("samples", nargs="*", type=Path, help="sample bundles or directories")
        else:
            sp.set_defaults(samples=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = load_spec(args)
        COMMANDS[args.command](args, spec)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
