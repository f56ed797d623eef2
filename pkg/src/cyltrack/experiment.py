"""Reproducible parameter sweeps: simulate, estimate, connect, evaluate.

Every (grid point, replication) job draws its randomness from
``SeedSequence(seed, spawn_key=(grid_index, replication))``, so results do
not depend on how jobs are spread over workers.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .estimators import EstimationError, EstimationReport, estimate_all
from .evaluation import (
    adjusted_rand_index,
    configuration_to_partition,
    ground_truth_partition,
    rotation_counts,
)
from .model import CylinderGeometry, DynamicsParams, ParameterError
from .simulator import (
    SPEED_MODES,
    ObservedSample,
    alive_counts,
    default_border_margin,
    observe,
    simulate,
    true_configuration,
)
from .solver import build_problem, solve, solve_k_best
from .stats import CostModel, QuadratureError, theoretical_tau_alpha
from . import io

logger = logging.getLogger(__name__)

PARAM_SOURCES = ("true", "tilde", "hat", "mixed")
THREADS_ENV = "CYLTRACK_THREADS"


class ConfigError(ValueError):
    """Invalid experiment specification."""


@dataclass
class ExperimentSpec:
    perimeter: float = 50.0
    height: float = 30.0
    ratios: list = field(default_factory=lambda: [0.42])
    v_x: float = 0.6
    vy_ratio: float = 0.01
    sigmas: list = field(default_factory=lambda: [0.2])
    lambdas: list = field(default_factory=lambda: [0.03])
    tau_ds: list = field(default_factory=lambda: [0.005])
    v_modes: list = field(default_factory=lambda: ["const"])
    speed_range: list = field(default_factory=lambda: [0.4, 0.8])
    T_S: list = field(default_factory=lambda: [1800.0])
    delta_t: float = 0.25
    warmup: float = 1200.0
    border_margin: Optional[float] = None
    max_gap: int = 4
    replications: int = 1
    seed: int = 0
    out: str = "out"
    params: list = field(default_factory=lambda: ["true"])
    k_best: int = 1
    # movie length for the independent reference estimates ("tilde")
    reference_T_S: float = 1800.0

    def validate(self) -> "ExperimentSpec":
        for name in ("ratios", "sigmas", "lambdas", "tau_ds", "v_modes", "T_S", "params"):
            if not isinstance(getattr(self, name), list) or not getattr(self, name):
                raise ConfigError(f"{name} must be a non-empty list")
        if not isinstance(self.replications, int) or self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not isinstance(self.k_best, int) or self.k_best < 1:
            raise ConfigError("k_best must be >= 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        bad = [m for m in self.v_modes if m not in SPEED_MODES]
        if bad:
            raise ConfigError(f"unknown speed modes {bad}")
        bad = [p for p in self.params if p not in PARAM_SOURCES]
        if bad:
            raise ConfigError(f"unknown parameter sources {bad}")
        if len(self.speed_range) != 2 or not 0 < self.speed_range[0] <= self.speed_range[1]:
            raise ConfigError("speed_range must be [lo, hi] with 0 < lo <= hi")
        try:
            for pt in self.grid():
                pt.geometry(self)
                pt.params(self)
            if not (self.delta_t > 0 and self.warmup >= 0 and self.reference_T_S > 0):
                raise ConfigError("delta_t, warmup and reference_T_S must be positive")
            for ts in self.T_S + [self.reference_T_S]:
                if abs(ts / self.delta_t - round(ts / self.delta_t)) > 1e-9:
                    raise ConfigError(f"T_S={ts} is not a multiple of delta_t")
        except (ParameterError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentSpec":
        """Build from a (possibly sectioned) mapping; sections are flattened."""
        flat = {}
        for key, value in (data or {}).items():
            if isinstance(value, dict):
                flat.update(value)
            else:
                flat[key] = value
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        for name in ("ratios", "sigmas", "lambdas", "tau_ds", "v_modes", "T_S", "params"):
            if name in flat and not isinstance(flat[name], list):
                flat[name] = [flat[name]]
        if "params" in flat:
            # YAML reads a bare `true` as a boolean
            flat["params"] = [str(v).lower() for v in flat["params"]]
        return cls(**flat)

    def grid(self) -> list["GridPoint"]:
        return [
            GridPoint(float(r), float(s), float(lam), float(td), str(vm), float(ts))
            for r, s, lam, td, vm, ts in itertools.product(
                self.ratios, self.sigmas, self.lambdas, self.tau_ds, self.v_modes, self.T_S
            )
        ]


@dataclass(frozen=True)
class GridPoint:
    ratio: float
    sigma: float
    birth_rate: float
    tau_d: float
    v_mode: str
    T_S: float

    def geometry(self, spec: ExperimentSpec) -> CylinderGeometry:
        return CylinderGeometry.from_ratio(spec.perimeter, spec.height, self.ratio)

    def params(self, spec: ExperimentSpec) -> DynamicsParams:
        p = DynamicsParams(
            v_x=spec.v_x,
            v_y=spec.vy_ratio * spec.v_x,
            sigma_x=self.sigma,
            sigma_y=self.sigma,
            birth_rate=self.birth_rate,
            tau_d=self.tau_d,
        )
        return p.with_rates(tau_alpha=theoretical_tau_alpha(p, self.geometry(spec)))

    def columns(self) -> list:
        return [self.ratio, self.sigma, self.birth_rate, self.tau_d, self.v_mode, self.T_S]


GRID_HEADER = ["ratio", "sigma", "lambda", "tau_d", "v_mode", "T_S"]


def seed_sequences(spec: ExperimentSpec, grid_index: int, replication: int):
    """(movie, reference movie) seed sequences of one job."""
    root = np.random.SeedSequence(spec.seed, spawn_key=(grid_index, replication))
    return root.spawn(2)


def simulate_point(spec: ExperimentSpec, point: GridPoint, ss, T_S: Optional[float] = None):
    geometry = point.geometry(spec)
    params = point.params(spec)
    T_S = point.T_S if T_S is None else T_S
    trajs = simulate(
        geometry, params, spec.delta_t, spec.warmup, T_S, np.random.default_rng(ss),
        speed_mode=point.v_mode, speed_range=tuple(spec.speed_range),
    )
    margin = spec.border_margin
    if margin is None:
        margin = default_border_margin(params, spec.delta_t)
    return trajs, observe(trajs, geometry, spec.delta_t, margin, T_S, spec.max_gap)


def resolve_params(
    source: str,
    true_params: DynamicsParams,
    report: Optional[EstimationReport],
    reference: Optional[EstimationReport] = None,
) -> DynamicsParams:
    """Dynamics used by the cost model for a given parameter provenance.

    ``true``: simulation values with the stationary arrival rate.
    ``tilde``: true motion, rates from an independent reference movie.
    ``hat``: everything estimated on the movie itself.
    ``mixed``: true motion, rates estimated on the movie itself.
    """
    if source == "true":
        return true_params
    if source in ("hat", "mixed", "tilde"):
        rep = reference if source == "tilde" else report
        if rep is None:
            raise EstimationError(f"no estimates available for parameter source {source!r}")
        if source == "hat":
            return rep.to_params(true_params.birth_rate)
        return true_params.with_rates(
            tau_d=max(rep.tau_d_hat, 1e-12), tau_alpha=rep.tau_alpha_hat
        )
    raise ConfigError(f"unknown parameter source {source!r}")


def estimation_row(sample: ObservedSample, true_params: DynamicsParams, report, error: str = ""):
    counted = sample.counted_tau_alpha
    tau_target = -math.expm1(-true_params.tau_d * sample.delta_t) / sample.delta_t
    if report is None:
        est = [None] * 10
    else:
        rel = abs(report.tau_alpha_hat - counted) / counted if counted else None
        lo, hi = report.tau_d_ci
        est = [
            report.tau_alpha_hat, rel, report.tau_d_hat, lo, hi, lo <= tau_target <= hi,
            report.v_hat[0], report.v_hat[1], report.sigma_hat[0], report.sigma_hat[1],
        ]
    return [len(sample.segments), len(sample.outputs), len(sample.inputs),
            true_params.tau_alpha, counted, *est[:2], tau_target, *est[2:], error]


ESTIMATE_HEADER = [
    "n_segments", "p", "q", "tau_alpha_theory", "tau_alpha_counted", "tau_alpha_hat",
    "tau_alpha_rel_error", "tau_d_target", "tau_d_hat", "tau_d_ci_lo", "tau_d_ci_hi",
    "tau_d_covered", "v_x_hat", "v_y_hat", "sigma_x_hat", "sigma_y_hat", "error",
]


def _estimate(sample):
    try:
        return estimate_all(sample), ""
    except EstimationError as exc:
        return None, f"estimation: {exc}"


def connect_sample(sample, params: DynamicsParams, k_best: int):
    """Ranked configurations plus ARI and K-gap against the ground truth."""
    cost_model = CostModel.from_params(params, sample.geometry)
    problem = build_problem(sample.outputs, sample.inputs, cost_model, sample.T_S)
    results = solve_k_best(problem, k_best) if k_best > 1 else [solve(problem)]
    rows = []
    truth_K = None
    if sample.true_links is not None:
        truth_K = problem.objective(true_configuration(sample))
        gt = ground_truth_partition(sample)
    for res in results:
        ari = gap = None
        if truth_K is not None:
            gap = truth_K - res.K
            if len(sample.segments) >= 2:
                ari = adjusted_rand_index(gt, configuration_to_partition(res.configuration, sample))
            else:
                ari = 1.0
        rows.append((res, ari, gap))
    return problem, rows


def run_job(args) -> dict:
    """One (grid point, replication): every table row it contributes."""
    spec, gi, rep = args
    point = spec.grid()[gi]
    true_params = point.params(spec)
    ss_movie, ss_ref = seed_sequences(spec, gi, rep)
    head = [*point.columns(), rep]
    out = {"manifest": [], "estimates": [], "connections": [], "rotations": []}
    trajs, sample = simulate_point(spec, point, ss_movie)

    frames = np.arange(sample.n_frames) * spec.delta_t
    mean_alive = float(alive_counts(trajs, frames).mean()) if len(trajs) else 0.0
    report, err = _estimate(sample)
    out["estimates"].append([*head, mean_alive, *estimation_row(sample, true_params, report, err)])

    reference = None
    if "tilde" in spec.params:
        _, ref_sample = simulate_point(spec, point, ss_ref, spec.reference_T_S)
        reference, ref_err = _estimate(ref_sample)
        err = "; ".join(e for e in (err, ref_err and f"reference {ref_err}") if e)

    for source in spec.params:
        try:
            params = resolve_params(source, true_params, report, reference)
            _, rows = connect_sample(sample, params, spec.k_best)
        except (EstimationError, ParameterError, QuadratureError) as exc:
            out["connections"].append([*head, source, None, None, None, None, None,
                                       len(sample.segments), "", str(exc)])
            continue
        for res, ari, gap in rows:
            out["connections"].append([
                *head, source, res.rank, res.K, res.log_Q, ari, gap,
                len(sample.segments), io.format_pairs(res.configuration), "",
            ])
        if source == spec.params[0] and rows:
            part = configuration_to_partition(rows[0][0].configuration, sample)
            for v in rotation_counts(part, sample.geometry):
                out["rotations"].append([*head, f"segments_{source}", int(v)])

    seen = {sample.true_links[s.segment_id] for s in sample.segments}
    for v in rotation_counts([t for t in trajs if t.id in seen], sample.geometry):
        out["rotations"].append([*head, "theoretical", float(v)])

    out["manifest"].append([gi, *head, spec.seed, f"{gi}-{rep}", "ok" if not err else "partial", err])
    return out


def worker_count(n_jobs: int, requested: Optional[int] = None) -> int:
    if requested is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                requested = int(env)
            except ValueError as exc:
                raise ConfigError(f"{THREADS_ENV} must be an integer") from exc
        else:
            requested = os.cpu_count() or 1
    return max(1, min(requested, n_jobs))


def map_jobs(fn, jobs: list, workers: Optional[int] = None) -> list:
    """Ordered map over jobs, optionally in a process pool."""
    n = worker_count(len(jobs), workers)
    if n == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * n))))


def all_jobs(spec: ExperimentSpec) -> list:
    return [(spec, gi, rep) for gi in range(len(spec.grid())) for rep in range(spec.replications)]


ROW_HEAD = GRID_HEADER + ["replication"]


def run_sweep(spec: ExperimentSpec, workers: Optional[int] = None) -> dict[str, Path]:
    """Full pipeline over the grid; writes one tidy CSV per figure."""
    spec.validate()
    results = map_jobs(run_job, all_jobs(spec), workers)
    tables = {k: [row for r in results for row in r[k]] for k in results[0]} if results else {}
    out = Path(spec.out)
    paths = {}

    def emit(name, header, rows):
        path = out / name
        io.write_rows(path, header, rows)
        paths[name] = path

    emit("manifest.csv", ["grid_index", *ROW_HEAD, "seed", "spawn_key", "status", "error"],
         tables["manifest"])
    est_header = [*ROW_HEAD, "mean_alive", *ESTIMATE_HEADER]
    emit("estimates.csv", est_header, tables["estimates"])
    idx = {name: k for k, name in enumerate(est_header)}

    def pick(row, names):
        return [row[idx[n]] for n in names]

    tau_alpha_cols = ["tau_alpha_counted", "tau_alpha_hat", "tau_alpha_rel_error"]
    emit("fig4_tau_alpha_vs_ratio.csv",
         ["ratio", "T_S", "lambda", "tau_d", "replication", *tau_alpha_cols],
         (pick(r, ["ratio", "T_S", "lambda", "tau_d", "replication", *tau_alpha_cols])
          for r in tables["estimates"]))
    emit("fig5_tau_alpha_vs_duration.csv",
         ["T_S", "ratio", "lambda", "tau_d", "replication", *tau_alpha_cols],
         (pick(r, ["T_S", "ratio", "lambda", "tau_d", "replication", *tau_alpha_cols])
          for r in tables["estimates"]))
    tau_d_cols = ["tau_d_target", "tau_d_hat", "tau_d_ci_lo", "tau_d_ci_hi", "tau_d_covered"]
    emit("fig_tau_d_estimates.csv",
         ["tau_d", "T_S", "lambda", "replication", *tau_d_cols],
         (pick(r, ["tau_d", "T_S", "lambda", "replication", *tau_d_cols])
          for r in tables["estimates"]))
    emit("fig3_stationarity.csv",
         ["lambda", "tau_d", "T_S", "replication", "mean_alive", "expected"],
         (pick(r, ["lambda", "tau_d", "T_S", "replication", "mean_alive"])
          + [r[idx["lambda"]] / r[idx["tau_d"]]] for r in tables["estimates"]))
    emit("fig_ari.csv",
         [*ROW_HEAD, "params", "rank", "K", "log_Q", "ARI", "K_gap", "n_segments", "pairs", "error"],
         tables["connections"])
    emit("fig_rotations.csv", [*ROW_HEAD, "kind", "value"], tables["rotations"])
    return paths


def sample_meta(spec: ExperimentSpec, point: GridPoint, gi: int, rep: int) -> dict:
    p = point.params(spec)
    return {
        "seed": spec.seed, "grid_index": gi, "replication": rep, "v_x": p.v_x, "v_y": p.v_y,
        "sigma_x": p.sigma_x, "sigma_y": p.sigma_y, "birth_rate": p.birth_rate,
        "tau_d": p.tau_d, "tau_alpha_theory": p.tau_alpha, "v_mode": point.v_mode,
        "ratio": point.ratio, "warmup": spec.warmup, "max_gap": spec.max_gap,
    }


def _simulate_job(args):
    spec, gi, rep = args
    point = spec.grid()[gi]
    ss_movie, _ = seed_sequences(spec, gi, rep)
    _, sample = simulate_point(spec, point, ss_movie)
    rel = Path("samples") / f"g{gi:03d}_r{rep:04d}"
    io.write_sample(sample, Path(spec.out) / rel, sample_meta(spec, point, gi, rep))
    return [gi, *point.columns(), rep, spec.seed, f"{gi}-{rep}", rel.as_posix()]


def run_simulate(spec: ExperimentSpec, workers: Optional[int] = None) -> Path:
    spec.validate()
    rows = map_jobs(_simulate_job, all_jobs(spec), workers)
    path = Path(spec.out) / "manifest.csv"
    io.write_rows(path, ["grid_index", *ROW_HEAD, "seed", "spawn_key", "path"], rows)
    return path


def true_params_from_meta(meta: dict) -> DynamicsParams:
    try:
        return DynamicsParams(
            float(meta["v_x"]), float(meta["v_y"]), float(meta["sigma_x"]),
            float(meta["sigma_y"]), float(meta["birth_rate"]), float(meta["tau_d"]),
            float(meta["tau_alpha_theory"]),
        )
    except KeyError as exc:
        raise EstimationError(f"sample has no true parameter {exc}") from exc


def reference_report(spec: ExperimentSpec, meta: dict) -> Optional[EstimationReport]:
    """Re-simulate the independent reference movie of a stored sample."""
    gi, rep = int(meta["grid_index"]), int(meta["replication"])
    point = spec.grid()[gi]
    _, ss_ref = seed_sequences(spec, gi, rep)
    _, ref = simulate_point(spec, point, ss_ref, spec.reference_T_S)
    report, _ = _estimate(ref)
    return report
