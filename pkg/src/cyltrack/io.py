"""CSV round-trip for samples, assignment problems and ranked results.

A sample is stored as a directory bundle:

- ``points.csv``: ``segment_id, frame, x, y``
- ``segments.csv``: ``segment_id, is_input, is_output, censored_start,
  censored_end, true_trajectory`` (empty when there is no ground truth)
- ``meta.csv``: ``key, value`` pairs (movie length, geometry, margin, true
  dynamics when simulated, seed)

Floats are written with ``repr`` so files round-trip exactly.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import Configuration, CylinderGeometry
from .simulator import ObservedSample, Segment, build_sample
from .solver import AssignmentProblem, SolverResult


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _bool(s: str) -> bool:
    return s == "1"


def _opt_float(s: str) -> Optional[float]:
    return float(s) if s != "" else None


def write_sample(sample: ObservedSample, directory, extra_meta: Optional[dict] = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_rows(
        d / "points.csv",
        ["segment_id", "frame", "x", "y"],
        (
            (s.segment_id, f, x, y)
            for s in sample.segments
            for f, x, y in zip(s.frames, s.x, s.y)
        ),
    )
    links = sample.true_links or {}
    write_rows(
        d / "segments.csv",
        ["segment_id", "is_input", "is_output", "censored_start", "censored_end", "true_trajectory"],
        (
            (s.segment_id, s.is_input, s.is_output, s.censored_start, s.censored_end,
             links.get(s.segment_id))
            for s in sample.segments
        ),
    )
    g = sample.geometry
    meta = {
        "T_S": sample.T_S,
        "delta_t": sample.delta_t,
        "perimeter": g.perimeter,
        "height": g.height,
        "observed_width": g.observed_width,
        "border_margin": sample.border_margin,
        "counted_arrivals": sample.counted_arrivals,
    }
    meta.update(extra_meta or {})
    write_rows(d / "meta.csv", ["key", "value"], sorted(meta.items()))
    return d


def read_meta(directory) -> dict:
    return {r["key"]: r["value"] for r in read_rows(Path(directory) / "meta.csv")}


def read_sample(directory) -> ObservedSample:
    d = Path(directory)
    meta = read_meta(d)
    delta_t = float(meta["delta_t"])
    pts: dict[int, list] = {}
    for r in read_rows(d / "points.csv"):
        pts.setdefault(int(r["segment_id"]), []).append(
            (int(r["frame"]), float(r["x"]), float(r["y"]))
        )
    segments, links = [], {}
    for r in read_rows(d / "segments.csv"):
        sid = int(r["segment_id"])
        arr = pts.get(sid, [])
        segments.append(
            Segment(
                segment_id=sid,
                frames=np.array([a[0] for a in arr], dtype=np.int64),
                x=np.array([a[1] for a in arr], dtype=float),
                y=np.array([a[2] for a in arr], dtype=float),
                delta_t=delta_t,
                is_input=_bool(r["is_input"]),
                is_output=_bool(r["is_output"]),
                censored_start=_bool(r["censored_start"]),
                censored_end=_bool(r["censored_end"]),
            )
        )
        if r["true_trajectory"] != "":
            links[sid] = int(r["true_trajectory"])
    geometry = CylinderGeometry(
        float(meta["perimeter"]), float(meta["height"]), float(meta["observed_width"])
    )
    counted = meta.get("counted_arrivals", "")
    return build_sample(
        segments,
        geometry,
        float(meta["T_S"]),
        delta_t,
        float(meta["border_margin"]),
        links if len(links) == len(segments) and segments else None,
        int(counted) if counted != "" else None,
    )


def write_problem(problem: AssignmentProblem, directory) -> Path:
    """``problem.csv`` (one row per pair) and ``problem_meta.csv``."""
    d = Path(directory)
    rows = (
        (o, i, problem.adjusted_costs[o, i], problem.forbidden[o, i])
        for o in range(problem.p)
        for i in range(problem.q)
    )
    write_rows(d / "problem.csv", ["output", "input", "adjusted_cost", "forbidden"], rows)
    write_rows(
        d / "problem_meta.csv",
        ["key", "value"],
        [("p", problem.p), ("q", problem.q), ("beta", problem.beta),
         ("delta", problem.delta), ("constant", problem.constant)],
    )
    return d


def read_problem(directory) -> AssignmentProblem:
    d = Path(directory)
    meta = {r["key"]: r["value"] for r in read_rows(d / "problem_meta.csv")}
    p, q = int(meta["p"]), int(meta["q"])
    costs = np.zeros((p, q))
    forbidden = np.zeros((p, q), dtype=bool)
    for r in read_rows(d / "problem.csv"):
        o, i = int(r["output"]), int(r["input"])
        costs[o, i] = float(r["adjusted_cost"])
        forbidden[o, i] = _bool(r["forbidden"])
    return AssignmentProblem(
        costs, forbidden, float(meta["beta"]), float(meta["delta"]), float(meta["constant"])
    )


def format_pairs(config: Configuration) -> str:
    return ";".join(f"{o}:{i}" for o, i in config.pairs)


def parse_pairs(text: str, p: int, q: int) -> Configuration:
    pairs = [tuple(int(v) for v in tok.split(":")) for tok in text.split(";") if tok]
    return Configuration.from_matches(pairs, p, q)


def write_results(results: Sequence[SolverResult], path, p: int, q: int) -> None:
    write_rows(
        path,
        ["rank", "K", "log_Q", "p", "q", "pairs"],
        ((r.rank, r.K, r.log_Q, p, q, format_pairs(r.configuration)) for r in results),
    )


def read_results(path) -> list[SolverResult]:
    out = []
    for r in read_rows(path):
        cfg = parse_pairs(r["pairs"], int(r["p"]), int(r["q"]))
        out.append(SolverResult(cfg, float(r["K"]), float(r["log_Q"]), int(r["rank"])))
    return out


def sample_dirs(root) -> list[Path]:
    """Every sample bundle below ``root`` (or ``root`` itself), sorted."""
    root = Path(root)
    if (root / "meta.csv").exists():
        return [root]
    found = sorted(Path(dp) for dp, _, files in os.walk(root) if "meta.csv" in files)
    return found
