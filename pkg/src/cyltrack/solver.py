"""Exact connection optimiser and ranked enumeration.

The objective ``K(c) = sum (gamma - beta - delta) over matched pairs`` is a
min-cost bipartite matching in which every output may stay unmatched (dies
hidden) and every input may stay unmatched (spontaneous birth) at zero cost.
The constraint matrix is that of bipartite matching, so the matching optimum
is the integer optimum.
"""

from __future__ import annotations

import functools
import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import Configuration, InputEvent, OutputEvent
from .stats import CostModel

MAX_BRUTE_FORCE = 8
TIE_TOL = 1e-12


class InfeasibleProblem(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AssignmentProblem:
    adjusted_costs: np.ndarray
    forbidden: np.ndarray
    beta: float = 0.0
    delta: float = 0.0
    # configuration-independent part of -log Q: tau_alpha * T_S
    constant: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.adjusted_costs, dtype=float)
        f = np.asarray(self.forbidden, dtype=bool)
        if a.ndim != 2 or a.shape != f.shape:
            raise ValueError("cost matrix and forbidden mask must be matching 2-D arrays")
        if not np.isfinite(a[~f]).all():
            raise ValueError("allowed pairs must have finite costs")
        object.__setattr__(self, "adjusted_costs", a)
        object.__setattr__(self, "forbidden", f)

    @property
    def p(self) -> int:
        return self.adjusted_costs.shape[0]

    @property
    def q(self) -> int:
        return self.adjusted_costs.shape[1]

    def objective(self, config: Configuration) -> float:
        """K(c); ``inf`` if the configuration uses a forbidden pair."""
        pairs = config.pairs
        if any(self.forbidden[o, i] for o, i in pairs):
            return math.inf
        return math.fsum(self.adjusted_costs[o, i] for o, i in pairs)

    def log_likelihood(self, K: float) -> float:
        return -(self.beta * self.q + self.delta * self.p + K + self.constant)


@dataclass(frozen=True)
class SolverResult:
    configuration: Configuration
    K: float
    log_Q: float
    rank: int = 1


def build_problem(
    outputs: Sequence[OutputEvent],
    inputs: Sequence[InputEvent],
    cost_model: CostModel,
    T_S: float = 0.0,
) -> AssignmentProblem:
    """Adjusted cost matrix ``gamma - beta - delta`` and the time-order mask."""
    p, q = len(outputs), len(inputs)
    if p and q:
        gamma = cost_model.gamma_matrix(outputs, inputs)
    else:
        gamma = np.zeros((p, q))
    forbidden = ~np.isfinite(gamma)
    adjusted = np.where(forbidden, 0.0, gamma - cost_model.beta - cost_model.delta)
    constant = (cost_model.tau_alpha or 0.0) * T_S
    return AssignmentProblem(adjusted, forbidden, cost_model.beta, cost_model.delta, constant)


def _lap(cost: np.ndarray) -> Optional[np.ndarray]:
    """Min-cost perfect assignment on a square matrix with ``inf`` holes.

    Shortest augmenting paths with dual potentials, one row at a time.
    Returns ``col_of_row`` or ``None`` if no finite perfect assignment exists.
    """
    n = cost.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)  # 1-based, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    padded = np.full((n + 1, n + 1), np.inf)
    padded[1:, 1:] = cost
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            if not np.isfinite(delta):
                return None
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[row_of_col[1:] - 1] = np.arange(n)
    return col_of_row


def _min_matching(
    costs: np.ndarray, allowed: np.ndarray, must_match: np.ndarray
) -> Optional[list[tuple[int, int]]]:
    """Min-cost matching where unmatched rows and columns cost nothing.

    ``must_match`` rows may not stay unmatched. Returns matched pairs or
    ``None`` when the constraints cannot be met.
    """
    p, q = costs.shape
    # Rows without an improving edge never need one unless forced, and a
    # column only reachable through non-improving edges is never needed.
    neg = allowed & (costs < 0)
    rows = np.flatnonzero(neg.any(axis=1) | must_match)
    if len(rows) == 0:
        return []
    sub_allowed = allowed[rows]
    keep_col = (neg[rows] | (sub_allowed & must_match[rows, None])).any(axis=0)
    cols = np.flatnonzero(keep_col)
    if len(cols) == 0:
        return None if must_match[rows].any() else []
    a = np.where(allowed[np.ix_(rows, cols)], costs[np.ix_(rows, cols)], np.inf)
    pr, qc = a.shape
    n = pr + qc
    big = np.full((n, n), np.inf)
    big[:pr, :qc] = a
    dead = np.where(must_match[rows], np.inf, 0.0)
    big[np.arange(pr), qc + np.arange(pr)] = dead
    big[pr + np.arange(qc), np.arange(qc)] = 0.0
    big[pr:, qc:] = 0.0
    col_of_row = _lap(big)
    if col_of_row is None:
        return None
    return [(int(rows[r]), int(cols[c])) for r, c in enumerate(col_of_row[:pr]) if c < qc]


def _rank_sorted(items: list, key_K, key_pairs) -> list:
    """Sort by objective, breaking (near-)ties by the sorted pair list."""
    items = sorted(items, key=lambda it: (key_K(it), key_pairs(it)))
    out, group = [], []
    for it in items:
        if group and key_K(it) - key_K(group[0]) > TIE_TOL * (1.0 + abs(key_K(group[0]))):
            out.extend(sorted(group, key=key_pairs))
            group = []
        group.append(it)
    out.extend(sorted(group, key=key_pairs))
    return out


def _result(problem: AssignmentProblem, pairs, rank: int = 1) -> SolverResult:
    config = Configuration.from_matches(pairs, problem.p, problem.q)
    K = problem.objective(config)
    return SolverResult(config, K, problem.log_likelihood(K), rank)


def solve(problem: AssignmentProblem) -> SolverResult:
    """Configuration minimising K (maximum likelihood)."""
    pairs = _min_matching(
        problem.adjusted_costs, ~problem.forbidden, np.zeros(problem.p, dtype=bool)
    )
    return _result(problem, pairs)


def _solve_node(problem: AssignmentProblem, fixed: dict, excluded: frozenset):
    """Best completion given fixed row choices and excluded (row, choice) pairs.

    A choice is an input index, or -1 for "dies hidden".
    """
    p, q = problem.p, problem.q
    allowed = ~problem.forbidden.copy()
    must = np.zeros(p, dtype=bool)
    for r, c in excluded:
        if c < 0:
            must[r] = True
        else:
            allowed[r, c] = False
    pairs = []
    for r, c in fixed.items():
        allowed[r, :] = False
        must[r] = False
        if c >= 0:
            allowed[:, c] = False
            pairs.append((r, c))
    sub = _min_matching(problem.adjusted_costs, allowed, must)
    if sub is None:
        return None
    choice = [-1] * p
    for r, c in itertools.chain(pairs, sub):
        choice[r] = c
    return choice


def solve_k_best(problem: AssignmentProblem, n_max: int, tie_cap: int = 10000) -> list[SolverResult]:
    """The ``n_max`` most likely configurations in non-decreasing K.

    Murty-style partitioning on each output's choice. Stops early once the
    configuration space is exhausted. Configurations tied with the last one
    kept are all generated (up to ``tie_cap`` extra) so the tie-break is the
    same as for :func:`brute_force`.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    counter = itertools.count()
    heap = []

    def push(fixed, excluded):
        choice = _solve_node(problem, fixed, excluded)
        if choice is None:
            return
        pairs = tuple((r, c) for r, c in enumerate(choice) if c >= 0)
        K = math.fsum(problem.adjusted_costs[r, c] for r, c in pairs)
        heapq.heappush(heap, (K, pairs, next(counter), fixed, excluded, choice))

    push({}, frozenset())
    found = []
    while heap:
        if len(found) >= n_max:
            last = found[-1][0]
            if heap[0][0] - last > TIE_TOL * (1.0 + abs(last)) or len(found) >= n_max + tie_cap:
                break
        K, pairs, _, fixed, excluded, choice = heapq.heappop(heap)
        found.append((K, pairs))
        fixed = dict(fixed)
        for r in range(problem.p):
            if r in fixed:
                continue
            push(dict(fixed), excluded | {(r, choice[r])})
            fixed[r] = choice[r]

    ranked = _rank_sorted(found, lambda it: it[0], lambda it: it[1])[:n_max]
    return [_result(problem, pairs, rank=k + 1) for k, (_, pairs) in enumerate(ranked)]


@functools.lru_cache(maxsize=None)
def _partial_injections(p: int, q: int) -> np.ndarray:
    """Every partial injective map from p rows to q columns; -1 marks unmatched."""
    maps = np.zeros((1, 0), dtype=np.int8)
    for _ in range(p):
        blocks = [np.hstack([maps, np.full((len(maps), 1), -1, dtype=np.int8)])]
        for c in range(q):
            ok = ~(maps == c).any(axis=1)
            blocks.append(np.hstack([maps[ok], np.full((int(ok.sum()), 1), c, dtype=np.int8)]))
        maps = np.vstack(blocks)
    maps.setflags(write=False)
    return maps


def _enumerate(problem: AssignmentProblem) -> tuple[np.ndarray, np.ndarray]:
    p, q = problem.p, problem.q
    if p > MAX_BRUTE_FORCE or q > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force refuses instances larger than {MAX_BRUTE_FORCE}x{MAX_BRUTE_FORCE}")
    maps = _partial_injections(p, q)
    if p == 0:
        return maps, np.zeros(len(maps))
    ext_cost = np.hstack([problem.adjusted_costs, np.zeros((p, 1))])
    ext_forb = np.hstack([problem.forbidden, np.zeros((p, 1), dtype=bool)])
    idx = np.where(maps < 0, q, maps).astype(np.int64)
    rows = np.arange(p)[None, :]
    ok = ~ext_forb[rows, idx].any(axis=1)
    maps = maps[ok]
    return maps, ext_cost[rows, idx[ok]].sum(axis=1)


def brute_force_objectives(problem: AssignmentProblem) -> np.ndarray:
    """Sorted K of every valid configuration."""
    return np.sort(_enumerate(problem)[1])


def brute_force(problem: AssignmentProblem) -> list[tuple[Configuration, float]]:
    """All valid configurations with their K, ranked like :func:`solve_k_best`."""
    maps, K = _enumerate(problem)
    items = []
    for m, k in zip(maps, K):
        pairs = tuple((r, int(c)) for r, c in enumerate(m) if c >= 0)
        items.append((float(k), pairs))
    ranked = _rank_sorted(items, lambda it: it[0], lambda it: it[1])
    return [(Configuration.from_matches(pairs, problem.p, problem.q), k) for k, pairs in ranked]
