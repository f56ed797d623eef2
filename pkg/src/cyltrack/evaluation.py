"""Scoring reconstructed trajectories against ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import DisjointSet
from scipy.special import comb

from .model import Configuration, CylinderGeometry, DynamicsParams, InvalidConfiguration
from .simulator import ObservedSample, Segment, Trajectory, true_configuration
from .solver import AssignmentProblem, SolverResult


@dataclass(frozen=True)
class Partition:
    """Cluster label for every observed segment."""

    assignment: Mapping[int, int]

    @property
    def elements(self) -> list:
        return sorted(self.assignment)

    def labels(self, elements: Optional[Sequence] = None) -> np.ndarray:
        keys = self.elements if elements is None else elements
        return np.array([self.assignment[k] for k in keys])

    @property
    def n_clusters(self) -> int:
        return len(set(self.assignment.values()))

    def cluster_sizes(self) -> np.ndarray:
        _, counts = np.unique(self.labels(), return_counts=True)
        return counts

    @classmethod
    def from_labels(cls, labels: Sequence) -> "Partition":
        return cls({k: lab for k, lab in enumerate(labels)})


def configuration_to_partition(
    config: Configuration, sample: ObservedSample, segments: Optional[Sequence[Segment]] = None
) -> Partition:
    """Chain matched output/input pairs into trajectory clusters.

    Cluster labels are the smallest segment id of each cluster.
    """
    segments = sample.segments if segments is None else segments
    ids = [s.segment_id for s in segments]
    ds = DisjointSet(ids)
    for o, i in config.pairs:
        a = sample.outputs[o].segment_id
        b = sample.inputs[i].segment_id
        if ds.connected(a, b):
            # each segment has at most one successor and one predecessor, so
            # joining two already connected segments closes a loop
            raise InvalidConfiguration(f"match {(o, i)} closes a cycle")
        ds.merge(a, b)
    smallest = {}
    for sid in ids:
        root = ds[sid]
        smallest[root] = min(smallest.get(root, sid), sid)
    return Partition({sid: smallest[ds[sid]] for sid in ids})


def ground_truth_partition(sample: ObservedSample) -> Partition:
    """Segments grouped by the particle that produced them."""
    if sample.true_links is None:
        raise ValueError("sample carries no ground truth")
    return Partition({s.segment_id: sample.true_links[s.segment_id] for s in sample.segments})


def _contingency(G: Partition, K: Partition) -> np.ndarray:
    if set(G.assignment) != set(K.assignment):
        raise ValueError("partitions cover different elements")
    keys = G.elements
    if len(keys) < 2:
        raise ValueError("need at least two elements to compare partitions")
    _, g = np.unique(G.labels(keys), return_inverse=True)
    _, k = np.unique(K.labels(keys), return_inverse=True)
    table = np.zeros((g.max() + 1, k.max() + 1), dtype=np.int64)
    np.add.at(table, (g, k), 1)
    return table


def _pair_counts(table: np.ndarray) -> tuple[float, float, float, float]:
    n = int(table.sum())
    same_both = comb(table, 2, exact=False).sum()
    same_g = comb(table.sum(axis=1), 2, exact=False).sum()
    same_k = comb(table.sum(axis=0), 2, exact=False).sum()
    return same_both, same_g, same_k, comb(n, 2, exact=False)


def rand_index(G: Partition, K: Partition) -> float:
    """Share of element pairs on which the two partitions agree."""
    a, sg, sk, total = _pair_counts(_contingency(G, K))
    b = total - sg - sk + a
    return float((a + b) / total)


def adjusted_rand_index(G: Partition, K: Partition) -> float:
    """Rand index corrected for chance under the permutation model.

    When neither partition has any freedom left (both all-singletons or both
    a single cluster) the chance correction is undefined; identical
    partitions then score 1 and anything else 0.
    """
    table = _contingency(G, K)
    a, sg, sk, total = _pair_counts(table)
    expected = sg * sk / total
    max_index = 0.5 * (sg + sk)
    denom = max_index - expected
    if denom == 0:
        return 1.0 if _same_partition(table) else 0.0
    return float((a - expected) / denom)


def _same_partition(table: np.ndarray) -> bool:
    nz = table > 0
    return bool((nz.sum(axis=0) == 1).all() and (nz.sum(axis=1) == 1).all())


def k_gap(
    sample: ObservedSample, solved: SolverResult, problem: AssignmentProblem
) -> tuple[float, float]:
    """``K(true configuration) - K(solved)`` and the ARI of the solved grouping."""
    truth = true_configuration(sample)
    gap = problem.objective(truth) - solved.K
    if len(sample.segments) < 2:
        return gap, 1.0
    ari = adjusted_rand_index(
        ground_truth_partition(sample), configuration_to_partition(solved.configuration, sample)
    )
    return gap, ari


def expected_rotations(params: DynamicsParams, geometry: CylinderGeometry) -> float:
    """Mean turns around the cylinder over an exponential lifetime: ``v_x / (tau_d L)``."""
    return params.v_x / (params.tau_d * geometry.perimeter)


def rotation_counts(source, geometry: CylinderGeometry) -> np.ndarray:
    """Turns around the cylinder per trajectory.

    For simulated trajectories this is ``v_x * T_d / L`` with the particle's
    own speed and lifetime. For a reconstructed :class:`Partition` the
    number of segments per cluster is returned as the observable proxy.
    """
    if isinstance(source, Partition):
        return source.cluster_sizes()
    trajs: Sequence[Trajectory] = source
    return np.array([tr.v_x * tr.lifetime / geometry.perimeter for tr in trajs], dtype=float)


def rotation_histogram(counts, bins=None) -> tuple[np.ndarray, np.ndarray]:
    counts = np.asarray(counts, dtype=float)
    if bins is None:
        top = max(1, int(math.ceil(counts.max()))) if len(counts) else 1
        bins = np.arange(0, top + 2)
    return np.histogram(counts, bins=bins)
