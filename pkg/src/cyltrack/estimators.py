"""Parameter estimation from the observed window alone."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from .model import CylinderGeometry, DynamicsParams
from .simulator import ObservedSample, Segment
from .stats import RATE_FLOOR

logger = logging.getLogger(__name__)


class EstimationError(ValueError):
    """The sample does not contain enough information for an estimator."""


@dataclass
class EstimationReport:
    v_hat: tuple[float, float]
    sigma_hat: tuple[float, float]
    tau_d_hat: float
    tau_d_ci: tuple[float, float]
    tau_alpha_hat: float
    sample_sizes: dict = field(default_factory=dict)

    def to_params(self, birth_rate: float = 0.0) -> DynamicsParams:
        """Dynamics parameters for the cost model; zero rates are floored."""
        return DynamicsParams(
            v_x=self.v_hat[0],
            v_y=self.v_hat[1],
            sigma_x=self.sigma_hat[0],
            sigma_y=self.sigma_hat[1],
            birth_rate=birth_rate,
            tau_d=max(self.tau_d_hat, RATE_FLOOR),
            tau_alpha=self.tau_alpha_hat,
        )


def _unwrap_dx(dx: np.ndarray, perimeter: Optional[float]) -> np.ndarray:
    if perimeter is None:
        return dx
    return dx - perimeter * np.round(dx / perimeter)


def _increments(seg: Segment, perimeter: Optional[float], exit_margin: Optional[float] = None):
    keep = np.diff(seg.frames) == 1
    if exit_margin is not None:
        keep &= seg.x[:-1] <= -exit_margin
    dx = _unwrap_dx(np.diff(seg.x), perimeter)[keep]
    dy = np.diff(seg.y)[keep]
    return dx, dy


def classify_direction(
    segments: Sequence[Segment], perimeter: Optional[float] = None
) -> tuple[list[Segment], list[Segment]]:
    """Split segments by the sign of their mean x-displacement.

    Returns ``(rightward, leftward)``. Single-point segments carry no
    direction and join the majority class with a warning.
    """
    right, left, undecided = [], [], []
    for seg in segments:
        dx, _ = _increments(seg, perimeter)
        if len(dx) == 0:
            undecided.append(seg)
        elif dx.mean() >= 0:
            right.append(seg)
        else:
            left.append(seg)
    if undecided:
        logger.warning("%d single-point segments assigned to the majority class", len(undecided))
        (right if len(right) >= len(left) else left).extend(undecided)
    return right, left


def estimate_drift_diffusion(
    segments: Sequence[Segment],
    delta_t: float,
    perimeter: Optional[float] = None,
    exit_margin: Optional[float] = None,
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Pooled per-axis maximum-likelihood drift and diffusion.

    ``v = mean(d) / dt`` and ``sigma**2 = var(d) / dt`` over every one-frame
    increment, with the population variance.

    Steps that leave through the exit border are never seen, and they are
    the long ones, so pooling every increment underestimates ``v_x``. With
    ``exit_margin`` only steps starting at least that far from ``x = 0`` are
    used; from there a step almost never leaves the window.
    """
    parts = [_increments(s, perimeter, exit_margin) for s in segments]
    dx = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
    dy = np.concatenate([p[1] for p in parts]) if parts else np.empty(0)
    if len(dx) == 0:
        raise EstimationError("no increments to estimate drift and diffusion from")
    v = (dx.mean() / delta_t, dy.mean() / delta_t)
    sigma = (math.sqrt(dx.var() / delta_t), math.sqrt(dy.var() / delta_t))
    return (float(v[0]), float(v[1])), (float(sigma[0]), float(sigma[1]))


def estimate_tau_d(
    sample: ObservedSample,
    border_margin: Optional[float] = None,
    ci_level: float = 0.95,
) -> tuple[float, tuple[float, float], int]:
    """Death rate from points whose segment stops away from the borders.

    Only points at least ``border_margin`` inside the window and not in the
    last frame are used; a point "dies" when its segment has no point one
    frame later. Returns ``(tau_d_hat, (lo, hi), n_points)`` where the
    interval is the normal approximation at ``ci_level`` for
    ``(1 - exp(-tau_d dt)) / dt``.
    """
    m = sample.border_margin if border_margin is None else border_margin
    l = sample.geometry.observed_width
    dt = sample.delta_t
    last = sample.n_frames - 1
    n_points = 0
    n_dead = 0
    for seg in sample.segments:
        sel = (seg.x >= -l + m) & (seg.x <= -m) & (seg.frames <= last - 1)
        n_points += int(sel.sum())
        # the successor of a point is the next entry of the same segment
        has_next = np.zeros(len(seg), dtype=bool)
        has_next[:-1] = np.diff(seg.frames) == 1
        n_dead += int((sel & ~has_next).sum())
    if n_points == 0:
        raise EstimationError("restricted region holds no points; shrink the border margin")
    tau = n_dead / (dt * n_points)
    q = sps.norm.ppf(0.5 + ci_level / 2.0)
    half = q * math.sqrt(max(tau * (1.0 / dt - tau), 0.0) / n_points)
    return tau, (tau - half, tau + half), n_points


def _births_within(segments: Sequence[Segment], dist: float) -> int:
    """Output segments first seen within ``dist`` of the exit border, not entering."""
    return sum(1 for s in segments if not s.is_input and s.x[0] > -dist)


def _uncensored_outputs(sample: ObservedSample) -> tuple[list[Segment], float]:
    """Output segments after the last exit of a segment already present at t = 0.

    Segments cut by the start of the movie hide their origin, and the longer
    through-going ones are cut more often. Every exit after the last such
    cut segment is fully observed, so counting only those, over the
    remaining time, keeps the composition of exits unbiased.
    """
    cut = [s.t[-1] for s in sample.segments if s.is_output and s.censored_start]
    t_c = max(cut, default=0.0)
    kept = [s for s in sample.segments if s.is_output and not s.censored_start and s.t[-1] > t_c]
    return kept, sample.T_S - t_c


def estimate_tau_alpha(sample: ObservedSample, border_margin: Optional[float] = None) -> tuple[float, dict]:
    """Rate of inputs produced by particles born in the hidden band.

    Segments seen being born in the window and leaving it stand in for
    particles born upstream of the entry border. When the hidden band is
    wider than the window, the part beyond one window width is covered by a
    memoryless composition of the in-window birth fractions.

    A birth within ``border_margin`` of the entry border looks exactly like
    an input, so the window is treated as ``[-(l - margin), 0]``: the
    identifiable births are counted over that width and every input segment
    crosses its upstream edge.
    """
    g = sample.geometry
    m = sample.border_margin if border_margin is None else border_margin
    l = g.observed_width - m
    lu = g.hidden_width
    le = lu - l
    if not sample.T_S > 0:
        raise EstimationError("T_S must be positive")
    if l <= 0:
        raise EstimationError("border margin leaves no room to observe births")

    outputs, duration = _uncensored_outputs(sample)
    if le <= 0:
        n_lu = _births_within(outputs, lu)
        return n_lu / duration, {"N_lu": n_lu, "T_eff": duration}

    n_out = len(outputs)
    if n_out == 0 or duration <= 0:
        raise EstimationError("no outputs observed; lengthen the movie to estimate tau_alpha")
    n_l = _births_within(outputs, l)
    n_through = sum(1 for s in outputs if s.is_input)

    def p_hat(x: float) -> float:
        if x <= 0:
            return 0.0
        if x < l:
            return _births_within(outputs, x) / n_out
        p_l = n_l / n_out
        return p_l + (1.0 - p_l) * p_hat(x - l)

    p_le = p_hat(le)
    tau = (n_l + p_le * n_through) / duration
    counts = {"N_l": n_l, "S_o": n_out, "S_l_star": n_through, "p_le": p_le, "T_eff": duration}
    return tau, counts


def estimate_all(
    sample: ObservedSample,
    border_margin: Optional[float] = None,
    ci_level: float = 0.95,
) -> EstimationReport:
    """Run the four estimators on one sample."""
    m = sample.border_margin if border_margin is None else border_margin
    v, sigma = estimate_drift_diffusion(
        sample.segments, sample.delta_t, sample.geometry.perimeter, exit_margin=m
    )
    tau_d, ci, n_r = estimate_tau_d(sample, m, ci_level)
    tau_a, counts = estimate_tau_alpha(sample, m)
    sizes = {"S_r": n_r, **counts}
    return EstimationReport(v, sigma, tau_d, ci, tau_a, sizes)
