"""Ground-truth simulation on the full cylinder and partial observation.

Frames sit on a global grid ``k * delta_t`` of simulation time; the movie is
the frames in ``[warmup, warmup + T_S]``, re-timed so that it starts at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import (
    Configuration,
    CylinderGeometry,
    DynamicsParams,
    InputEvent,
    OutputEvent,
    ParameterError,
    Point,
    wrap_x_array,
)

DEFAULT_WARMUP = 20 * 60.0
SPEED_MODES = ("const", "uniform")


@dataclass(eq=False)
class Trajectory:
    id: int
    birth_time: float
    death_time: float
    birth_pos: tuple[float, float]
    v_x: float
    v_y: float
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    delta_t: float
    # movie-clock time of the last frame before the particle first crossed
    # x = 0, if that happened before the end of the movie
    first_exit_time: Optional[float] = None

    @property
    def t(self) -> np.ndarray:
        return self.frames * self.delta_t

    @property
    def lifetime(self) -> float:
        return self.death_time - self.birth_time

    @property
    def sampled_points(self) -> list[Point]:
        return [Point(float(t), float(x), float(y)) for t, x, y in zip(self.t, self.x, self.y)]


@dataclass(eq=False)
class Segment:
    """Maximal run of consecutive frames of one particle inside the window."""

    segment_id: int
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    delta_t: float
    is_input: bool = False
    is_output: bool = False
    censored_start: bool = False
    censored_end: bool = False

    @property
    def t(self) -> np.ndarray:
        return self.frames * self.delta_t

    def __len__(self):
        return len(self.frames)


@dataclass(eq=False)
class ObservedSample:
    segments: list[Segment]
    outputs: list[OutputEvent]
    inputs: list[InputEvent]
    T_S: float
    delta_t: float
    geometry: CylinderGeometry
    border_margin: float
    true_links: Optional[dict[int, int]] = None
    # ground-truth N_{l_u}: particles born within l_u upstream of the exit
    # border whose first exit falls inside the movie
    counted_arrivals: Optional[int] = None
    _by_id: dict = field(default=None, repr=False)

    def segment(self, segment_id: int) -> Segment:
        if self._by_id is None:
            self._by_id = {s.segment_id: s for s in self.segments}
        return self._by_id[segment_id]

    @property
    def n_frames(self) -> int:
        return int(round(self.T_S / self.delta_t)) + 1

    @property
    def counted_tau_alpha(self) -> Optional[float]:
        if self.counted_arrivals is None:
            return None
        return self.counted_arrivals / self.T_S


def default_border_margin(params: DynamicsParams, delta_t: float) -> float:
    """Distance a particle can plausibly cover in one frame."""
    return params.v_x * delta_t + 3.0 * params.sigma_x * math.sqrt(delta_t)


def _check_inputs(geometry, params, delta_t, warmup, T_S):
    if not delta_t > 0:
        raise ParameterError("delta_t must be positive")
    if warmup < 0 or not T_S > 0:
        raise ParameterError("warmup must be >= 0 and T_S > 0")
    if abs(T_S / delta_t - round(T_S / delta_t)) > 1e-9:
        raise ParameterError("T_S must be a multiple of delta_t")
    if abs(warmup / delta_t - round(warmup / delta_t)) > 1e-9:
        raise ParameterError("warmup must be a multiple of delta_t")


def simulate(
    geometry: CylinderGeometry,
    params: DynamicsParams,
    delta_t: float,
    warmup: float,
    T_S: float,
    seed=None,
    speed_mode: str = "const",
    speed_range: tuple[float, float] = (0.4, 0.8),
) -> list[Trajectory]:
    """Simulate births, drift-diffusion and deaths; keep what overlaps the movie.

    Births are a Poisson process of rate ``params.birth_rate`` over
    ``[0, warmup + T_S]`` with uniform positions; lifetimes are exponential
    with rate ``params.tau_d``. Positions are sampled exactly on the frame
    grid. Returned trajectories carry only their in-movie frames, with times
    shifted so the movie starts at 0.

    With ``speed_mode="uniform"`` each particle draws ``v_x`` from
    ``speed_range`` and keeps ``v_y / v_x`` fixed.
    """
    _check_inputs(geometry, params, delta_t, warmup, T_S)
    if speed_mode not in SPEED_MODES:
        raise ParameterError(f"unknown speed mode {speed_mode!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    L, H, l = geometry.perimeter, geometry.height, geometry.observed_width
    total = warmup + T_S
    k_start = int(round(warmup / delta_t))
    k_end = int(round(total / delta_t))

    n_births = rng.poisson(params.birth_rate * total)
    births = np.sort(rng.uniform(0.0, total, n_births))
    x0 = rng.uniform(-L, 0.0, n_births)
    y0 = rng.uniform(0.0, H, n_births)
    lifetimes = rng.exponential(1.0 / params.tau_d, n_births)
    if speed_mode == "uniform":
        vx = rng.uniform(speed_range[0], speed_range[1], n_births)
    else:
        vx = np.full(n_births, params.v_x)
    vy = vx * (params.v_y / params.v_x)
    sqdt = math.sqrt(delta_t)

    out = []
    for k in range(n_births):
        b, d = births[k], births[k] + lifetimes[k]
        if d < warmup:
            continue
        f0 = math.ceil(b / delta_t - 1e-9)
        f1 = min(math.floor(d / delta_t + 1e-9), k_end)
        if f1 < f0:
            frames = np.empty(0, dtype=np.int64)
            xs = ys = np.empty(0)
        else:
            n = f1 - f0 + 1
            lead = f0 * delta_t - b
            z = rng.standard_normal((n, 2))
            dx = np.empty(n)
            dy = np.empty(n)
            dx[0] = vx[k] * lead + params.sigma_x * math.sqrt(lead) * z[0, 0]
            dy[0] = vy[k] * lead + params.sigma_y * math.sqrt(lead) * z[0, 1]
            dx[1:] = vx[k] * delta_t + params.sigma_x * sqdt * z[1:, 0]
            dy[1:] = vy[k] * delta_t + params.sigma_y * sqdt * z[1:, 1]
            unwrapped = x0[k] + np.cumsum(dx)
            xs = wrap_x_array(unwrapped, L)
            ys = y0[k] + np.cumsum(dy)
            frames = np.arange(f0, f1 + 1, dtype=np.int64)

        first_exit = None
        if len(frames):
            crossed = unwrapped > 0.0
            if crossed.any():
                c = int(np.argmax(crossed))
                first_exit = (frames[c - 1] - k_start) * delta_t if c > 0 else b - warmup
        keep = frames >= k_start
        out.append(
            Trajectory(
                id=len(out),
                birth_time=b - warmup,
                death_time=d - warmup,
                birth_pos=(float(x0[k]), float(y0[k])),
                v_x=float(vx[k]),
                v_y=float(vy[k]),
                frames=frames[keep] - k_start,
                x=xs[keep],
                y=ys[keep],
                delta_t=delta_t,
                first_exit_time=first_exit,
            )
        )
    return out


def alive_counts(trajectories: Sequence[Trajectory], times) -> np.ndarray:
    """Number of particles alive at each of ``times`` (movie clock)."""
    times = np.asarray(times, dtype=float)
    b = np.array([tr.birth_time for tr in trajectories])
    d = np.array([tr.death_time for tr in trajectories])
    if len(b) == 0:
        return np.zeros(len(times), dtype=int)
    return ((b[None, :] <= times[:, None]) & (d[None, :] > times[:, None])).sum(axis=1)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of the True runs in ``mask``."""
    if not mask.any():
        return []
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2], edges[1::2]))


def _close_gaps(runs, x, l, max_gap):
    """Merge runs separated by a short excursion back through the same border."""
    merged = []
    for a, b in runs:
        if merged:
            prev = merged[-1]
            pa, pb = prev[-1]
            same_side = (x[pb - 1] > -l / 2) == (x[a] > -l / 2)
            if a - pb <= max_gap and same_side:
                prev.append((a, b))
                continue
        merged.append([(a, b)])
    return [np.concatenate([np.arange(a, b) for a, b in group]) for group in merged]


def observe(
    trajectories: Sequence[Trajectory],
    geometry: CylinderGeometry,
    delta_t: float,
    border_margin: float,
    T_S: float,
    max_gap: int = 4,
) -> ObservedSample:
    """Clip trajectories to the window and extract segments and events.

    A segment is an output when its last point is within ``border_margin`` of
    ``x = 0`` and an input when its first point is within ``border_margin`` of
    ``x = -l``. Segments cut by the start (end) of the movie are never inputs
    (outputs): the crossing was not observed.

    A particle sampled just outside the border it is next to and back inside
    a few frames later has not crossed the hidden band; like a tracker's gap
    closing, such excursions of at most ``max_gap`` frames do not split the
    segment (its ``frames`` then skip). ``max_gap=0`` disables this.
    """
    if border_margin < 0:
        raise ParameterError("border_margin must be non-negative")
    l = geometry.observed_width
    last_frame = int(round(T_S / delta_t))

    pieces = []
    for tr in trajectories:
        inside = (tr.x >= -l) & (tr.x <= 0.0)
        for idx in _close_gaps(_runs(inside), tr.x, l, max_gap):
            pieces.append((int(tr.frames[idx[0]]), tr.id, tr.frames[idx], tr.x[idx], tr.y[idx]))
    pieces.sort(key=lambda p: (p[0], p[1]))

    segments, true_links = [], {}
    for sid, (_, tid, frames, xs, ys) in enumerate(pieces):
        censored_start = frames[0] == 0
        censored_end = frames[-1] == last_frame
        segments.append(
            Segment(
                segment_id=sid,
                frames=frames.copy(),
                x=xs.copy(),
                y=ys.copy(),
                delta_t=delta_t,
                is_input=bool(xs[0] < -l + border_margin and not censored_start),
                is_output=bool(xs[-1] > -border_margin and not censored_end),
                censored_start=bool(censored_start),
                censored_end=bool(censored_end),
            )
        )
        true_links[sid] = tid

    lu = geometry.hidden_width
    arrivals = sum(
        1
        for tr in trajectories
        if tr.birth_pos[0] > -lu and tr.first_exit_time is not None and tr.first_exit_time >= 0.0
    )
    return build_sample(segments, geometry, T_S, delta_t, border_margin, true_links, arrivals)


def build_sample(
    segments, geometry, T_S, delta_t, border_margin, true_links=None, counted_arrivals=None
) -> ObservedSample:
    """Assemble an :class:`ObservedSample` from flagged segments."""
    outputs = [
        OutputEvent(float(s.t[-1]), float(s.y[-1]), s.segment_id) for s in segments if s.is_output
    ]
    inputs = [
        InputEvent(float(s.t[0]), float(s.y[0]), s.segment_id) for s in segments if s.is_input
    ]
    outputs.sort(key=lambda e: (e.t_o, e.segment_id))
    inputs.sort(key=lambda e: (e.t_i, e.segment_id))
    return ObservedSample(
        segments=list(segments),
        outputs=outputs,
        inputs=inputs,
        T_S=T_S,
        delta_t=delta_t,
        geometry=geometry,
        border_margin=border_margin,
        true_links=true_links,
        counted_arrivals=counted_arrivals,
    )


def true_configuration(sample: ObservedSample) -> Configuration:
    """Configuration realised by the simulation.

    An output is matched to the input of the same particle's next segment;
    an output with no such successor died hidden, an input with no such
    predecessor comes from a hidden birth.
    """
    if sample.true_links is None:
        raise ValueError("sample carries no ground truth")
    out_idx = {e.segment_id: k for k, e in enumerate(sample.outputs)}
    in_idx = {e.segment_id: k for k, e in enumerate(sample.inputs)}
    by_traj: dict[int, list[Segment]] = {}
    for s in sample.segments:
        by_traj.setdefault(sample.true_links[s.segment_id], []).append(s)
    matches = []
    for segs in by_traj.values():
        segs.sort(key=lambda s: s.frames[0])
        for a, b in zip(segs, segs[1:]):
            if a.segment_id in out_idx and b.segment_id in in_idx:
                matches.append((out_idx[a.segment_id], in_idx[b.segment_id]))
    return Configuration.from_matches(matches, len(sample.outputs), len(sample.inputs))


def simulate_sample(
    geometry: CylinderGeometry,
    params: DynamicsParams,
    delta_t: float,
    T_S: float,
    seed=None,
    warmup: float = DEFAULT_WARMUP,
    border_margin: Optional[float] = None,
    speed_mode: str = "const",
    max_gap: int = 4,
) -> tuple[list[Trajectory], ObservedSample]:
    """Convenience wrapper: simulate then observe."""
    trajs = simulate(geometry, params, delta_t, warmup, T_S, seed, speed_mode=speed_mode)
    if border_margin is None:
        border_margin = default_border_margin(params, delta_t)
    return trajs, observe(trajs, geometry, delta_t, border_margin, T_S, max_gap)
