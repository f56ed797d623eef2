"""Domain types shared across the package.

Coordinates live on the unwrapped cylinder: ``x`` in ``(-L, 0]`` runs around
the circumference and wraps at the seam, ``y`` runs along the axis. The
observed window is ``[-l, 0] x [0, H]``; the hidden region is ``[-L, -l]``.
Particles drift towards increasing ``x``, so they leave the window through
``x = 0`` (an *output*) and come back through ``x = -l`` (an *input*).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np


class ParameterError(ValueError):
    """Raised for physically meaningless geometry or dynamics parameters."""


class InvalidConfiguration(ValueError):
    """Raised when a configuration violates the matching constraints."""


@dataclass(frozen=True)
class CylinderGeometry:
    perimeter: float
    height: float
    observed_width: float

    def __post_init__(self):
        if not (self.perimeter > 0 and self.height > 0):
            raise ParameterError("perimeter and height must be positive")
        if not (0 < self.observed_width < self.perimeter):
            raise ParameterError(
                f"observed width must lie in (0, {self.perimeter}), got {self.observed_width}"
            )

    @classmethod
    def from_ratio(cls, perimeter: float, height: float, ratio: float) -> "CylinderGeometry":
        """Build a geometry from the observed/hidden width ratio ``l / l_u``."""
        if ratio <= 0:
            raise ParameterError("ratio must be positive")
        return cls(perimeter, height, perimeter * ratio / (1.0 + ratio))

    @property
    def hidden_width(self) -> float:
        """Width ``l_u = L - l`` of the unobserved band."""
        return self.perimeter - self.observed_width

    @property
    def extended_width(self) -> float:
        """``l_e = l_u - l``; negative when the window is wider than the hidden band."""
        return self.hidden_width - self.observed_width

    def in_window(self, x):
        return (x >= -self.observed_width) & (x <= 0.0)


@dataclass(frozen=True)
class DynamicsParams:
    v_x: float
    v_y: float
    sigma_x: float
    sigma_y: float
    birth_rate: float = 0.0
    tau_d: float = 1.0
    tau_alpha: Optional[float] = None

    def __post_init__(self):
        if not (self.v_x > 0):
            raise ParameterError("v_x must be positive (orient the sample first)")
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ParameterError("diffusion coefficients must be positive")
        if self.birth_rate < 0:
            raise ParameterError("birth rate must be non-negative")
        if not (self.tau_d > 0):
            raise ParameterError("death rate must be positive")
        if self.tau_alpha is not None and self.tau_alpha < 0:
            raise ParameterError("arrival rate must be non-negative")

    def with_rates(self, **kw) -> "DynamicsParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class Point:
    t: float
    x: float
    y: float


@dataclass(frozen=True)
class OutputEvent:
    t_o: float
    y_o: float
    segment_id: int


@dataclass(frozen=True)
class InputEvent:
    t_i: float
    y_i: float
    segment_id: int


@dataclass(frozen=True)
class Configuration:
    """Connection hypothesis over ``p`` outputs and ``q`` inputs.

    Outputs and inputs are referred to by their index in the sample's
    ``outputs`` / ``inputs`` lists.
    """

    matches: frozenset = field(default_factory=frozenset)
    dead_outputs: frozenset = field(default_factory=frozenset)
    spontaneous_inputs: frozenset = field(default_factory=frozenset)

    @classmethod
    def from_matches(cls, matches: Iterable[tuple[int, int]], p: int, q: int) -> "Configuration":
        matches = frozenset((int(o), int(i)) for o, i in matches)
        used_o = {o for o, _ in matches}
        used_i = {i for _, i in matches}
        return cls(
            matches,
            frozenset(range(p)) - used_o,
            frozenset(range(q)) - used_i,
        )

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """Matched pairs in lexicographic order; the canonical tie-break key."""
        return tuple(sorted(self.matches))

    def validate(self, p: int, q: int, outputs=None, inputs=None) -> None:
        """Check the matching constraints in O(p + q).

        When the events are given, every match must also go forward in time.
        """
        seen_o = [False] * p
        seen_i = [False] * q
        for o, i in self.matches:
            if not (0 <= o < p and 0 <= i < q):
                raise InvalidConfiguration(f"match {(o, i)} out of range for {p}x{q}")
            if seen_o[o] or seen_i[i]:
                raise InvalidConfiguration(f"index reused in match {(o, i)}")
            seen_o[o] = seen_i[i] = True
            if outputs is not None and inputs is not None:
                if not inputs[i].t_i > outputs[o].t_o:
                    raise InvalidConfiguration(f"match {(o, i)} goes backwards in time")
        for o in self.dead_outputs:
            if not 0 <= o < p or seen_o[o]:
                raise InvalidConfiguration(f"dead output {o} is matched or out of range")
            seen_o[o] = True
        for i in self.spontaneous_inputs:
            if not 0 <= i < q or seen_i[i]:
                raise InvalidConfiguration(f"spontaneous input {i} is matched or out of range")
            seen_i[i] = True
        if not all(seen_o) or not all(seen_i):
            raise InvalidConfiguration("configuration does not cover every event")


def wrap_x(x: float, geometry: CylinderGeometry) -> float:
    """Map a circumferential coordinate onto ``(-L, 0]``.

    The seam ``x = -L`` is identified with ``x = 0``.
    """
    L = geometry.perimeter
    r = x - L * math.ceil(x / L)
    if r <= -L:
        r += L
    elif r > 0.0:
        r -= L
        if r <= -L:
            # tiny positive x rounds onto the seam
            r = 0.0
    return r + 0.0


def wrap_x_array(x, perimeter: float):
    """Vectorised :func:`wrap_x`."""
    x = np.asarray(x, dtype=float)
    r = x - perimeter * np.ceil(x / perimeter)
    r = np.where(r <= -perimeter, r + perimeter, r)
    r = np.where(r > 0.0, r - perimeter, r)
    r = np.where(r <= -perimeter, 0.0, r)
    return r + 0.0
