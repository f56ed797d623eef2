"""Probability kernels and the connection cost model.

The hidden band is crossed by a drift-diffusion in ``x``; its first-passage
time over a width ``l_u`` is inverse Gaussian with mean ``l_u / v_x`` and
shape ``(l_u / sigma_x)**2``. Everything that feeds the optimiser is kept in
log space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .model import (
    Configuration,
    CylinderGeometry,
    DynamicsParams,
    InputEvent,
    OutputEvent,
    ParameterError,
)

LOG_2PI = math.log(2.0 * math.pi)

# Zero rate estimates would make beta or delta infinite; they are floored so
# that the optimiser still sees a (very strong) preference for connecting.
RATE_FLOOR = 1e-12


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""


def ig_logpdf(t, mu, lam):
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, -np.inf)
    pos = t > 0
    tp = t[pos]
    out[pos] = 0.5 * (np.log(lam) - LOG_2PI - 3.0 * np.log(tp)) - lam * (tp - mu) ** 2 / (
        2.0 * mu**2 * tp
    )
    return out if out.ndim else float(out)


def ig_pdf(t, mu, lam):
    """Inverse-Gaussian density, zero on ``t <= 0``."""
    if mu <= 0 or lam <= 0:
        raise ParameterError("inverse Gaussian needs mu > 0 and lam > 0")
    return np.exp(ig_logpdf(t, mu, lam))


def ig_cdf(x, mu, lam):
    """Inverse-Gaussian CDF via the Gaussian closed form.

    The ``exp(2 lam / mu)`` factor overflows for sharply peaked laws, so the
    second term is assembled in log space.
    """
    if mu <= 0 or lam <= 0:
        raise ParameterError("inverse Gaussian needs mu > 0 and lam > 0")
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    pos = x > 0
    xp = x[pos]
    r = np.sqrt(lam / xp)
    first = special.ndtr(r * (xp / mu - 1.0))
    second = np.exp(2.0 * lam / mu + special.log_ndtr(-r * (xp / mu + 1.0)))
    out[pos] = np.clip(first + second, 0.0, 1.0)
    return out if out.ndim else float(out)


def first_passage_law(v_x: float, sigma_x: float, width: float) -> tuple[float, float]:
    """``(mu, lam)`` of the first-passage time over ``width``."""
    return width / v_x, (width / sigma_x) ** 2


def _ig_window(mu: float, lam: float) -> tuple[float, float, float]:
    mode = mu * (math.sqrt(1.0 + 9.0 * mu**2 / (4.0 * lam**2)) - 1.5 * mu / lam)
    sd = math.sqrt(mu**3 / lam)
    return mode, max(0.0, mode - 12.0 * sd), mu + 40.0 * sd


def death_probability(params: DynamicsParams, hidden_width: float) -> float:
    """P(T_d < T_l): the particle dies before crossing the hidden band.

    Integrates ``(1 - exp(-tau_d t)) f_IG(t)`` over ``(0, inf)``. The range is
    split around the inverse-Gaussian mode so the adaptive rule cannot step
    over a narrow peak; the tail uses QUADPACK's infinite-range mapping.
    """
    tau_d, v_x, sigma_x = params.tau_d, params.v_x, params.sigma_x
    if not (tau_d > 0 and hidden_width > 0 and sigma_x > 0 and v_x > 0):
        raise ParameterError("death probability needs tau_d, l_u, sigma_x, v_x > 0")
    mu, lam = first_passage_law(v_x, sigma_x, hidden_width)
    log_c = math.log(hidden_width) - math.log(sigma_x) - 0.5 * LOG_2PI

    def integrand(t):
        if t <= 0.0:
            return 0.0
        expo = log_c - 1.5 * math.log(t) - (v_x * t - hidden_width) ** 2 / (2.0 * sigma_x**2 * t)
        return -math.expm1(-tau_d * t) * math.exp(expo)

    mode, lo, hi = _ig_window(mu, lam)
    pieces = []
    if lo > 0:
        pieces.append((0.0, lo, None))
    pieces.append((lo, hi, [p for p in (mode, mu) if lo < p < hi]))
    pieces.append((hi, np.inf, None))

    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for a, b, points in pieces:
            kw = {"points": points} if points else {}
            try:
                val, err = integrate.quad(
                    integrand, a, b, epsabs=1e-13, epsrel=1e-10, limit=500, **kw
                )
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(
                    f"death-probability quadrature on [{a}, {b}] did not converge "
                    f"(tau_d={tau_d}, v_x={v_x}, sigma_x={sigma_x}, l_u={hidden_width}): {exc}"
                ) from exc
            if err > 1e-8:
                raise QuadratureError(f"quadrature error estimate {err:.2e} on [{a}, {b}]")
            total += val
    return min(max(total, 0.0), 1.0)


def connection_cost_array(s, h, params: DynamicsParams, hidden_width: float):
    """Vectorised connection cost for delays ``s`` and axial shifts ``h``."""
    s = np.asarray(s, dtype=float)
    h = np.asarray(h, dtype=float)
    sx, sy = params.sigma_x, params.sigma_y
    out = np.full(np.broadcast(s, h).shape, np.inf)
    ok = np.broadcast_to(s > 0, out.shape)
    sb = np.broadcast_to(s, out.shape)[ok]
    hb = np.broadcast_to(h, out.shape)[ok]
    out[ok] = (
        -math.log(hidden_width / (2.0 * math.pi * sx * sy))
        + 2.0 * np.log(sb)
        + (params.v_x * sb - hidden_width) ** 2 / (2.0 * sx**2 * sb)
        + (hb - params.v_y * sb) ** 2 / (2.0 * sy**2 * sb)
        + params.tau_d * sb
    )
    return out


def connection_cost(o: OutputEvent, i: InputEvent, params: DynamicsParams, hidden_width: float) -> float:
    """Negative log density of the particle leaving at ``o`` re-entering at ``i``.

    Returns ``inf`` when the input does not come strictly after the output.
    """
    return float(connection_cost_array(i.t_i - o.t_o, i.y_i - o.y_o, params, hidden_width))


@dataclass(frozen=True)
class CostModel:
    """Costs of spontaneous birth (``beta``), hidden death (``delta``) and connection."""

    beta: float
    delta: float
    params: DynamicsParams
    hidden_width: float
    height: float

    @classmethod
    def from_params(cls, params: DynamicsParams, geometry: CylinderGeometry) -> "CostModel":
        if params.tau_alpha is None:
            raise ParameterError("cost model needs an arrival rate tau_alpha")
        tau_alpha = max(params.tau_alpha, RATE_FLOOR)
        beta = -math.log(tau_alpha / geometry.height)
        p_death = death_probability(params, geometry.hidden_width)
        delta = -math.log(max(p_death, RATE_FLOOR))
        return cls(beta, delta, params, geometry.hidden_width, geometry.height)

    @property
    def tau_alpha(self) -> float:
        return self.params.tau_alpha

    def gamma(self, o: OutputEvent, i: InputEvent) -> float:
        return connection_cost(o, i, self.params, self.hidden_width)

    def gamma_matrix(self, outputs: Sequence[OutputEvent], inputs: Sequence[InputEvent]):
        t_o = np.array([o.t_o for o in outputs], dtype=float)
        y_o = np.array([o.y_o for o in outputs], dtype=float)
        t_i = np.array([i.t_i for i in inputs], dtype=float)
        y_i = np.array([i.y_i for i in inputs], dtype=float)
        s = t_i[None, :] - t_o[:, None]
        h = y_i[None, :] - y_o[:, None]
        return connection_cost_array(s, h, self.params, self.hidden_width).reshape(
            len(outputs), len(inputs)
        )


def log_likelihood(
    config: Configuration,
    cost_model: CostModel,
    outputs: Sequence[OutputEvent],
    inputs: Sequence[InputEvent],
    T_S: float,
) -> float:
    """log Q(c), including the configuration-independent ``-tau_alpha T_S`` term."""
    config.validate(len(outputs), len(inputs))
    gammas = [cost_model.gamma(outputs[o], inputs[i]) for o, i in config.pairs]
    if any(math.isinf(g) for g in gammas):
        return -math.inf
    return -math.fsum(
        [
            len(config.spontaneous_inputs) * cost_model.beta,
            len(config.dead_outputs) * cost_model.delta,
            (cost_model.tau_alpha or 0.0) * T_S,
            *gammas,
        ]
    )


def reach_probability(params: DynamicsParams, distance: float) -> float:
    """P(a particle survives long enough to drift across ``distance``).

    Laplace transform of the inverse-Gaussian first-passage time evaluated at
    the death rate.
    """
    if distance <= 0:
        return 1.0
    v, s2 = params.v_x, params.sigma_x**2
    kappa = (v / s2) * (math.sqrt(1.0 + 2.0 * s2 * params.tau_d / v**2) - 1.0)
    return math.exp(-kappa * distance)


def theoretical_tau_alpha(params: DynamicsParams, geometry: CylinderGeometry) -> float:
    """Stationary rate of first entries by particles born in the hidden band."""
    v, s2 = params.v_x, params.sigma_x**2
    kappa = (v / s2) * (math.sqrt(1.0 + 2.0 * s2 * params.tau_d / v**2) - 1.0)
    lu = geometry.hidden_width
    return params.birth_rate / geometry.perimeter * (-math.expm1(-kappa * lu)) / kappa
