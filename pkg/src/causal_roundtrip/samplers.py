"""Deterministic trajectory operators: DDIM steps and inversion, the invertible BELM pair recursion.

All samplers take a ``denoiser`` exposing ``schedule`` and
``guided_eps(x, t, condition)``; :class:`EpsFunction` wraps a plain callable
into that shape for tests and analytic experiments.  Trajectories always run
the full grid ``0..T``.

BELM works in the coordinates ``y = x / gamma`` and ``rho = sigma / gamma``,
where the deterministic sampler is the ODE ``dy/drho = eps``.  The decoder is
the three-point relation

    y[i-1] = a[i] y[i] + b[i] y[i+1] + d[i] eps(x[i], i)

which is affine in the states given a single noise evaluation at the shared
middle state, hence solvable for ``y[i+1]``: that is the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .diffusion import NoiseSchedule
from .exceptions import ConfigError, GridMismatchError, TrajectoryBlowupError


@dataclass(frozen=True, eq=False)
class LatentCode:
    """Abducted exogenous representation of a batch of rows.

    ``x_T`` is the terminal state; ``x_aux`` the penultimate state ``x_{T-1}``
    (``None`` when the pair was discarded, e.g. for interventional decoding).
    """

    x_T: np.ndarray
    x_aux: Optional[np.ndarray]
    grid_T: int
    sampler: str

    def __len__(self):
        return np.asarray(self.x_T).shape[0]

    def take(self, idx) -> "LatentCode":
        aux = None if self.x_aux is None else self.x_aux[idx]
        return LatentCode(self.x_T[idx], aux, self.grid_T, self.sampler)

    def without_aux(self) -> "LatentCode":
        return LatentCode(self.x_T, None, self.grid_T, self.sampler)


@dataclass(frozen=True, eq=False)
class BelmCoefficients:
    a: np.ndarray
    b: np.ndarray
    d: np.ndarray


class EpsFunction:
    """Adapter turning ``fn(x, t, condition)`` into a sampler-compatible denoiser."""

    def __init__(self, fn: Callable, schedule: NoiseSchedule):
        self.fn = fn
        self.schedule = schedule

    def guided_eps(self, x, t, condition):
        return np.asarray(self.fn(x, t, condition), dtype=np.float64) * np.ones_like(x)


def _check_finite(x, step, what):
    if not np.all(np.isfinite(x)):
        raise TrajectoryBlowupError(f"non-finite state in {what} at step {step}", step)


def ddim_step_down(x_t, t, eps_hat, sched: NoiseSchedule):
    """One DDIM generation step ``x_t -> x_{t-1}``."""
    if not 1 <= t <= sched.T:
        raise ConfigError(f"t must lie in [1, {sched.T}], got {t}")
    g, s = sched.gamma, sched.sigma
    return g[t - 1] * ((x_t - s[t] * eps_hat) / g[t]) + s[t - 1] * eps_hat


def ddim_step_up(x_t, t, eps_hat, sched: NoiseSchedule):
    """One DDIM inversion step ``x_t -> x_{t+1}`` reusing the noise predicted at ``x_t``."""
    if not 0 <= t <= sched.T - 1:
        raise ConfigError(f"t must lie in [0, {sched.T - 1}], got {t}")
    g, s = sched.gamma, sched.sigma
    return g[t + 1] * ((x_t - s[t] * eps_hat) / g[t]) + s[t + 1] * eps_hat


def ddim_encode(x0, condition, denoiser) -> LatentCode:
    sched = denoiser.schedule
    x = np.asarray(x0, dtype=np.float64)
    prev = x
    for t in range(sched.T):
        eps = denoiser.guided_eps(x, t, condition)
        prev, x = x, ddim_step_up(x, t, eps, sched)
        _check_finite(x, t + 1, "ddim_encode")
    return LatentCode(x, prev, sched.T, "ddim")


def ddim_decode(latent, condition, denoiser):
    """Full DDIM generation from ``x_T`` (a :class:`LatentCode` or a plain array)."""
    sched = denoiser.schedule
    x_T = _terminal(latent, sched)
    x = np.asarray(x_T, dtype=np.float64)
    for t in range(sched.T, 0, -1):
        eps = denoiser.guided_eps(x, t, condition)
        x = ddim_step_down(x, t, eps, sched)
        _check_finite(x, t - 1, "ddim_decode")
    return x


def _terminal(latent, sched):
    if isinstance(latent, LatentCode):
        if latent.grid_T != sched.T:
            raise GridMismatchError(f"latent grid T={latent.grid_T} != schedule T={sched.T}")
        return latent.x_T
    return latent


def belm_coefficients(sched: NoiseSchedule) -> BelmCoefficients:
    """Second-order three-point weights for interior indices ``i = 1..T-1``.

    Arrays are indexed by ``i`` directly (entry 0 and T unused, set to NaN).
    With ``h1 = rho[i-1] - rho[i]`` and ``h2 = rho[i+1] - rho[i]``:
    ``b = (h1/h2)^2``, ``a = 1 - b``, ``d = h1 (h2 - h1) / h2``.
    """
    rho = sched.rho
    if sched.T < 3:
        raise ConfigError("BELM needs T >= 3")
    if np.any(np.diff(rho) <= 0):
        raise ConfigError("rho grid must be strictly increasing")
    a = np.full(sched.T + 1, np.nan)
    b = np.full(sched.T + 1, np.nan)
    d = np.full(sched.T + 1, np.nan)
    i = np.arange(1, sched.T)
    h1 = rho[i - 1] - rho[i]
    h2 = rho[i + 1] - rho[i]
    b[i] = (h1 / h2) ** 2
    a[i] = 1.0 - b[i]
    d[i] = h1 * (h2 - h1) / h2
    return BelmCoefficients(a, b, d)


def belm_encode(x0, condition, denoiser) -> LatentCode:
    """Invertible abduction ``x0 -> (x_T, x_{T-1})``.

    An explicit Euler step produces ``x_1``; it is never inverted, since the
    decoder recovers ``x0`` from the ``i = 1`` three-point relation.
    """
    sched = denoiser.schedule
    coef = belm_coefficients(sched)
    g, rho = sched.gamma, sched.rho
    x0 = np.asarray(x0, dtype=np.float64)
    y_prev = x0 / g[0]
    eps0 = denoiser.guided_eps(x0, 0, condition)
    y = y_prev + (rho[1] - rho[0]) * eps0
    x = g[1] * y
    _check_finite(x, 1, "belm_encode")
    for i in range(1, sched.T):
        eps = denoiser.guided_eps(x, i, condition)
        y_next = (y_prev - coef.a[i] * y - coef.d[i] * eps) / coef.b[i]
        y_prev, y = y, y_next
        x = g[i + 1] * y
        _check_finite(x, i + 1, "belm_encode")
    return LatentCode(x, g[sched.T - 1] * y_prev, sched.T, "belm")


def belm_decode(latent: LatentCode, condition, denoiser):
    """Exact inverse of :func:`belm_encode` given the stored pair ``(x_T, x_{T-1})``."""
    sched = denoiser.schedule
    if latent.grid_T != sched.T:
        raise GridMismatchError(f"latent grid T={latent.grid_T} != schedule T={sched.T}")
    if latent.x_aux is None:
        raise ConfigError("belm_decode needs the auxiliary state; use belm_decode_generative")
    return _belm_down(np.asarray(latent.x_T, dtype=np.float64), np.asarray(latent.x_aux, dtype=np.float64), condition, denoiser)


def _belm_down(x_T, x_aux, condition, denoiser):
    sched = denoiser.schedule
    coef = belm_coefficients(sched)
    g = sched.gamma
    y_next = x_T / g[sched.T]
    y = x_aux / g[sched.T - 1]
    x = x_aux
    for i in range(sched.T - 1, 0, -1):
        eps = denoiser.guided_eps(x, i, condition)
        y_prev = coef.a[i] * y + coef.b[i] * y_next + coef.d[i] * eps
        y_next, y = y, y_prev
        x = g[i - 1] * y
        _check_finite(x, i - 1, "belm_decode")
    return x


def belm_decode_generative(x_T, condition, denoiser):
    """Decode from a terminal state alone; the auxiliary state is bootstrapped by one DDIM step."""
    sched = denoiser.schedule
    x_T = np.asarray(_terminal(x_T, sched), dtype=np.float64)
    _check_finite(x_T, sched.T, "belm_decode_generative")
    eps_T = denoiser.guided_eps(x_T, sched.T, condition)
    x_aux = ddim_step_down(x_T, sched.T, eps_T, sched)
    return _belm_down(x_T, x_aux, condition, denoiser)


def encode(x0, condition, denoiser, sampler: str) -> LatentCode:
    if sampler == "belm":
        return belm_encode(x0, condition, denoiser)
    if sampler == "ddim":
        return ddim_encode(x0, condition, denoiser)
    raise ConfigError(f"unknown sampler {sampler!r}")


def decode(latent: LatentCode, condition, denoiser, sampler: str):
    """Decode with the pair when present, otherwise from ``x_T`` alone."""
    if sampler == "belm":
        if latent.x_aux is None:
            return belm_decode_generative(latent, condition, denoiser)
        return belm_decode(latent, condition, denoiser)
    if sampler == "ddim":
        return ddim_decode(latent, condition, denoiser)
    raise ConfigError(f"unknown sampler {sampler!r}")


def roundtrip(x0, condition, denoiser, sampler: str):
    return decode(encode(x0, condition, denoiser, sampler), condition, denoiser, sampler)


def sre_ratio(x, x_rec) -> float:
    """``sum ||x_rec - x||^2 / sum ||x||^2``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ConfigError("empty row set")
    return float(np.sum((np.asarray(x_rec) - x) ** 2) / np.sum(x * x))
