"""Model parameterizations and analytic predictors.

A predictor is any callable ``(x_t, t, x1) -> output`` carrying a
``parameterization`` attribute. Inputs are batched: ``x_t`` is ``(d,)`` or
``(n, d)``, ``t`` a scalar or ``(n,)``, and ``x1`` broadcasts against ``x_t``.
Samplers convert every output to a data (x0) prediction with :func:`to_x0`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol, Union

import numpy as np

from .bridge import _column, bridge_state, marginal_params
from .schedules import Schedule, TimeLike, _check_time


class Parameterization(str, enum.Enum):
    X0 = "x0"
    NOISE_PSI_HAT = "noise_psi_hat"
    NOISE_SB = "noise_sb"
    VELOCITY = "velocity"

    @classmethod
    def parse(cls, value: Union[str, "Parameterization"]) -> "Parameterization":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"x0": cls.X0, "data": cls.X0, "noise_psi_hat": cls.NOISE_PSI_HAT, "psi_hat": cls.NOISE_PSI_HAT,
                   "noise_sb": cls.NOISE_SB, "sb": cls.NOISE_SB, "velocity": cls.VELOCITY, "v": cls.VELOCITY}
        if key not in aliases:
            raise ValueError(f"unknown parameterization {value!r}")
        return aliases[key]


# SB-score noise and velocity targets reduce to pure noise as t -> 1 and train poorly
NOT_RECOMMENDED = frozenset({Parameterization.NOISE_SB, Parameterization.VELOCITY})


class Predictor(Protocol):
    parameterization: Parameterization

    def __call__(self, x_t: np.ndarray, t: TimeLike, x1: np.ndarray) -> np.ndarray: ...


class SingularTargetError(ValueError):
    """The requested target or its inverse divides by zero at this time."""


def _check_target_time(param: Parameterization, t: TimeLike) -> None:
    # every non-x0 target divides by sigma_t; SB-noise and velocity also by sigma_bar_t
    t_arr = np.asarray(t)
    if np.any(t_arr <= 0.0) or (param in NOT_RECOMMENDED and np.any(t_arr >= 1.0)):
        raise SingularTargetError(f"{param.value} target is singular at t={t}")


def target_for(param: Parameterization, schedule: Schedule, t: TimeLike, x0, x1, eps_used) -> np.ndarray:
    """Regression target for ``param`` given the noise that formed ``x_t``."""
    param = Parameterization.parse(param)
    t = _check_time(t)
    x0 = np.asarray(x0, float)
    if param is Parameterization.X0:
        return x0.copy()
    _check_target_time(param, t)
    x1 = np.asarray(x1, float)
    eps_used = np.asarray(eps_used, float)
    nd = max(x0.ndim, x1.ndim, eps_used.ndim)
    x_t = bridge_state(schedule, t, x0, x1, eps_used)
    alpha = _column(schedule.alpha(t), nd)
    if param is Parameterization.NOISE_PSI_HAT:
        return (x_t - alpha * x0) / (alpha * _column(schedule.sigma(t), nd))
    if param is Parameterization.NOISE_SB:
        mp = marginal_params(schedule, t)
        mean = _column(mp.w0, nd) * x0 + _column(mp.w1, nd) * x1
        return (x_t - mean) / _column(mp.std, nd)
    return velocity(schedule, t, x_t, x0, x1)


def velocity(schedule: Schedule, t: TimeLike, x_t, x0, x1) -> np.ndarray:
    """Bridge probability-flow drift with the data endpoint set to ``x0``."""
    x_t = np.asarray(x_t, float)
    nd = max(x_t.ndim, np.ndim(x0), np.ndim(x1))
    alpha = _column(schedule.alpha(t), nd)
    g2 = _column(schedule.g2(t), nd)
    f = _column(schedule.f(t), nd)
    to_prior = (x_t - _column(schedule.alpha_bar(t), nd) * x1) / (alpha ** 2 * _column(schedule.sigma2_bar(t), nd))
    to_data = (x_t - alpha * x0) / (alpha ** 2 * _column(schedule.sigma2(t), nd))
    return f * x_t - 0.5 * g2 * to_prior + 0.5 * g2 * to_data


def to_x0(param: Parameterization, output, schedule: Schedule, t: TimeLike, x_t, x1) -> np.ndarray:
    """Invert ``target_for``: the x0 estimate implied by ``output``.

    Finite at ``t = 0`` for every kind (all reduce to ``x_t``); the SB-noise
    and velocity inversions divide by zero at ``t = 1``.
    """
    param = Parameterization.parse(param)
    output = np.asarray(output, float)
    if param is Parameterization.X0:
        return output
    t = _check_time(t)
    t_arr = np.asarray(t)
    if param in NOT_RECOMMENDED and np.any(t_arr >= 1.0):
        raise SingularTargetError(f"{param.value} cannot be converted to x0 at t=1")
    x_t = np.asarray(x_t, float)
    x1 = np.asarray(x1, float)
    nd = max(x_t.ndim, x1.ndim, output.ndim)
    alpha = _column(schedule.alpha(t), nd)
    if param is Parameterization.NOISE_PSI_HAT:
        return (x_t - alpha * _column(schedule.sigma(t), nd) * output) / alpha
    if param is Parameterization.NOISE_SB:
        mp = marginal_params(schedule, t)
        return (x_t - _column(mp.w1, nd) * x1 - _column(mp.std, nd) * output) / _column(mp.w0, nd)
    g2 = _column(schedule.g2(t), nd)
    f = _column(schedule.f(t), nd)
    to_prior = (x_t - _column(schedule.alpha_bar(t), nd) * x1) / (alpha ** 2 * _column(schedule.sigma2_bar(t), nd))
    # v = f x - g2/2 * to_prior + g2/2 * (x - alpha x0) / (alpha^2 sigma2)
    scaled_gap = 2.0 * (output - f * x_t + 0.5 * g2 * to_prior) / g2  # = (x - alpha x0) / (alpha^2 sigma2)
    return (x_t - alpha ** 2 * _column(schedule.sigma2(t), nd) * scaled_gap) / alpha


@dataclass(frozen=True)
class GaussianTaskParams:
    """Per-condition data law ``N(m, s2 I)``; ``s2 = 0`` is the Dirac limit."""

    m: np.ndarray
    s2: float

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, float))
        if not self.s2 >= 0.0:
            raise ValueError(f"s2 must be nonnegative, got {self.s2}")


class GaussianPosteriorOracle:
    """Exact ``E[x0 | x_t, x1]`` when ``x0 ~ N(m, s2 I)`` and ``x1`` is fixed.

    Uses the division-safe form

        (s2 (x_t - w1 x1) + alpha sigma2 m) / (w0 s2 + alpha sigma2),

    which equals the textbook Gaussian-conditioning expression and stays
    finite at both ends (``x_t`` at t=0, the affine limit at t=1).
    """

    parameterization = Parameterization.X0

    def __init__(self, schedule: Schedule, task: GaussianTaskParams):
        self.schedule = schedule
        self.task = task

    def affine(self, t: TimeLike, x1) -> tuple[TimeLike, np.ndarray]:
        """``(gain, offset)`` with ``E[x0 | x_t] = gain * x_t + offset``."""
        t = _check_time(t)
        s2 = self.task.s2
        mp = marginal_params(self.schedule, t)
        noise = self.schedule.alpha(t) * self.schedule.sigma2(t)
        den = mp.w0 * s2 + noise
        x1 = np.asarray(x1, float)
        t_arr = np.asarray(t)
        safe = np.where(den > 0.0, den, 1.0)
        # den vanishes only for Dirac data at t = 0; the point mass m is the answer there too
        gain = np.where(den > 0.0, s2 / safe, 0.0)
        nd = max(x1.ndim, 1 + (t_arr.ndim > 0))
        offset = (_column(np.where(den > 0.0, noise / safe, 1.0), nd) * self.task.m
                  - _column(gain * mp.w1, nd) * x1)
        if t_arr.ndim == 0:
            gain = float(gain)
        return gain, offset

    def __call__(self, x_t, t, x1):
        x_t = np.asarray(x_t, float)
        gain, offset = self.affine(t, x1)
        return _column(gain, x_t.ndim) * x_t + offset


def gaussian_posterior_oracle(schedule: Schedule, task: GaussianTaskParams) -> GaussianPosteriorOracle:
    return GaussianPosteriorOracle(schedule, task)


class ConstantPredictor:
    parameterization = Parameterization.X0

    def __init__(self, c):
        self.c = np.asarray(c, float)

    def affine(self, t, x1):
        return 0.0, self.c

    def __call__(self, x_t, t, x1):
        x_t = np.asarray(x_t, float)
        return np.broadcast_to(self.c, np.broadcast_shapes(x_t.shape, self.c.shape)).copy()


def constant_predictor(c) -> ConstantPredictor:
    return ConstantPredictor(c)


class X0View:
    """Wrap a predictor of any parameterization as an x0 predictor.

    The wrapped predictor is queried at ``t`` clipped to
    ``[t_min, 1 - t_min]``, the range a trained network has actually seen;
    this also keeps the SB-noise and velocity inversions finite at t = 1.
    """

    parameterization = Parameterization.X0

    def __init__(self, inner: Predictor, schedule: Schedule, t_min: float = 1e-5):
        self.inner = inner
        self.schedule = schedule
        self.t_min = t_min

    def __call__(self, x_t, t, x1):
        tc = np.clip(np.asarray(t, float), self.t_min, 1.0 - self.t_min)
        tc = float(tc) if tc.ndim == 0 else tc
        out = self.inner(x_t, tc, x1)
        return to_x0(self.inner.parameterization, out, self.schedule, tc, x_t, x1)
