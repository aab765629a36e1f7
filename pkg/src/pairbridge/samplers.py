"""Bridge SDE/ODE samplers.

Sampling runs from the prior point ``x1`` at ``t = 1`` down to ``t = 0`` over a
decreasing :class:`TimeGrid`. The first-order steppers are exponential
integrators: the linear part of the drift is integrated exactly and only the
data prediction is frozen over a step, so each step is

    SDE1:  x_t = a x_s + b x0hat + c eps
    ODE1:  x_t = a x_s + b x0hat + e x1

with closed-form scalars from :func:`sde_step_coeffs` / :func:`ode_step_coeffs`.
Both are finite at ``t = 0``. The ODE step at ``s = 1`` uses its analytic
limit (``sigma_bar_s = 0`` there), which is the noiseless marginal
interpolation between ``x0hat`` and ``x1``.

Temperature ``tau_b`` scales only injected noise, by ``1/sqrt(tau_b)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .bridge import GaussianParams
from .predictors import Parameterization, Predictor, to_x0
from .schedules import Schedule, _check_time


class SamplerKind(str, enum.Enum):
    SDE1 = "sde1"
    ODE1 = "ode1"
    SDE2 = "sde2"
    ODE2 = "ode2"
    EULER_MARUYAMA = "em"

    @classmethod
    def parse(cls, value: Union[str, "SamplerKind"]) -> "SamplerKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"sde1": cls.SDE1, "ode1": cls.ODE1, "sde2": cls.SDE2, "ode2": cls.ODE2,
                   "em": cls.EULER_MARUYAMA, "euler_maruyama": cls.EULER_MARUYAMA, "eulermaruyama": cls.EULER_MARUYAMA}
        if key not in aliases:
            raise ValueError(f"unknown sampler kind {value!r}")
        return aliases[key]

    @property
    def second_order(self) -> bool:
        return self in (SamplerKind.SDE2, SamplerKind.ODE2)

    @property
    def stochastic(self) -> bool:
        return self in (SamplerKind.SDE1, SamplerKind.SDE2, SamplerKind.EULER_MARUYAMA)


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("a time grid needs at least two times")
        if times[0] != 1.0 or times[-1] != 0.0:
            raise ValueError("a time grid must start at exactly 1 and end at exactly 0")
        if np.any(np.diff(times) >= 0.0):
            raise ValueError("grid times must be strictly decreasing")
        object.__setattr__(self, "times", times)

    @property
    def n(self) -> int:
        return self.times.size - 1

    def steps(self):
        return zip(self.times[:-1], self.times[1:])


def make_time_grid(n: int) -> TimeGrid:
    """Uniform grid ``1 = t_n > ... > t_0 = 0``."""
    if int(n) != n or n < 1:
        raise ValueError(f"step count must be a positive integer, got {n}")
    times = np.linspace(1.0, 0.0, int(n) + 1)
    times[0], times[-1] = 1.0, 0.0
    return TimeGrid(times)


@dataclass(frozen=True)
class SamplerConfig:
    kind: SamplerKind = SamplerKind.SDE1
    nfe: int = 50
    tau_b: float = 1.0
    grid_kind: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "kind", SamplerKind.parse(self.kind))
        if int(self.nfe) != self.nfe or self.nfe < 1:
            raise ValueError(f"nfe must be a positive integer, got {self.nfe}")
        if self.kind.second_order and self.nfe % 2:
            raise ValueError(f"{self.kind.value} spends two evaluations per step; nfe must be even")
        if not self.tau_b > 0.0:
            raise ValueError(f"tau_b must be positive, got {self.tau_b}")
        if self.grid_kind != "uniform":
            raise ValueError(f"unsupported grid kind {self.grid_kind!r}")

    @property
    def n_steps(self) -> int:
        return self.nfe // 2 if self.kind.second_order else self.nfe

    def grid(self) -> TimeGrid:
        return make_time_grid(self.n_steps)


# -- drifts ---------------------------------------------------------------


def bridge_sde_drift(schedule: Schedule, t: float, x_t, x0hat) -> tuple[np.ndarray, float]:
    """Reverse-time bridge SDE drift and diffusion ``g(t)``."""
    t = _check_time(t)
    if t <= 0.0:
        raise ValueError("bridge SDE drift is singular at t = 0")
    alpha = float(schedule.alpha(t))
    g2 = float(schedule.g2(t))
    x_t = np.asarray(x_t, float)
    drift = float(schedule.f(t)) * x_t + g2 * (x_t - alpha * np.asarray(x0hat, float)) / (alpha ** 2 * float(schedule.sigma2(t)))
    return drift, math.sqrt(g2)


def bridge_ode_drift(schedule: Schedule, t: float, x_t, x0hat, x1) -> np.ndarray:
    t = _check_time(t)
    if not 0.0 < t < 1.0:
        raise ValueError("bridge ODE drift is singular at t = 0 and t = 1")
    alpha = float(schedule.alpha(t))
    g2 = float(schedule.g2(t))
    x_t = np.asarray(x_t, float)
    to_prior = (x_t - float(schedule.alpha_bar(t)) * np.asarray(x1, float)) / (alpha ** 2 * float(schedule.sigma2_bar(t)))
    to_data = (x_t - alpha * np.asarray(x0hat, float)) / (alpha ** 2 * float(schedule.sigma2(t)))
    return float(schedule.f(t)) * x_t - 0.5 * g2 * to_prior + 0.5 * g2 * to_data


# -- single steps ---------------------------------------------------------


def _check_step(s: float, t: float) -> tuple[float, float]:
    s, t = float(_check_time(s)), float(_check_time(t))
    if not t < s:
        raise ValueError(f"steps run backwards in time; need t < s, got s={s}, t={t}")
    return s, t


def sde_step_coeffs(schedule: Schedule, s: float, t: float) -> tuple[float, float, float]:
    """``(a, b, c)`` of the first-order bridge SDE step ``x_t = a x_s + b x0hat + c eps``."""
    s, t = _check_step(s, t)
    sig2_s = float(schedule.sigma2(s))
    if sig2_s <= 0.0:
        raise ValueError("cannot step from s = 0")
    alpha_s, alpha_t = float(schedule.alpha(s)), float(schedule.alpha(t))
    sig2_t = float(schedule.sigma2(t))
    r = sig2_t / sig2_s
    a = alpha_t * r / alpha_s
    b = alpha_t * (1.0 - r)
    c = alpha_t * math.sqrt(sig2_t) * math.sqrt(max(1.0 - r, 0.0))
    return a, b, c


def ode_step_coeffs(schedule: Schedule, s: float, t: float) -> tuple[float, float, float]:
    """``(a, b, e)`` of the first-order bridge ODE step ``x_t = a x_s + b x0hat + e x1``."""
    s, t = _check_step(s, t)
    sig_s = math.sqrt(float(schedule.sigma2(s)))
    if sig_s <= 0.0:
        raise ValueError("cannot step from s = 0")
    s1 = schedule.sigma2_1
    alpha_t = float(schedule.alpha(t))
    sig2_t, sigb2_t = float(schedule.sigma2(t)), float(schedule.sigma2_bar(t))
    if s == 1.0:
        # sigma_bar_s = 0: the divergent pieces cancel, leaving the marginal-mean interpolation
        return 0.0, alpha_t * sigb2_t / s1, float(schedule.alpha_bar(t)) * sig2_t / s1
    alpha_s = float(schedule.alpha(s))
    sigb_s = math.sqrt(float(schedule.sigma2_bar(s)))
    sig_t, sigb_t = math.sqrt(sig2_t), math.sqrt(sigb2_t)
    a = alpha_t * sig_t * sigb_t / (alpha_s * sig_s * sigb_s)
    b = alpha_t / s1 * (sigb2_t - sigb_s * sig_t * sigb_t / sig_s)
    e = alpha_t / s1 * (sig2_t - sig_s * sig_t * sigb_t / sigb_s) / schedule.alpha_1
    return a, b, e


def sde_first_order_step(schedule: Schedule, s: float, t: float, x_s, x0hat,
                         rng: np.random.Generator, tau_b: float = 1.0) -> np.ndarray:
    a, b, c = sde_step_coeffs(schedule, s, t)
    x_s = np.asarray(x_s, float)
    out = a * x_s + b * np.asarray(x0hat, float)
    if c > 0.0:
        out = out + (c / math.sqrt(tau_b)) * rng.standard_normal(out.shape)
    return out


def ode_first_order_step(schedule: Schedule, s: float, t: float, x_s, x0hat, x1) -> np.ndarray:
    a, b, e = ode_step_coeffs(schedule, s, t)
    return a * np.asarray(x_s, float) + b * np.asarray(x0hat, float) + e * np.asarray(x1, float)


def ddim_step(schedule: Schedule, s: float, t: float, x_s, x0hat) -> np.ndarray:
    """Deterministic DDIM update in bridge notation; comparator only.

    ``x_t = (alpha_t sigma_t / alpha_s sigma_s) x_s + alpha_t (1 - sigma_t / sigma_s) x0hat``.
    This is the ``sigma/sigma_1 -> 0`` limit of the first-order ODE step.
    """
    s, t = _check_step(s, t)
    sig_s = math.sqrt(float(schedule.sigma2(s)))
    if sig_s <= 0.0:
        raise ValueError("cannot step from s = 0")
    sig_t = math.sqrt(float(schedule.sigma2(t)))
    alpha_s, alpha_t = float(schedule.alpha(s)), float(schedule.alpha(t))
    ratio = sig_t / sig_s
    return alpha_t * ratio / alpha_s * np.asarray(x_s, float) + alpha_t * (1.0 - ratio) * np.asarray(x0hat, float)


def shortened_bridge_posterior(schedule: Schedule, s: float, t: float, x_s, x0hat) -> GaussianParams:
    """``p_ref(x_t | x0 = x0hat, x_s)`` for ``t < s``, written out directly."""
    s, t = _check_step(s, t)
    sig2_s, sig2_t = float(schedule.sigma2(s)), float(schedule.sigma2(t))
    alpha_s, alpha_t = float(schedule.alpha(s)), float(schedule.alpha(t))
    mean = (alpha_t * (sig2_s - sig2_t) * np.asarray(x0hat, float)
            + alpha_t / alpha_s * sig2_t * np.asarray(x_s, float)) / sig2_s
    var = alpha_t ** 2 * sig2_t * (sig2_s - sig2_t) / sig2_s
    return GaussianParams(mean, var)


# -- sampling loops -------------------------------------------------------


def predict_x0(predictor: Predictor, schedule: Schedule, x, t: float, x1) -> np.ndarray:
    out = predictor(x, t, x1)
    param = getattr(predictor, "parameterization", Parameterization.X0)
    return to_x0(param, out, schedule, t, x, x1)


def _start(x1, n: Optional[int]) -> np.ndarray:
    x1 = np.asarray(x1, float)
    return x1.copy() if n is None else np.tile(x1, (n, 1))


def first_order_sde_sample(schedule, predictor, grid: TimeGrid, x1, rng, tau_b: float = 1.0, n=None):
    x = _start(x1, n)
    for s, t in grid.steps():
        x = sde_first_order_step(schedule, s, t, x, predict_x0(predictor, schedule, x, s, x1), rng, tau_b)
    return x


def first_order_ode_sample(schedule, predictor, grid: TimeGrid, x1, n=None):
    x = _start(x1, n)
    for s, t in grid.steps():
        x = ode_first_order_step(schedule, s, t, x, predict_x0(predictor, schedule, x, s, x1), x1)
    return x


def second_order_sde_step(schedule, predictor, s: float, t: float, x_s, x1,
                          rng: np.random.Generator, tau_b: float = 1.0) -> np.ndarray:
    """One predictor-corrector step of the bridge SDE (two evaluations).

    The correction reuses the first-order coefficients with the data
    prediction replaced by the mean of the predictions at both ends of the
    step. Prediction and correction draw independent noise.
    """
    a, b, c = sde_step_coeffs(schedule, s, t)
    x_s = np.asarray(x_s, float)
    scale = c / math.sqrt(tau_b)
    d_s = predict_x0(predictor, schedule, x_s, s, x1)
    x_hat = a * x_s + b * d_s + scale * rng.standard_normal(x_s.shape)
    d_t = predict_x0(predictor, schedule, x_hat, t, x1)
    return a * x_s + b * 0.5 * (d_s + d_t) + scale * rng.standard_normal(x_s.shape)


def second_order_ode_step(schedule, predictor, s: float, t: float, x_s, x1) -> np.ndarray:
    a, b, e = ode_step_coeffs(schedule, s, t)
    x_s = np.asarray(x_s, float)
    x1 = np.asarray(x1, float)
    d_s = predict_x0(predictor, schedule, x_s, s, x1)
    x_hat = a * x_s + b * d_s + e * x1
    d_t = predict_x0(predictor, schedule, x_hat, t, x1)
    return a * x_s + b * 0.5 * (d_s + d_t) + e * x1


def second_order_sde_sample(schedule, predictor, grid: TimeGrid, x1, rng, tau_b: float = 1.0, n=None):
    x = _start(x1, n)
    for s, t in grid.steps():
        x = second_order_sde_step(schedule, predictor, s, t, x, x1, rng, tau_b)
    return x


def second_order_ode_sample(schedule, predictor, grid: TimeGrid, x1, n=None):
    x = _start(x1, n)
    for s, t in grid.steps():
        x = second_order_ode_step(schedule, predictor, s, t, x, x1)
    return x


def em_step_coeffs(schedule: Schedule, s: float, t: float) -> tuple[float, float, float]:
    """``(a, b, c)`` of one Euler-Maruyama step on the bridge SDE, drift frozen at ``s``."""
    s, t = _check_step(s, t)
    sig2_s = float(schedule.sigma2(s))
    if sig2_s <= 0.0:
        raise ValueError("cannot step from s = 0")
    alpha = float(schedule.alpha(s))
    g2 = float(schedule.g2(s))
    h = t - s
    pull = g2 / (alpha ** 2 * sig2_s)
    a = 1.0 + h * (float(schedule.f(s)) + pull)
    b = -h * pull * alpha
    c = math.sqrt(g2 * (s - t))
    return a, b, c


def euler_maruyama_sample(schedule, predictor, grid: TimeGrid, x1, rng, tau_b: float = 1.0, n=None):
    x = _start(x1, n)
    scale = 1.0 / math.sqrt(tau_b)
    for s, t in grid.steps():
        a, b, c = em_step_coeffs(schedule, s, t)
        x = a * x + b * predict_x0(predictor, schedule, x, s, x1) + c * scale * rng.standard_normal(x.shape)
    return x


def sample(schedule: Schedule, predictor: Predictor, config: SamplerConfig, x1,
           rng: Optional[np.random.Generator] = None, n: Optional[int] = None,
           grid: Optional[TimeGrid] = None) -> np.ndarray:
    """Run the configured sampler from ``x1`` at t=1 to t=0.

    ``n`` draws independent chains from the same ``x1``; the result is then
    ``(n, d)``. Deterministic kinds ignore ``rng`` and ``tau_b``. An explicit
    ``grid`` overrides the config's uniform grid and its step count.
    """
    grid = config.grid() if grid is None else grid
    kind = config.kind
    if kind.stochastic and rng is None:
        raise ValueError(f"{kind.value} needs a random generator")
    if kind is SamplerKind.SDE1:
        return first_order_sde_sample(schedule, predictor, grid, x1, rng, config.tau_b, n)
    if kind is SamplerKind.ODE1:
        return first_order_ode_sample(schedule, predictor, grid, x1, n)
    if kind is SamplerKind.SDE2:
        return second_order_sde_sample(schedule, predictor, grid, x1, rng, config.tau_b, n)
    if kind is SamplerKind.ODE2:
        return second_order_ode_sample(schedule, predictor, grid, x1, n)
    return euler_maruyama_sample(schedule, predictor, grid, x1, rng, config.tau_b, n)


# -- exact law of a discrete chain under an affine predictor --------------


def terminal_law(schedule: Schedule, predictor, config: SamplerConfig, x1,
                 grid: Optional[TimeGrid] = None) -> GaussianParams:
    """Exact terminal law of the discrete sampler for an affine predictor.

    ``predictor.affine(t, x1)`` must return ``(gain, offset)`` with
    ``x0hat = gain * x + offset``. Every step is then affine-Gaussian, so the
    chain started at the point ``x1`` ends in ``N(mean, var I)``; this
    propagates ``(mean, var)`` through the same step coefficients the sampler
    uses, without Monte Carlo noise.
    """
    x1 = np.asarray(x1, float)
    mean, var = x1.copy(), 0.0
    inv_tau = 1.0 / config.tau_b
    kind = config.kind
    grid = config.grid() if grid is None else grid
    for s, t in grid.steps():
        k_s, o_s = predictor.affine(s, x1)
        if kind in (SamplerKind.SDE1, SamplerKind.EULER_MARUYAMA):
            a, b, c = (sde_step_coeffs if kind is SamplerKind.SDE1 else em_step_coeffs)(schedule, s, t)
            lin = a + b * k_s
            mean = lin * mean + b * o_s
            var = lin ** 2 * var + c ** 2 * inv_tau
        elif kind is SamplerKind.ODE1:
            a, b, e = ode_step_coeffs(schedule, s, t)
            lin = a + b * k_s
            mean = lin * mean + b * o_s + e * x1
            var = lin ** 2 * var
        else:
            k_t, o_t = predictor.affine(t, x1)
            if kind is SamplerKind.SDE2:
                a, b, c = sde_step_coeffs(schedule, s, t)
                e = 0.0
            else:
                a, b, e = ode_step_coeffs(schedule, s, t)
                c = 0.0
            # x_hat = p x + q + c eps1 ; x_t = L x + const + (b k_t c / 2) eps1 + c eps2
            p = a + b * k_s
            q = b * o_s + e * x1
            lin = a + 0.5 * b * (k_s + k_t * p)
            const = 0.5 * b * (o_s + o_t + k_t * q) + e * x1
            mean = lin * mean + const
            var = lin ** 2 * var + ((0.5 * b * k_t * c) ** 2 + c ** 2) * inv_tau
    return GaussianParams(mean, float(var))
