"""The tractable Schrodinger bridge between a pair of points.

With a linear-drift reference SDE and Dirac boundaries ``(x0, x1)``, the two
SB potentials are isotropic Gaussians and the bridge marginal is

    p_t = N(w0(t) x0 + w1(t) x1, std(t)^2 I)
    w0 = alpha sigma2_bar / sigma2_1,  w1 = alpha_bar sigma2 / sigma2_1,
    std = alpha sigma_bar sigma / sigma_1.

Random draws use ``numpy.random.Generator`` (PCG64 when built with
``np.random.default_rng(seed)``). Statistical tests compare against tolerance
bands, never against exact streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .schedules import Schedule, TimeLike, _check_time


@dataclass(frozen=True)
class PairedSample:
    x0: np.ndarray
    x1: np.ndarray
    condition: Optional[int] = None

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        x1 = np.asarray(self.x1, dtype=float)
        if x0.shape != x1.shape or x0.ndim != 1 or x0.size < 1:
            raise ValueError(f"x0 and x1 must be 1-d vectors of equal length, got {x0.shape} and {x1.shape}")
        if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(x1))):
            raise ValueError("paired sample entries must be finite")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)

    @property
    def dim(self) -> int:
        return self.x0.size


@dataclass(frozen=True)
class GaussianParams:
    """Isotropic Gaussian ``N(mean, var * I)``."""

    mean: np.ndarray
    var: float

    def __post_init__(self):
        if np.any(np.asarray(self.var) < 0):
            raise ValueError(f"variance must be nonnegative, got {self.var}")


@dataclass(frozen=True)
class SmoothedPotentials:
    a: np.ndarray
    b: np.ndarray
    sigma2_eps: float
    psi_hat: GaussianParams
    psi: GaussianParams


@dataclass(frozen=True)
class MarginalParams:
    w0: TimeLike
    w1: TimeLike
    std: TimeLike

    @property
    def var(self) -> TimeLike:
        return self.std ** 2


def gaussian_product(p: GaussianParams, q: GaussianParams) -> GaussianParams:
    """Renormalised product of two isotropic Gaussian densities.

    A zero-variance factor is a point mass and dominates the product.
    """
    vp, vq = float(p.var), float(q.var)
    mp, mq = np.asarray(p.mean, float), np.asarray(q.mean, float)
    if vp == 0.0 and vq == 0.0:
        if not np.allclose(mp, mq):
            raise ValueError("product of two distinct point masses is undefined")
        return GaussianParams(mp.copy(), 0.0)
    if vp == 0.0:
        return GaussianParams(mp.copy(), 0.0)
    if vq == 0.0:
        return GaussianParams(mq.copy(), 0.0)
    s = vp + vq
    return GaussianParams((vq * mp + vp * mq) / s, vp * vq / s)


def smoothed_sigma2(sigma2_1: float, eps: float) -> float:
    """Potential variance for Gaussian-smoothed boundaries of width ``eps``.

    ``eps^2 + (sqrt(s1^4 + 4 eps^4) - s1^2) / 2`` written without the
    catastrophic cancellation of the square-root difference.
    """
    e4 = eps ** 4
    return eps ** 2 + 2.0 * e4 / (math.sqrt(sigma2_1 ** 2 + 4.0 * e4) + sigma2_1)


def smoothed_potentials(schedule: Schedule, t: float, x0, x1, eps: float = 1e-6) -> SmoothedPotentials:
    """Potentials of the SB between ``N(x0, eps^2 I)`` and ``N(x1, alpha_1^2 eps^2 I)``."""
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    t = _check_time(t)
    x0 = np.asarray(x0, float)
    x1 = np.asarray(x1, float)
    s1 = schedule.sigma2_1
    a1 = schedule.alpha_1
    sig2 = smoothed_sigma2(s1, eps)
    a = x0 + sig2 / s1 * (x0 - x1 / a1)
    b = x1 + sig2 / s1 * (x1 - a1 * x0)
    alpha = float(schedule.alpha(t))
    alpha_bar = float(schedule.alpha_bar(t))
    psi_hat = GaussianParams(alpha * a, alpha ** 2 * (sig2 + float(schedule.sigma2(t))))
    psi = GaussianParams(alpha_bar * b, alpha ** 2 * (sig2 + float(schedule.sigma2_bar(t))))
    return SmoothedPotentials(a=a, b=b, sigma2_eps=sig2, psi_hat=psi_hat, psi=psi)


def clean_potentials(schedule: Schedule, t: float, x0, x1) -> tuple[GaussianParams, GaussianParams]:
    """The eps -> 0 limit: ``(psi_hat, psi)``."""
    t = _check_time(t)
    alpha = float(schedule.alpha(t))
    psi_hat = GaussianParams(alpha * np.asarray(x0, float), alpha ** 2 * float(schedule.sigma2(t)))
    psi = GaussianParams(
        float(schedule.alpha_bar(t)) * np.asarray(x1, float), alpha ** 2 * float(schedule.sigma2_bar(t))
    )
    return psi_hat, psi


def marginal_params(schedule: Schedule, t: TimeLike) -> MarginalParams:
    t = _check_time(t)
    s1 = schedule.sigma2_1
    alpha = schedule.alpha(t)
    s2 = schedule.sigma2(t)
    sb2 = schedule.sigma2_bar(t)
    w0 = alpha * sb2 / s1
    w1 = schedule.alpha_bar(t) * s2 / s1
    std = alpha * np.sqrt(sb2 * s2 / s1)
    return MarginalParams(w0=w0, w1=w1, std=std)


def _column(v: TimeLike, ndim: int) -> TimeLike:
    """Reshape per-sample coefficients so they broadcast against ``(n, d)`` states."""
    v = np.asarray(v, float)
    if v.ndim == 0 or ndim < 2:
        return v
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def bridge_state(schedule: Schedule, t: TimeLike, x0, x1, eps) -> np.ndarray:
    """``x_t = w0 x0 + w1 x1 + std * eps`` for given standard-normal ``eps``."""
    x0 = np.asarray(x0, float)
    x1 = np.asarray(x1, float)
    eps = np.asarray(eps, float)
    mp = marginal_params(schedule, t)
    nd = max(x0.ndim, x1.ndim, eps.ndim)
    return _column(mp.w0, nd) * x0 + _column(mp.w1, nd) * x1 + _column(mp.std, nd) * eps


def sample_xt(schedule: Schedule, t: TimeLike, pair: PairedSample, rng: np.random.Generator, n: Optional[int] = None):
    """Draw from the bridge marginal at ``t`` (``n`` draws when given)."""
    shape = pair.x0.shape if n is None else (n,) + pair.x0.shape
    eps = rng.standard_normal(shape)
    return bridge_state(schedule, t, pair.x0, pair.x1, eps)


def reference_transition(schedule: Schedule, s: float, t: float, x_s) -> GaussianParams:
    """Law of ``x_t`` given ``x_s`` under the reference SDE, ``s <= t``."""
    s, t = _check_time(s), _check_time(t)
    if s > t:
        raise ValueError(f"reference transition needs s <= t, got s={s}, t={t}")
    alpha_t = float(schedule.alpha(t))
    ratio = alpha_t / float(schedule.alpha(s))
    var = alpha_t ** 2 * (float(schedule.sigma2(t)) - float(schedule.sigma2(s)))
    return GaussianParams(ratio * np.asarray(x_s, float), max(var, 0.0))


def brownian_conditional(schedule: Schedule, t: float, x0, x1) -> GaussianParams:
    """``p_ref(x_t | x0, x1)`` by Bayes' rule on reference transitions.

    ``p(x_t | x0) p(x1 | x_t)`` is a product of two Gaussians in ``x_t``; the
    second is the forward transition ``t -> 1`` read as a likelihood of
    ``x_t``. Kept independent of :func:`marginal_params` on purpose.
    """
    t = _check_time(t)
    if not 0.0 < t < 1.0:
        raise ValueError("brownian_conditional needs 0 < t < 1")
    x0 = np.asarray(x0, float)
    x1 = np.asarray(x1, float)
    from_start = reference_transition(schedule, 0.0, t, x0)
    # x1 ~ N(k x_t, v)  =>  as a function of x_t: N(x1 / k, v / k^2)
    k = float(schedule.alpha(1.0)) / float(schedule.alpha(t))
    v = reference_transition(schedule, t, 1.0, np.zeros_like(x1)).var
    to_end = GaussianParams(x1 / k, v / k ** 2)
    return gaussian_product(from_start, to_end)


def forward_bridge_drift(schedule: Schedule, t: float, x, x1) -> np.ndarray:
    """``f x + g^2 grad log Psi_t(x)`` with the clean potential pinned at ``x1``."""
    alpha = float(schedule.alpha(t))
    score = -(x - float(schedule.alpha_bar(t)) * x1) / (alpha ** 2 * float(schedule.sigma2_bar(t)))
    return float(schedule.f(t)) * x + float(schedule.g2(t)) * score


def simulate_forward_bridge(
    schedule: Schedule,
    x0,
    x1,
    rng: np.random.Generator,
    n_steps: int = 10_000,
    t_end: float = 1.0 - 1e-4,
    n_paths: int = 1,
) -> np.ndarray:
    """Euler-Maruyama on the forward SB SDE from ``x0`` up to ``t_end < 1``.

    Returns the ``(n_paths, d)`` states at ``t_end``.
    """
    if not 0.0 < t_end < 1.0:
        raise ValueError("t_end must lie in (0, 1); the drift is singular at t = 1")
    x0 = np.asarray(x0, float)
    x1 = np.asarray(x1, float)
    x = np.tile(x0, (n_paths, 1))
    ts = np.linspace(0.0, t_end, n_steps + 1)
    for t, t_next in zip(ts[:-1], ts[1:]):
        dt = t_next - t
        drift = forward_bridge_drift(schedule, t, x, x1)
        x = x + drift * dt + math.sqrt(float(schedule.g2(t)) * dt) * rng.standard_normal(x.shape)
    return x
