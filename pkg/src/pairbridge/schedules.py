"""Reference-SDE noise schedules with closed-form coefficients.

The reference process is the linear SDE ``dx = f(t) x dt + g(t) dw`` on
``t in [0, 1]``. Every schedule exposes

* ``alpha(t)     = exp(int_0^t f)``
* ``alpha_bar(t) = exp(-int_t^1 f) = alpha(t) / alpha(1)``
* ``sigma2(t)    = int_0^t g^2 / alpha^2``
* ``sigma2_bar(t)= int_t^1 g^2 / alpha^2``

in closed form. ``sigma2_bar`` is evaluated from its own closed form rather
than as ``sigma2(1) - sigma2(t)`` so that the identity between the two is a
genuine check, and so it stays accurate close to ``t = 1``.

All coefficient methods accept a float or an ndarray of times.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

TimeLike = Union[float, np.ndarray]


class ScheduleKind(str, enum.Enum):
    GMAX = "gmax"
    VP = "vp"
    CONSTANT = "constant"

    @classmethod
    def parse(cls, value: Union[str, "ScheduleKind"]) -> "ScheduleKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "bridgegmax": cls.GMAX, "bridge-gmax": cls.GMAX, "gmax": cls.GMAX,
            "bridgevp": cls.VP, "bridge-vp": cls.VP, "vp": cls.VP,
            "constantg": cls.CONSTANT, "constant": cls.CONSTANT, "const": cls.CONSTANT,
        }
        key = str(value).strip().lower().replace("_", "-")
        if key not in aliases:
            raise ValueError(f"unknown schedule kind {value!r}; expected gmax, vp or constant")
        return aliases[key]


@dataclass(frozen=True)
class ScheduleSpec:
    """Schedule family plus its hyperparameters.

    ``beta0``/``beta1`` are used by the gmax and VP families, ``sigma`` only by
    the constant-g family. Defaults are the gmax values used for speech
    synthesis (beta0=0.01, beta1=50) and g=5 for the constant schedule.
    """

    kind: ScheduleKind = ScheduleKind.GMAX
    beta0: float = 0.01
    beta1: float = 50.0
    sigma: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind.parse(self.kind))


@dataclass(frozen=True)
class ScheduleEval:
    """All per-time coefficients at ``t``.

    ``lam = -1/sigma2`` is ``-inf`` at ``t = 0`` (documented sentinel).
    """

    t: TimeLike
    f: TimeLike
    g2: TimeLike
    alpha: TimeLike
    alpha_bar: TimeLike
    sigma2: TimeLike
    sigma2_bar: TimeLike
    sigma2_1: float
    lam: TimeLike


def _check_time(t: TimeLike) -> TimeLike:
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"time must lie in [0, 1], got {t!r}")
    return float(arr) if arr.ndim == 0 else arr


def _in_domain(method):
    """Validate ``t`` before evaluating a closed form."""

    @functools.wraps(method)
    def wrapper(self, t):
        return method(self, _check_time(t))

    return wrapper


class Schedule:
    """Base class; subclasses are frozen dataclasses holding their constants."""

    spec: ScheduleSpec

    # closed forms supplied by subclasses
    def f(self, t: TimeLike) -> TimeLike:
        raise NotImplementedError

    def g2(self, t: TimeLike) -> TimeLike:
        raise NotImplementedError

    def alpha(self, t: TimeLike) -> TimeLike:
        raise NotImplementedError

    def sigma2(self, t: TimeLike) -> TimeLike:
        raise NotImplementedError

    def sigma2_bar(self, t: TimeLike) -> TimeLike:
        raise NotImplementedError

    @property
    def kind(self) -> ScheduleKind:
        return self.spec.kind

    @property
    def alpha_1(self) -> float:
        return float(self.alpha(1.0))

    @property
    def sigma2_1(self) -> float:
        return float(self.sigma2(1.0))

    def g(self, t: TimeLike) -> TimeLike:
        return np.sqrt(self.g2(t))

    def alpha_bar(self, t: TimeLike) -> TimeLike:
        return self.alpha(t) / self.alpha_1

    def sigma(self, t: TimeLike) -> TimeLike:
        return np.sqrt(self.sigma2(t))

    def sigma_bar(self, t: TimeLike) -> TimeLike:
        return np.sqrt(self.sigma2_bar(t))

    def lam(self, t: TimeLike) -> TimeLike:
        s2 = np.asarray(self.sigma2(t), dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(s2 > 0.0, -1.0 / np.where(s2 > 0.0, s2, 1.0), -np.inf)
        return float(out) if out.ndim == 0 else out

    def eval(self, t: TimeLike) -> ScheduleEval:
        t = _check_time(t)
        return ScheduleEval(
            t=t,
            f=self.f(t),
            g2=self.g2(t),
            alpha=self.alpha(t),
            alpha_bar=self.alpha_bar(t),
            sigma2=self.sigma2(t),
            sigma2_bar=self.sigma2_bar(t),
            sigma2_1=self.sigma2_1,
            lam=self.lam(t),
        )

    def integrand(self, t: TimeLike) -> TimeLike:
        """``g^2(t) / alpha(t)^2``, the derivative of ``sigma2``."""
        return self.g2(t) / self.alpha(t) ** 2


def _zeros_like(t: TimeLike) -> TimeLike:
    return np.zeros_like(t, dtype=float) if isinstance(t, np.ndarray) else 0.0


def _ones_like(t: TimeLike) -> TimeLike:
    return np.ones_like(t, dtype=float) if isinstance(t, np.ndarray) else 1.0


@dataclass(frozen=True)
class GmaxSchedule(Schedule):
    """f = 0, g^2 linear in t; beta1 is the maximum of g^2."""

    spec: ScheduleSpec

    @_in_domain
    def f(self, t):
        return _zeros_like(t)

    @_in_domain
    def g2(self, t):
        b0, b1 = self.spec.beta0, self.spec.beta1
        return b0 + t * (b1 - b0)

    @_in_domain
    def alpha(self, t):
        return _ones_like(t)

    @_in_domain
    def sigma2(self, t):
        b0, b1 = self.spec.beta0, self.spec.beta1
        return 0.5 * (b1 - b0) * t * t + b0 * t

    @_in_domain
    def sigma2_bar(self, t):
        b0, b1 = self.spec.beta0, self.spec.beta1
        # int_t^1 (b0 + tau (b1 - b0)) dtau, factored to keep precision near t = 1
        return (1.0 - t) * (b0 + 0.5 * (b1 - b0) * (1.0 + t))


@dataclass(frozen=True)
class VPSchedule(Schedule):
    """Variance-preserving: f = -beta(t)/2, g^2 = beta(t), beta linear in t."""

    spec: ScheduleSpec

    def _int_beta(self, t):
        b0, b1 = self.spec.beta0, self.spec.beta1
        return b0 * t + 0.5 * (b1 - b0) * t * t

    @_in_domain
    def f(self, t):
        return -0.5 * self.g2(t)

    @_in_domain
    def g2(self, t):
        b0, b1 = self.spec.beta0, self.spec.beta1
        return b0 + t * (b1 - b0)

    @_in_domain
    def alpha(self, t):
        return np.exp(-0.5 * self._int_beta(t))

    @_in_domain
    def sigma2(self, t):
        return np.expm1(self._int_beta(t))

    @_in_domain
    def sigma2_bar(self, t):
        b1_int = self._int_beta(1.0)
        return -math.exp(b1_int) * np.expm1(self._int_beta(t) - b1_int)


@dataclass(frozen=True)
class ConstantGSchedule(Schedule):
    """f = 0, g = sigma: the classic Brownian bridge reference."""

    spec: ScheduleSpec

    @_in_domain
    def f(self, t):
        return _zeros_like(t)

    @_in_domain
    def g2(self, t):
        return self.spec.sigma ** 2 * _ones_like(t)

    @_in_domain
    def alpha(self, t):
        return _ones_like(t)

    @_in_domain
    def sigma2(self, t):
        return self.spec.sigma ** 2 * t

    @_in_domain
    def sigma2_bar(self, t):
        return self.spec.sigma ** 2 * (1.0 - t)


def make_schedule(spec: ScheduleSpec) -> Schedule:
    """Validate ``spec`` and build the matching immutable schedule."""
    if spec.kind is ScheduleKind.CONSTANT:
        if not (spec.sigma > 0.0 and math.isfinite(spec.sigma)):
            raise ValueError(f"constant-g schedule needs sigma > 0, got {spec.sigma}")
        return ConstantGSchedule(spec)
    if not (spec.beta0 >= 0.0 and spec.beta1 > spec.beta0 and math.isfinite(spec.beta1)):
        raise ValueError(
            f"{spec.kind.value} schedule needs beta1 > beta0 >= 0, got beta0={spec.beta0}, beta1={spec.beta1}"
        )
    if spec.kind is ScheduleKind.GMAX:
        return GmaxSchedule(spec)
    return VPSchedule(spec)


def bridge_gmax(beta0: float = 0.01, beta1: float = 50.0) -> Schedule:
    return make_schedule(ScheduleSpec(ScheduleKind.GMAX, beta0=beta0, beta1=beta1))


def bridge_vp(beta0: float = 0.01, beta1: float = 20.0) -> Schedule:
    return make_schedule(ScheduleSpec(ScheduleKind.VP, beta0=beta0, beta1=beta1))


def constant_g(sigma: float = 5.0) -> Schedule:
    return make_schedule(ScheduleSpec(ScheduleKind.CONSTANT, sigma=sigma))


def eval_coeffs(schedule: Schedule, t: TimeLike) -> ScheduleEval:
    return schedule.eval(t)


class QuadratureError(RuntimeError):
    pass


def adaptive_simpson(
    fn: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float,
    max_intervals: int = 1 << 20,
) -> float:
    """Adaptive Simpson quadrature of a vectorised ``fn`` over ``[a, b]``.

    Intervals are refined level by level; an interval is accepted once the
    Richardson-corrected estimate changes by at most its share of ``tol``
    (proportional to its width). The per-interval threshold is floored at a
    few ulps of the running estimate, since nothing below that is resolvable
    in double precision.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if b == a:
        return 0.0
    width = b - a
    lo = np.array([a], dtype=float)
    hi = np.array([b], dtype=float)
    f_lo, f_hi = fn(lo), fn(hi)
    f_mid = fn(0.5 * (lo + hi))
    whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)
    scale = abs(float(whole.sum()))
    total = 0.0
    n_done = 0
    while lo.size:
        mid = 0.5 * (lo + hi)
        lq, rq = 0.5 * (lo + mid), 0.5 * (mid + hi)
        f_lq, f_rq = fn(lq), fn(rq)
        left = (mid - lo) / 6.0 * (f_lo + 4.0 * f_lq + f_mid)
        right = (hi - mid) / 6.0 * (f_mid + 4.0 * f_rq + f_hi)
        refined = left + right
        delta = refined - whole
        share = (hi - lo) / width
        thresh = np.maximum(15.0 * tol * share, 64.0 * np.finfo(float).eps * scale * share)
        ok = np.abs(delta) <= thresh
        total += float(np.sum(refined[ok] + delta[ok] / 15.0))
        n_done += int(ok.sum())
        keep = ~ok
        if n_done + 2 * int(keep.sum()) > max_intervals:
            raise QuadratureError(f"adaptive Simpson did not converge within {max_intervals} intervals")
        lo = np.concatenate([lo[keep], mid[keep]])
        hi = np.concatenate([mid[keep], hi[keep]])
        new_f_lo = np.concatenate([f_lo[keep], f_mid[keep]])
        new_f_hi = np.concatenate([f_mid[keep], f_hi[keep]])
        f_mid = np.concatenate([f_lq[keep], f_rq[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        f_lo, f_hi = new_f_lo, new_f_hi
    return total


def quadrature_sigma2(schedule: Schedule, t: float, tol: float = 1e-10) -> float:
    """Numerical ``int_0^t g^2/alpha^2``; a test oracle, never used for sampling."""
    t = _check_time(t)
    return adaptive_simpson(lambda tau: schedule.integrand(tau), 0.0, float(t), tol)


def quadrature_log_alpha(schedule: Schedule, t: float, tol: float = 1e-12) -> float:
    """Numerical ``int_0^t f``, i.e. ``log alpha(t)``."""
    t = _check_time(t)
    return adaptive_simpson(lambda tau: schedule.f(tau), 0.0, float(t), tol)
