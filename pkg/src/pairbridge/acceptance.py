"""Acceptance checks shared by the test suite and the ``selftest`` command.

Each check returns one or more :class:`CheckResult` rows. ``value`` is the
measured quantity and ``tolerance`` the bound it is held to; ``passed`` says
whether the bound holds.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bridge import PairedSample, brownian_conditional, marginal_params, sample_xt
from .predictors import (ConstantPredictor, GaussianPosteriorOracle, GaussianTaskParams,
                         Parameterization, X0View)
from .samplers import (SamplerConfig, SamplerKind, ddim_step, ode_first_order_step, sample,
                       sde_step_coeffs, shortened_bridge_posterior, terminal_law)
from .schedules import bridge_gmax, bridge_vp, constant_g, quadrature_sigma2
from .training import (MLP, AdamConfig, EvalSpec, MLPSpec, NetworkPredictor, ToyTaskSpec,
                       bridge_loss, condition_errors, draw_batch, make_dataset, train)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name} {self.value:.6g} {self.tolerance:.6g}"
        return f"{text}  # {self.detail}" if self.detail else text


def all_schedules():
    return [bridge_gmax(), bridge_vp(), constant_g()]


def check_schedule_consistency() -> list[CheckResult]:
    start = time.perf_counter()
    ts = np.linspace(0.0, 1.0, 1000)
    worst_quad, worst_sum = 0.0, 0.0
    for sched in all_schedules():
        closed = sched.sigma2(ts)
        for t, c in zip(ts, closed):
            q = quadrature_sigma2(sched, float(t))
            worst_quad = max(worst_quad, abs(q - c) / max(abs(c), np.finfo(float).tiny) if c else abs(q))
        total = closed + sched.sigma2_bar(ts)
        worst_sum = max(worst_sum, float(np.max(np.abs(total - sched.sigma2_1) / sched.sigma2_1)))
    elapsed = time.perf_counter() - start
    return [
        CheckResult("1.quadrature_rel_err", worst_quad <= 1e-8, worst_quad, 1e-8),
        CheckResult("1.sum_identity_rel_err", worst_sum <= 1e-12, worst_sum, 1e-12),
        CheckResult("1.runtime_s", elapsed < 5.0, elapsed, 5.0),
    ]


def check_marginal_law(seed: int = 0, n: int = 100_000) -> list[CheckResult]:
    sched = bridge_gmax()
    pair = PairedSample(np.array([1.0, -2.0]), np.array([3.0, 0.5]))
    rng = np.random.default_rng(seed)
    worst_z, worst_var = 0.0, 0.0
    for t in (0.25, 0.5, 0.75):
        x = sample_xt(sched, t, pair, rng, n=n)
        mp = marginal_params(sched, t)
        mean = mp.w0 * pair.x0 + mp.w1 * pair.x1
        z = np.abs(x.mean(axis=0) - mean) / (mp.std / np.sqrt(n))
        worst_z = max(worst_z, float(z.max()))
        var_hat = x.var(axis=0, ddof=1)
        worst_var = max(worst_var, float(np.max(np.abs(var_hat - mp.var) / mp.var)))
    return [
        CheckResult("2.mean_standard_errors", worst_z <= 4.0, worst_z, 4.0),
        CheckResult("2.var_rel_err", worst_var <= 0.02, worst_var, 0.02),
    ]


def check_one_step_identity() -> list[CheckResult]:
    """Minimal-NFE runs of every kind against the direct predictor output.

    Two-evaluation kinds end with ``x_theta(., 0)`` averaged in, so the
    predictors used here are the identity at t = 0 (the Gaussian oracle and a
    constant).
    """
    x1 = np.array([0.5, -1.5])
    worst = {kind: 0.0 for kind in SamplerKind}
    for sched in all_schedules():
        predictors = [GaussianPosteriorOracle(sched, GaussianTaskParams(np.array([1.0, 2.0]), 1.0)),
                      ConstantPredictor(np.array([-0.3, 0.7]))]
        for pred in predictors:
            direct = pred(x1, 1.0, x1)
            for kind in SamplerKind:
                cfg = SamplerConfig(kind, 2 if kind.second_order else 1)
                out = sample(sched, pred, cfg, x1, np.random.default_rng(3))
                worst[kind] = max(worst[kind], float(np.max(np.abs(out - direct))))
    return [CheckResult(f"3.one_step[{kind.value}]", err <= 1e-12, err, 1e-12) for kind, err in worst.items()]


def check_constant_predictor_exactness() -> list[CheckResult]:
    x1 = np.array([0.5, -1.5])
    c = ConstantPredictor(np.array([-0.3, 0.7]))
    worst_ode, worst_sde = 0.0, 0.0
    for sched in all_schedules():
        ends = [sample(sched, c, SamplerConfig(SamplerKind.ODE1, n), x1) for n in (1, 2, 4, 64)]
        worst_ode = max(worst_ode, max(float(np.max(np.abs(e - ends[0]))) for e in ends))
        # law at an interior time and at t = 0: composed steps against the single analytic step
        t_end = 0.25
        a1, b1, c1 = sde_step_coeffs(sched, 1.0, t_end)
        exact_mean, exact_var = a1 * x1 + b1 * c.c, c1 ** 2
        for n in (1, 2, 4, 64):
            times = np.linspace(1.0, t_end, n + 1)
            mean, var = x1.copy(), 0.0
            for s, t in zip(times[:-1], times[1:]):
                a, b, cc = sde_step_coeffs(sched, s, t)
                mean, var = a * mean + b * c.c, a * a * var + cc * cc
            worst_sde = max(worst_sde, float(np.max(np.abs(mean - exact_mean))), abs(var - exact_var))
            law = terminal_law(sched, c, SamplerConfig(SamplerKind.SDE1, n), x1)
            worst_sde = max(worst_sde, float(np.max(np.abs(law.mean - c.c))), law.var)
    return [
        CheckResult("4.ode1_grid_invariance", worst_ode <= 1e-10, worst_ode, 1e-10),
        CheckResult("4.sde1_composed_law", worst_sde <= 1e-10, worst_sde, 1e-10),
    ]


def check_posterior_equivalence(seed: int = 0, draws: int = 1000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    scheds = all_schedules()
    worst = 0.0
    for _ in range(draws):
        sched = scheds[rng.integers(len(scheds))]
        s = rng.uniform(1e-3, 1.0)
        t = rng.uniform(0.0, s)
        x_s, x0hat = rng.normal(0.0, 2.0, (2, 3))
        a, b, c = sde_step_coeffs(sched, s, t)
        post = shortened_bridge_posterior(sched, s, t, x_s, x0hat)
        worst = max(worst, float(np.max(np.abs(a * x_s + b * x0hat - post.mean))), abs(c * c - post.var))
    return [CheckResult("5.posterior_equivalence", worst <= 1e-12, worst, 1e-12)]


def ddim_deviation(sigma: float, s: float, t: float) -> float:
    sched = constant_g(sigma)
    x_s, x0hat, x1 = np.array([1.3, -0.4]), np.array([0.2, 0.9]), np.array([0.5, -0.5])
    return float(np.max(np.abs(ode_first_order_step(sched, s, t, x_s, x0hat, x1) - ddim_step(sched, s, t, x_s, x0hat))))


def check_ddim_limit() -> list[CheckResult]:
    """Scale g by 10 while holding sigma_s^2 and sigma_t^2 fixed.

    At fixed times every coefficient of both steps is invariant under
    ``g -> c g``, so the comparison keeps the step's absolute variances and
    shrinks its times by 100, which is what sending ``sigma/sigma_1 -> 0``
    means.
    """
    s, t = 0.1, 0.05
    ratio = ddim_deviation(5.0, s, t) / ddim_deviation(50.0, s / 100.0, t / 100.0)
    return [CheckResult("6.ddim_shrink_ratio", 50.0 <= ratio <= 200.0, ratio, 200.0, "band [50, 200]")]


def check_brownian_reduction() -> list[CheckResult]:
    sigma = 5.0
    sched = constant_g(sigma)
    rng = np.random.default_rng(7)
    worst_bb = 0.0
    for t in np.linspace(0.0, 1.0, 101):
        mp = marginal_params(sched, t)
        x0, x1 = rng.normal(size=(2, 3))
        mean = mp.w0 * x0 + mp.w1 * x1
        worst_bb = max(worst_bb, float(np.max(np.abs(mean - ((1 - t) * x0 + t * x1)))),
                       abs(mp.var - sigma ** 2 * t * (1 - t)))
    worst_bayes = 0.0
    for sched in all_schedules():
        for t in np.linspace(0.01, 0.99, 99):
            x0, x1 = rng.normal(size=(2, 3))
            mp = marginal_params(sched, t)
            cond = brownian_conditional(sched, t, x0, x1)
            worst_bayes = max(worst_bayes, float(np.max(np.abs(cond.mean - (mp.w0 * x0 + mp.w1 * x1)))),
                              abs(cond.var - mp.var) / mp.var)
    return [
        CheckResult("7.brownian_bridge", worst_bb <= 1e-12, worst_bb, 1e-12),
        CheckResult("7.bayes_composition", worst_bayes <= 1e-10, worst_bayes, 1e-10),
    ]


def gradient_check(param: Parameterization, seed: int = 0, probes: int = 50, h: float = 1e-4) -> float:
    """Worst relative error of analytic vs central-difference loss gradients."""
    sched = bridge_gmax()
    rng = np.random.default_rng(seed)
    mlp = MLP(MLPSpec())
    params = mlp.init(rng)
    task = ToyTaskSpec(n_train=32, seed=seed)
    data = make_dataset(task, rng)
    batch = draw_batch(data.x0, task.means[data.y] + 0.3, rng)
    grads = bridge_loss(mlp, params, batch, sched, param).grads
    sizes = [p.size for p in params]
    picks = rng.choice(sum(sizes), probes, replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for k in picks:
        i = int(np.searchsorted(offsets, k, side="right") - 1)
        j = int(k - offsets[i])
        shifted = [p.copy() for p in params]
        shifted[i].flat[j] += h
        up = bridge_loss(mlp, shifted, batch, sched, param).loss
        shifted[i].flat[j] -= 2 * h
        down = bridge_loss(mlp, shifted, batch, sched, param).loss
        fd = (up - down) / (2 * h)
        analytic = grads[i].flat[j]
        worst = max(worst, abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-12))
    return worst


def check_gradients() -> list[CheckResult]:
    out = []
    for param in Parameterization:
        err = gradient_check(param)
        out.append(CheckResult(f"8.gradient[{param.value}]", err <= 1e-4, err, 1e-4))
    return out


# configuration of the toy generative run
TOY_TASK = ToyTaskSpec(d=2, K=3, s2=1.0, n_train=30_000, seed=0)
TOY_ADAM = AdamConfig(lr=1e-3, steps=5000, batch=128, decay="cosine")
TOY_PARAM = Parameterization.NOISE_PSI_HAT
TOY_SAMPLER = SamplerConfig(SamplerKind.SDE1, 50, 1.0)
TOY_MEAN_TOL = 0.05
TOY_COV_TOL = 0.10


def oracle_toy_errors(seed: int = 0, n: int = 10_000) -> tuple[float, float]:
    """Worst per-condition errors of the analytic oracle under the toy protocol."""
    sched = bridge_gmax()
    rng = np.random.default_rng(seed)
    worst_mean, worst_cov = 0.0, 0.0
    for m in TOY_TASK.means:
        oracle = GaussianPosteriorOracle(sched, GaussianTaskParams(m, TOY_TASK.s2))
        x = sample(sched, oracle, TOY_SAMPLER, m, rng, n=n)
        mean_err, cov_err = condition_errors(x, m, TOY_TASK.s2)
        worst_mean, worst_cov = max(worst_mean, mean_err), max(worst_cov, cov_err)
    return worst_mean, worst_cov


def check_toy_run(seed: int = 0) -> list[CheckResult]:
    start = time.perf_counter()
    o_mean, o_cov = oracle_toy_errors(seed)
    report = train(TOY_TASK, MLPSpec(d=2), TOY_ADAM, bridge_gmax(), TOY_PARAM, "fixed", seed,
                   EvalSpec(nfes=(TOY_SAMPLER.nfe,), runs=((TOY_SAMPLER.kind, TOY_SAMPLER.tau_b),)))
    elapsed = time.perf_counter() - start
    mean_err = max(r["mean_err"] for r in report.metrics)
    cov_err = max(r["cov_rel_err"] for r in report.metrics)
    return [
        CheckResult("9.oracle_mean_err_2x_margin", o_mean <= TOY_MEAN_TOL / 2, o_mean, TOY_MEAN_TOL / 2),
        CheckResult("9.oracle_cov_rel_err_2x_margin", o_cov <= TOY_COV_TOL / 2, o_cov, TOY_COV_TOL / 2),
        CheckResult("9.trained_mean_err", mean_err <= TOY_MEAN_TOL, mean_err, TOY_MEAN_TOL),
        CheckResult("9.trained_cov_rel_err", cov_err <= TOY_COV_TOL, cov_err, TOY_COV_TOL),
        CheckResult("9.runtime_s", elapsed <= 300.0, elapsed, 300.0),
    ]


SWEEP_TASK = GaussianTaskParams(np.array([1.0, 2.0]), 1.0)
SWEEP_PRIOR = np.array([1.5, 1.5])
ROUNDOFF = 1e-12


def law_error(law, task: GaussianTaskParams) -> float:
    """``||mean - m|| + |var - s2| / s2`` for an isotropic Gaussian law."""
    return float(np.linalg.norm(law.mean - task.m) + abs(law.var - task.s2) / task.s2)


def check_sweep() -> list[CheckResult]:
    sched = bridge_gmax()
    oracle = GaussianPosteriorOracle(sched, SWEEP_TASK)
    nfes = [2 ** k for k in range(1, 9)]
    sde1 = [law_error(terminal_law(sched, oracle, SamplerConfig(SamplerKind.SDE1, n), SWEEP_PRIOR), SWEEP_TASK)
            for n in nfes]
    worst_increase = max(b - a for a, b in zip(sde1[:-1], sde1[1:]))
    ode_gap = -np.inf
    for n in nfes:
        if n < 8:
            continue
        e1 = law_error(terminal_law(sched, oracle, SamplerConfig(SamplerKind.ODE1, n), SWEEP_PRIOR), SWEEP_TASK)
        e2 = law_error(terminal_law(sched, oracle, SamplerConfig(SamplerKind.ODE2, n), SWEEP_PRIOR), SWEEP_TASK)
        ode_gap = max(ode_gap, e2 - e1)
    var1 = terminal_law(sched, oracle, SamplerConfig(SamplerKind.SDE1, 50, 1.0), SWEEP_PRIOR).var
    var2 = terminal_law(sched, oracle, SamplerConfig(SamplerKind.SDE1, 50, 2.0), SWEEP_PRIOR).var
    return [
        CheckResult("10.sde1_max_increase", worst_increase < 0.0, worst_increase, 0.0, "must be negative"),
        CheckResult("10.ode2_minus_ode1", ode_gap <= ROUNDOFF, ode_gap, ROUNDOFF, "both kinds are exact here"),
        CheckResult("10.var_tau2_minus_tau1", var2 < var1, var2 - var1, 0.0, "must be negative"),
    ]


CHECKS: dict[str, Callable[[], list[CheckResult]]] = {
    "1": check_schedule_consistency,
    "2": check_marginal_law,
    "3": check_one_step_identity,
    "4": check_constant_predictor_exactness,
    "5": check_posterior_equivalence,
    "6": check_ddim_limit,
    "7": check_brownian_reduction,
    "8": check_gradients,
    "9": check_toy_run,
    "10": check_sweep,
}


def run_all(selected=None) -> list[CheckResult]:
    results = []
    for key, fn in CHECKS.items():
        if selected is None or key in selected:
            results.extend(fn())
    return results
