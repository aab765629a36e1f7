"""Toy conditional paired-data task, a small tanh MLP and the bridge loss.

Everything is float64 numpy with hand-written backpropagation, so the
analytic gradients can be checked against central finite differences.

Network input is ``concat(x_t, t, x1)``; the raw scalar ``t`` serves as the
time embedding. Weights and biases of a layer with fan-in ``n`` are drawn
from ``U(-1/sqrt(n), 1/sqrt(n))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bridge import _column, bridge_state, marginal_params
from .predictors import Parameterization, X0View, target_for
from .samplers import SamplerConfig, SamplerKind, sample
from .schedules import Schedule, bridge_gmax

T_MIN = 1e-5


# -- task -----------------------------------------------------------------


def default_means(d: int, K: int, radius: float = 3.0) -> np.ndarray:
    """``K`` points evenly spaced on a circle in the first two coordinates."""
    if d < 1:
        raise ValueError("d must be positive")
    angles = 2.0 * np.pi * np.arange(K) / K
    means = np.zeros((K, d))
    means[:, 0] = radius * np.cos(angles)
    if d > 1:
        means[:, 1] = radius * np.sin(angles)
    elif K > 1:
        means[:, 0] = radius * np.linspace(-1.0, 1.0, K)
    return means


@dataclass(frozen=True)
class ToyTaskSpec:
    """``K`` conditions, data ``x0 | y ~ N(m_y, s2 I)`` in ``d`` dimensions."""

    d: int = 2
    K: int = 3
    means: Optional[np.ndarray] = None
    s2: float = 1.0
    n_train: int = 6000
    seed: int = 0

    def __post_init__(self):
        means = default_means(self.d, self.K) if self.means is None else np.asarray(self.means, float)
        if means.shape != (self.K, self.d):
            raise ValueError(f"means must have shape ({self.K}, {self.d}), got {means.shape}")
        for i in range(self.K):
            for j in range(i):
                if np.array_equal(means[i], means[j]):
                    raise ValueError(f"condition means {j} and {i} coincide")
        if not self.s2 > 0.0:
            raise ValueError(f"s2 must be positive, got {self.s2}")
        if self.n_train < self.K:
            raise ValueError("need at least one training sample per condition")
        object.__setattr__(self, "means", means)


@dataclass(frozen=True)
class ToyDataset:
    x0: np.ndarray
    y: np.ndarray
    K: int

    def class_means(self) -> np.ndarray:
        return np.stack([self.x0[self.y == k].mean(axis=0) for k in range(self.K)])

    def counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.K)


def make_dataset(task: ToyTaskSpec, rng: Optional[np.random.Generator] = None) -> ToyDataset:
    rng = np.random.default_rng(task.seed) if rng is None else rng
    y = np.arange(task.n_train) % task.K
    x0 = task.means[y] + math.sqrt(task.s2) * rng.standard_normal((task.n_train, task.d))
    return ToyDataset(x0=x0, y=y, K=task.K)


# -- network --------------------------------------------------------------


@dataclass(frozen=True)
class MLPSpec:
    d: int = 2
    hidden: tuple = (128, 128)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation != "tanh":
            raise ValueError(f"only tanh is supported, got {self.activation!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def widths(self) -> list[int]:
        return [2 * self.d + 1, *self.hidden, self.d]


class MLP:
    """Fully connected tanh network; parameters live in a flat list ``[W1, b1, W2, b2, ...]``."""

    def __init__(self, spec: MLPSpec):
        self.spec = spec

    def init(self, rng: np.random.Generator) -> list[np.ndarray]:
        params = []
        widths = self.spec.widths
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / math.sqrt(n_in)
            params.append(rng.uniform(-bound, bound, (n_in, n_out)))
            params.append(rng.uniform(-bound, bound, n_out))
        return params

    def forward(self, params: Sequence[np.ndarray], inp: np.ndarray):
        h = inp
        acts = [h]
        n_layers = len(params) // 2
        for i in range(n_layers):
            z = h @ params[2 * i] + params[2 * i + 1]
            h = np.tanh(z) if i < n_layers - 1 else z
            acts.append(h)
        return h, acts

    def backward(self, params: Sequence[np.ndarray], acts: list, dout: np.ndarray):
        """Gradients of a scalar with respect to every parameter and to the input."""
        n_layers = len(params) // 2
        grads = [None] * len(params)
        delta = dout
        for i in reversed(range(n_layers)):
            if i < n_layers - 1:
                delta = delta * (1.0 - acts[i + 1] ** 2)
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ params[2 * i].T
        return grads, delta

    def __call__(self, params, x_t, t, x1) -> np.ndarray:
        return self.forward(params, network_input(x_t, t, x1))[0]


def network_input(x_t, t, x1) -> np.ndarray:
    x_t = np.atleast_2d(np.asarray(x_t, float))
    n = x_t.shape[0]
    t_col = np.broadcast_to(np.asarray(t, float).reshape(-1, 1), (n, 1))
    x1 = np.broadcast_to(np.asarray(x1, float), x_t.shape)
    return np.concatenate([x_t, t_col, x1], axis=1)


class NetworkPredictor:
    """A trained network exposed through the predictor interface."""

    def __init__(self, mlp: MLP, params, parameterization: Parameterization):
        self.mlp = mlp
        self.params = params
        self.parameterization = Parameterization.parse(parameterization)

    def __call__(self, x_t, t, x1):
        x_t = np.asarray(x_t, float)
        out = self.mlp(self.params, x_t, t, x1)
        return out.reshape(x_t.shape)


# -- loss -----------------------------------------------------------------


@dataclass(frozen=True)
class LossBatch:
    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    eps: np.ndarray


@dataclass
class LossResult:
    loss: float
    grads: list
    grad_x1: np.ndarray


def draw_batch(x0, x1, rng: np.random.Generator, t_min: float = T_MIN) -> LossBatch:
    x0 = np.asarray(x0, float)
    n = x0.shape[0]
    t = rng.uniform(t_min, 1.0 - t_min, n)
    eps = rng.standard_normal(x0.shape)
    return LossBatch(x0=x0, x1=np.asarray(x1, float), t=t, eps=eps)


def bridge_loss(mlp: MLP, params, batch: LossBatch, schedule: Schedule,
                param: Parameterization = Parameterization.X0) -> LossResult:
    """Mean over the batch of ``||net(x_t, t, x1) - target||^2``.

    ``grad_x1`` is the gradient with respect to ``x1`` through both the
    network input and ``x_t``; the regression target is held fixed.
    """
    param = Parameterization.parse(param)
    x_t = bridge_state(schedule, batch.t, batch.x0, batch.x1, batch.eps)
    target = target_for(param, schedule, batch.t, batch.x0, batch.x1, batch.eps)
    out, acts = mlp.forward(params, network_input(x_t, batch.t, batch.x1))
    n, d = out.shape
    resid = out - target
    loss = float(np.sum(resid ** 2) / n)
    grads, d_inp = mlp.backward(params, acts, 2.0 * resid / n)
    w1 = _column(marginal_params(schedule, batch.t).w1, 2)
    grad_x1 = d_inp[:, d + 1:] + w1 * d_inp[:, :d]
    return LossResult(loss=loss, grads=grads, grad_x1=grad_x1)


def predictor_loss(predictor, batch: LossBatch, schedule: Schedule) -> float:
    """Bridge loss of an arbitrary x0 predictor on ``batch``."""
    x_t = bridge_state(schedule, batch.t, batch.x0, batch.x1, batch.eps)
    pred = predictor(x_t, batch.t, batch.x1)
    return float(np.sum((pred - batch.x0) ** 2) / batch.x0.shape[0])


# -- optimiser ------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta_m: float = 0.9
    beta_v: float = 0.999
    eps_stab: float = 1e-8
    steps: int = 5000
    batch: int = 128
    decay: str = "constant"

    def __post_init__(self):
        if self.decay not in ("constant", "cosine"):
            raise ValueError(f"decay must be 'constant' or 'cosine', got {self.decay!r}")
        if not self.lr > 0.0:
            raise ValueError("lr must be positive")
        if not (0.0 <= self.beta_m < 1.0 and 0.0 <= self.beta_v < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be nonnegative and batch positive")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, cfg: AdamConfig):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    step = state.step + 1
    lr = cfg.lr
    if cfg.decay == "cosine" and cfg.steps > 0:
        lr = 0.5 * cfg.lr * (1.0 + math.cos(math.pi * min(state.step, cfg.steps) / cfg.steps))
    bc_m = 1.0 - cfg.beta_m ** step
    bc_v = 1.0 - cfg.beta_v ** step
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = cfg.beta_m * m + (1.0 - cfg.beta_m) * g
        v = cfg.beta_v * v + (1.0 - cfg.beta_v) * g * g
        new_params.append(p - lr * (m / bc_m) / (np.sqrt(v / bc_v) + cfg.eps_stab))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, step)


# -- encoder table --------------------------------------------------------


@dataclass
class EncoderTable:
    """One learnable prior vector per condition."""

    z: np.ndarray

    @classmethod
    def zeros(cls, K: int, d: int) -> "EncoderTable":
        return cls(np.zeros((K, d)))

    def __getitem__(self, y):
        return self.z[y]


def encoder_loss(z: np.ndarray, data: ToyDataset) -> tuple[float, np.ndarray]:
    """``mean ||z_y - x0||^2`` and its gradient with respect to the table."""
    resid = z[data.y] - data.x0
    n = data.x0.shape[0]
    grad = np.zeros_like(z)
    np.add.at(grad, data.y, 2.0 * resid / n)
    return float(np.sum(resid ** 2) / n), grad


WARMUP_ADAM = AdamConfig(lr=0.05, steps=4000)


def encoder_warmup(data: ToyDataset, table: EncoderTable, adam: AdamConfig = WARMUP_ADAM,
                   tol: float = 1e-4) -> EncoderTable:
    """Full-batch Adam on the encoder loss until within ``tol`` of the class means."""
    target = data.class_means()
    z = [table.z.copy()]
    state = AdamState.zeros_like(z)
    for _ in range(adam.steps):
        if np.max(np.abs(z[0] - target)) <= tol:
            break
        _, grad = encoder_loss(z[0], data)
        z, state = adam_step(z, [grad], state, adam)
    return EncoderTable(z[0])


# -- training -------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalSpec:
    nfes: tuple = (1, 2, 4, 50)
    runs: tuple = ((SamplerKind.SDE1, 1.0), (SamplerKind.SDE1, 2.0), (SamplerKind.ODE1, 1.0))
    n_samples: int = 10_000


@dataclass
class TrainReport:
    losses: np.ndarray
    params: list
    table: EncoderTable
    prior: str
    param: Parameterization
    metrics: list = field(default_factory=list)
    warmup_error: float = float("nan")

    def loss_csv(self) -> str:
        lines = ["step,loss"]
        lines += [f"{i + 1},{loss:.10g}" for i, loss in enumerate(self.losses)]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        lines = [f"prior = {self.prior}", f"param = {self.param.value}",
                 f"steps = {self.losses.size}", f"final_loss = {self.losses[-1]:.10g}" if self.losses.size else "final_loss = nan",
                 f"warmup_error = {self.warmup_error:.6g}"]
        for row in self.metrics:
            key = f"{row['kind']}.nfe{row['nfe']}.tau{row['tau_b']:g}.y{row['condition']}"
            lines.append(f"{key}.mean_err = {row['mean_err']:.6g}")
            lines.append(f"{key}.cov_rel_err = {row['cov_rel_err']:.6g}")
        return "\n".join(lines) + "\n"


def condition_errors(samples: np.ndarray, m: np.ndarray, s2: float) -> tuple[float, float]:
    """Mean error and covariance Frobenius relative error against ``N(m, s2 I)``."""
    target_cov = s2 * np.eye(m.size)
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    mean_err = float(np.linalg.norm(samples.mean(axis=0) - m))
    return mean_err, float(np.linalg.norm(cov - target_cov) / np.linalg.norm(target_cov))


def evaluate(schedule: Schedule, predictor, task: ToyTaskSpec, priors: np.ndarray,
             rng: np.random.Generator, spec: EvalSpec = EvalSpec()) -> list[dict]:
    rows = []
    for kind, tau_b in spec.runs:
        for nfe in spec.nfes:
            cfg = SamplerConfig(kind, nfe, tau_b)
            for y in range(task.K):
                x = sample(schedule, predictor, cfg, priors[y], rng, n=spec.n_samples)
                mean_err, cov_err = condition_errors(x, task.means[y], task.s2)
                rows.append(dict(kind=cfg.kind.value, nfe=nfe, tau_b=tau_b, condition=y,
                                 mean_err=mean_err, cov_rel_err=cov_err))
    return rows


def train(task: ToyTaskSpec, mlp_spec: MLPSpec, adam: AdamConfig, schedule: Optional[Schedule] = None,
          param: Parameterization = Parameterization.X0, prior: str = "fixed", seed: int = 0,
          eval_spec: Optional[EvalSpec] = EvalSpec(), warmup: AdamConfig = WARMUP_ADAM) -> TrainReport:
    """Train the decoder network with the bridge loss.

    ``prior="fixed"`` warms the encoder table up first and then freezes it;
    ``prior="mutable"`` trains table and network jointly from scratch, adding
    the encoder loss. ``eval_spec=None`` skips sample-quality metrics.
    """
    if prior not in ("fixed", "mutable"):
        raise ValueError(f"prior must be 'fixed' or 'mutable', got {prior!r}")
    if mlp_spec.d != task.d:
        raise ValueError("network and task dimensions differ")
    schedule = bridge_gmax() if schedule is None else schedule
    param = Parameterization.parse(param)
    rng = np.random.default_rng(seed)
    data = make_dataset(task, rng)
    mlp = MLP(mlp_spec)
    params = mlp.init(rng)
    table = EncoderTable.zeros(task.K, task.d)
    warmup_error = float("nan")
    if prior == "fixed":
        table = encoder_warmup(data, table, warmup)
        warmup_error = float(np.max(np.abs(table.z - data.class_means())))

    state = AdamState.zeros_like(params + [table.z])
    losses = np.empty(adam.steps)
    for step in range(adam.steps):
        idx = rng.integers(0, task.n_train, adam.batch)
        x0, y = data.x0[idx], data.y[idx]
        batch = draw_batch(x0, table.z[y], rng)
        res = bridge_loss(mlp, params, batch, schedule, param)
        loss = res.loss
        if prior == "mutable":
            enc_loss, enc_grad = encoder_loss(table.z, ToyDataset(x0, y, task.K))
            loss += enc_loss
            z_grad = enc_grad.copy()
            np.add.at(z_grad, y, res.grad_x1)
        else:
            z_grad = np.zeros_like(table.z)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at step {step + 1}")
        losses[step] = loss
        updated, state = adam_step(params + [table.z], res.grads + [z_grad], state, adam)
        params = updated[:-1]
        if prior == "mutable":
            table = EncoderTable(updated[-1])

    report = TrainReport(losses=losses, params=params, table=table, prior=prior, param=param,
                         warmup_error=warmup_error)
    if eval_spec is not None:
        predictor = X0View(NetworkPredictor(mlp, params, param), schedule)
        report.metrics = evaluate(schedule, predictor, task, table.z, rng, eval_spec)
    return report
