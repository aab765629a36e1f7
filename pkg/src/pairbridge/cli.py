"""Command-line front end; every command writes CSV with a config header.

Configuration comes from built-in defaults, then an optional ``key = value``
file (``--config``), then ``--key=value`` flags. ``--replay`` reads the
``# key = value`` header of an earlier output, so any output file can be
rerun as is. Output goes to ``out_path``; a relative path is resolved
against ``$PAIRBRIDGE_OUT_DIR`` when that is set, and ``-`` means stdout.
"""
from __future__ import annotations

import argparse
import io
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import acceptance
from .bridge import PairedSample, marginal_params, sample_xt
from .predictors import GaussianPosteriorOracle, GaussianTaskParams, Parameterization
from .samplers import SamplerConfig, SamplerKind, sample, terminal_law
from .schedules import ScheduleKind, ScheduleSpec, make_schedule
from .training import AdamConfig, EvalSpec, MLPSpec, ToyTaskSpec, TrainingDiverged, WARMUP_ADAM, train

OUT_DIR_ENV = "PAIRBRIDGE_OUT_DIR"
COMMANDS = ("schedule", "marginal-check", "sample", "sweep", "train", "selftest")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ValueError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> tuple:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise ValueError(f"expected comma-separated integers, got {text!r}")
    return tuple(int(v) for v in vals)


def _words(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _auto_float(text: str):
    return None if text.strip().lower() == "auto" else float(text)


# key -> (parser, default text)
KEYS: dict[str, tuple[Callable, str]] = {
    "schedule.kind": (lambda s: ScheduleKind.parse(s).value, "gmax"),
    "schedule.beta0": (float, "0.01"),
    "schedule.beta1": (_auto_float, "auto"),
    "schedule.sigma": (float, "5"),
    "schedule.points": (int, "101"),
    "sampler.kind": (lambda s: SamplerKind.parse(s).value, "sde1"),
    "sampler.nfe": (int, "50"),
    "sampler.tau_b": (float, "1"),
    "sample.n": (int, "1"),
    "marginal.t": (_floats, "0.25,0.5,0.75"),
    "marginal.draws": (int, "100000"),
    "task.m": (_floats, "1,2"),
    "task.s2": (float, "1"),
    "task.prior_offset": (_floats, "0.5,-0.5"),
    "task.x0": (_floats, "1,-2"),
    "task.x1": (_floats, "3,0.5"),
    "task.d": (int, "2"),
    "task.K": (int, "3"),
    "task.n_train": (int, "30000"),
    "sweep.nfe": (_ints, "1,2,4,8,16,32,64,128,256"),
    "sweep.kinds": (lambda s: tuple(SamplerKind.parse(k).value for k in _words(s)), "sde1,ode1,sde2,ode2,em"),
    "sweep.tau_b": (_floats, "1,2"),
    "sweep.chains": (int, "1000"),
    "sweep.metric": (lambda s: _choice(s, ("exact", "mc")), "exact"),
    "sweep.timing": (_bool, "true"),
    "train.param": (lambda s: Parameterization.parse(s).value, "x0"),
    "train.prior": (lambda s: _choice(s, ("fixed", "mutable")), "fixed"),
    "train.steps": (int, "5000"),
    "train.batch": (int, "128"),
    "train.lr": (float, "0.001"),
    "train.decay": (lambda s: _choice(s, ("constant", "cosine")), "constant"),
    "train.warmup_steps": (int, str(WARMUP_ADAM.steps)),
    "train.eval_nfe": (_ints, "1,2,4,50"),
    "train.eval_samples": (int, "10000"),
    "selftest.checks": (lambda s: _words(s) if s.strip().lower() != "all" else (), "all"),
    "seed": (int, "0"),
    "out_path": (str, ""),
}


def _choice(text: str, options: tuple) -> str:
    low = text.strip().lower()
    if low not in options:
        raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
    return low


@dataclass
class RunConfig:
    raw: dict
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def header(self, command: str) -> str:
        lines = [f"# command = {command}"]
        lines += [f"# {k} = {self.raw[k]}" for k in sorted(self.raw)]
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in stripped.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def parse_header(text: str, source: str = "<header>") -> tuple[Optional[str], dict]:
    """Read the leading ``# key = value`` block of an earlier output."""
    command, out = None, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.startswith("#"):
            break
        body = line[1:].strip()
        if "=" not in body:
            continue
        key, value = (p.strip() for p in body.split("=", 1))
        if key == "command":
            command = value
        elif key in KEYS:
            out[key] = value
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    return command, out


def parse_flags(flags: list) -> dict:
    out = {}
    for flag in flags:
        if not flag.startswith("--") or "=" not in flag:
            raise ConfigError(f"flags must look like --key=value, got {flag!r}")
        key, value = flag[2:].split("=", 1)
        if key not in KEYS:
            raise ConfigError(f"unknown flag --{key}")
        out[key] = value
    return out


def resolve(*layers: dict) -> RunConfig:
    raw = {k: default for k, (_, default) in KEYS.items()}
    for layer in layers:
        raw.update(layer)
    values = {}
    for key, text in raw.items():
        try:
            values[key] = KEYS[key][0](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    if values["schedule.beta1"] is None:
        values["schedule.beta1"] = 20.0 if values["schedule.kind"] == ScheduleKind.VP.value else 50.0
        raw["schedule.beta1"] = repr(values["schedule.beta1"])
    return RunConfig(raw=raw, values=values)


# -- helpers --------------------------------------------------------------


def _num(x) -> str:
    return repr(float(x))


def _rows(header: str, rows) -> str:
    buf = io.StringIO()
    buf.write(header + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else _num(v) for v in row) + "\n")
    return buf.getvalue()


def build_schedule(cfg: RunConfig):
    spec = ScheduleSpec(ScheduleKind.parse(cfg["schedule.kind"]), beta0=cfg["schedule.beta0"],
                        beta1=cfg["schedule.beta1"], sigma=cfg["schedule.sigma"])
    try:
        return make_schedule(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def gaussian_task(cfg: RunConfig):
    m = np.asarray(cfg["task.m"], float)
    offset = np.asarray(cfg["task.prior_offset"], float)
    if offset.shape != m.shape:
        raise ConfigError("task.prior_offset must have the same length as task.m")
    try:
        return GaussianTaskParams(m, cfg["task.s2"]), m + offset
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class Outcome:
    body: str
    failures: list


def fail_line(name: str, value: float, tol: float) -> str:
    return f"FAIL {name} {value:.6g} {tol:.6g}"


# -- commands -------------------------------------------------------------


def cmd_schedule(cfg: RunConfig) -> Outcome:
    sched = build_schedule(cfg)
    n = cfg["schedule.points"]
    if n < 2:
        raise ConfigError("schedule.points must be at least 2")
    ts = np.linspace(0.0, 1.0, n)
    ev = sched.eval(ts)
    mp = marginal_params(sched, ts)
    rows = zip(ts, ev.f, ev.g2, ev.alpha, ev.alpha_bar, ev.sigma2, ev.sigma2_bar, mp.w0, mp.w1, mp.std)
    return Outcome(_rows("t,f,g2,alpha,alpha_bar,sigma2,sigma2_bar,w0,w1,std", rows), [])


def cmd_marginal_check(cfg: RunConfig) -> Outcome:
    sched = build_schedule(cfg)
    try:
        pair = PairedSample(np.asarray(cfg["task.x0"]), np.asarray(cfg["task.x1"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    n = cfg["marginal.draws"]
    if n < 2:
        raise ConfigError("marginal.draws must be at least 2")
    rng = np.random.default_rng(cfg["seed"])
    rows, failures = [], []
    for t in cfg["marginal.t"]:
        mp = marginal_params(sched, t)
        x = sample_xt(sched, t, pair, rng, n=n)
        mean = mp.w0 * pair.x0 + mp.w1 * pair.x1
        mean_err = float(np.linalg.norm(x.mean(axis=0) - mean))
        if mp.var > 0.0:
            var_err = float(np.max(np.abs(x.var(axis=0, ddof=1) - mp.var)) / mp.var)
            z = float(np.max(np.abs(x.mean(axis=0) - mean)) / (mp.std / math.sqrt(n)))
        else:
            var_err = float(np.max(x.var(axis=0, ddof=1)))
            z = 0.0 if mean_err == 0.0 else math.inf
        rows.append((t, mp.w0, mp.w1, mp.std, mean_err, var_err))
        if var_err > 0.02:
            failures.append(fail_line(f"var_rel_err[t={t:g}]", var_err, 0.02))
        if z > 4.0:
            failures.append(fail_line(f"mean_standard_errors[t={t:g}]", z, 4.0))
    return Outcome(_rows("t,w0,w1,std,emp_mean_err,emp_var_rel_err", rows), failures)


def _sampler_config(cfg: RunConfig, kind=None, nfe=None, tau_b=None) -> SamplerConfig:
    try:
        return SamplerConfig(kind or cfg["sampler.kind"], nfe or cfg["sampler.nfe"],
                             tau_b if tau_b is not None else cfg["sampler.tau_b"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_sample(cfg: RunConfig) -> Outcome:
    """Samples from the Gaussian-oracle task, one row per chain."""
    sched = build_schedule(cfg)
    task, x1 = gaussian_task(cfg)
    oracle = GaussianPosteriorOracle(sched, task)
    sc = _sampler_config(cfg)
    n = cfg["sample.n"]
    if n < 1:
        raise ConfigError("sample.n must be positive")
    x = sample(sched, oracle, sc, x1, np.random.default_rng(cfg["seed"]), n=n)
    cols = ",".join(f"x{i}" for i in range(x.shape[1]))
    return Outcome(_rows(f"index,{cols}", ([str(i), *row] for i, row in enumerate(x))), [])


def cmd_sweep(cfg: RunConfig) -> Outcome:
    """Terminal-law error of every (kind, nfe, tau_b) on the Gaussian-oracle task.

    ``sweep.metric = exact`` propagates the discrete chain's Gaussian law
    without sampling; ``mc`` uses the empirical moments of the chains.
    ``wall_ns`` is the wall time per chain, or 0 when timing is off.
    """
    sched = build_schedule(cfg)
    task, x1 = gaussian_task(cfg)
    oracle = GaussianPosteriorOracle(sched, task)
    chains = cfg["sweep.chains"]
    if chains < 2:
        raise ConfigError("sweep.chains must be at least 2")
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for kind in cfg["sweep.kinds"]:
        for nfe in cfg["sweep.nfe"]:
            if SamplerKind.parse(kind).second_order and nfe % 2:
                continue
            for tau_b in cfg["sweep.tau_b"]:
                sc = _sampler_config(cfg, kind, nfe, tau_b)
                start = time.perf_counter_ns()
                x = sample(sched, oracle, sc, x1, rng, n=chains)
                wall = (time.perf_counter_ns() - start) / chains if cfg["sweep.timing"] else 0.0
                if cfg["sweep.metric"] == "exact":
                    law = terminal_law(sched, oracle, sc, x1)
                    mean, var = law.mean, law.var
                else:
                    mean, var = x.mean(axis=0), float(np.mean(x.var(axis=0, ddof=1)))
                mean_err = float(np.linalg.norm(mean - task.m))
                var_err = abs(var - task.s2) / task.s2 if task.s2 > 0 else var
                rows.append((str(nfe), kind, tau_b, mean_err, var_err, str(int(round(wall)))))
    return Outcome(_rows("nfe,kind,tau_b,mean_err,var_rel_err,wall_ns", rows), [])


def cmd_train(cfg: RunConfig) -> Outcome:
    sched = build_schedule(cfg)
    try:
        task = ToyTaskSpec(d=cfg["task.d"], K=cfg["task.K"], s2=cfg["task.s2"], n_train=cfg["task.n_train"],
                           seed=cfg["seed"])
        adam = AdamConfig(lr=cfg["train.lr"], steps=cfg["train.steps"], batch=cfg["train.batch"],
                          decay=cfg["train.decay"])
        warmup = AdamConfig(lr=WARMUP_ADAM.lr, steps=cfg["train.warmup_steps"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    eval_spec = None
    if cfg["train.eval_samples"] > 0:
        eval_spec = EvalSpec(nfes=cfg["train.eval_nfe"], n_samples=cfg["train.eval_samples"])
    try:
        report = train(task, MLPSpec(d=task.d), adam, sched, cfg["train.param"], cfg["train.prior"],
                       cfg["seed"], eval_spec, warmup)
    except TrainingDiverged as exc:
        return Outcome("", [fail_line("train.loss_finite", math.nan, 0.0) + f"  # {exc}"])
    body = report.loss_csv() + "".join(f"# {line}\n" for line in report.summary().splitlines())
    return Outcome(body, [])


def cmd_selftest(cfg: RunConfig) -> Outcome:
    selected = cfg["selftest.checks"] or None
    unknown = set(selected or ()) - set(acceptance.CHECKS)
    if unknown:
        raise ConfigError(f"unknown selftest checks: {', '.join(sorted(unknown))}")
    results = acceptance.run_all(selected)
    rows = ((r.name, "pass" if r.passed else "fail", r.value, r.tolerance) for r in results)
    failures = [fail_line(r.name, r.value, r.tolerance) for r in results if not r.passed]
    return Outcome(_rows("check,status,value,tolerance", rows), failures)


HANDLERS = {
    "schedule": cmd_schedule,
    "marginal-check": cmd_marginal_check,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "train": cmd_train,
    "selftest": cmd_selftest,
}


def output_path(cfg: RunConfig, command: str) -> str:
    path = cfg["out_path"] or f"{command}.csv"
    if path == "-":
        return path
    base = os.environ.get(OUT_DIR_ENV)
    if base and not os.path.isabs(path):
        path = os.path.join(base, path)
    return path


def run(command: str, cfg: RunConfig, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    outcome = HANDLERS[command](cfg)
    text = cfg.header(command) + outcome.body
    path = output_path(cfg, command)
    if path == "-":
        stdout.write(text)
    else:
        try:
            parent = os.path.dirname(path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            with open(path, "w", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            stderr.write(f"cannot write {path}: {exc}\n")
            return 2
        if command == "sample":
            stdout.write(outcome.body)
    for line in outcome.failures:
        stdout.write(line + "\n")
    return 1 if outcome.failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pairbridge", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value file")
    parser.add_argument("--replay", help="rerun from the header of an earlier output")
    args, rest = parser.parse_known_args(argv)
    try:
        layers = []
        if args.replay:
            with open(args.replay) as fh:
                command, header = parse_header(fh.read(), args.replay)
            if command is not None and command != args.command:
                raise ConfigError(f"{args.replay} was written by '{command}', not '{args.command}'")
            layers.append(header)
        if args.config:
            with open(args.config) as fh:
                layers.append(parse_config_text(fh.read(), args.config))
        layers.append(parse_flags(rest))
        cfg = resolve(*layers)
        return run(args.command, cfg)
    except (ConfigError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
