"""Schrodinger bridges between paired data and a deterministic prior.

Closed-form reference schedules, the tractable paired-point bridge, model
parameterizations, first- and second-order bridge SDE/ODE samplers, and a
small numpy training loop for a conditional toy task.
"""
from .bridge import (GaussianParams, MarginalParams, PairedSample, brownian_conditional, marginal_params,
                     sample_xt, smoothed_potentials)
from .predictors import (ConstantPredictor, GaussianPosteriorOracle, GaussianTaskParams, Parameterization,
                         X0View, target_for, to_x0)
from .samplers import SamplerConfig, SamplerKind, TimeGrid, make_time_grid, sample, terminal_law
from .schedules import (Schedule, ScheduleKind, ScheduleSpec, bridge_gmax, bridge_vp, constant_g,
                        make_schedule)

__version__ = "0.1.0"
