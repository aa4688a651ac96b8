"""Zeroth-order samplers for convex bodies and log-concave densities.

Proximal samplers with restart (uniform, truncated Gaussian, exponential
lifting, tilted Gaussian), Gaussian-annealing warm starts, and numerical
diagnostics for the inequalities behind them.
"""

__version__ = "0.1.0"

from .oracles import (  # noqa: E402
    Ball,
    BodyOracle,
    Box,
    Ellipsoid,
    FunctionBody,
    FunctionPotential,
    IndicatorPotential,
    Interval,
    LiftedBody,
    NormPotential,
    Polytope,
    PotentialOracle,
    QuadraticPotential,
    QueryLedger,
    body_stats,
    evaluate,
    lift,
    membership,
)
from .rng import make_rng  # noqa: E402
from .samplers import (  # noqa: E402
    ChainState,
    Constants,
    GaussTarget,
    SamplerConfig,
    TiltedTarget,
    derive_params_ann,
    derive_params_exp,
    derive_params_gauss,
    derive_params_unif,
    ps_ann_iterate,
    ps_exp_iterate,
    ps_gauss_iterate,
    ps_unif_iterate,
)
from .annealing import (  # noqa: E402
    AnnealConstants,
    build_logconcave_plan,
    build_uniform_schedule,
    run_logconcave_warmstart,
    run_uniform_warmstart,
)
