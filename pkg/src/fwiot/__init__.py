"""Acoustic FWI toolkit with least-squares and optimal-transport misfits."""

from .adjoint import GradientField, RtmImage, adjoint_solve, gradient, rtm_image
from .born import Reflectivity, born_forward, lsrtm, migrate
from .errors import (
    ConfigError,
    FileFormatError,
    MaConvergenceError,
    NumericalError,
    ParameterError,
    StabilityError,
    ValidationError,
)
from .fileio import (
    read_field,
    read_grid_file,
    read_shot_file,
    write_field,
    write_grid_file,
    write_shot_file,
)
from .grids import (
    Acquisition,
    Grid2D,
    MisfitEvaluation,
    ShotRecord,
    SourceWavelet,
    TimeAxis,
    VelocityModel,
)
from .misfit import MisfitKind, evaluate
from .mongeampere import (
    Density2D,
    DensityChain,
    MaParams,
    MaSolution,
    dataset_to_density,
    ma_residual,
    ma_solve,
    w2_gradient_2d,
    w2_squared_2d,
)
from .normalize import Density1D, Normalization, ScalingKind, chain_rule, scale, to_density
from .optimize import InversionState, LbfgsConfig, lbfgs, lbfgs_minimize
from .ot1d import Cdf1D, TransportPlan1D, adjoint_source_1d, cdf, quantile, trace_w2_misfit, w2_squared_1d
from .raypath import SlownessProfile, herglotz_invert, ray_integrals
from .wavesim import SimConfig, WavefieldMovie, forward, max_stable_dt, ricker

__version__ = "0.1.0"
