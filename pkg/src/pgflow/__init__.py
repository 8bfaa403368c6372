"""Exact forward-mode differentiation of selective diagonal linear
recurrences with a sequence-length-independent working set, plus the
oracles, instrumentation and benchmark harness that verify it."""

from .glr import (GlrParams, StepOperator, StateTrajectory, discretize,
                  output_map, random_params, scan_chunked, scan_sequential)
from .tangent import (AugmentedOperator, DualState, apply_operator, augment,
                      build_augmented, compose, jvp_dense, selectivity_jacobian,
                      tangent_output)
from .streaming import (ArraySink, ArraySource, BlockPlan, DiscardSink,
                        FileSink, FileSource, GeneratorSource, handoff,
                        jvp_streamed, run_tose)
from .numerics import (LogShiftedTrajectory, RegressionReport, log_shift_scan,
                       ols_slope_test, relative_error)
from .paramgrad import (GradAccumulators, SensitivityFlow, accumulate_all,
                        gamma_evolve, grad_c_accumulate)
from .hessian import TripleState, hessian_source, hvp, hvp_full
from .oracle import Dual, dense_rtrl_time, fd_hvp, fd_jvp, primal_fn, unrolled_jvp
from .isomorphs import decay_jvp, decay_operators, linatt_jvp, linatt_primal
from .meter import MemoryMeter, MeterError, slope_report

__version__ = "0.1.0"

__all__ = [
    "GlrParams", "StepOperator", "StateTrajectory", "discretize", "output_map",
    "random_params", "scan_chunked", "scan_sequential",
    "AugmentedOperator", "DualState", "apply_operator", "augment",
    "build_augmented", "compose", "jvp_dense", "selectivity_jacobian",
    "tangent_output",
    "ArraySink", "ArraySource", "BlockPlan", "DiscardSink", "FileSink",
    "FileSource", "GeneratorSource", "handoff", "jvp_streamed", "run_tose",
    "LogShiftedTrajectory", "RegressionReport", "log_shift_scan",
    "ols_slope_test", "relative_error",
    "GradAccumulators", "SensitivityFlow", "accumulate_all", "gamma_evolve",
    "grad_c_accumulate",
    "TripleState", "hessian_source", "hvp", "hvp_full",
    "Dual", "dense_rtrl_time", "fd_hvp", "fd_jvp", "primal_fn", "unrolled_jvp",
    "decay_jvp", "decay_operators", "linatt_jvp", "linatt_primal",
    "MemoryMeter", "MeterError", "slope_report",
]
