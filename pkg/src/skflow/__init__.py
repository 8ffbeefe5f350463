"""Pathwise SDE solving on càdlàg paths: path algebra, Skorokhod distance,
adaptive freeze iteration, Lévy drivers and shift-based Malliavin derivatives."""
from .errors import *  # noqa: F401,F403
from .paths import (
    CadlagPath,
    add_shift,
    eval_path,
    from_csv_string,
    left_limit,
    linear_combine,
    paths_equal,
    read_csv,
    stop_at,
    sup_distance,
    sup_norm,
    to_csv_string,
    write_csv,
)
from .skorokhod import (
    TimeWarp,
    apply_warp,
    compose,
    skorokhod_distance_bound,
    skorokhod_distance_exact,
    warp_norm,
)
from .coefficient import Coefficient, check_assumptions, from_name, markov_coefficient
from .levy import (
    JumpLaw,
    LevySpec,
    decompose,
    dominating_for,
    dominating_process,
    sample_path,
    stochastic_integral,
    theta,
    total_variation,
)
from .functional import SolverConfig, SolveDiagnostics, breakpoints, psi_step, reference_integrate, restrict, solve
from .malliavin import MalliavinProbe, closed_form_example, derivative, integrability_estimate

__version__ = "0.1.0"
