"""Successive-approximation solver for compactly perturbed onto maps on graded truncations."""
from .covering import Net, QuotientReduction, greedy_net, quotient_reduce, reduce_until, verify_cover
from .graded_space import (
    Gauge,
    GradedSpace,
    gauge_eval,
    intersection_gauge,
    membership,
    normalize_fundamental_system,
)
from .operators import (
    ImageEllipsoid,
    LinearOperator,
    apply,
    constrained_preimage,
    containment_factor,
    image_of_ball,
    min_gauge_right_inverse,
)
from .solver import (
    Schedule,
    certify_trace,
    codimension_report,
    compute_schedule,
    solve_any,
    successive_approximation,
)

__version__ = "0.1.0"
