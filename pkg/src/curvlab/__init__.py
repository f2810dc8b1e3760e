"""curvlab: exact curvature weights for sublevel-set operators and numerical checks of their inequalities."""

from .integrate import (
    IntegralEstimate,
    Region,
    geom_integral,
    image_measure,
    oberlin_scan,
    radon_apply,
    sublevel_eval,
    width_L,
    width_R,
)
from .linalg import GLn, build_tv, complete_square, sample_gl
from .poly import MultiPoly, PolyMatrix, degree_cap, parse_poly, polydet, truncation
from .verify import (
    ExponentSet,
    HypothesisError,
    InequalityReport,
    check_bourgain,
    check_detred,
    check_jacobian_factorization,
    check_oberlin,
    check_theorem1,
    check_theorem2,
    exponents,
    identity_suite,
)
from .weights import (
    ConeMap,
    PhaseSystem,
    WeightFunctional,
    d1_apply,
    dop_apply,
    induce,
    rotcurv1,
    rotcurv2,
    w1,
    w1_partial,
    w2,
    w2_jk,
    w2_k,
    w3,
)

__version__ = "0.1.0"
