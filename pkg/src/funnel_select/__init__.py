"""Selection of semi-processes from non-unique solution funnels by discounted-functional reduction."""

from __future__ import annotations

from .funnel import (
    AxiomReport,
    BranchRule,
    FunctionRule,
    Funnel,
    FunnelTooLarge,
    InadmissibleInitialCondition,
    check_axioms,
    check_S3,
    check_S4,
    unroll,
)
from .functionals import (
    Enumeration,
    SeparatingFunctional,
    TestFunction,
    TruncationBudget,
    enumerate_functional,
    separates,
    zeta_eval,
)
from .paths import Path, TimeGrid, diameter, extend_const, metric_d, rho, shift, splice
from .selection import (
    ReductionParams,
    SelectionOutcome,
    SemiProcess,
    argmax_set,
    build_semi_process,
    reduce,
    value_function,
    verify_semigroup,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
