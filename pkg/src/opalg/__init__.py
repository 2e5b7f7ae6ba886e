"""Finite-dimensional tracial von Neumann algebras with group actions.

Conditional expectations, Connes fusion over a subalgebra, compact and
weakly mixing extensions, joinings, and the cubic (Host-Kra) tower.
"""

from .algebra import DEFAULT_TOL, Algebra, Element, ToleranceProfile, make_algebra, trace
from .dynamics import DynamicalSystem, GroupSpec, ap_decompose, is_compact_extension, make_system, test_weak_mixing, with_subalgebra
from .errors import BudgetExceeded, NumericalFailure, OpalgError, ValidationError
from .fusion import build_fusion, embed
from .hkz import Tower, seminorm, tower_report
from .io import emit_report, parse_system_file, parse_system_text
from .subalgebra import Subalgebra, cond_expect, generate_subalgebra

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_TOL",
    "Algebra",
    "Element",
    "ToleranceProfile",
    "make_algebra",
    "trace",
    "DynamicalSystem",
    "GroupSpec",
    "make_system",
    "with_subalgebra",
    "ap_decompose",
    "is_compact_extension",
    "test_weak_mixing",
    "OpalgError",
    "ValidationError",
    "NumericalFailure",
    "BudgetExceeded",
    "build_fusion",
    "embed",
    "Tower",
    "seminorm",
    "tower_report",
    "parse_system_file",
    "parse_system_text",
    "emit_report",
    "Subalgebra",
    "cond_expect",
    "generate_subalgebra",
]
