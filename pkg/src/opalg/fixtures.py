"""Built-in example systems."""

from __future__ import annotations

from importlib import resources

import numpy as np

from .algebra import Algebra, make_algebra
from .dynamics import DynamicalSystem, GroupSpec, make_system, with_subalgebra
from .io import parse_system_text
from .subalgebra import Subalgebra, full_subalgebra, generate_subalgebra, scalar_subalgebra

FIXTURE_FILES = {
    "SYS-A": "sys_a.json",
    "SYS-B": "sys_b.json",
    "SYS-C": "sys_c.json",
    "SYS-D": "sys_d.json",
}


def fixture_text(name: str) -> str:
    return resources.files("opalg.data").joinpath(FIXTURE_FILES[name]).read_text(encoding="utf-8")


def fixture_path(name: str):
    return resources.files("opalg.data").joinpath(FIXTURE_FILES[name])


def load_fixture(name: str) -> DynamicalSystem:
    return parse_system_text(fixture_text(name))


def sys_a() -> DynamicalSystem:
    return load_fixture("SYS-A")


def sys_b() -> DynamicalSystem:
    return load_fixture("SYS-B")


def sys_c() -> DynamicalSystem:
    return load_fixture("SYS-C")


def sys_d() -> DynamicalSystem:
    return load_fixture("SYS-D")


def rotation(n: int) -> DynamicalSystem:
    """Z_n acting on C^n (uniform) by x -> x + 1."""
    A = make_algebra([1] * n, [1.0 / n] * n)
    U = np.roll(np.eye(n), 1, axis=0)
    return make_system(A, GroupSpec("finite_abelian", orders=(n,), labels=("t",)), [("matrix", U)])


def diagonal_subalgebra(A: Algebra) -> Subalgebra:
    """Span of the diagonal matrix units of every block."""
    units = [u for u, (b, p, q) in zip(A.matrix_units(), A.unit_index()) if p == q]
    return generate_subalgebra(A, units)


def invariant_subalgebras(S: DynamicalSystem) -> dict[str, Subalgebra]:
    """The invariant Q's exercised per fixture: C, the shipped Q, diag in M_2, and N."""
    A = S.algebra
    out = {"C": scalar_subalgebra(A), "N": full_subalgebra(A)}
    if S.Q.dim not in (1, A.dim):
        out["shipped"] = S.Q
    if A.blocks == (2,):
        D = diagonal_subalgebra(A)
        try:
            with_subalgebra(S, D)
            out["diag"] = D
        except Exception:  # not invariant under this action
            pass
    return out


def all_fixtures() -> dict[str, DynamicalSystem]:
    return {name: load_fixture(name) for name in FIXTURE_FILES}
