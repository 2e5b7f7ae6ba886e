import numpy as np
import pytest

from opalg.algebra import make_algebra, trace
from opalg.errors import NotAModule, NotAnAlgebra
from opalg.fixtures import diagonal_subalgebra
from opalg.subalgebra import (
    basic_construction,
    cond_expect,
    dimQ,
    expectation_residuals,
    full_subalgebra,
    generate_subalgebra,
    q_inner,
    scalar_subalgebra,
    subalgebra_from_basis,
)


def test_expectation_onto_scalars_is_the_trace(rng):
    A = make_algebra([2, 1], [0.6, 0.4])
    Q = scalar_subalgebra(A)
    x = A.random_element(rng)
    assert cond_expect(Q, x).close_to(A.one() * trace(A, x), 1e-12)


def test_expectation_onto_diagonal_keeps_the_diagonal():
    A = make_algebra([2], [1.0])
    Q = diagonal_subalgebra(A)
    x = A.element([np.array([[1, 2], [3, 4]])])
    assert np.allclose(cond_expect(Q, x).blocks[0], np.diag([1, 4]))


def test_axioms_on_every_fixture_and_q(fixture_qs, rng):
    for _, _, S, Q in fixture_qs:
        A = S.algebra
        for _ in range(10):
            x = A.random_element(rng)
            a, b = (Q.from_coords(rng.standard_normal(Q.dim) + 1j * rng.standard_normal(Q.dim)) for _ in range(2))
            assert max(expectation_residuals(Q, x, a, b).values()) <= 1e-9


def test_q_inner_is_q_valued_and_hermitian(rng):
    A = make_algebra([2], [1.0])
    Q = diagonal_subalgebra(A)
    x, y = A.random_element(rng), A.random_element(rng)
    v = q_inner(Q, x, y)
    assert Q.contains(v)
    assert q_inner(Q, y, x).close_to(v.adj(), 1e-12)


def test_non_algebra_basis_is_rejected():
    A = make_algebra([2], [1.0])
    # span{1, e_12} is not *-closed
    e12 = A.element([np.array([[0, 1], [0, 0]])])
    with pytest.raises(NotAnAlgebra):
        subalgebra_from_basis(A, np.stack([A.one().vec(), e12.vec()], axis=1))


def test_generated_subalgebra_of_a_projection():
    A = make_algebra([1, 1, 1], [0.2, 0.3, 0.5])
    p = A.scalars([1, 1, 0])
    assert generate_subalgebra(A, [p]).dim == 2


@pytest.mark.parametrize("Qname,expected", [("C", 4.0), ("diag", 2.0), ("N", 1.0)])
def test_lifted_trace_of_identity_is_the_index(Qname, expected):
    A = make_algebra([2], [1.0])
    Q = {"C": scalar_subalgebra(A), "diag": diagonal_subalgebra(A), "N": full_subalgebra(A)}[Qname]
    bc = basic_construction(Q)
    assert bc.lifted_trace(np.eye(A.dim)).real == pytest.approx(expected, abs=1e-9)
    assert bc.contains(Q.projection)


def test_dimq_of_a_column_module():
    A = make_algebra([2], [1.0])
    Q = scalar_subalgebra(A)
    e12 = A.element([np.array([[0, 1], [0, 0]])])
    v = e12.vec() / np.linalg.norm(e12.vec())
    assert dimQ(Q, v) == pytest.approx(1.0, abs=1e-9)
    D = diagonal_subalgebra(A)
    assert dimQ(D, v) == pytest.approx(0.5, abs=1e-9)
    # e_11 and e_12 span a row: right-invariant under the diagonal, Q-dim 1
    row = np.stack([A.element([np.diag([1.0, 0.0])]).vec(), e12.vec()], axis=1) / np.sqrt(0.5)
    assert dimQ(D, row) == pytest.approx(1.0, abs=1e-9)


def test_dimq_rejects_non_invariant_subspace():
    A = make_algebra([2], [1.0])
    D = diagonal_subalgebra(A)
    v = (A.one() + A.element([np.array([[0, 1], [0, 0]])])).vec()
    with pytest.raises(NotAModule):
        dimQ(D, v / np.linalg.norm(v))
