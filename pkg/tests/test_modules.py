import numpy as np
import pytest

from opalg.algebra import make_algebra, trace
from opalg.errors import NotAModule
from opalg.fixtures import diagonal_subalgebra, sys_b
from opalg.modules import module_from_generators, normalize_conditional, pimsner_popa_basis, pp_expand
from opalg.subalgebra import q_inner, scalar_subalgebra


def _is_projection(p, tol=1e-9):
    return (p @ p).close_to(p, tol) and p.close_to(p.adj(), tol)


def test_pp_basis_of_whole_space_over_scalars_is_orthonormal():
    A = make_algebra([2], [1.0])
    Q = scalar_subalgebra(A)
    mod = pimsner_popa_basis(Q, np.eye(A.dim, dtype=complex))
    assert len(mod.pp_basis) == 4
    assert mod.q_dim() == pytest.approx(4.0)


def test_pp_basis_over_diagonal_reconstructs_every_vector(rng):
    A = make_algebra([2], [1.0])
    Q = diagonal_subalgebra(A)
    mod = pimsner_popa_basis(Q, np.eye(A.dim, dtype=complex))
    for i, e in enumerate(mod.pp_basis):
        for j, f in enumerate(mod.pp_basis):
            g = q_inner(Q, e, f)
            assert g.close_to(mod.projections[i] if i == j else A.zero(), 1e-9)
    assert mod.q_dim() == pytest.approx(2.0)
    for _ in range(10):
        x = A.random_element(rng)
        assert pp_expand(Q, mod.pp_basis, x).close_to(x, 1e-9)


def test_normalize_conditional_returns_a_projection(rng):
    A = make_algebra([2, 1], [0.5, 0.5])
    Q = diagonal_subalgebra(A)
    x = A.random_element(rng)
    eta, p = normalize_conditional(Q, x, 1e-9)
    assert _is_projection(p)
    assert q_inner(Q, eta, eta).close_to(p, 1e-9)


def test_module_generated_by_a_vector_is_right_invariant(rng):
    A = make_algebra([2], [1.0])
    Q = diagonal_subalgebra(A)
    e11 = A.element([np.diag([1.0, 0.0])])
    mod = module_from_generators(Q, [e11])
    assert mod.dim == 1
    assert mod.q_dim() == pytest.approx(trace(A, e11).real)


def test_invariant_module_closes_under_the_action():
    S = sys_b()
    A = S.algebra
    e11 = A.element([np.diag([1.0, 0.0])])
    # the shift swaps e_11 and e_22; the clock fixes both
    assert module_from_generators(S.Q, [e11], S).dim == 2
    e12 = A.element([np.array([[0, 1.0], [0, 0]])])
    assert module_from_generators(S.Q, [e11, e12], S).dim == A.dim


def test_pp_basis_rejects_non_module():
    A = make_algebra([2], [1.0])
    Q = diagonal_subalgebra(A)
    v = (A.one() + A.element([np.array([[0, 1], [0, 0]])])).vec()
    with pytest.raises(NotAModule):
        pimsner_popa_basis(Q, v / np.linalg.norm(v))
