import numpy as np
import pytest

from opalg.algebra import make_algebra
from opalg.errors import IdentificationError, MassError
from opalg.fixtures import diagonal_subalgebra, sys_c
from opalg.fusion import (
    build_fusion,
    chs_truncate,
    commutative_fiber_oracle,
    cond_convolve,
    convolution_operator,
    corner_project,
    embed,
    flip_adjoint,
    fusion_from_operator,
    module_actions,
)
from opalg.subalgebra import cond_expect, full_subalgebra, q_inner, scalar_subalgebra


def _random_vector(F, rng):
    return F.vector(rng.standard_normal(F.dim) + 1j * rng.standard_normal(F.dim))


@pytest.mark.parametrize("Qname,dim", [("C", 16), ("diag", 8), ("N", 4)])
def test_fusion_dimension_over_m2(Qname, dim):
    A = make_algebra([2], [1.0])
    Q = {"C": scalar_subalgebra(A), "diag": diagonal_subalgebra(A), "N": full_subalgebra(A)}[Qname]
    assert build_fusion(A, Q).dim == dim


def test_inner_product_of_simple_tensors(rng):
    A = make_algebra([2, 1], [0.5, 0.5])
    Q = diagonal_subalgebra(A)
    F = build_fusion(A, Q)
    for _ in range(10):
        x1, y1, x2, y2 = (A.random_element(rng) for _ in range(4))
        lhs = F.inner(embed(F, x1, y1), embed(F, x2, y2))
        rhs = np.vdot(y1.vec(), (q_inner(Q, x1, x2) @ y2).vec())
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_balanced_over_q(rng):
    A = make_algebra([2], [1.0])
    Q = diagonal_subalgebra(A)
    F = build_fusion(A, Q)
    q = Q.from_coords(rng.standard_normal(Q.dim))
    x, y = A.random_element(rng), A.random_element(rng)
    assert np.allclose(embed(F, x @ q, y).coords, embed(F, x, q @ y).coords)


def test_bimodule_actions(rng):
    A = make_algebra([2], [1.0])
    F = build_fusion(A, diagonal_subalgebra(A))
    a, b, x, y = (A.random_element(rng) for _ in range(4))
    v = embed(F, x, y)
    assert np.allclose(module_actions(F, "left", a, v).coords, embed(F, a @ x, y).coords)
    assert np.allclose(module_actions(F, "right", b, v).coords, embed(F, x, y @ b).coords)


def test_conditional_convolution_of_simple_tensor(rng):
    A = make_algebra([2, 1], [0.4, 0.6])
    Q = diagonal_subalgebra(A)
    F = build_fusion(A, Q)
    a, b, f = (A.random_element(rng) for _ in range(3))
    K = embed(F, a, b)
    assert cond_convolve(F, K, f).close_to(a @ cond_expect(Q, b @ f), 1e-10)
    assert np.allclose(convolution_operator(F, K) @ f.vec(), (a @ cond_expect(Q, b @ f)).vec())
    assert corner_project(F, embed(F, a, A.one())).close_to(a, 1e-10)


def test_flip_adjoint_gives_the_adjoint_operator(rng):
    A = make_algebra([2], [1.0])
    F = build_fusion(A, diagonal_subalgebra(A))
    K = _random_vector(F, rng)
    T = convolution_operator(F, K)
    assert np.allclose(convolution_operator(F, flip_adjoint(F, K)), T.conj().T)
    assert np.allclose(flip_adjoint(F, flip_adjoint(F, K)).coords, K.coords)


def test_fusion_from_operator_inverts_convolution(rng):
    A = make_algebra([1, 2], [0.3, 0.7])
    F = build_fusion(A, diagonal_subalgebra(A))
    K = _random_vector(F, rng)
    back = fusion_from_operator(F, convolution_operator(F, K))
    assert np.allclose(back.coords, K.coords)


def test_truncating_the_unit_kernel_gives_the_jones_projection():
    A = make_algebra([2], [1.0])
    Q = diagonal_subalgebra(A)
    F = build_fusion(A, Q)
    p, mod = chs_truncate(F, embed(F, A.one(), A.one()), 0.5)
    assert np.allclose(p, Q.projection)
    assert mod.q_dim() == pytest.approx(1.0)


def test_commutative_fiber_oracle_on_two_fibers():
    orc = commutative_fiber_oracle(4, [0.25] * 4, [0, 0, 1, 1])
    assert orc.fusion_dim == 8 and orc.ok
    assert sum(orc.masses) == pytest.approx(1.0)


def test_fiber_oracle_with_uneven_masses():
    orc = commutative_fiber_oracle(3, [0.5, 0.2, 0.3], [0, 1, 1])
    assert orc.fusion_dim == 5 and orc.ok


def test_fiber_oracle_rejects_zero_mass():
    with pytest.raises(MassError):
        commutative_fiber_oracle(2, [1.0, 0.0], [0, 0])


def test_identification_must_be_a_star_isomorphism():
    A = make_algebra([1, 1], [0.5, 0.5])
    Q = full_subalgebra(A)
    with pytest.raises(IdentificationError):
        build_fusion(A, Q, A, Q, 2 * np.eye(Q.dim))


def test_sys_c_fusion_over_its_fibers():
    S = sys_c()
    assert build_fusion(S.algebra, S.Q).dim == 8


def test_inner_product_is_conjugate_symmetric(rng):
    A = make_algebra([2], [1.0])
    F = build_fusion(A, diagonal_subalgebra(A))
    u = embed(F, A.random_element(rng), A.random_element(rng))
    v = embed(F, A.random_element(rng), A.random_element(rng))
    assert abs(F.inner(u, v) - np.conj(F.inner(v, u))) < 1e-12


def test_truncation_ranges_grow_as_eps_shrinks(rng):
    A = make_algebra([2], [1.0])
    F = build_fusion(A, diagonal_subalgebra(A))
    K = _random_vector(F, rng)
    ranks = [int(round(np.trace(chs_truncate(F, K, eps)[0]).real)) for eps in (1.0, 0.3, 0.1, 1e-3, 1e-9)]
    assert ranks == sorted(ranks)
    T = convolution_operator(F, K)
    assert ranks[-1] == np.linalg.matrix_rank(T.conj().T @ T, tol=1e-9)
