import numpy as np
import pytest

from opalg.algebra import make_algebra
from opalg.dynamics import (
    GroupSpec,
    ap_decompose,
    cap_witness,
    decomposition_modules,
    fixed_algebra,
    group_elements,
    invariant_module_truncate,
    is_compact_extension,
    make_system,
    popa_probe,
    test_weak_mixing as weak_mixing,
    with_subalgebra,
)
from opalg.errors import NotAModule, NotAutomorphism, NotTracePreserving, RelationViolated, SubalgebraNotInvariant, ValidationError
from opalg.fixtures import diagonal_subalgebra, rotation, sys_a, sys_b, sys_c, sys_d
from opalg.modules import module_from_generators
from opalg.subalgebra import generate_subalgebra

SWAP = np.array([[0, 1], [1, 0]], dtype=complex)
Z2 = GroupSpec("finite_abelian", orders=(2,))


def test_swap_needs_equal_weights():
    A = make_algebra([1, 1], [0.3, 0.7])
    # the swap written in L^2 coordinates: multiplicative and unital, but moves the trace
    s = A.scales
    U = (SWAP * s[:, None]) / s[None, :]
    with pytest.raises(NotTracePreserving):
        make_system(A, Z2, [("matrix", U)])


def test_non_unitary_generator_is_rejected():
    A = make_algebra([2], [1.0])
    with pytest.raises(NotAutomorphism):
        make_system(A, Z2, [("unitary", [np.array([[1, 1], [0, 1]])])])


def test_non_multiplicative_matrix_is_rejected():
    A = make_algebra([1, 1], [0.5, 0.5])
    with pytest.raises(NotAutomorphism):
        make_system(A, Z2, [("matrix", np.array([[0.5, 0.5], [0.5, 0.5]]))])


def test_order_relation_is_checked():
    A = make_algebra([1, 1, 1], [1 / 3] * 3)
    U = np.roll(np.eye(3), 1, axis=0)
    with pytest.raises(RelationViolated):
        make_system(A, Z2, [("matrix", U)])


def test_presented_relations_are_checked():
    A = make_algebra([2], [1.0])
    z = [np.diag([1, -1])]
    x = [SWAP]
    G = GroupSpec("presented", labels=("a", "b"), relations=("a^2", "b^2", "a b a^-1 b^-1"))
    make_system(A, G, [("unitary", z), ("unitary", x)])
    G3 = GroupSpec("presented", labels=("a", "b"), relations=("a b",))
    with pytest.raises(RelationViolated):
        make_system(A, G3, [("unitary", z), ("unitary", x)])


def test_unknown_group_kind():
    with pytest.raises(ValidationError):
        GroupSpec("cyclic", orders=(2,))


def test_q_must_be_invariant():
    S = sys_c()
    with pytest.raises(SubalgebraNotInvariant):
        with_subalgebra(S, generate_subalgebra(S.algebra, [S.algebra.scalars([1, 0, 0, 0])]))


def test_ergodicity_flags():
    assert sys_a().ergodic and sys_b().ergodic and sys_c().ergodic
    assert not sys_d().ergodic
    assert fixed_algebra(sys_d()).dim == 4


def test_group_element_enumeration():
    assert [n for n, _ in group_elements(sys_b())] == ["(0,0)", "(0,1)", "(1,0)", "(1,1)"]
    A = make_algebra([1, 1], [0.5, 0.5])
    S = make_system(A, GroupSpec("free_abelian", rank=1), [("matrix", SWAP)])
    assert len(group_elements(S, wordlen=2)) == 5


def test_every_fixture_is_compact_over_every_q(fixture_qs):
    for name, qname, S, Q in fixture_qs:
        rep = is_compact_extension(with_subalgebra(S, Q))
        assert rep.compact, (name, qname)
        assert sum(rep.module_ranks) == S.algebra.dim
        assert rep.qdim_total == pytest.approx(rep.lifted_total, abs=1e-7)


def test_sys_a_splits_into_two_eigenlines():
    mods = decomposition_modules(sys_a())
    assert sorted(m.dim for m in mods) == [1, 1]


def test_weak_mixing_only_when_q_is_everything(fixture_qs):
    for name, qname, S, Q in fixture_qs:
        wm, witness = weak_mixing(with_subalgebra(S, Q))
        if Q.dim == S.algebra.dim:
            assert wm and witness is None
        else:
            assert not wm and witness.norm() == pytest.approx(1.0), (name, qname)


def test_popa_probe_on_the_swap():
    S = sys_a()
    f = S.algebra.scalars([1, -1])
    val, arg = popa_probe(S, [f])
    # |E(f sigma_g(f))| is 1 at both group elements
    assert val == pytest.approx(1.0)
    assert popa_probe(S, []) == (0.0, None)


def test_popa_probe_needs_centered_inputs():
    S = sys_a()
    with pytest.raises(ValidationError):
        popa_probe(S, [S.algebra.one()])


def test_popa_probe_on_a_rotation_finds_decay():
    S = rotation(4)
    f = S.algebra.scalars([1, 0, -1, 0])
    val, arg = popa_probe(S, [f])
    assert val == pytest.approx(0.0, abs=1e-12)
    assert arg == "(1)"


def test_invariant_module_truncation_has_zero_gap(rng):
    S = sys_b()
    A = S.algebra
    D = diagonal_subalgebra(A)
    SD = with_subalgebra(S, D)
    mod = module_from_generators(D, [A.random_element(rng)], SD)
    v1, gap = invariant_module_truncate(SD, mod.basis, 1e-6)
    assert abs(gap) <= 1e-9
    assert v1.dim == mod.dim
    xi = A.random_element(rng)
    assert cap_witness(SD, xi, v1) <= 1e-9 or v1.dim < A.dim


def test_truncation_rejects_non_invariant_subspace():
    S = sys_a()
    v = np.array([1.0, 0.0], dtype=complex)
    with pytest.raises(NotAModule):
        invariant_module_truncate(S, v[:, None], 1e-6)


def test_ap_part_of_rotation_is_everything():
    dec = ap_decompose(rotation(5))
    assert dec.ap_dim == 5 and dec.wm_dim == 0


def test_orbit_averages_converge_to_the_invariant_projection(rng):
    S = rotation(5)
    U = S.koopman[0]
    P = np.ones((5, 5)) / 5
    for _ in range(100):
        v = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        avg = sum(np.linalg.matrix_power(U, j) @ v for j in range(5)) / 5
        assert np.linalg.norm(avg - P @ v) < 1e-12
