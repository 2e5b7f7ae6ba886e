import numpy as np
import pytest

from opalg.algebra import trace
from opalg.dynamics import with_subalgebra
from opalg.errors import NotCentral
from opalg.fixtures import diagonal_subalgebra, sys_a, sys_b, sys_c, sys_d
from opalg.joinings import (
    Infeasible,
    cp_from_joining,
    disjointness_probe,
    joining_feasible,
    joining_gns_check,
    joining_problem,
    product_system,
    rel_indep_joining,
    rel_product_central,
    product_ap_check,
)
from opalg.subalgebra import cond_expect


def test_relatively_independent_joining_on_every_fixture(fixture_qs):
    for name, qname, S, Q in fixture_qs:
        SQ = with_subalgebra(S, Q)
        J = joining_problem(SQ, SQ)
        st = rel_indep_joining(J)
        assert st.residual() <= 1e-9, (name, qname)
        assert st.min_eig() >= -1e-9
        chk = joining_gns_check(J, st)
        assert chk["gns_rank"] == chk["fusion_dim"]
        assert chk["max_inner_diff"] <= 1e-9


def test_rel_indep_value_factorizes_through_q(rng):
    S = with_subalgebra(sys_b(), diagonal_subalgebra(sys_b().algebra))
    J = joining_problem(S, S)
    st = rel_indep_joining(J)
    A = S.algebra
    x, y = A.random_element(rng), A.random_element(rng)
    assert st.phi(x, y) == pytest.approx(trace(A, cond_expect(S.Q, x) @ cond_expect(S.Q, y)), abs=1e-10)


def test_cp_map_of_rel_indep_is_the_expectation(fixture_qs, rng):
    for _, _, S, Q in fixture_qs:
        SQ = with_subalgebra(S, Q)
        J = joining_problem(SQ, SQ)
        cp = cp_from_joining(J, rel_indep_joining(J))
        for _ in range(5):
            x = S.algebra.random_element(rng)
            assert cp(x).close_to(cond_expect(Q, x), 1e-7)


def test_feasibility_with_extra_constraints():
    S = sys_a()
    A = S.algebra
    J = joining_problem(S, S)
    f = A.scalars([1, -1])
    assert not isinstance(joining_feasible(J, [(f, f, 1.0)]), Infeasible)
    # the swap forbids concentrating the self-joining on a single point
    delta = A.scalars([1, 0])
    res = joining_feasible(J, [(delta, delta, 1.0)])
    assert isinstance(res, Infeasible) and not res
    # phi(1/2 (x) 1) is forced to be 1/2
    res = joining_feasible(J, [(0.5 * A.one(), A.one(), 1.0)])
    assert isinstance(res, Infeasible) and "inconsistent" in res.reason


def test_disjointness_probe_on_the_swap():
    S = sys_a()
    J = joining_problem(S, S)
    f = S.algebra.scalars([1, -1])
    res = disjointness_probe(J, [(f, f)])
    assert res.max_value >= 1 - 1e-6
    assert res.rel_indep_value == pytest.approx(0.0, abs=1e-12)
    assert res.non_disjoint(1e-7)


def test_disjointness_probe_of_unit_is_one():
    S = sys_b()
    J = joining_problem(S, S)
    res = disjointness_probe(J, [(S.algebra.one(), S.algebra.one())])
    assert res.max_value == pytest.approx(1.0, abs=1e-9)


def test_relative_product_over_fibers():
    S = sys_c()
    rp = rel_product_central(S.algebra, S.Q)
    assert list(rp.algebra.blocks) == [1] * 8
    assert np.allclose(rp.algebra.weights, 1 / 8)
    P = product_system(S, S, rp)
    assert P.algebra.dim == 8


def test_relative_product_needs_a_central_q():
    A = sys_b().algebra
    with pytest.raises(NotCentral):
        rel_product_central(A, diagonal_subalgebra(A))


@pytest.mark.parametrize("make", [sys_a, sys_c, sys_d])
def test_almost_periodic_part_of_products(make):
    S = make()
    assert product_ap_check(S, S)["passed"]
