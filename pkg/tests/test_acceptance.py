"""The eleven acceptance criteria, one test each.

Every test records its verdict; the session prints one PASS/FAIL line per
criterion at the end (see conftest.py).  Run alone with

    pytest tests/test_acceptance.py -v
"""

import itertools
import subprocess
import sys
from pathlib import Path

import numpy as np

from conftest import ACCEPTANCE
from opalg.algebra import trace
from opalg.cli import COMMANDS
from opalg.dynamics import (
    ap_decompose,
    invariant_module_truncate,
    is_compact_extension,
    popa_probe,
    test_weak_mixing as weak_mixing,
    with_subalgebra,
)
from opalg.fixtures import sys_a, sys_c
from opalg.fusion import build_fusion, commutative_fiber_oracle, convolution_operator, embed
from opalg.hkz import Tower, gowers_norm, seminorm, tower_report
from opalg.joinings import cp_from_joining, disjointness_probe, joining_gns_check, joining_problem, rel_indep_joining, product_ap_check
from opalg.modules import module_from_generators, pimsner_popa_basis, pp_expand
from opalg.subalgebra import basic_construction, cond_expect, expectation_residuals, full_subalgebra, scalar_subalgebra

GOLDEN = Path(__file__).parent / "golden"


def record(n: int, name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[n] = (name, bool(ok))
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
    assert ok, detail


def _random_q(Q, rng):
    return Q.from_coords(rng.standard_normal(Q.dim) + 1j * rng.standard_normal(Q.dim))


def test_c01_conditional_expectation_axioms(fixture_qs):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _, _, S, Q in fixture_qs:
        A = S.algebra
        for _ in range(200):
            x = A.random_element(rng)
            worst = max(worst, *expectation_residuals(Q, x, _random_q(Q, rng), _random_q(Q, rng)).values())
    record(1, "conditional expectation axioms", worst <= 1e-9, f"max residual {worst:.2e}")


def test_c02_fusion_matches_fiber_product(fixture_qs):
    S = sys_c()
    A = S.algebra
    F = build_fusion(A, S.Q)
    # fibers of the shipped Q read off from its indicator generator
    fiber = [0, 0, 1, 1]
    mu = np.asarray(A.weights)
    nu = {y: mu[[i for i in range(4) if fiber[i] == y]].sum() for y in (0, 1)}
    units = A.matrix_units()
    worst = 0.0
    pairs = list(itertools.product(range(4), repeat=2))
    vecs = {p: embed(F, units[p[0]], units[p[1]]) for p in pairs}
    for p in pairs:
        for r in pairs:
            exact = mu[p[0]] * mu[p[1]] / nu[fiber[p[0]]] if p == r and fiber[p[0]] == fiber[p[1]] else 0.0
            worst = max(worst, abs(F.inner(vecs[p], vecs[r]) - exact))
    orc = commutative_fiber_oracle(4, list(A.weights), fiber)
    gns_ok = True
    for _, _, T, Q in fixture_qs:
        TQ = with_subalgebra(T, Q)
        chk = joining_gns_check(joining_problem(TQ, TQ))
        gns_ok &= chk["gns_rank"] == chk["fusion_dim"] and chk["max_inner_diff"] <= 1e-9
    ok = F.dim == 8 and orc.fusion_dim == 8 and orc.ok and worst <= 1e-9 and gns_ok
    record(2, "fusion oracle and joining GNS match", ok, f"dim {F.dim}, inner diff {worst:.2e}")


def test_c03_almost_periodic_decomposition(fixture_qs):
    ok, worst = True, 0.0
    for name, qname, S, Q in fixture_qs:
        SQ = with_subalgebra(S, Q)
        rep = is_compact_extension(SQ)
        bc = basic_construction(Q)
        ok &= rep.ap_dim == S.algebra.dim and sum(rep.module_ranks) == S.algebra.dim
        worst = max(worst, abs(rep.qdim_total - rep.lifted_total))
        for m in rep.modules:
            worst = max(worst, abs(m.q_dim() - bc.lifted_trace(m.projection).real))
    record(3, "AP part is everything; module witnesses agree", ok and worst <= 1e-7, f"dim_Q gap {worst:.2e}")


def test_c04_conditional_hs_trace_identity(fixture_qs):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _, _, S, Q in fixture_qs:
        A = S.algebra
        F = build_fusion(A, Q)
        pp = pimsner_popa_basis(Q, np.eye(A.dim, dtype=complex)).pp_basis
        for _ in range(50):
            c = rng.standard_normal(F.dim) + 1j * rng.standard_normal(F.dim)
            K = F.vector(c / np.linalg.norm(c))
            T = convolution_operator(F, K)
            lhs = sum(float(np.linalg.norm(T @ e.vec())) ** 2 for e in pp)
            worst = max(worst, abs(lhs - K.norm() ** 2))
    record(4, "conditional Hilbert-Schmidt trace identity", worst <= 1e-7, f"max gap {worst:.2e}")


def _random_invariant_module(SQ, rng):
    """Module generated by a joint eigenvector of a generic combination of the Koopman unitaries."""
    A = SQ.algebra
    H = sum(rng.standard_normal() * (U + U.conj().T) for U in SQ.koopman) if SQ.koopman else np.zeros((A.dim, A.dim))
    _, v = np.linalg.eigh(H)
    cols = v[:, rng.choice(A.dim, size=rng.integers(1, A.dim + 1), replace=False)]
    gens = [A.from_vec(cols @ (rng.standard_normal(cols.shape[1]) + 1j * rng.standard_normal(cols.shape[1])))]
    return module_from_generators(SQ.Q, gens, SQ)


def test_c05_invariant_module_truncation(fixture_qs):
    rng = np.random.default_rng(5)
    worst_gap, ok = 0.0, True
    by_fixture: dict[str, list] = {}
    for name, qname, S, Q in fixture_qs:
        by_fixture.setdefault(name, []).append(with_subalgebra(S, Q))
    for name, systems in by_fixture.items():
        for i in range(20):
            SQ = systems[i % len(systems)]
            mod = _random_invariant_module(SQ, rng)
            v1, gap = invariant_module_truncate(SQ, mod.basis, 1e-6)
            worst_gap = max(worst_gap, abs(gap))
            ok &= v1.dim == mod.dim and 0 < len(v1.pp_basis) <= SQ.algebra.dim
            for c in v1.basis.T[:2]:
                x = SQ.algebra.from_vec(c)
                ok &= pp_expand(SQ.Q, v1.pp_basis, x).close_to(x, 1e-9)
    record(5, "invariant module truncation has zero gap", ok and worst_gap <= 1e-9, f"max gap {worst_gap:.2e}")


def _brute_popa(S, F):
    """min over all group elements of max ||E_Q(f sigma(g))||, group enumerated from scratch."""
    A, d = S.algebra, S.algebra.dim
    best = np.inf
    for exps in itertools.product(*[range(o) for o in S.group.orders]):
        U = np.eye(d, dtype=complex)
        for g, e in enumerate(exps):
            for _ in range(e):
                U = S.koopman[g] @ U
        val = max(float(np.linalg.norm(cond_expect(S.Q, f @ A.from_vec(U @ g.vec())).vec())) for f in F for g in F)
        best = min(best, val)
    return best


def test_c06_weak_mixing(fixtures):
    rng = np.random.default_rng(6)
    ok = True
    worst = 0.0
    for name, S in fixtures.items():
        A = S.algebra
        SC = with_subalgebra(S, scalar_subalgebra(A))
        wm, witness = weak_mixing(SC)
        ok &= (not wm) and witness is not None and abs(witness.norm() - 1) <= 1e-9
        wmN, witN = weak_mixing(with_subalgebra(S, full_subalgebra(A)))
        ok &= wmN and witN is None
        for _ in range(5):
            F = []
            for _ in range(2):
                x = A.random_element(rng)
                F.append(x - A.one() * trace(A, x))
            val, _ = popa_probe(SC, F)
            worst = max(worst, abs(val - _brute_popa(SC, F)))
    val, _ = popa_probe(sys_a(), [sys_a().algebra.scalars([1, -1])])
    ok &= abs(val - 1.0) <= 1e-12
    record(6, "weak mixing test and Popa probe", ok and worst <= 1e-12, f"probe gap {worst:.2e}")


def test_c07_joinings(fixture_qs):
    worst_res, worst_cp = 0.0, 0.0
    for _, _, S, Q in fixture_qs:
        SQ = with_subalgebra(S, Q)
        J = joining_problem(SQ, SQ)
        st = rel_indep_joining(J)
        worst_res = max(worst_res, st.residual(), max(0.0, -st.min_eig()))
        cp = cp_from_joining(J, st)
        for x in S.algebra.orthonormal_basis():
            worst_cp = max(worst_cp, float(np.linalg.norm((cp(x) - cond_expect(Q, x)).vec())))
    S = sys_a()
    f = S.algebra.scalars([1, -1])
    probe = disjointness_probe(joining_problem(S, S), [(f, f)])
    ok_probe = probe.max_value >= 1 - 1e-6 and abs(probe.rel_indep_value) <= 1e-12
    ok = worst_res <= 1e-9 and worst_cp <= 1e-7 and ok_probe
    record(7, "joinings: feasibility, probe, CP map", ok, f"probe {probe.max_value:.10f} vs {probe.rel_indep_value:.1e}")


def test_c08_products_of_compact_parts():
    c = product_ap_check(sys_c(), sys_c())
    a = product_ap_check(sys_a(), sys_a())
    record(8, "AP part of relative products", c["passed"] and a["passed"], f"ranks {c['ap_product_rank']}, {a['ap_product_rank']}")


def test_c09_seminorms(fixtures, rotations):
    ok = True
    notes = []
    for name, S in fixtures.items():
        if not S.ergodic:
            continue
        T = Tower(S)
        for k in (1, 2):
            ok &= abs(seminorm(T, S.algebra.one(), k) - 1.0) <= 1e-12
    rng = np.random.default_rng(9)
    worst_g = 0.0
    for n, S in rotations.items():
        T = Tower(S)
        for _ in range(3):
            f = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            for k in (1, 2, 3):
                worst_g = max(worst_g, abs(seminorm(T, S.algebra.scalars(f), k) - gowers_norm(f, k)))
    notes.append(f"gowers {worst_g:.1e}")
    ok &= worst_g <= 1e-8
    slack = 0.0
    for S in (fixtures["SYS-B"], rotations[4]):
        T = Tower(S)
        A = S.algebra
        for _ in range(100):
            x, y = A.random_element(rng), A.random_element(rng)
            c = complex(rng.standard_normal(), rng.standard_normal())
            for k in (1, 2):
                nx, ny = seminorm(T, x, k), seminorm(T, y, k)
                slack = max(slack, abs(seminorm(T, c * x, k) - abs(c) * nx))
                slack = max(slack, seminorm(T, x + y, k) - nx - ny)
            slack = max(slack, seminorm(T, x, 1) - seminorm(T, x, 2))
            tup = [A.random_element(rng) for _ in range(4)]
            bound = np.prod([seminorm(T, t, 2) for t in tup])
            slack = max(slack, abs(T.state(2, tup)) - bound)
    notes.append(f"axioms slack {slack:.1e}")
    ok &= slack <= 1e-7
    T = Tower(sys_a())
    f = sys_a().algebra.scalars([1, -1])
    ok &= abs(seminorm(T, f, 1)) <= 1e-8 and abs(seminorm(T, f, 2) - 1) <= 1e-8
    record(9, "Gowers-Host-Kra seminorms", ok, ", ".join(notes))


def test_c10_tower(fixtures):
    ok = True
    dims = []
    for name, kmax in (("SYS-A", 3), ("SYS-B", 2), ("SYS-C", 2)):
        S = fixtures[name]
        rep = tower_report(S, kmax, [S.algebra.one()])
        z = rep["z"]
        ok &= z[0]["dim"] == 1 and z[1]["dim"] == S.algebra.dim
        ok &= rep["z1_equals_max_compact"] and rep["z_increasing"]
        ok &= all(r["normchar"]["passed"] for r in z)
        ok &= all(r["compact_over_previous"] in (None, True) for r in z)
        ok &= all(l["zerocoord_residual"] <= 1e-7 for l in rep["levels"])
        ok &= ap_decompose(S).ap_dim == z[1]["dim"]
        dims.append(f"{name}:{[r['dim'] for r in z]}")
    record(10, "HKZ tower", ok, " ".join(dims))


def test_c11_cli_determinism_and_goldens():
    ok = True
    for cmd in COMMANDS:
        argv = [sys.executable, "-m", "opalg.cli", cmd]
        if cmd != "selftest":
            argv += ["--system", "SYS-A"]
        runs = [subprocess.run(argv, capture_output=True, check=False) for _ in range(2)]
        ok &= runs[0].returncode == 0 and runs[0].stdout == runs[1].stdout
    for argv, golden in (
        (["hkz-tower", "--system", "SYS-A", "--kmax", "3"], "sys_a_hkz_tower_kmax3.json"),
        (["ap-decompose", "--system", "SYS-B"], "sys_b_ap_decompose.json"),
    ):
        out = subprocess.run([sys.executable, "-m", "opalg.cli", *argv], capture_output=True, check=False).stdout
        ok &= out == (GOLDEN / golden).read_bytes()
    record(11, "CLI determinism and golden files", ok)
