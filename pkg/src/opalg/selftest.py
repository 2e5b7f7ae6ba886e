"""Quick invariant sweep over the built-in fixtures, used by ``opalg selftest``."""

from __future__ import annotations

import numpy as np

from .dynamics import is_compact_extension, test_weak_mixing, with_subalgebra
from .fixtures import all_fixtures, invariant_subalgebras
from .fusion import commutative_fiber_oracle
from .hkz import Tower, seminorm
from .joinings import joining_problem, rel_indep_joining, product_ap_check
from .subalgebra import expectation_residuals

SEED = 1234
SAMPLES = 20


def run_selftest() -> tuple[dict, dict]:
    rng = np.random.default_rng(SEED)
    results: dict = {}
    asserts: dict = {}
    for name, S in all_fixtures().items():
        A = S.algebra
        tol = A.tol
        row: dict = {}
        for qname, Q in invariant_subalgebras(S).items():
            SQ = with_subalgebra(S, Q)
            worst = 0.0
            for _ in range(SAMPLES):
                x = A.random_element(rng)
                qa, qb = (Q.from_coords(rng.standard_normal(Q.dim)) for _ in range(2))
                worst = max(worst, *expectation_residuals(Q, x, qa, qb).values())
            rep = is_compact_extension(SQ)
            wm, _ = test_weak_mixing(SQ)
            row[qname] = {"expectation_residual": worst, "ap_dim": rep.ap_dim, "weakly_mixing": wm}
            asserts[f"{name}/{qname}/expectation"] = worst <= 1e-9
            asserts[f"{name}/{qname}/ap_full"] = rep.ap_dim == A.dim
            asserts[f"{name}/{qname}/wm"] = wm == (Q.dim == A.dim)
        rel = rel_indep_joining(joining_problem(S, S))
        row["rel_indep_residual"] = rel.residual()
        asserts[f"{name}/rel_indep"] = rel.residual() <= 1e-9
        if S.ergodic and S.group.is_abelian:
            T = Tower(S)
            one = seminorm(T, A.one(), 2)
            row["seminorm_one"] = one
            asserts[f"{name}/seminorm_one"] = abs(one - 1) <= tol.report
        results[name] = row
    orc = commutative_fiber_oracle(4, [0.25] * 4, [0, 0, 1, 1])
    results["fiber_oracle_dim"] = orc.fusion_dim
    asserts["fiber_oracle"] = orc.ok and orc.fusion_dim == 8
    fx = all_fixtures()
    asserts["product_SYS-C"] = bool(product_ap_check(fx["SYS-C"], fx["SYS-C"])["passed"])
    return results, asserts
