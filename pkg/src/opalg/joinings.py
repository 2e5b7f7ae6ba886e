"""Joinings of two systems over a common subalgebra.

A joining is a state on M (x) N^op.  We realize N^op by transposition, so the
ambient algebra is the direct sum over block pairs (i, j) of M_{m_i n_j}, and
a state is a block density rho with

    phi(e_pq (x) f_rs^op) = rho_ij[(q, r), (p, s)]

for matrix units e_pq of block i of M and f_rs of block j of N.  Hermitian
densities are parametrized by real orthonormal coordinates t, and every
joining condition is an affine equation in t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algebra import Algebra, Element, WedderburnMap, _matrix_commutant, eigh_sorted, orth, trace, wedderburn
from .dynamics import DynamicalSystem, ap_decompose, make_system
from .errors import CPViolation, NotCentral, NumericalFailure, ValidationError
from .fusion import FusionSpace, build_fusion, embed, left_operator, right_operator
from .subalgebra import Subalgebra, cond_expect, subalgebra_from_basis

__all__ = [
    "JoiningProblem",
    "JoiningState",
    "Infeasible",
    "joining_problem",
    "rel_indep_joining",
    "joining_feasible",
    "disjointness_probe",
    "DisjointnessResult",
    "cp_from_joining",
    "CPMap",
    "rel_product_central",
    "RelativeProduct",
    "product_ap_check",
    "joining_gns_check",
]

MAX_AMBIENT = 400


def _raw(x: Element) -> np.ndarray:
    """Matrix-unit coefficients of x (block by block, row-major)."""
    return np.concatenate([b.reshape(-1) for b in x.blocks])


def _raw_koopman(A: Algebra, U: np.ndarray) -> np.ndarray:
    s = A.scales
    return (U * s[None, :]) / s[:, None]


class _HermParam:
    """Orthonormal real coordinates for block-diagonal Hermitian matrices."""

    def __init__(self, sizes: Sequence[int]):
        self.sizes = list(sizes)
        self.offsets = []
        acc = 0
        for D in self.sizes:
            self.offsets.append(acc)
            acc += D * D
        self.n = acc

    def entry(self, blk: int, k: int, l: int) -> list[tuple[int, complex]]:
        """rho_blk[k, l] as a sparse combination of coordinates."""
        D, off = self.sizes[blk], self.offsets[blk]
        if k == l:
            return [(off + k, 1.0)]
        a, b = min(k, l), max(k, l)
        # coordinates: D diagonal, then upper pairs (re, im)
        pair = sum(D - 1 - t for t in range(a)) + (b - a - 1)
        re = off + D + 2 * pair
        im = re + 1
        s = 1 / np.sqrt(2)
        return [(re, s), (im, 1j * s if k < l else -1j * s)]

    def to_blocks(self, t: np.ndarray) -> list[np.ndarray]:
        out = []
        for blk, D in enumerate(self.sizes):
            off = self.offsets[blk]
            m = np.zeros((D, D), dtype=complex)
            m[np.diag_indices(D)] = t[off:off + D]
            iu = np.triu_indices(D, 1)
            pairs = t[off + D: off + D * D].reshape(-1, 2)
            m[iu] = (pairs[:, 0] + 1j * pairs[:, 1]) / np.sqrt(2)
            m[(iu[1], iu[0])] = (pairs[:, 0] - 1j * pairs[:, 1]) / np.sqrt(2)
            out.append(m)
        return out

    def from_blocks(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        t = np.zeros(self.n)
        for blk, (D, m) in enumerate(zip(self.sizes, blocks)):
            off = self.offsets[blk]
            h = 0.5 * (m + m.conj().T)
            t[off:off + D] = np.real(np.diag(h))
            iu = np.triu_indices(D, 1)
            vals = h[iu] * np.sqrt(2)
            t[off + D: off + D * D] = np.column_stack([vals.real, vals.imag]).reshape(-1)
        return t


@dataclass(frozen=True, eq=False)
class JoiningProblem:
    S1: DynamicalSystem
    S2: DynamicalSystem
    iota: np.ndarray
    param: _HermParam
    block_pairs: tuple[tuple[int, int], ...]
    vmap: np.ndarray  # complex (dM*dN, n): t -> phi on matrix-unit pairs
    A_eq: np.ndarray
    b_eq: np.ndarray
    labels: tuple[str, ...] = field(default=())

    @property
    def M(self) -> Algebra:
        return self.S1.algebra

    @property
    def N(self) -> Algebra:
        return self.S2.algebra

    def __repr__(self) -> str:
        return f"JoiningProblem(params={self.param.n}, constraints={self.A_eq.shape[0]})"

    def with_extra(self, extra: Sequence[tuple[Element, Element, complex]]) -> "JoiningProblem":
        rows, vals = [], []
        for x, y, c in extra:
            rows.append(np.kron(_raw(x), _raw(y)))
            vals.append(complex(c))
        if not rows:
            return self
        A, b = _realify(np.array(rows) @ self.vmap, np.array(vals))
        return JoiningProblem(
            self.S1, self.S2, self.iota, self.param, self.block_pairs, self.vmap,
            np.vstack([self.A_eq, A]), np.concatenate([self.b_eq, b]), self.labels + ("extra",) * len(rows),
        )

    def evaluate(self, t: np.ndarray, x: Element, y: Element) -> complex:
        v = self.vmap @ t
        return complex(np.kron(_raw(x), _raw(y)) @ v)

    def objective(self, T: Sequence[tuple[Element, Element]]) -> np.ndarray:
        """Real vector c with c . t = Re phi(sum x_i (x) y_i^op)."""
        row = sum(np.kron(_raw(x), _raw(y)) for x, y in T)
        return np.real(row @ self.vmap)


def _realify(C: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.vstack([C.real, C.imag]), np.concatenate([c.real, c.imag])


@dataclass(frozen=True, eq=False)
class JoiningState:
    problem: JoiningProblem
    t: np.ndarray

    @property
    def rho(self) -> list[np.ndarray]:
        return self.problem.param.to_blocks(self.t)

    def phi(self, x: Element, y: Element) -> complex:
        return self.problem.evaluate(self.t, x, y)

    def min_eig(self) -> float:
        return min(float(np.linalg.eigvalsh(r)[0]) for r in self.rho)

    def __repr__(self) -> str:
        return f"JoiningState(residual={self.residual():.3e}, min_eig={self.min_eig():.3e})"

    def residual(self) -> float:
        J = self.problem
        return float(np.max(np.abs(J.A_eq @ self.t - J.b_eq), initial=0.0))


@dataclass(frozen=True)
class Infeasible:
    reason: str
    iterations: int
    residual_history: tuple[float, ...]

    def __bool__(self) -> bool:
        return False


def joining_problem(S1: DynamicalSystem, S2: DynamicalSystem, iota: np.ndarray | None = None) -> JoiningProblem:
    M, N = S1.algebra, S2.algebra
    Q1, Q2 = S1.Q, S2.Q
    if Q1.dim != Q2.dim:
        raise ValidationError("the two systems must carry isomorphic subalgebras")
    iota = np.eye(Q1.dim, dtype=complex) if iota is None else np.asarray(iota, dtype=complex)
    if len(S1.koopman) != len(S2.koopman):
        raise ValidationError("joined systems must be actions of the same group")
    pairs = [(i, j) for i in range(len(M.blocks)) for j in range(len(N.blocks))]
    sizes = [M.blocks[i] * N.blocks[j] for i, j in pairs]
    if sum(sizes) > MAX_AMBIENT:
        raise ValidationError(f"ambient size {sum(sizes)} exceeds {MAX_AMBIENT}")
    param = _HermParam(sizes)
    mu, nu = M.unit_index(), N.unit_index()
    bidx = {p: k for k, p in enumerate(pairs)}
    dM, dN = M.dim, N.dim
    vmap = np.zeros((dM * dN, param.n), dtype=complex)
    for a, (i, p, q) in enumerate(mu):
        for b, (j, r, s) in enumerate(nu):
            nj = N.blocks[j]
            for idx, coef in param.entry(bidx[(i, j)], q * nj + r, p * nj + s):
                vmap[a * dN + b, idx] += coef
    rows, vals, labels = [], [], []
    one_M, one_N = _raw(M.one()), _raw(N.one())
    for a, e in enumerate(M.matrix_units()):
        rows.append(np.kron(_raw(e), one_N))
        vals.append(trace(M, e))
        labels.append("marginal_M")
    for b, f in enumerate(N.matrix_units()):
        rows.append(np.kron(one_M, _raw(f)))
        vals.append(trace(N, f))
        labels.append("marginal_N")
    for qs in Q1.basis:
        for ct in np.eye(Q1.dim):
            qt = Q1.from_coords(ct)
            rows.append(np.kron(_raw(qs), _raw(Q2.from_coords(iota @ ct))))
            vals.append(trace(M, qs @ qt))
            labels.append("diagonal_Q")
    eye = np.eye(dM * dN)
    for U1, U2 in zip(S1.koopman, S2.koopman):
        R = np.kron(_raw_koopman(M, U1), _raw_koopman(N, U2))
        for row in (R.T - eye):
            rows.append(row)
            vals.append(0.0)
            labels.append("invariance")
    A, b = _realify(np.array(rows) @ vmap, np.array(vals, dtype=complex))
    return JoiningProblem(S1, S2, iota, param, tuple(pairs), vmap, A, b, tuple(labels))


def rel_indep_joining(J: JoiningProblem) -> JoiningState:
    """phi(x (x) y^op) = tau(E_Q(x) iota^{-1}(E_Q(y)))."""
    M, N = J.M, J.N
    Q1, Q2 = J.S1.Q, J.S2.Q
    inv = np.linalg.inv(J.iota)
    eM = [cond_expect(Q1, e) for e in M.matrix_units()]
    eN = [Q1.from_coords(inv @ Q2.coords(f)) for f in N.matrix_units()]
    blocks = [np.zeros((D, D), dtype=complex) for D in J.param.sizes]
    bidx = {p: k for k, p in enumerate(J.block_pairs)}
    for (i, p, q), x in zip(M.unit_index(), eM):
        for (j, r, s), y in zip(N.unit_index(), eN):
            nj = N.blocks[j]
            blocks[bidx[(i, j)]][q * nj + r, p * nj + s] = trace(M, x @ y)
    st = JoiningState(J, J.param.from_blocks(blocks))
    tol = M.tol
    base = J.A_eq.shape[0]
    res = st.residual() if base else 0.0
    if res > tol.verify * 10 or st.min_eig() < -tol.verify:
        raise NumericalFailure(f"relatively independent joining violates constraints ({res:.2e})")
    return st


# ---------------------------------------------------------------------------
# feasibility by Dykstra's alternating projections


def _affine_projector(A: np.ndarray, b: np.ndarray, tol) -> tuple[np.ndarray, np.ndarray, float]:
    """Return (Vr, x_particular, consistency residual) for {t : A t = b}."""
    if A.shape[0] == 0:
        return np.zeros((A.shape[1], 0)), np.zeros(A.shape[1]), 0.0
    u, s, vh = np.linalg.svd(A, full_matrices=False)
    cut = max(tol.rank_rel * (s[0] if s.size else 0.0), tol.rank_abs)
    r = int(np.sum(s > cut))
    u, s, vh = u[:, :r], s[:r], vh[:r]
    xp = vh.T @ ((u.T @ b) / s)
    incons = float(np.max(np.abs(A @ xp - b), initial=0.0))
    return vh.T, xp, incons


def _real_null_space(A: np.ndarray, tol) -> np.ndarray:
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    _, s, vh = np.linalg.svd(A, full_matrices=True)
    cut = max(tol.rank_rel * (s[0] if s.size else 0.0), tol.rank_abs)
    return vh[int(np.sum(s > cut)):].T


def _psd_project(param: _HermParam, t: np.ndarray) -> np.ndarray:
    blocks = []
    for m in param.to_blocks(t):
        w, v = np.linalg.eigh(m)
        blocks.append((v * np.clip(w, 0, None)) @ v.conj().T)
    return param.from_blocks(blocks)


def joining_feasible(
    J: JoiningProblem,
    extra: Sequence[tuple[Element, Element, complex]] = (),
    max_iter: int = 100_000,
) -> JoiningState | Infeasible:
    Jx = J.with_extra(extra)
    tol = J.M.tol
    Vr, xp, incons = _affine_projector(Jx.A_eq, Jx.b_eq, tol)
    if incons > tol.verify * 100:
        return Infeasible("affine constraints are inconsistent", 0, (incons,))

    def p_aff(t: np.ndarray) -> np.ndarray:
        return t - Vr @ (Vr.T @ (t - xp))

    x = p_aff(rel_indep_joining(J).t)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    history: list[float] = []
    last_check = np.inf
    for it in range(1, max_iter + 1):
        y = _psd_project(Jx.param, x + p)
        p = x + p - y
        x_new = p_aff(y + q)
        q = y + q - x_new
        x = x_new
        neg = -min(0.0, min(float(np.linalg.eigvalsh(m)[0]) for m in Jx.param.to_blocks(x)))
        res = max(neg, float(np.linalg.norm(x - y)))
        if it % 100 == 0 or res <= tol.report:
            history.append(res)
        if neg <= tol.verify:
            return JoiningState(Jx, x)
        if it % 1000 == 0:
            # stagnation: the gap between the two sets no longer shrinks
            if res > 0.99 * last_check:
                return Infeasible("alternating projections stagnated at a positive gap", it, tuple(history))
            last_check = res
    return Infeasible("iteration limit reached", max_iter, tuple(history))


# ---------------------------------------------------------------------------
# disjointness probe by a log-det barrier


@dataclass(frozen=True, eq=False)
class DisjointnessResult:
    max_value: float
    state: JoiningState
    rel_indep_value: float
    iterations: int

    def non_disjoint(self, tol: float) -> bool:
        return self.max_value - self.rel_indep_value > 10 * tol


def disjointness_probe(
    J: JoiningProblem,
    T: Sequence[tuple[Element, Element]],
    mu0: float = 1.0,
    mu_min: float = 1e-10,
    centering: int = 20,
) -> DisjointnessResult:
    """Maximize Re phi(T) over the joining spectrahedron (path following)."""
    tol = J.M.tol
    rel = rel_indep_joining(J)
    c = J.objective(T)
    base_val = float(c @ rel.t)
    # facial reduction: work on the range of the relatively independent density
    frames = []
    for r in rel.rho:
        w, v = eigh_sorted(r)
        keep = w > max(tol.rank_rel * max(float(w[-1]), 0.0), tol.rank_abs)
        frames.append(v[:, keep])
    red = _HermParam([f.shape[1] for f in frames])

    def lift(s: np.ndarray) -> np.ndarray:
        return J.param.from_blocks([f @ m @ f.conj().T for f, m in zip(frames, red.to_blocks(s))])

    E = np.stack([lift(e) for e in np.eye(red.n)], axis=1) if red.n else np.zeros((J.param.n, 0))
    s0 = red.from_blocks([f.conj().T @ m @ f for f, m in zip(frames, rel.rho)])
    A_red = J.A_eq @ E
    B = _real_null_space(A_red, tol)
    if B.shape[1] == 0:
        return DisjointnessResult(base_val, rel, base_val, 0)
    cz = B.T @ (E.T @ c)
    H = [red.to_blocks(e) for e in np.eye(red.n)]

    def blocks_at(z: np.ndarray) -> list[np.ndarray]:
        return red.to_blocks(s0 + B @ z)

    def is_pd(bl: list[np.ndarray]) -> bool:
        return all(np.linalg.eigvalsh(m)[0] > 0 for m in bl if m.size)

    def f_val(z: np.ndarray, mu: float) -> float:
        bl = blocks_at(z)
        ld = sum(np.linalg.slogdet(m)[1] for m in bl if m.size)
        return -float(cz @ z) - mu * ld

    z = np.zeros(B.shape[1])
    mu = mu0
    iters = 0
    while mu >= mu_min:
        for _ in range(centering):
            iters += 1
            bl = blocks_at(z)
            inv = [np.linalg.inv(m) if m.size else m for m in bl]
            # gradient and Hessian of log det in reduced coordinates
            g_s = np.array([sum(np.real(np.trace(iv @ h)) for iv, h in zip(inv, hb)) for hb in H])
            X = [[iv @ h for iv, h in zip(inv, hb)] for hb in H]
            Hs = np.array([[sum(np.real(np.trace(xa @ xb)) for xa, xb in zip(Xa, Xb)) for Xb in X] for Xa in X])
            grad = -cz - mu * (B.T @ g_s)
            hess = mu * (B.T @ Hs @ B)
            try:
                step = -np.linalg.solve(hess + 1e-14 * np.eye(len(z)), grad)
            except np.linalg.LinAlgError as exc:
                raise NumericalFailure(f"barrier Newton system singular: {exc}") from exc
            dec = float(-grad @ step)
            if dec < 1e-14:
                break
            a = 1.0
            f0 = f_val(z, mu)
            while a > 1e-12:
                zn = z + a * step
                if is_pd(blocks_at(zn)) and f_val(zn, mu) <= f0 - 0.25 * a * dec:
                    break
                a *= 0.5
            else:
                raise NumericalFailure("barrier line search failed")
            z = zn
        mu *= 0.2
    t = lift(s0 + B @ z)
    st = JoiningState(J, t)
    if st.residual() > tol.report or st.min_eig() < -tol.report:
        raise NumericalFailure("barrier iterate left the joining spectrahedron")
    return DisjointnessResult(float(c @ t), st, base_val, iters)


# ---------------------------------------------------------------------------
# completely positive maps from joinings


@dataclass(frozen=True, eq=False)
class CPMap:
    matrix: np.ndarray  # T_Phi in L^2 coordinates (dN x dM)
    M: Algebra
    N: Algebra
    checks: dict

    def __call__(self, x: Element) -> Element:
        return self.N.from_vec(self.matrix @ x.vec())


def cp_from_joining(J: JoiningProblem, state: JoiningState) -> CPMap:
    """Phi: M -> N with tau_N(Phi(x) y) = phi(x (x) y^op)."""
    M, N = J.M, J.N
    tol = M.tol
    ybasis = N.orthonormal_basis()
    cols = []
    for x in M.orthonormal_basis():
        w = np.conj(np.array([state.phi(x, y) for y in ybasis]))
        cols.append(N.from_vec(w).adj().vec())
    P = np.stack(cols, axis=1)
    phi = lambda x: N.from_vec(P @ x.vec())  # noqa: E731
    checks = {}
    checks["unital"] = float(np.linalg.norm((phi(M.one()) - N.one()).vec()))
    inv = J.iota
    worst_q = 0.0
    for q in J.S1.Q.basis:
        target = J.S2.Q.from_coords(inv @ J.S1.Q.coords(q))
        worst_q = max(worst_q, float(np.linalg.norm((phi(q) - target).vec())))
    checks["identity_on_Q"] = worst_q
    worst_choi = 0.0
    units = M.unit_index()
    mus = M.matrix_units()
    for i, n in enumerate(M.blocks):
        idx = [k for k, (b, _, _) in enumerate(units) if b == i]
        r = sum(N.blocks)
        C = np.zeros((n * r, n * r), dtype=complex)
        for k in idx:
            _, p, q = units[k]
            C[p * r:(p + 1) * r, q * r:(q + 1) * r] = N.block_diag_matrix(phi(mus[k]))
        worst_choi = min(worst_choi, float(np.linalg.eigvalsh(0.5 * (C + C.conj().T))[0]))
    checks["choi_min_eig"] = worst_choi
    worst_k = 0.0
    for U1, U2 in zip(J.S1.koopman, J.S2.koopman):
        worst_k = max(worst_k, float(np.max(np.abs(P @ U1 - U2 @ P), initial=0.0)))
    checks["intertwining"] = worst_k
    if worst_choi < -tol.report:
        raise CPViolation(f"Choi matrix has eigenvalue {worst_choi:.3e}")
    for key in ("unital", "identity_on_Q", "intertwining"):
        if checks[key] > tol.report:
            raise CPViolation(f"{key} check failed ({checks[key]:.2e})")
    return CPMap(P, M, N, checks)


def joining_gns_check(J: JoiningProblem, state: JoiningState | None = None) -> dict:
    """Compare the GNS Gram of the relatively independent joining with the fusion space."""
    state = state or rel_indep_joining(J)
    M, N = J.M, J.N
    F = build_fusion(M, J.S1.Q, N, J.S2.Q, None if np.allclose(J.iota, np.eye(J.iota.shape[0])) and J.S1.Q.parent is J.S2.Q.parent else J.iota)
    mu, nu = M.matrix_units(), N.matrix_units()
    tensors = [(x, y) for x in mu for y in nu]
    G = np.zeros((len(tensors), len(tensors)), dtype=complex)
    V = np.stack([embed(F, x, y).coords for x, y in tensors], axis=1)
    for a, (x1, y1) in enumerate(tensors):
        for b, (x2, y2) in enumerate(tensors):
            G[a, b] = state.phi(x1.adj() @ x2, y2 @ y1.adj())
    Gf = V.conj().T @ V
    w = np.linalg.eigvalsh(0.5 * (G + G.conj().T))
    cut = max(M.tol.rank_rel * w[-1], M.tol.rank_abs)
    return {
        "gns_rank": int(np.sum(w > cut)),
        "fusion_dim": F.dim,
        "max_inner_diff": float(np.max(np.abs(G - Gf))),
    }


# ---------------------------------------------------------------------------
# relatively independent products over central subalgebras


@dataclass(frozen=True, eq=False)
class RelativeProduct:
    algebra: Algebra
    fusion: FusionSpace
    wmap: WedderburnMap
    omega: np.ndarray
    checks: dict

    def iota1(self, x: Element) -> Element:
        return self.wmap.to_element(left_operator(self.fusion, x))

    def iota2(self, y: Element) -> Element:
        return self.wmap.to_element(right_operator(self.fusion, y))

    def vector_of(self, z: Element) -> np.ndarray:
        """L^2(P) -> fusion frame, z -> z Omega."""
        return self.wmap.to_operator(z) @ self.omega


def _check_central(Q: Subalgebra) -> None:
    A = Q.parent
    for q in Q.basis:
        for e in A.matrix_units():
            if not (q @ e).close_to(e @ q, A.tol.verify * 100):
                raise NotCentral("Q is not contained in the center")


def rel_product_central(
    N1: Algebra, Q1: Subalgebra, N2: Algebra | None = None, Q2: Subalgebra | None = None, iota: np.ndarray | None = None
) -> RelativeProduct:
    N2 = N1 if N2 is None else N2
    Q2 = Q1 if Q2 is None else Q2
    _check_central(Q1)
    _check_central(Q2)
    F = build_fusion(N1, Q1, N2, Q2, iota)
    tol = N1.tol
    omega = embed(F, N1.one(), N2.one()).coords
    gens = [left_operator(F, x) for x in N1.matrix_units()] + [right_operator(F, y) for y in N2.matrix_units()]
    first = _matrix_commutant(gens + [np.eye(F.dim)], tol)
    algebra_ops = _matrix_commutant(first, tol)
    state = lambda op: complex(np.vdot(omega, op @ omega))  # noqa: E731
    wm = wedderburn(algebra_ops, state, tol)
    P = wm.algebra
    rp = RelativeProduct(P, F, wm, omega, {})
    checks = {}
    worst = 0.0
    for a in N1.matrix_units():
        ia = rp.iota1(a)
        worst = max(worst, abs(trace(P, ia) - trace(N1, a)))
        worst = max(worst, float(np.linalg.norm((rp.iota1(a.adj()) - ia.adj()).vec())))
        for b in N1.matrix_units():
            worst = max(worst, float(np.linalg.norm((rp.iota1(a @ b) - ia @ rp.iota1(b)).vec())))
    checks["iota1_homomorphism"] = worst
    worst = 0.0
    for a in N2.matrix_units():
        ia = rp.iota2(a)
        worst = max(worst, abs(trace(P, ia) - trace(N2, a)))
        worst = max(worst, float(np.linalg.norm((rp.iota2(a.adj()) - ia.adj()).vec())))
        for b in N2.matrix_units():
            # right actions compose in the opposite order
            worst = max(worst, float(np.linalg.norm((rp.iota2(a @ b) - rp.iota2(b) @ ia).vec())))
    checks["iota2_antihomomorphism"] = worst
    iota_m = F.iota
    worst = 0.0
    for q in Q1.basis:
        q2 = Q2.from_coords(iota_m @ Q1.coords(q))
        worst = max(worst, float(np.linalg.norm((rp.iota1(q) - rp.iota2(q2)).vec())))
    checks["agree_on_Q"] = worst
    for k, v in checks.items():
        if v > tol.verify * 1e3:
            raise NumericalFailure(f"relative product check {k} failed ({v:.2e})")
    return RelativeProduct(P, F, wm, omega, checks)


def product_system(S1: DynamicalSystem, S2: DynamicalSystem, rp: RelativeProduct) -> DynamicalSystem:
    """Diagonal action on the relative product, with Q carried in through iota1."""
    F, wm, P = rp.fusion, rp.wmap, rp.algebra
    basis = P.orthonormal_basis()
    koop = []
    for U1, U2 in zip(S1.koopman, S2.koopman):
        W = F.lift(np.kron(U1, U2))
        cols = [wm.to_element(W @ wm.to_operator(z) @ W.conj().T).vec() for z in basis]
        koop.append(np.stack(cols, axis=1))
    Qp = subalgebra_from_basis(P, np.stack([rp.iota1(q).vec() for q in S1.Q.basis], axis=1))
    group = S1.group
    return make_system(P, group, [("matrix", U) for U in koop], Qp)


def product_ap_check(S1: DynamicalSystem, S2: DynamicalSystem, iota: np.ndarray | None = None) -> dict:
    """Almost periodic part of the relative product against the fusion of the factors' parts."""
    if S1.group.ngens != S2.group.ngens:
        raise ValidationError("systems must be actions of the same group")
    A1, A2 = S1.algebra, S2.algebra
    rp = rel_product_central(A1, S1.Q, A2, S2.Q, iota)
    PS = product_system(S1, S2, rp)
    tol = A1.tol
    dec = ap_decompose(PS)
    d1, d2 = ap_decompose(S1), ap_decompose(S2)
    F = rp.fusion
    ap_P = orth(np.stack([rp.vector_of(PS.algebra.from_vec(c)) for c in dec.ap_basis.T], axis=1), tol) if dec.ap_dim else np.zeros((F.dim, 0))
    tens = [embed(F, A1.from_vec(a), A2.from_vec(b)).coords for a in d1.ap_basis.T for b in d2.ap_basis.T]
    ap_T = orth(np.stack(tens, axis=1), tol) if tens else np.zeros((F.dim, 0))
    cont1 = float(np.linalg.norm(ap_T - ap_P @ (ap_P.conj().T @ ap_T))) if ap_T.size else 0.0
    cont2 = float(np.linalg.norm(ap_P - ap_T @ (ap_T.conj().T @ ap_P))) if ap_P.size else 0.0
    # witness tensoring: T_K1 (x) T_K2 commutes with the product action and lands in AP(P)
    Wg = [F.lift(np.kron(U1, U2)) for U1, U2 in zip(S1.koopman, S2.koopman)]
    worst_comm, worst_range = 0.0, 0.0
    for T1 in d1.operators:
        for T2 in d2.operators:
            X = F.lift(np.kron(T1, T2))
            for W in Wg:
                worst_comm = max(worst_comm, float(np.max(np.abs(X @ W - W @ X), initial=0.0)))
            worst_range = max(worst_range, float(np.linalg.norm(X - ap_P @ (ap_P.conj().T @ X))))
    report = {
        "product_dim": PS.algebra.dim,
        "product_blocks": list(PS.algebra.blocks),
        "ap_product_rank": int(ap_P.shape[1]),
        "ap_tensor_rank": int(ap_T.shape[1]),
        "containment_residual": max(cont1, cont2),
        "witness_commutation": worst_comm,
        "witness_range": worst_range,
        "witness_pairs": len(d1.operators) * len(d2.operators),
    }
    report["passed"] = bool(
        report["ap_product_rank"] == report["ap_tensor_rank"] == F.dim
        and report["containment_residual"] <= tol.report
        and worst_comm <= tol.report
        and worst_range <= tol.report
    )
    return report
