"""Cubic systems, Gowers-Host-Kra seminorms and the factors Z_k.

Level k lives on N^[k] = N^{(x) 2^k}, one tensor site per cube vertex eps in
{0,1}^k.  Site s carries the vertex whose bits are the binary digits of s, so
site 0 is the zero vertex and the sites with eps_k = 0 form the first half.
Elements of N^[k] are expanded in products of matrix units; the multi-index
I = sum_s i_s d^s puts site 0 in the least significant digit, which means a
pure tensor has coordinate vector kron(x_{last site}, ..., x_0).

Each level stores the GNS frame V (h x d^{2^k}): column I is the class of the
I-th matrix-unit product in an orthonormal frame of L^2(N^[k], tau^[k]).  The
next level's Gram matrix comes from

    tau^[k+1](a (x) b) = < P_k (a^* Omega_k), P_k (b Omega_k) >,

with P_k the projection onto the diagonal-invariant vectors of level k.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .algebra import Algebra, Element, bicommutant, eigh_sorted, null_space, orth, rank_cutoff, trace, wedderburn
from .dynamics import DynamicalSystem, ap_decompose, invariant_subspace, is_compact_extension, make_system
from .errors import BudgetExceeded, FaceError, NotAbelian, NotAnAlgebra, NotErgodic, NumericalFailure, PositivityViolation
from .subalgebra import Subalgebra, subalgebra_from_basis, verify_subalgebra

__all__ = [
    "DEFAULT_BUDGET",
    "CubicLevel",
    "Tower",
    "build_level0",
    "lift_level",
    "face_transformation",
    "invariant_cubes",
    "seminorm",
    "z_subspace",
    "z_algebra",
    "tower_report",
    "gowers_norm",
    "cube_measure",
]

DEFAULT_BUDGET = 4096


def budget_from_env(default: int = DEFAULT_BUDGET) -> int:
    raw = os.environ.get("OPALG_BUDGET")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def _raw(x: Element) -> np.ndarray:
    return np.concatenate([b.reshape(-1) for b in x.blocks])


def _site_tables(A: Algebra) -> tuple[np.ndarray, np.ndarray]:
    """Index of u_c^* u_a and of u_c u_a among the matrix units (-1 for zero)."""
    idx = A.unit_index()
    look = {t: k for k, t in enumerate(idx)}
    d = len(idx)
    adj = -np.ones((d, d), dtype=int)
    prod = -np.ones((d, d), dtype=int)
    for c, (b, p, q) in enumerate(idx):
        for a, (b2, p2, q2) in enumerate(idx):
            if b == b2 and p == p2:
                adj[c, a] = look[(b, q, q2)]
            if b == b2 and q == p2:
                prod[c, a] = look[(b, p, q2)]
    return adj, prod


def _digits(D: int, sites: int, d: int) -> np.ndarray:
    I = np.arange(D)
    return np.stack([(I // d ** s) % d for s in range(sites)], axis=1)


def _combine(table: np.ndarray, dig_c: np.ndarray, dig_a: np.ndarray, d: int) -> np.ndarray:
    """Site-wise table lookup for all pairs of multi-indices; -1 where any site vanishes."""
    sites = dig_c.shape[1]
    out = np.zeros((dig_c.shape[0], dig_a.shape[0]), dtype=np.int64)
    dead = np.zeros(out.shape, dtype=bool)
    for s in range(sites):
        t = table[dig_c[:, s][:, None], dig_a[:, s][None, :]]
        dead |= t < 0
        out += np.where(t < 0, 0, t) * d ** s
    out[dead] = -1
    return out


def _kron_sites(vectors: list[np.ndarray]) -> np.ndarray:
    """Coordinates of a pure tensor with vectors[s] at site s."""
    return reduce(np.kron, vectors[::-1])


def _apply_sites(V: np.ndarray, ops: dict[int, np.ndarray], sites: int, d: int) -> np.ndarray:
    """V @ (tensor product of ops on the given sites, identity elsewhere)."""
    h = V.shape[0]
    T = V.reshape((h,) + (d,) * sites)
    for s, R in ops.items():
        ax = 1 + (sites - 1 - s)  # C-order: last axis is site 0
        T = np.moveaxis(np.tensordot(T, R, axes=([ax], [0])), -1, ax)
    return T.reshape(h, -1)


@dataclass(frozen=True, eq=False)
class CubicLevel:
    k: int
    system: DynamicalSystem
    V: np.ndarray
    omega: np.ndarray
    P_basis: np.ndarray  # orthonormal basis of diagonal-invariant vectors
    site_koopman: tuple[np.ndarray, ...]
    gram_min_eig: float = 0.0
    side_cache: dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> int:
        return self.system.algebra.dim

    @property
    def sites(self) -> int:
        return 2 ** self.k

    @property
    def D(self) -> int:
        return self.V.shape[1]

    @property
    def dim(self) -> int:
        return self.V.shape[0]

    def vector(self, site_elems: list[Element]) -> np.ndarray:
        return self.V @ _kron_sites([_raw(x) for x in site_elems])

    def state(self, site_elems: list[Element]) -> complex:
        return complex(np.vdot(self.omega, self.vector(site_elems)))

    def descend(self, ops: dict[int, np.ndarray], check: bool = True) -> np.ndarray:
        VK = _apply_sites(self.V, ops, self.sites, self.d)
        pinv = np.linalg.pinv(self.V)
        W = VK @ pinv
        if check:
            leak = VK - W @ self.V
            if float(np.max(np.abs(leak), initial=0.0)) > self.system.algebra.tol.verify * 1e3 * max(1.0, float(np.linalg.norm(self.V, 2))):
                raise FaceError(f"site map does not preserve the level-{self.k} state")
        return W


def _raw_koopman(A: Algebra, U: np.ndarray) -> np.ndarray:
    s = A.scales
    return (U * s[None, :]) / s[:, None]


def _frame_from_gram(G: np.ndarray, A: Algebra) -> tuple[np.ndarray, float]:
    G = 0.5 * (G + G.conj().T)
    w, u = eigh_sorted(G)
    cut = rank_cutoff(w, A.tol)
    if w.size and w[0] < -max(A.tol.verify, cut) * 10:
        raise PositivityViolation(f"cubic Gram has eigenvalue {w[0]:.3e}")
    idx = np.flatnonzero(w > cut)[::-1]
    V = np.sqrt(w[idx])[:, None] * u[:, idx].conj().T
    return V, float(w[0]) if w.size else 0.0


def _finish_level(k: int, S: DynamicalSystem, V: np.ndarray, min_eig: float) -> CubicLevel:
    A = S.algebra
    sites = 2 ** k
    one = _raw(A.one())
    omega = V @ _kron_sites([one] * sites)
    site_k = tuple(_raw_koopman(A, U) for U in S.koopman)
    lvl = CubicLevel(k, S, V, omega, np.zeros((V.shape[0], 0)), site_k, min_eig)
    diag = [lvl.descend({s: R for s in range(sites)}) for R in site_k]
    P = invariant_subspace(diag, V.shape[0], A.tol)
    return CubicLevel(k, S, V, omega, P, site_k, min_eig)


def build_level0(S: DynamicalSystem) -> CubicLevel:
    if not S.group.is_abelian:
        raise NotAbelian("cubic systems need an abelian group")
    if not S.ergodic:
        raise NotErgodic("cubic systems need an ergodic action")
    A = S.algebra
    return _finish_level(0, S, np.diag(A.scales).astype(complex), 0.0)


def lift_level(L: CubicLevel, budget: int | None = None) -> CubicLevel:
    S = L.system
    A = S.algebra
    d = A.dim
    budget = budget_from_env() if budget is None else budget
    D = L.D
    if D * D > budget:
        raise BudgetExceeded(f"level {L.k + 1} needs a Gram of side {D * D}, budget is {budget}")
    adj, _ = _site_tables(A)
    dig = _digits(D, L.sites, d)
    T2 = _combine(adj, dig, dig, d)  # T2[c, a] = index of e_c^* e_a
    X = L.P_basis.conj().T @ L.V  # r x D
    r = X.shape[0]
    X2 = np.zeros((D, D, r), dtype=complex)
    live = T2 >= 0
    X2[live] = X[:, T2[live]].T
    # G[(a,b),(c,d)] = <P(e_c^* e_a)^* ... > = sum_i conj(X2[c,a,i]) X2[b,d,i]
    G = np.einsum("cai,bdi->badc", X2.conj(), X2, optimize=True).reshape(D * D, D * D)
    V, m = _frame_from_gram(G, A)
    return _finish_level(L.k + 1, S, V, m)


def _face_sites(k: int, face: tuple[tuple[int, ...], tuple[int, ...]]) -> list[int]:
    J, eta = face
    if len(J) != len(eta) or any(not 1 <= j <= k for j in J) or len(set(J)) != len(J) or any(e not in (0, 1) for e in eta):
        raise FaceError(f"invalid face {face!r} for level {k}")
    return [s for s in range(2 ** k) if all(((s >> (j - 1)) & 1) == e for j, e in zip(J, eta))]


def face_transformation(L: CubicLevel, gamma: list[tuple[int, int]] | tuple[int, ...], face) -> np.ndarray:
    """Unitary of sigma_gamma applied on the sites of a face.

    ``gamma`` is either a word [(generator, power), ...] or an exponent tuple.
    """
    sites = _face_sites(L.k, face)
    word = list(enumerate(gamma)) if gamma and isinstance(gamma[0], (int, np.integer)) else list(gamma)
    R = np.eye(L.d, dtype=complex)
    for g, p in word:
        Rg = L.site_koopman[g]
        R = R @ np.linalg.matrix_power(Rg if p >= 0 else np.linalg.inv(Rg), abs(p))
    if np.allclose(R, np.eye(L.d)):
        return np.eye(L.dim, dtype=complex)
    return L.descend({s: R for s in sites})


def side_unitaries(L: CubicLevel, upper_only: bool = False) -> dict[tuple[int, int, int], np.ndarray]:
    out = {}
    for j in range(1, L.k + 1):
        for eta in ((1,) if upper_only else (0, 1)):
            for g in range(len(L.site_koopman)):
                key = (j, eta, g)
                if key not in L.side_cache:
                    L.side_cache[key] = face_transformation(L, [(g, 1)], ((j,), (eta,)))
                out[key] = L.side_cache[key]
    return out


@dataclass(frozen=True, eq=False)
class CubeInvariants:
    I_basis: np.ndarray
    J_basis: np.ndarray
    zerocoord_residual: float
    side_invariance: float


def invariant_cubes(L: CubicLevel) -> CubeInvariants:
    A = L.system.algebra
    I_basis = L.P_basis
    sides = side_unitaries(L, upper_only=True)
    J_basis = invariant_subspace(list(sides.values()), L.dim, A.tol)
    # image of x0 -> x0 (x) 1 (x) ... (x) 1
    one = _raw(A.one())
    rest = _kron_sites([one] * (L.sites - 1)) if L.sites > 1 else np.ones(1)
    V3 = L.V.reshape(L.dim, -1, L.d)
    img = orth(np.einsum("hmn,m->hn", V3, rest), A.tol)
    res = float(np.linalg.norm(J_basis - img @ (img.conj().T @ J_basis))) if J_basis.size else 0.0
    inv = 0.0
    for W in side_unitaries(L).values():
        inv = max(inv, float(np.linalg.norm(W @ L.omega - L.omega)))
    return CubeInvariants(I_basis, J_basis, res, inv)


# ---------------------------------------------------------------------------
# the tower


class Tower:
    """Levels built lazily and reused; level k+1 reads level k only."""

    def __init__(self, S: DynamicalSystem, budget: int | None = None):
        self.system = S
        self.budget = budget_from_env() if budget is None else budget
        self.levels = [build_level0(S)]

    def level(self, k: int) -> CubicLevel:
        while len(self.levels) <= k:
            self.levels.append(lift_level(self.levels[-1], self.budget))
        return self.levels[k]

    def state(self, k: int, site_elems: list[Element]) -> complex:
        """tau^[k] of a pure tensor, evaluated through level k - 1."""
        if k == 0:
            return trace(self.system.algebra, site_elems[0])
        L = self.level(k - 1)
        half = len(site_elems) // 2
        first = [x.adj() for x in site_elems[:half]]
        second = site_elems[half:]
        P = L.P_basis
        return complex(np.vdot(P.conj().T @ L.vector(first), P.conj().T @ L.vector(second)))


def cube_tensor(x: Element, k: int) -> list[Element]:
    """Sites of the alternating-adjoint cube tensor of x."""
    return [x.adj() if bin(s).count("1") % 2 else x for s in range(2 ** k)]


def seminorm_power(T: Tower, x: Element, k: int) -> float:
    """|||x|||_k ** (2^k), computed as ||P_{k-1} (x'' Omega)||^2."""
    if k < 1:
        raise ValueError("seminorm order must be >= 1")
    L = T.level(k - 1)
    sites = [x.adj() if (bin(s).count("1") + 1) % 2 else x for s in range(2 ** (k - 1))]
    v = L.P_basis.conj().T @ L.vector(sites)
    return float(np.vdot(v, v).real)


def seminorm(T: Tower, x: Element, k: int) -> float:
    val = seminorm_power(T, x, k)
    tol = T.system.algebra.tol.verify
    if val < -tol:
        raise NumericalFailure(f"negative cube state {val:.3e}")
    return max(val, 0.0) ** (1.0 / 2 ** k)


def z_subspace(T: Tower, k: int) -> np.ndarray:
    """Orthonormal L^2 basis of L^2(Z_{k-1}): the complement of the left kernel of x -> tau^[k](x (x) .)."""
    S = T.system
    A = S.algebra
    L = T.level(k - 1)
    V3 = L.V.reshape(L.dim, -1, L.d)
    M = np.einsum("rh,hmn->rmn", L.P_basis.conj().T, V3).reshape(-1, L.d)
    ker_raw = null_space(M, A.tol)
    # kernel is stated for raw coordinates of x^*; bring it back to x
    s = A.scales
    ker = np.stack([A.from_vec(s * c).adj().vec() for c in ker_raw.T], axis=1) if ker_raw.size else np.zeros((A.dim, 0))
    ker = orth(ker, A.tol) if ker.size else ker
    Z = null_space(ker.conj().T, A.tol) if ker.shape[1] else np.eye(A.dim, dtype=complex)
    return Z


def left_kernel(T: Tower, k: int) -> np.ndarray:
    A = T.system.algebra
    Z = z_subspace(T, k)
    return null_space(Z.conj().T, A.tol) if Z.shape[1] < A.dim else np.zeros((A.dim, 0), dtype=complex)


def _sub_system(S: DynamicalSystem, Zk: Subalgebra, Zprev: Subalgebra) -> DynamicalSystem:
    """The action restricted to Z_k, written as a system over the image of Z_{k-1}."""
    A = S.algebra
    ops = [A.block_diag_matrix(z) for z in Zk.basis]
    wm = wedderburn(ops, lambda m: trace(A, A.from_block_diag(m)), A.tol)
    P = wm.algebra
    basis = P.orthonormal_basis()
    koop = []
    for U in S.koopman:
        cols = []
        for z in basis:
            x = A.from_block_diag(wm.to_operator(z))
            sx = A.from_vec(U @ x.vec())
            cols.append(wm.to_element(A.block_diag_matrix(sx)).vec())
        koop.append(np.stack(cols, axis=1))
    Qv = np.stack([wm.to_element(A.block_diag_matrix(q)).vec() for q in Zprev.basis], axis=1)
    return make_system(P, S.group, [("matrix", U) for U in koop], subalgebra_from_basis(P, Qv))


@dataclass(frozen=True, eq=False)
class ZAlgebraReport:
    algebra: Subalgebra
    closure_residual: float
    invariance_residual: float
    compact_over_previous: bool | None


def z_algebra(T: Tower, k: int, previous: Subalgebra | None = None) -> ZAlgebraReport:
    """Z_{k-1} as a verified invariant subalgebra; compact over ``previous`` when given."""
    S = T.system
    A = S.algebra
    Zv = z_subspace(T, k)
    Zs = subalgebra_from_basis(A, Zv)
    closure = verify_subalgebra(Zs)
    bic = np.stack([b.vec() for b in bicommutant(A, list(Zs.basis))], axis=1)
    if bic.shape[1] != Zs.dim:
        raise NotAnAlgebra("generated algebra is larger than the Z subspace")
    P = Zs.projection
    inv = max((float(np.max(np.abs(U @ P - P @ U))) for U in S.koopman), default=0.0)
    if inv > A.tol.verify * 1e3:
        raise NotAnAlgebra(f"Z subspace is not invariant ({inv:.2e})")
    compact = None
    if previous is not None:
        compact = is_compact_extension(_sub_system(S, Zs, previous)).compact
    return ZAlgebraReport(Zs, closure, inv, compact)


# ---------------------------------------------------------------------------
# brute-force oracles for commutative rotations


def gowers_norm(f: np.ndarray, k: int) -> float:
    """U^k norm of f on Z_n: (E_{x,h} prod_eps C^{|eps|} f(x + eps.h))^{1/2^k}."""
    f = np.asarray(f, dtype=complex)
    n = f.size
    total = 0.0 + 0.0j
    verts = [tuple((s >> j) & 1 for j in range(k)) for s in range(2 ** k)]
    for x in range(n):
        for h in np.ndindex(*([n] * k)):
            p = 1.0 + 0.0j
            for eps in verts:
                v = f[(x + sum(e * hh for e, hh in zip(eps, h))) % n]
                p *= np.conj(v) if sum(eps) % 2 else v
            total += p
    val = (total / n ** (k + 1)).real
    return max(val, 0.0) ** (1.0 / 2 ** k)


def cube_measure(n: int, k: int) -> dict[tuple[int, ...], float]:
    """Host-Kra measure on Z_n^{2^k} for the rotation x -> x + 1, keyed by site order."""
    out: dict[tuple[int, ...], float] = {}
    w = 1.0 / n ** (k + 1)
    for x in range(n):
        for h in np.ndindex(*([n] * k)):
            cfg = tuple((x + sum(((s >> j) & 1) * h[j] for j in range(k))) % n for s in range(2 ** k))
            out[cfg] = out.get(cfg, 0.0) + w
    return out


# ---------------------------------------------------------------------------
# report


def tower_report(S: DynamicalSystem, kmax: int, probes: list[Element] | None = None, budget: int | None = None) -> dict:
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    A = S.algebra
    tol = A.tol
    T = Tower(S, budget)
    probes = probes if probes is not None else [A.one()]
    levels = []
    for k in range(kmax):
        L = T.level(k)
        ci = invariant_cubes(L)
        # traciality of tau^[k] on matrix-unit products, recorded not assumed
        levels.append({
            "k": k,
            "frame_dim": L.dim,
            "I_dim": int(ci.I_basis.shape[1]),
            "J_dim": int(ci.J_basis.shape[1]),
            "zerocoord_residual": ci.zerocoord_residual,
            "side_invariance_residual": ci.side_invariance,
            "gram_min_eig": L.gram_min_eig,
            "tracial": _tracial(L),
        })
    zs, prev, z_reports = [], None, []
    for k in range(1, kmax + 1):
        rep = z_algebra(T, k, prev)
        zs.append(rep.algebra)
        z_reports.append({
            "index": k - 1,
            "dim": rep.algebra.dim,
            "closure_residual": rep.closure_residual,
            "invariance_residual": rep.invariance_residual,
            "compact_over_previous": rep.compact_over_previous,
            "normchar": normchar_check(T, k),
        })
        prev = rep.algebra
    increasing = all(
        float(np.linalg.norm(zs[i].matrix - zs[i + 1].projection @ zs[i].matrix)) <= tol.report for i in range(len(zs) - 1)
    )
    table = [[seminorm(T, x, k) for k in range(1, kmax + 1)] for x in probes]
    monotone = all(all(r[i] <= r[i + 1] + tol.report for i in range(len(r) - 1)) for r in table)
    z1_vs_ap = None
    if kmax >= 2:
        z1_vs_ap = bool(zs[1].dim == ap_decompose(S).ap_dim)
    return {
        "kmax": kmax,
        "levels": levels,
        "z": z_reports,
        "z_increasing": increasing,
        "seminorms": table,
        "seminorm_monotone": monotone,
        "z1_equals_max_compact": z1_vs_ap,
        "tower": T,
    }


def _tracial(L: CubicLevel, samples: int = 64, seed: int = 3) -> bool:
    A = L.system.algebra
    _, prod = _site_tables(A)
    rng = np.random.default_rng(seed)
    dig = _digits(L.D, L.sites, L.d)
    pick = rng.integers(0, L.D, size=(samples, 2))
    worst = 0.0
    for I, J in pick:
        ab = _combine(prod, dig[[I]], dig[[J]], L.d)[0, 0]
        ba = _combine(prod, dig[[J]], dig[[I]], L.d)[0, 0]
        va = complex(np.vdot(L.omega, L.V[:, ab])) if ab >= 0 else 0j
        vb = complex(np.vdot(L.omega, L.V[:, ba])) if ba >= 0 else 0j
        worst = max(worst, abs(va - vb))
    return bool(worst <= A.tol.report)


def normchar_check(T: Tower, k: int, extra: int = 10, seed: int = 11) -> dict:
    """Zero set of |||.|||_k against the left kernel: kernel vectors vanish, Z vectors do not."""
    A = T.system.algebra
    tol = A.tol.report
    Z = z_subspace(T, k)
    K = null_space(Z.conj().T, A.tol) if Z.shape[1] < A.dim else np.zeros((A.dim, 0), dtype=complex)
    rng = np.random.default_rng(seed)
    worst_kernel = 0.0
    probes = [c for c in K.T]
    if K.shape[1]:
        probes += [K @ (rng.standard_normal(K.shape[1]) + 1j * rng.standard_normal(K.shape[1])) for _ in range(extra)]
    for c in probes:
        v = c / np.linalg.norm(c)
        worst_kernel = max(worst_kernel, seminorm_power(T, A.from_vec(v), k))
    least_z = np.inf
    for c in Z.T:
        least_z = min(least_z, seminorm_power(T, A.from_vec(c), k))
    return {
        "kernel_dim": int(K.shape[1]),
        "z_dim": int(Z.shape[1]),
        "max_power_on_kernel": worst_kernel,
        "min_power_on_z": float(least_z) if Z.shape[1] else None,
        "passed": bool(worst_kernel <= tol and (Z.shape[1] == 0 or least_z > tol)),
    }
