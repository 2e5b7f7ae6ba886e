"""Group actions by trace-preserving automorphisms and the compact/weak-mixing split."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .algebra import Algebra, Element, eigh_sorted, fix_phase, null_space, orth, trace
from .errors import (
    NotAModule,
    NotAutomorphism,
    NotTracePreserving,
    RelationViolated,
    ShapeError,
    SubalgebraNotInvariant,
    ValidationError,
)
from .fusion import (
    FusionSpace,
    FusionVector,
    build_fusion,
    chs_truncate,
    convolution_operator,
    embed,
    fusion_from_operator,
)
from .modules import QModule, pimsner_popa_basis, pp_expand
from .subalgebra import (
    BasicConstruction,
    Subalgebra,
    basic_construction,
    cond_expect,
    scalar_subalgebra,
    subalgebra_from_basis,
)

__all__ = [
    "GroupSpec",
    "DynamicalSystem",
    "APDecomposition",
    "make_system",
    "with_subalgebra",
    "group_elements",
    "invariant_subspace",
    "fixed_algebra",
    "fusion_koopman",
    "invariant_fusion_vectors",
    "ap_decompose",
    "is_compact_extension",
    "test_weak_mixing",
    "popa_probe",
    "invariant_module_truncate",
    "cap_witness",
    "decomposition_modules",
]

DECOMP_SEED = 7


@dataclass(frozen=True)
class GroupSpec:
    kind: str  # finite_abelian | free_abelian | presented
    orders: tuple[int, ...] = ()
    rank: int = 0
    labels: tuple[str, ...] = ()
    relations: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("finite_abelian", "free_abelian", "presented"):
            raise ValidationError(f"unknown group kind {self.kind!r}")
        if any(o < 1 for o in self.orders):
            raise ValidationError("group orders must be >= 1")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"g{i}" for i in range(self.ngens)))
        if len(self.labels) != self.ngens:
            raise ValidationError("one label per generator required")

    @property
    def ngens(self) -> int:
        if self.kind == "finite_abelian":
            return len(self.orders)
        if self.kind == "free_abelian":
            return self.rank
        return len(self.labels)

    @property
    def is_abelian(self) -> bool:
        return self.kind in ("finite_abelian", "free_abelian")

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite_abelian"


@dataclass(frozen=True, eq=False)
class DynamicalSystem:
    algebra: Algebra
    group: GroupSpec
    koopman: tuple[np.ndarray, ...]
    Q: Subalgebra
    ergodic: bool
    gen_specs: tuple[Any, ...] = field(default=())

    def sigma(self, g: int, x: Element) -> Element:
        return self.algebra.from_vec(self.koopman[g] @ x.vec())


@dataclass(frozen=True, eq=False)
class APDecomposition:
    ap_basis: np.ndarray
    wm_basis: np.ndarray
    witnesses: tuple[FusionVector, ...]
    fusion: FusionSpace
    operators: tuple[np.ndarray, ...]

    @property
    def ap_dim(self) -> int:
        return self.ap_basis.shape[1]

    @property
    def wm_dim(self) -> int:
        return self.wm_basis.shape[1]


# ---------------------------------------------------------------------------
# construction and verification


def _koopman_from_unitary(A: Algebra, blocks: Sequence[np.ndarray]) -> np.ndarray:
    u = A.element(blocks)
    return A.left_matrix(u) @ A.right_matrix(u.adj())


def _check_automorphism(A: Algebra, U: np.ndarray, label: str) -> None:
    tol = A.tol.verify * 100
    if U.shape != (A.dim, A.dim):
        raise ShapeError(f"generator {label}: Koopman matrix must be {A.dim}x{A.dim}")

    def sig(x: Element) -> Element:
        return A.from_vec(U @ x.vec())

    units = A.matrix_units()
    imgs = [sig(e) for e in units]
    if not sig(A.one()).close_to(A.one(), tol):
        raise NotAutomorphism(f"generator {label} is not unital")
    for e, se in zip(units, imgs):
        if not sig(e.adj()).close_to(se.adj(), tol):
            raise NotAutomorphism(f"generator {label} does not preserve adjoints")
    for a, sa in zip(units, imgs):
        for b, sb in zip(units, imgs):
            if not sig(a @ b).close_to(sa @ sb, tol):
                raise NotAutomorphism(f"generator {label} is not multiplicative")
    for e, se in zip(units, imgs):
        if abs(trace(A, se) - trace(A, e)) > tol:
            raise NotTracePreserving(f"generator {label} does not preserve the trace")


def _parse_word(word: str, labels: Sequence[str]) -> list[tuple[int, int]]:
    out = []
    for tok in word.replace("*", " ").split():
        name, _, power = tok.partition("^")
        if name not in labels:
            raise RelationViolated(f"relation uses unknown generator {name!r}")
        out.append((labels.index(name), int(power) if power else 1))
    return out


def _word_matrix(koopman: Sequence[np.ndarray], word: Sequence[tuple[int, int]], d: int) -> np.ndarray:
    m = np.eye(d, dtype=complex)
    for g, p in word:
        u = koopman[g] if p >= 0 else koopman[g].conj().T
        m = m @ np.linalg.matrix_power(u, abs(p))
    return m


def _check_relations(A: Algebra, group: GroupSpec, koopman: Sequence[np.ndarray]) -> None:
    tol = A.tol.verify * 100
    d = A.dim
    eye = np.eye(d)
    if group.kind == "finite_abelian":
        for g, o in enumerate(group.orders):
            if np.max(np.abs(np.linalg.matrix_power(koopman[g], o) - eye)) > tol:
                raise RelationViolated(f"generator {group.labels[g]} does not have order dividing {o}")
    if group.is_abelian:
        for g, h in itertools.combinations(range(len(koopman)), 2):
            if np.max(np.abs(koopman[g] @ koopman[h] - koopman[h] @ koopman[g])) > tol:
                raise RelationViolated(f"generators {group.labels[g]} and {group.labels[h]} do not commute")
    for rel in group.relations:
        m = _word_matrix(koopman, _parse_word(rel, group.labels), d)
        if np.max(np.abs(m - eye)) > tol:
            raise RelationViolated(f"relation {rel!r} does not hold")


def _check_invariant(A: Algebra, koopman: Sequence[np.ndarray], Q: Subalgebra) -> None:
    P = Q.projection
    for g, U in enumerate(koopman):
        if np.max(np.abs(U @ P @ U.conj().T - P), initial=0.0) > A.tol.verify * 100:
            raise SubalgebraNotInvariant(f"generator {g} does not leave Q invariant")


def make_system(
    A: Algebra,
    group: GroupSpec,
    gen_maps: Sequence[Any],
    Q: Subalgebra | None = None,
) -> DynamicalSystem:
    """Build and verify a system; each generator is ("unitary", blocks) or ("matrix", d x d Koopman)."""
    if len(gen_maps) != group.ngens:
        raise ShapeError(f"group has {group.ngens} generators, got {len(gen_maps)} maps")
    koop = []
    for label, spec in zip(group.labels, gen_maps):
        kind, data = spec
        if kind == "unitary":
            blocks = [np.asarray(b, dtype=complex) for b in data]
            A.element(blocks)
            for b in blocks:
                if np.max(np.abs(b @ b.conj().T - np.eye(b.shape[0]))) > A.tol.verify * 100:
                    raise NotAutomorphism(f"generator {label}: block is not unitary")
            U = _koopman_from_unitary(A, blocks)
        elif kind == "matrix":
            U = np.asarray(data, dtype=complex)
        else:
            raise ValidationError(f"generator {label}: unknown map kind {kind!r}")
        _check_automorphism(A, U, label)
        koop.append(U)
    _check_relations(A, group, koop)
    Q = Q if Q is not None else scalar_subalgebra(A)
    _check_invariant(A, koop, Q)
    fixed = invariant_subspace(koop, A.dim, A.tol)
    return DynamicalSystem(A, group, tuple(koop), Q, fixed.shape[1] == 1, tuple(gen_maps))


def with_subalgebra(S: DynamicalSystem, Q: Subalgebra) -> DynamicalSystem:
    _check_invariant(S.algebra, S.koopman, Q)
    return replace(S, Q=Q)


# ---------------------------------------------------------------------------
# group elements and invariants


def group_elements(S: DynamicalSystem, wordlen: int = 2) -> list[tuple[str, np.ndarray]]:
    """Koopman unitaries of group elements: all of them for finite groups, words up to wordlen otherwise."""
    G, d = S.group, S.algebra.dim
    out: list[tuple[str, np.ndarray]] = []
    if G.kind == "finite_abelian":
        for exps in itertools.product(*[range(o) for o in G.orders]):
            word = [(g, e) for g, e in enumerate(exps)]
            out.append(("(" + ",".join(str(e) for e in exps) + ")", _word_matrix(S.koopman, word, d)))
        return out
    if G.kind == "free_abelian":
        rng = range(-wordlen, wordlen + 1)
        for exps in itertools.product(*[rng] * G.rank):
            if sum(abs(e) for e in exps) <= wordlen:
                word = [(g, e) for g, e in enumerate(exps)]
                out.append(("(" + ",".join(str(e) for e in exps) + ")", _word_matrix(S.koopman, word, d)))
        return out
    letters = [(g, s) for g in range(G.ngens) for s in (1, -1)]
    for n in range(wordlen + 1):
        for w in itertools.product(letters, repeat=n):
            name = " ".join(G.labels[g] + ("" if s == 1 else "^-1") for g, s in w) or "e"
            out.append((name, _word_matrix(S.koopman, list(w), d)))
    return out


def invariant_subspace(unitaries: Sequence[np.ndarray], dim: int, tol) -> np.ndarray:
    """Orthonormal basis of the joint fixed space of the given unitaries."""
    if not unitaries:
        return np.eye(dim, dtype=complex)
    m = np.vstack([U - np.eye(dim) for U in unitaries])
    return null_space(m, tol)


def fixed_algebra(S: DynamicalSystem) -> Subalgebra:
    A = S.algebra
    return subalgebra_from_basis(A, invariant_subspace(S.koopman, A.dim, A.tol))


def fusion_koopman(S: DynamicalSystem, F: FusionSpace) -> list[np.ndarray]:
    """Diagonal action U_g (x) U_g descended to the fusion frame."""
    return [F.lift(np.kron(U, U)) for U in S.koopman]


def invariant_fusion_vectors(S: DynamicalSystem, F: FusionSpace | None = None) -> tuple[FusionSpace, list[FusionVector]]:
    F = F or build_fusion(S.algebra, S.Q)
    basis = invariant_subspace(fusion_koopman(S, F), F.dim, S.algebra.tol)
    return F, [FusionVector(F, c) for c in basis.T]


# ---------------------------------------------------------------------------
# almost periodic part


def ap_decompose(S: DynamicalSystem) -> APDecomposition:
    A = S.algebra
    F, Ks = invariant_fusion_vectors(S)
    ops = [convolution_operator(F, K) for K in Ks]
    if ops:
        ap = orth(np.hstack(ops), A.tol)
    else:
        ap = np.zeros((A.dim, 0), dtype=complex)
    wm = null_space(ap.conj().T, A.tol) if ap.shape[1] else np.eye(A.dim, dtype=complex)
    return APDecomposition(ap, wm, tuple(Ks), F, tuple(ops))


def _generic_witness(dec: APDecomposition, seed: int = DECOMP_SEED) -> np.ndarray:
    rng = np.random.default_rng(seed)
    d = dec.ap_basis.shape[0]
    H = np.zeros((d, d), dtype=complex)
    for T in dec.operators:
        a, b = rng.standard_normal(2)
        H += a * 0.5 * (T + T.conj().T) + b * 0.5j * (T.conj().T - T)
    return 0.5 * (H + H.conj().T)


def decomposition_modules(S: DynamicalSystem, dec: APDecomposition | None = None) -> list[QModule]:
    """Split the almost periodic part into invariant finitely generated Q-modules.

    A generic self-adjoint combination H of the witness operators commutes with the
    action and with right multiplication by Q.  Shifting it to be positive gives an
    invariant kernel K_+ whose nested spectral truncations cut out its eigenspaces.
    """
    dec = dec or ap_decompose(S)
    F = dec.fusion
    A = S.algebra
    if dec.ap_dim == 0:
        return []
    H = _generic_witness(dec)
    # restrict to AP so eigenspaces live there; off AP the witness vanishes
    Pap = dec.ap_basis @ dec.ap_basis.conj().T
    shift = float(np.linalg.norm(H, 2)) + 1.0
    Tplus = H + shift * Pap
    Kplus = fusion_from_operator(F, Tplus)
    w, _ = eigh_sorted(Tplus)
    w = w[w > 0.5]
    groups = []
    for lam in w:
        if groups and abs(lam - groups[-1][-1]) <= 1e-6 * shift:
            groups[-1].append(lam)
        else:
            groups.append([lam])
    thresholds = [0.5 * (groups[i][-1] + groups[i + 1][0]) for i in range(len(groups) - 1)][::-1]
    thresholds.append(0.5)
    mods, prev = [], np.zeros((A.dim, A.dim), dtype=complex)
    for t in thresholds:
        p, _ = chs_truncate(F, Kplus, t)
        diff = p - prev
        V = orth(diff, A.tol)
        mods.append(pimsner_popa_basis(S.Q, V))
        prev = p
    return mods


@dataclass(frozen=True, eq=False)
class CompactnessReport:
    compact: bool
    ap_dim: int
    wm_dim: int
    modules: tuple[QModule, ...]
    module_ranks: tuple[int, ...]
    module_qdims: tuple[float, ...]
    qdim_total: float
    lifted_total: float


def is_compact_extension(S: DynamicalSystem, bc: BasicConstruction | None = None) -> CompactnessReport:
    dec = ap_decompose(S)
    mods = decomposition_modules(S, dec)
    bc = bc or basic_construction(S.Q)
    qd = tuple(m.q_dim() for m in mods)
    lifted = float(bc.lifted_trace(dec.ap_basis @ dec.ap_basis.conj().T).real) if dec.ap_dim else 0.0
    return CompactnessReport(
        dec.wm_dim == 0, dec.ap_dim, dec.wm_dim, tuple(mods), tuple(m.dim for m in mods), qd, float(sum(qd)), lifted
    )


def test_weak_mixing(S: DynamicalSystem) -> tuple[bool, FusionVector | None]:
    """Every invariant fusion vector in the image of L^2(Q)? Returns (flag, violating vector)."""
    A = S.algebra
    F, Ks = invariant_fusion_vectors(S)
    J = np.stack([embed(F, q, A.one()).coords for q in S.Q.basis], axis=1)
    Jb = orth(J, A.tol)
    best, best_res = None, 0.0
    for K in Ks:
        r = K.coords - Jb @ (Jb.conj().T @ K.coords)
        n = float(np.linalg.norm(r))
        if n > best_res + A.tol.verify:
            best, best_res = r / n, n
    if best is None or best_res <= A.tol.report:
        return True, None
    return False, FusionVector(F, fix_phase(best))


test_weak_mixing.__test__ = False  # keep pytest from collecting it


def popa_probe(S: DynamicalSystem, F: Sequence[Element], wordlen: int = 2) -> tuple[float, str | None]:
    """min over enumerated gamma of max_{f,g} ||E_Q(f sigma_gamma(g))||_2."""
    A = S.algebra
    if not F:
        return 0.0, None
    for f in F:
        if float(np.linalg.norm(cond_expect(S.Q, f).vec())) > A.tol.verify * 100:
            raise ValidationError("popa_probe needs E_Q(f) = 0 for every probe element")
    best, arg = np.inf, None
    for name, U in group_elements(S, wordlen):
        val = 0.0
        for f in F:
            for g in F:
                sg = A.from_vec(U @ g.vec())
                val = max(val, float(np.linalg.norm(cond_expect(S.Q, f @ sg).vec())))
        if val < best - 1e-15:
            best, arg = val, name
    return float(best), arg


def invariant_module_truncate(
    S: DynamicalSystem, V: np.ndarray, eps: float, bc: BasicConstruction | None = None
) -> tuple[QModule, float]:
    """Finitely generated invariant V1 inside V with lifted-trace gap below eps."""
    A = S.algebra
    V = orth(np.asarray(V, dtype=complex), A.tol)
    P = V @ V.conj().T
    tol = A.tol.verify * 100
    for U in S.koopman:
        if np.max(np.abs(U @ P - P @ U), initial=0.0) > tol:
            raise NotAModule("subspace is not invariant under the action")
    for q in S.Q.basis:
        R = A.right_matrix(q)
        if np.max(np.abs(R @ P - P @ R @ P), initial=0.0) > tol:
            raise NotAModule("subspace is not right Q-invariant")
    F = build_fusion(A, S.Q)
    K = fusion_from_operator(F, P)
    p1, mod = chs_truncate(F, K, eps)
    bc = bc or basic_construction(S.Q)
    gap = float((bc.lifted_trace(P) - bc.lifted_trace(p1)).real)
    return mod, gap


def cap_witness(S: DynamicalSystem, xi: Element, module: QModule, wordlen: int = 2) -> float:
    """max over gamma of ||sigma_gamma(xi) - sum_i eta_i kappa_i(gamma)||_2 for the module's basis."""
    A = S.algebra
    worst = 0.0
    for _, U in group_elements(S, wordlen):
        s = A.from_vec(U @ xi.vec())
        approx = pp_expand(S.Q, module.pp_basis, s)
        worst = max(worst, float(np.linalg.norm((s - approx).vec())))
    return worst
