"""Finite-dimensional tracial *-algebras.

An :class:`Algebra` is a direct sum of full matrix blocks ``M_{n_1} + ... + M_{n_r}``
with the faithful trace ``tau(x) = sum_i alpha_i * Tr(x_i) / n_i``.  Elements are
stored as tuples of dense complex blocks.  The Hilbert space ``L^2(A, tau)`` is
coordinatized by the weighted vectorization

    vec(x) = concat_i sqrt(alpha_i / n_i) * x_i.ravel()

so that the Euclidean inner product of coordinate vectors equals ``tau(x^* y)``.
Every projection, orthogonalization and commutant computation in the package is
expressed in these coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NotSelfAdjoint, NumericalFailure, ShapeError, WeightSumError

__all__ = [
    "ToleranceProfile",
    "Algebra",
    "Element",
    "make_algebra",
    "trace",
    "hs_inner",
    "hs_norm",
    "functional_calculus",
    "indicator_geq",
    "inv_sqrt_geq",
    "commutant",
    "bicommutant",
    "center",
    "null_space",
    "orth",
    "fix_phase",
    "eigh_sorted",
    "rank_cutoff",
    "wedderburn",
]


@dataclass(frozen=True)
class ToleranceProfile:
    rank_rel: float = 1e-9
    rank_abs: float = 1e-12
    verify: float = 1e-10
    report: float = 1e-7

    def __post_init__(self) -> None:
        for name in ("rank_rel", "rank_abs", "verify", "report"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name} must be positive")
        if self.rank_abs > self.rank_rel:
            raise ValueError("rank_abs must not exceed rank_rel")

    def replace(self, **kw: float) -> "ToleranceProfile":
        vals = {k: getattr(self, k) for k in ("rank_rel", "rank_abs", "verify", "report")}
        vals.update({k: float(v) for k, v in kw.items() if v is not None})
        return ToleranceProfile(**vals)


DEFAULT_TOL = ToleranceProfile()


# ---------------------------------------------------------------------------
# numerical helpers


def rank_cutoff(values: np.ndarray, tol: ToleranceProfile) -> float:
    """Relative cutoff with absolute floor, from the magnitudes in ``values``."""
    vmax = float(np.max(np.abs(values))) if np.size(values) else 0.0
    return max(tol.rank_rel * vmax, tol.rank_abs)


def _check_band(values: np.ndarray, cut: float, band: float = 100.0) -> None:
    amb = np.abs(values)
    amb = amb[(amb > cut / band) & (amb < cut * band)]
    if amb.size:
        raise NumericalFailure(
            f"rank decision ambiguous: singular value {amb[0]:.3e} near cutoff {cut:.3e}"
        )


def fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real and positive."""
    v = np.array(vectors, dtype=complex, copy=True)
    if v.ndim == 1:
        return fix_phase(v[:, None])[:, 0]
    for j in range(v.shape[1]):
        col = v[:, j]
        mags = np.abs(col)
        if mags.size == 0:
            continue
        # first index within rounding of the max keeps ties deterministic
        k = int(np.flatnonzero(mags >= mags.max() * (1 - 1e-9))[0])
        if mags[k] > 0:
            v[:, j] = col * (np.conj(col[k]) / mags[k])
    return v


def eigh_sorted(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian eigendecomposition: ascending eigenvalues, phase-fixed vectors."""
    h = 0.5 * (h + h.conj().T)
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalFailure(f"eigensolver did not converge: {exc}") from exc
    return w, fix_phase(v)


def null_space(m: np.ndarray, tol: ToleranceProfile = DEFAULT_TOL, *, strict: bool = False) -> np.ndarray:
    """Orthonormal basis (columns) of the kernel of ``m``."""
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    ncol = m.shape[1]
    if m.shape[0] == 0:
        return np.eye(ncol, dtype=complex)
    _, s, vh = np.linalg.svd(m, full_matrices=True)
    cut = rank_cutoff(s, tol)
    if strict:
        _check_band(s, cut)
    rank = int(np.sum(s > cut))
    return fix_phase(vh[rank:].conj().T)


def orth(m: np.ndarray, tol: ToleranceProfile = DEFAULT_TOL, *, strict: bool = False) -> np.ndarray:
    """Orthonormal basis (columns) of the column space of ``m``."""
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    if m.shape[1] == 0:
        return np.zeros((m.shape[0], 0), dtype=complex)
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    cut = rank_cutoff(s, tol)
    if strict:
        _check_band(s, cut)
    rank = int(np.sum(s > cut))
    return fix_phase(u[:, :rank])


# ---------------------------------------------------------------------------
# algebra and elements


@dataclass(frozen=True, eq=False)
class Algebra:
    blocks: tuple[int, ...]
    weights: tuple[float, ...]
    tol: ToleranceProfile = field(default=DEFAULT_TOL)

    @property
    def dim(self) -> int:
        """Dimension of L^2(A) (= sum of n_i^2)."""
        return sum(n * n for n in self.blocks)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for n in self.blocks:
            out.append(acc)
            acc += n * n
        return tuple(out)

    @property
    def scales(self) -> np.ndarray:
        """Per-coordinate factor sqrt(alpha_i / n_i) of the weighted vectorization."""
        return np.concatenate(
            [np.full(n * n, np.sqrt(a / n)) for n, a in zip(self.blocks, self.weights)]
        )

    @property
    def is_commutative(self) -> bool:
        return all(n == 1 for n in self.blocks)

    def same_as(self, other: "Algebra") -> bool:
        return self.blocks == other.blocks and np.allclose(self.weights, other.weights, atol=1e-14)

    # construction -----------------------------------------------------------------
    def element(self, blocks: Sequence) -> "Element":
        if len(blocks) != len(self.blocks):
            raise ShapeError(f"expected {len(self.blocks)} blocks, got {len(blocks)}")
        out = []
        for n, b in zip(self.blocks, blocks):
            arr = np.array(b, dtype=complex).reshape(-1) if np.ndim(b) < 2 and n == 1 else np.array(b, dtype=complex)
            arr = arr.reshape(n, n) if arr.size == n * n else arr
            if arr.shape != (n, n):
                raise ShapeError(f"block of shape {arr.shape} does not match size {n}")
            out.append(arr)
        return Element(self, tuple(out))

    def scalars(self, values: Iterable[complex]) -> "Element":
        """Element with every block a scalar multiple of the identity."""
        vals = list(values)
        if len(vals) != len(self.blocks):
            raise ShapeError("one scalar per block required")
        return Element(self, tuple(v * np.eye(n, dtype=complex) for v, n in zip(vals, self.blocks)))

    def zero(self) -> "Element":
        return Element(self, tuple(np.zeros((n, n), dtype=complex) for n in self.blocks))

    def one(self) -> "Element":
        return Element(self, tuple(np.eye(n, dtype=complex) for n in self.blocks))

    def from_vec(self, v: np.ndarray) -> "Element":
        v = np.asarray(v, dtype=complex).reshape(-1)
        if v.size != self.dim:
            raise ShapeError(f"vector of length {v.size} does not match dim {self.dim}")
        raw = v / self.scales
        out = []
        for off, n in zip(self.offsets, self.blocks):
            out.append(raw[off:off + n * n].reshape(n, n).copy())
        return Element(self, tuple(out))

    def matrix_units(self) -> list["Element"]:
        """Matrix units E^{(b)}_{pq}, ordered block by block, row-major."""
        units = []
        for b, n in enumerate(self.blocks):
            for p in range(n):
                for q in range(n):
                    blocks = [np.zeros((m, m), dtype=complex) for m in self.blocks]
                    blocks[b][p, q] = 1.0
                    units.append(Element(self, tuple(blocks)))
        return units

    def unit_index(self) -> list[tuple[int, int, int]]:
        return [(b, p, q) for b, n in enumerate(self.blocks) for p in range(n) for q in range(n)]

    def orthonormal_basis(self) -> list["Element"]:
        """The Elements whose coordinate vectors are the standard basis of L^2(A)."""
        return [self.from_vec(e) for e in np.eye(self.dim)]

    def random_element(self, rng: np.random.Generator, hermitian: bool = False) -> "Element":
        blocks = []
        for n in self.blocks:
            m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            if hermitian:
                m = 0.5 * (m + m.conj().T)
            blocks.append(m)
        return Element(self, tuple(blocks))

    # coordinate matrices ------------------------------------------------------------
    def left_matrix(self, x: "Element") -> np.ndarray:
        """Matrix of y -> x y on L^2 coordinates."""
        return _block_diag([np.kron(b, np.eye(b.shape[0])) for b in x.blocks])

    def right_matrix(self, x: "Element") -> np.ndarray:
        """Matrix of y -> y x on L^2 coordinates."""
        return _block_diag([np.kron(np.eye(b.shape[0]), b.T) for b in x.blocks])

    def adjoint_permutation(self) -> np.ndarray:
        """Real permutation S with vec(x^*) = S conj(vec(x))."""
        d = self.dim
        s = np.zeros((d, d))
        for off, n in zip(self.offsets, self.blocks):
            for p in range(n):
                for q in range(n):
                    s[off + q * n + p, off + p * n + q] = 1.0
        return s

    def block_diag_matrix(self, x: "Element") -> np.ndarray:
        """The element as one block-diagonal matrix acting on C^{sum n_i}."""
        return _block_diag(list(x.blocks))

    def from_block_diag(self, m: np.ndarray) -> "Element":
        out, acc = [], 0
        for n in self.blocks:
            out.append(np.array(m[acc:acc + n, acc:acc + n], dtype=complex))
            acc += n
        return Element(self, tuple(out))

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"Algebra(blocks={list(self.blocks)}, weights={[round(w, 12) for w in self.weights]})"


def _block_diag(mats: Sequence[np.ndarray]) -> np.ndarray:
    size = sum(m.shape[0] for m in mats)
    out = np.zeros((size, size), dtype=complex)
    acc = 0
    for m in mats:
        k = m.shape[0]
        out[acc:acc + k, acc:acc + k] = m
        acc += k
    return out


@dataclass(frozen=True, eq=False)
class Element:
    algebra: Algebra
    blocks: tuple[np.ndarray, ...]

    def _check(self, other: "Element") -> None:
        if not isinstance(other, Element):
            raise TypeError("expected an Element")
        if other.algebra is not self.algebra and not other.algebra.same_as(self.algebra):
            raise ShapeError("elements belong to different algebras")

    def __add__(self, other: "Element") -> "Element":
        self._check(other)
        return Element(self.algebra, tuple(a + b for a, b in zip(self.blocks, other.blocks)))

    def __sub__(self, other: "Element") -> "Element":
        self._check(other)
        return Element(self.algebra, tuple(a - b for a, b in zip(self.blocks, other.blocks)))

    def __neg__(self) -> "Element":
        return Element(self.algebra, tuple(-a for a in self.blocks))

    def __mul__(self, c: complex) -> "Element":
        if isinstance(c, Element):
            raise TypeError("use @ for the algebra product")
        return Element(self.algebra, tuple(c * a for a in self.blocks))

    __rmul__ = __mul__

    def __truediv__(self, c: complex) -> "Element":
        return self * (1.0 / c)

    def __matmul__(self, other: "Element") -> "Element":
        self._check(other)
        return Element(self.algebra, tuple(a @ b for a, b in zip(self.blocks, other.blocks)))

    def adj(self) -> "Element":
        return Element(self.algebra, tuple(a.conj().T for a in self.blocks))

    def vec(self) -> np.ndarray:
        raw = np.concatenate([b.reshape(-1) for b in self.blocks])
        return raw * self.algebra.scales

    def op_norm(self) -> float:
        return max((np.linalg.norm(b, 2) for b in self.blocks), default=0.0)

    def is_self_adjoint(self, tol: float) -> bool:
        return all(np.max(np.abs(b - b.conj().T), initial=0.0) <= tol for b in self.blocks)

    def close_to(self, other: "Element", tol: float) -> bool:
        return hs_norm(self - other) <= tol

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"Element({[np.round(b, 6).tolist() for b in self.blocks]})"


# ---------------------------------------------------------------------------
# operations


def make_algebra(blocks: Sequence[int], weights: Sequence[float], tol: ToleranceProfile | None = None) -> Algebra:
    tol = tol or DEFAULT_TOL
    blocks = tuple(int(n) for n in blocks)
    weights = tuple(float(w) for w in weights)
    if len(blocks) != len(weights):
        raise ShapeError("blocks and weights differ in length")
    if not blocks:
        raise ShapeError("an algebra needs at least one block")
    if any(n < 1 for n in blocks):
        raise ShapeError("block sizes must be >= 1")
    if any(not w > 0 for w in weights):
        raise WeightSumError("weights must be strictly positive")
    total = sum(weights)
    if abs(total - 1.0) > tol.verify:
        raise WeightSumError(f"weights sum to {total!r}, not 1")
    weights = tuple(w / total for w in weights)
    return Algebra(blocks, weights, tol)


def trace(A: Algebra, x: Element) -> complex:
    if x.algebra is not A and not x.algebra.same_as(A):
        raise ShapeError("element is not in this algebra")
    return complex(sum(a * np.trace(b) / n for a, b, n in zip(A.weights, x.blocks, A.blocks)))


def hs_inner(A: Algebra, x: Element, y: Element) -> complex:
    """tau(x^* y)."""
    for z in (x, y):
        if z.algebra is not A and not z.algebra.same_as(A):
            raise ShapeError("element is not in this algebra")
    return complex(np.vdot(x.vec(), y.vec()))


def hs_norm(x: Element) -> float:
    return float(np.linalg.norm(x.vec()))


# functional calculus -------------------------------------------------------------


class _SpectralFunction:
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str):
        self.fn = fn
        self.name = name

    def __call__(self, lam: np.ndarray) -> np.ndarray:
        return self.fn(lam)

    def __repr__(self) -> str:  # pragma: no cover
        return self.name


def indicator_geq(eps: float) -> _SpectralFunction:
    return _SpectralFunction(lambda lam: (lam >= eps).astype(float), f"1[>= {eps}]")


def inv_sqrt_geq(eps: float) -> _SpectralFunction:
    def fn(lam: np.ndarray) -> np.ndarray:
        out = np.zeros_like(lam, dtype=float)
        keep = lam >= eps
        out[keep] = lam[keep] ** -0.5
        return out

    return _SpectralFunction(fn, f"x^-1/2 1[>= {eps}]")


def functional_calculus(A: Algebra, x: Element, f: Callable[[np.ndarray], np.ndarray]) -> Element:
    if not x.is_self_adjoint(A.tol.verify * max(1.0, x.op_norm())):
        raise NotSelfAdjoint("functional calculus needs a self-adjoint element")
    out = []
    for b in x.blocks:
        w, v = eigh_sorted(b)
        fw = np.asarray(f(w), dtype=complex)
        out.append((v * fw) @ v.conj().T)
    return Element(A, tuple(out))


# commutants ------------------------------------------------------------------------


def commutant(A: Algebra, S: Sequence[Element], *, strict: bool = True) -> np.ndarray:
    """Orthonormal coordinate basis (columns) of {y in A : ys = sy for all s in S}."""
    d = A.dim
    if not S:
        return np.eye(d, dtype=complex)
    rows = [A.left_matrix(s) - A.right_matrix(s) for s in S]
    m = np.vstack(rows)
    scale = max(1.0, max(s.op_norm() for s in S))
    return null_space(m / scale, A.tol, strict=strict)


def _closure_generators(A: Algebra, S: Sequence[Element]) -> list[Element]:
    gens = [A.one()]
    for s in S:
        gens.append(s)
        gens.append(s.adj())
    return gens


def _matrix_commutant(mats: Sequence[np.ndarray], tol: ToleranceProfile) -> list[np.ndarray]:
    """Orthonormal (Frobenius) basis of the commutant of ``mats`` inside M_r."""
    r = mats[0].shape[0]
    eye = np.eye(r)
    rows = [np.kron(m, eye) - np.kron(eye, m.T) for m in mats]
    scale = max(1.0, max(float(np.linalg.norm(m, 2)) for m in mats))
    ns = null_space(np.vstack(rows) / scale, tol, strict=True)
    return [c.reshape(r, r) for c in ns.T]


def bicommutant(A: Algebra, S: Sequence[Element]) -> list[Element]:
    """Orthonormal basis of the von Neumann algebra generated by S (and 1) inside A.

    Both commutant passes run in M_r, r = sum n_i, where A sits block-diagonally;
    relative commutants inside A would be too large when A is not a factor.
    """
    gens = [A.block_diag_matrix(g) for g in _closure_generators(A, S)]
    first = _matrix_commutant(gens, A.tol)
    second = _matrix_commutant(first, A.tol)
    vecs = np.stack([A.from_block_diag(m).vec() for m in second], axis=1)
    basis = orth(vecs, A.tol)
    _assert_closed(A, basis)
    return [A.from_vec(c) for c in basis.T]


def _assert_closed(A: Algebra, basis: np.ndarray) -> None:
    proj = basis @ basis.conj().T
    elems = [A.from_vec(c) for c in basis.T]
    worst = 0.0
    for x in elems:
        xs = x.adj().vec()
        worst = max(worst, float(np.linalg.norm(xs - proj @ xs)))
        for y in elems:
            v = (x @ y).vec()
            worst = max(worst, float(np.linalg.norm(v - proj @ v)))
    if worst > A.tol.verify * 10 * max(1.0, float(np.max(A.scales ** -1))):
        raise NumericalFailure(f"generated span not closed under product/adjoint (residual {worst:.2e})")


def center(A: Algebra) -> list[Element]:
    """Orthonormal basis of Z(A) = A' cap A."""
    basis = commutant(A, A.matrix_units())
    return [A.from_vec(c) for c in basis.T]


# Wedderburn decomposition ---------------------------------------------------------


@dataclass
class WedderburnMap:
    """Isomorphism between a *-subalgebra of M_r and an abstract Algebra."""

    algebra: Algebra
    units: list[list[np.ndarray]]  # per block: flattened matrix units e_{pq} (r x r), row-major
    multiplicity: list[int]

    def to_element(self, op: np.ndarray) -> Element:
        out = []
        for b, n in enumerate(self.algebra.blocks):
            m = self.multiplicity[b]
            blk = np.zeros((n, n), dtype=complex)
            for p in range(n):
                for q in range(n):
                    # coefficient of e_pq is Tr(e_qp op) / rank(e_11)
                    blk[p, q] = np.trace(self.units[b][q * n + p] @ op) / m
            out.append(blk)
        return Element(self.algebra, tuple(out))

    def to_operator(self, x: Element) -> np.ndarray:
        r = self.units[0][0].shape[0]
        op = np.zeros((r, r), dtype=complex)
        for b, n in enumerate(self.algebra.blocks):
            blk = x.blocks[b]
            for p in range(n):
                for q in range(n):
                    if blk[p, q] != 0:
                        op = op + blk[p, q] * self.units[b][p * n + q]
        return op


def _cluster(values: np.ndarray, gap: float) -> list[np.ndarray]:
    groups: list[list[int]] = []
    for i, v in enumerate(values):
        if groups and abs(v - values[groups[-1][-1]]) <= gap:
            groups[-1].append(i)
        else:
            groups.append([i])
    return [np.array(g) for g in groups]


def wedderburn(
    ops: Sequence[np.ndarray],
    state: Callable[[np.ndarray], complex],
    tol: ToleranceProfile = DEFAULT_TOL,
    seed: int = 20240917,
) -> WedderburnMap:
    """Decompose the unital *-algebra spanned by ``ops`` (r x r matrices) into blocks.

    ``state`` must be a faithful trace on that algebra; its values on the minimal
    central projections become the block weights.
    """
    r = ops[0].shape[0]
    flat = np.stack([o.reshape(-1) for o in ops], axis=1)
    basis = orth(flat, tol)
    mats = [basis[:, j].reshape(r, r) for j in range(basis.shape[1])]
    rng = np.random.default_rng(seed)

    # center: coefficient vectors c with [sum c_j B_j, B_l] = 0 for all l
    rows = []
    for bl in mats:
        rows.append(np.stack([(bj @ bl - bl @ bj).reshape(-1) for bj in mats], axis=1))
    zc = null_space(np.vstack(rows), tol)
    zmats = [sum(c[j] * mats[j] for j in range(len(mats))) for c in zc.T]
    coeffs = rng.standard_normal(len(zmats))
    h = sum(c * 0.5 * (z + z.conj().T) for c, z in zip(coeffs, zmats))
    w, v = eigh_sorted(h)
    spread = max(1.0, float(np.max(np.abs(w))))
    groups = _cluster(w, 1e-6 * spread)
    if len(groups) != len(zmats):
        raise NumericalFailure("could not separate the minimal central projections")

    blocks, weights, units, mult = [], [], [], []
    for g in groups:
        z = v[:, g] @ v[:, g].conj().T
        corner = orth(np.stack([(z @ m @ z).reshape(-1) for m in mats], axis=1), tol)
        cm = [corner[:, j].reshape(r, r) for j in range(corner.shape[1])]
        n = int(round(np.sqrt(len(cm))))
        if n * n != len(cm):
            raise NumericalFailure("corner algebra dimension is not a square")
        kc = rng.standard_normal(len(cm))
        k = sum(c * 0.5 * (m + m.conj().T) for c, m in zip(kc, cm))
        # restrict to the range of z
        zr = v[:, g]
        kw, kv = eigh_sorted(zr.conj().T @ k @ zr)
        kspread = max(1.0, float(np.max(np.abs(kw))))
        kg = _cluster(kw, 1e-6 * kspread)
        if len(kg) != n:
            raise NumericalFailure("could not split a factor into minimal projections")
        e = [zr @ kv[:, sub] @ kv[:, sub].conj().T @ zr.conj().T for sub in kg]
        m_rank = len(kg[0])
        e1 = [None] * n
        e1[0] = e[0]
        for j in range(1, n):
            best = max(cm, key=lambda a: np.linalg.norm(e[0] @ a @ e[j]))
            vv = e[0] @ best @ e[j]
            c = np.trace(vv @ vv.conj().T).real / m_rank
            e1[j] = vv / np.sqrt(c)
        u = []
        for p in range(n):
            for q in range(n):
                u.append(e1[p].conj().T @ e1[q] if p else e1[q])
        # row 0 is e_{0q}; rows p>0 are e_{p0} e_{0q} with e_{p0} = e_{0p}^*
        units.append(u)
        mult.append(m_rank)
        blocks.append(n)
        weights.append(float(np.real(state(z))))
    alg = make_algebra(blocks, weights, tol.replace(verify=max(tol.verify, 1e-8)))
    wm = WedderburnMap(Algebra(alg.blocks, alg.weights, tol), units, mult)
    for m in mats[: min(len(mats), 12)]:
        if abs(state(m) - trace(wm.algebra, wm.to_element(m))) > 1e3 * tol.verify * max(1.0, np.linalg.norm(m)):
            raise NumericalFailure("state is not the trace of the decomposed algebra")
    return wm
