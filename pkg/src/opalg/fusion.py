"""Relative tensor products L^2(N1) (x)_Q L^2(N2) and conditional convolution.

A fusion space is the separation-completion of the algebraic tensor product of
the two L^2 spaces under

    <a (x) b, c (x) d> = tau_2(b^* iota(E_Q(a^* c)) d).

We write the Gram matrix of that form on the product of the two coordinate
bases, diagonalize it, and keep the eigenvectors above the rank cutoff.  With
``G = U diag(lam) U^*`` the frame ``F = diag(sqrt(lam)) U^*`` sends a coefficient
vector on the product basis to orthonormal coordinates of its class, and
``F^+ = U diag(lam^-1/2)`` picks the minimal representative of a class.
Operators that preserve the null space of the form descend to ``F X F^+``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .algebra import Algebra, Element, eigh_sorted, make_algebra, rank_cutoff, trace
from .errors import (
    IdentificationError,
    MassError,
    NotSelfAdjoint,
    NumericalFailure,
    PositivityViolation,
    ShapeError,
)
from .modules import QModule, pimsner_popa_basis
from .subalgebra import Subalgebra, generate_subalgebra

__all__ = [
    "FusionSpace",
    "FusionVector",
    "build_fusion",
    "embed",
    "module_actions",
    "corner_project",
    "cond_convolve",
    "convolution_operator",
    "flip_adjoint",
    "fusion_from_operator",
    "chs_truncate",
    "commutative_fiber_oracle",
    "FiberOracleResult",
]


@dataclass(frozen=True, eq=False)
class FusionSpace:
    N1: Algebra
    Q1: Subalgebra
    N2: Algebra
    Q2: Subalgebra
    iota: np.ndarray  # Q1 coordinates -> Q2 coordinates
    gram: np.ndarray
    frame: np.ndarray  # m x (d1*d2)
    frame_pinv: np.ndarray  # (d1*d2) x m

    @property
    def dim(self) -> int:
        return self.frame.shape[0]

    @property
    def square(self) -> bool:
        """Both sides are the same algebra over the same Q (identity identification)."""
        return self.N1 is self.N2 and self.Q1 is self.Q2 and np.allclose(self.iota, np.eye(self.iota.shape[0]))

    def vector(self, coords: np.ndarray) -> "FusionVector":
        c = np.asarray(coords, dtype=complex).reshape(-1)
        if c.size != self.dim:
            raise ShapeError("coordinate length does not match the fusion frame")
        return FusionVector(self, c)

    def lift(self, X: np.ndarray, check: bool = True) -> np.ndarray:
        """Descend an operator on the algebraic tensor product to the frame."""
        out = self.frame @ X @ self.frame_pinv
        if check:
            leak = self.frame @ X @ (np.eye(X.shape[0]) - self.frame_pinv @ self.frame)
            scale = max(1.0, float(np.linalg.norm(X, 2)) * float(np.linalg.norm(self.frame, 2)))
            if float(np.max(np.abs(leak), initial=0.0)) > self.N1.tol.verify * 1e3 * scale:
                raise NumericalFailure("operator does not preserve the null space of the fusion form")
        return out

    def inner(self, u: "FusionVector", v: "FusionVector") -> complex:
        return complex(np.vdot(u.coords, v.coords))


@dataclass(frozen=True, eq=False)
class FusionVector:
    space: FusionSpace
    coords: np.ndarray

    def __add__(self, other: "FusionVector") -> "FusionVector":
        return FusionVector(self.space, self.coords + other.coords)

    def __sub__(self, other: "FusionVector") -> "FusionVector":
        return FusionVector(self.space, self.coords - other.coords)

    def __mul__(self, c: complex) -> "FusionVector":
        return FusionVector(self.space, c * self.coords)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))


def _verify_identification(Q1: Subalgebra, Q2: Subalgebra, iota: np.ndarray) -> None:
    tol = Q1.parent.tol.verify * 100
    if iota.shape != (Q2.dim, Q1.dim) or Q1.dim != Q2.dim:
        raise IdentificationError("identification must be a square map between equal-dimensional subalgebras")

    def image(x: Element) -> Element:
        return Q2.from_coords(iota @ Q1.coords(x))

    A1, A2 = Q1.parent, Q2.parent
    worst = float(np.linalg.norm(image(A1.one()).vec() - A2.one().vec()))
    for a in Q1.basis:
        ia = image(a)
        worst = max(worst, abs(trace(A1, a) - trace(A2, ia)))
        worst = max(worst, float(np.linalg.norm(image(a.adj()).vec() - ia.adj().vec())))
        for b in Q1.basis:
            worst = max(worst, float(np.linalg.norm(image(a @ b).vec() - (ia @ image(b)).vec())))
    if worst > tol:
        raise IdentificationError(f"identification is not a trace-preserving *-isomorphism ({worst:.2e})")


def _pair_coefficients(N1: Algebra, Q1: Subalgebra) -> np.ndarray:
    """c[i, k, s] = <q_s, a_i^* a_k> for the coordinate basis a_i of L^2(N1)."""
    elems = N1.orthonormal_basis()
    qm = Q1.matrix.conj().T
    d = N1.dim
    c = np.zeros((d, d, Q1.dim), dtype=complex)
    adj = [a.adj() for a in elems]
    for i in range(d):
        for k in range(d):
            c[i, k] = qm @ (adj[i] @ elems[k]).vec()
    return c


def build_fusion(
    N1: Algebra,
    Q1: Subalgebra,
    N2: Algebra | None = None,
    Q2: Subalgebra | None = None,
    identification: np.ndarray | None = None,
) -> FusionSpace:
    N2 = N1 if N2 is None else N2
    Q2 = Q1 if Q2 is None else Q2
    if Q1.parent is not N1 and not Q1.parent.same_as(N1):
        raise ShapeError("Q1 is not a subalgebra of N1")
    if Q2.parent is not N2 and not Q2.parent.same_as(N2):
        raise ShapeError("Q2 is not a subalgebra of N2")
    iota = np.eye(Q1.dim, dtype=complex) if identification is None else np.asarray(identification, dtype=complex)
    if not (Q1 is Q2 and identification is None):
        _verify_identification(Q1, Q2, iota)
    c = _pair_coefficients(N1, Q1)
    # L_{iota(q_s)} on L^2(N2)
    q2 = [Q2.from_coords(iota[:, s]) for s in range(Q1.dim)]
    lq = np.stack([N2.left_matrix(q) for q in q2])
    d1, d2 = N1.dim, N2.dim
    gram = np.einsum("iks,sjl->ijkl", c, lq).reshape(d1 * d2, d1 * d2)
    gram = 0.5 * (gram + gram.conj().T)
    w, u = eigh_sorted(gram)
    cut = rank_cutoff(w, N1.tol)
    if w.size and w[0] < -max(N1.tol.verify, cut) * 10:
        raise PositivityViolation(f"fusion Gram has eigenvalue {w[0]:.3e}")
    keep = w > cut
    # descending eigenvalue order for frame rows
    idx = np.flatnonzero(keep)[::-1]
    lam = w[idx]
    U = u[:, idx]
    frame = (np.sqrt(lam)[:, None]) * U.conj().T
    pinv = U / np.sqrt(lam)[None, :]
    return FusionSpace(N1, Q1, N2, Q2, iota, gram, frame, pinv)


def embed(F: FusionSpace, x: Element, y: Element) -> FusionVector:
    for z, A in ((x, F.N1), (y, F.N2)):
        if z.algebra is not A and not z.algebra.same_as(A):
            raise ShapeError("element does not belong to the fusion factor")
    return FusionVector(F, F.frame @ np.kron(x.vec(), y.vec()))


def left_operator(F: FusionSpace, x: Element) -> np.ndarray:
    return F.lift(np.kron(F.N1.left_matrix(x), np.eye(F.N2.dim)), check=False)


def right_operator(F: FusionSpace, y: Element) -> np.ndarray:
    return F.lift(np.kron(np.eye(F.N1.dim), F.N2.right_matrix(y)), check=False)


def module_actions(F: FusionSpace, side: str, x: Element, v: FusionVector) -> FusionVector:
    if side == "left":
        if x.algebra is not F.N1 and not x.algebra.same_as(F.N1):
            raise ShapeError("left action needs an element of N1")
        return FusionVector(F, left_operator(F, x) @ v.coords)
    if side == "right":
        if x.algebra is not F.N2 and not x.algebra.same_as(F.N2):
            raise ShapeError("right action needs an element of N2")
        return FusionVector(F, right_operator(F, x) @ v.coords)
    raise ShapeError(f"side must be 'left' or 'right', got {side!r}")


def _iota_one(F: FusionSpace) -> np.ndarray:
    """Matrix of g -> embed(g, 1), from L^2(N1) coordinates to the frame."""
    return F.frame @ np.kron(np.eye(F.N1.dim), F.N2.one().vec()[:, None])


def corner_project(F: FusionSpace, v: FusionVector) -> Element:
    return F.N1.from_vec(_iota_one(F).conj().T @ v.coords)


def convolution_operator(F: FusionSpace, K: FusionVector) -> np.ndarray:
    """Matrix of f -> K *_Q f from L^2(N2) to L^2(N1) coordinates."""
    io = _iota_one(F).conj().T
    d2 = F.N2.dim
    rep = F.frame_pinv @ K.coords
    cols = []
    for f in F.N2.orthonormal_basis():
        rf = np.kron(np.eye(F.N1.dim), F.N2.right_matrix(f))
        cols.append(io @ (F.frame @ (rf @ rep)))
    return np.stack(cols, axis=1) if d2 else np.zeros((F.N1.dim, 0))


def cond_convolve(F: FusionSpace, K: FusionVector, f: Element) -> Element:
    if f.algebra is not F.N2 and not f.algebra.same_as(F.N2):
        raise ShapeError("f must belong to N2")
    moved = module_actions(F, "right", f, K)
    return corner_project(F, moved)


def flip_adjoint(F: FusionSpace, K: FusionVector) -> FusionVector:
    """Class of sum conj(c_ij) a_j^* (x) a_i^*, the kernel of the adjoint operator."""
    if not F.square:
        raise ShapeError("flip adjoint needs the same algebra and subalgebra on both sides")
    d = F.N1.dim
    S = F.N1.adjoint_permutation()
    C = (F.frame_pinv @ K.coords).reshape(d, d)
    Cf = S @ C.conj().T @ S.T
    return FusionVector(F, F.frame @ Cf.reshape(-1))


def fusion_from_operator(F: FusionSpace, T: np.ndarray) -> FusionVector:
    """The fusion vector whose convolution operator is T (least squares, residual checked)."""
    m = F.dim
    cols = [convolution_operator(F, FusionVector(F, e)).reshape(-1) for e in np.eye(m, dtype=complex)]
    # K -> T_K is complex linear
    M = np.stack(cols, axis=1)
    k, *_ = np.linalg.lstsq(M, np.asarray(T, dtype=complex).reshape(-1), rcond=None)
    resid = float(np.linalg.norm(M @ k - T.reshape(-1)))
    if resid > F.N1.tol.verify * 1e3 * max(1.0, float(np.linalg.norm(T))):
        raise NumericalFailure(f"operator is not a conditional convolution (residual {resid:.2e})")
    return FusionVector(F, k)


def chs_truncate(F: FusionSpace, K: FusionVector, eps: float) -> tuple[np.ndarray, QModule]:
    """Spectral projection 1_[eps, inf)(|T_K|) of the symmetrized kernel and its range module."""
    Ks = 0.5 * (K + flip_adjoint(F, K))
    T = convolution_operator(F, Ks)
    if float(np.max(np.abs(T - T.conj().T), initial=0.0)) > F.N1.tol.verify * 1e3 * max(1.0, float(np.linalg.norm(T))):
        raise NotSelfAdjoint("symmetrized convolution operator is not self-adjoint")
    T = 0.5 * (T + T.conj().T)
    w, v = eigh_sorted(T)
    keep = np.abs(w) >= eps
    V = v[:, keep]
    p = V @ V.conj().T
    mod = pimsner_popa_basis(F.Q1, V)
    return p, mod


# ---------------------------------------------------------------------------
# commutative oracle


@dataclass(frozen=True)
class FiberOracleResult:
    atoms: tuple[tuple[int, int], ...]
    masses: tuple[float, ...]
    fusion_dim: int
    dim_match: bool
    max_residual: float

    @property
    def ok(self) -> bool:
        return self.dim_match and self.max_residual <= 1e-7


def commutative_fiber_oracle(points: int, masses: Sequence[float], partition: Sequence[int]) -> FiberOracleResult:
    """Compare L^2(X x_Y X) with L^2(X) (x)_{L^inf(Y)} L^2(X) on indicator tensors."""
    mu = np.asarray(masses, dtype=float)
    if mu.shape != (points,) or len(partition) != points:
        raise ShapeError("masses and partition must have one entry per point")
    if np.any(mu <= 0):
        raise MassError("all point masses must be strictly positive")
    labels = sorted(set(partition))
    nu = {y: float(mu[[i for i in range(points) if partition[i] == y]].sum()) for y in labels}
    atoms, amass = [], []
    for x in range(points):
        for x2 in range(points):
            if partition[x] == partition[x2]:
                atoms.append((x, x2))
                amass.append(mu[x] * mu[x2] / nu[partition[x]])
    A = make_algebra([1] * points, list(mu / mu.sum()))
    units = A.matrix_units()
    gens = [sum((units[i] for i in range(points) if partition[i] == y), A.zero()) for y in labels]
    Q = generate_subalgebra(A, gens)
    F = build_fusion(A, Q)
    lookup = {a: m for a, m in zip(atoms, amass)}
    vecs = {(x, x2): embed(F, units[x], units[x2]).coords for x in range(points) for x2 in range(points)}
    worst = 0.0
    for (x, x2), v in vecs.items():
        for (u, u2), w in vecs.items():
            exact = lookup.get((x, x2), 0.0) if (x, x2) == (u, u2) else 0.0
            worst = max(worst, abs(complex(np.vdot(v, w)) - exact))
    return FiberOracleResult(tuple(atoms), tuple(float(m) for m in amass), F.dim, F.dim == len(atoms), worst)
