"""Subalgebras, conditional expectations and the basic construction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .algebra import Algebra, Element, bicommutant, orth, trace
from .errors import NotAModule, NotAnAlgebra, NumericalFailure, ShapeError

__all__ = [
    "Subalgebra",
    "generate_subalgebra",
    "subalgebra_from_basis",
    "scalar_subalgebra",
    "full_subalgebra",
    "cond_expect",
    "q_inner",
    "expectation_residuals",
    "BasicConstruction",
    "basic_construction",
    "dimQ",
]


@dataclass(frozen=True, eq=False)
class Subalgebra:
    parent: Algebra
    basis: tuple[Element, ...]
    contains_unit: bool = True

    @property
    def matrix(self) -> np.ndarray:
        """d x r matrix whose columns are the coordinate vectors of the basis."""
        return np.stack([b.vec() for b in self.basis], axis=1)

    @property
    def projection(self) -> np.ndarray:
        b = self.matrix
        return b @ b.conj().T

    @property
    def dim(self) -> int:
        return len(self.basis)

    def coords(self, x: Element) -> np.ndarray:
        return self.matrix.conj().T @ x.vec()

    def from_coords(self, c: np.ndarray) -> Element:
        return self.parent.from_vec(self.matrix @ c)

    def contains(self, x: Element, tol: float | None = None) -> bool:
        tol = self.parent.tol.verify if tol is None else tol
        v = x.vec()
        return float(np.linalg.norm(v - self.projection @ v)) <= tol * max(1.0, float(np.linalg.norm(v)))


def _check_parent(Q: Subalgebra, x: Element) -> None:
    if x.algebra is not Q.parent and not x.algebra.same_as(Q.parent):
        raise ShapeError("element is not in the ambient algebra of Q")


def generate_subalgebra(A: Algebra, generators: Sequence[Element]) -> Subalgebra:
    return Subalgebra(A, tuple(bicommutant(A, list(generators))), True)


def subalgebra_from_basis(A: Algebra, vectors: np.ndarray) -> Subalgebra:
    """Wrap a coordinate subspace known to be a unital *-subalgebra, after checking it."""
    basis = orth(np.asarray(vectors, dtype=complex), A.tol)
    Q = Subalgebra(A, tuple(A.from_vec(c) for c in basis.T), True)
    verify_subalgebra(Q)
    return Q


def verify_subalgebra(Q: Subalgebra, tol: float | None = None) -> float:
    """Largest closure residual (unit, adjoint, product); raises when above tolerance."""
    A = Q.parent
    tol = A.tol.verify * 100 if tol is None else tol
    proj = Q.projection
    worst = float(np.linalg.norm(A.one().vec() - proj @ A.one().vec()))
    for x in Q.basis:
        v = x.adj().vec()
        worst = max(worst, float(np.linalg.norm(v - proj @ v)))
        for y in Q.basis:
            v = (x @ y).vec()
            worst = max(worst, float(np.linalg.norm(v - proj @ v)))
    if worst > tol:
        raise NotAnAlgebra(f"subspace is not a unital *-subalgebra (residual {worst:.2e})")
    return worst


def scalar_subalgebra(A: Algebra) -> Subalgebra:
    return Subalgebra(A, (A.one(),), True)


def full_subalgebra(A: Algebra) -> Subalgebra:
    return Subalgebra(A, tuple(A.orthonormal_basis()), True)


def cond_expect(Q: Subalgebra, x: Element) -> Element:
    _check_parent(Q, x)
    return Q.parent.from_vec(Q.projection @ x.vec())


def q_inner(Q: Subalgebra, x: Element, y: Element) -> Element:
    """<x, y>_Q = E_Q(x^* y)."""
    _check_parent(Q, x)
    _check_parent(Q, y)
    return cond_expect(Q, x.adj() @ y)


def expectation_residuals(Q: Subalgebra, x: Element, a: Element, b: Element) -> dict[str, float]:
    """Residuals of the four axioms of E_Q at x, with a, b taken from Q."""
    A = Q.parent
    e = cond_expect(Q, x)
    pos = np.concatenate([np.linalg.eigvalsh(0.5 * (m + m.conj().T)) for m in cond_expect(Q, x.adj() @ x).blocks])
    return {
        "idempotent": float(np.linalg.norm((cond_expect(Q, e) - e).vec())),
        "bimodular": float(np.linalg.norm((cond_expect(Q, a @ x @ b) - a @ e @ b).vec())),
        "positive": float(max(0.0, -pos.min())),
        "trace": abs(trace(A, e) - trace(A, x)),
    }


# ---------------------------------------------------------------------------
# basic construction


@dataclass(frozen=True, eq=False)
class BasicConstruction:
    Q: Subalgebra
    ambient_dim: int
    algebra_basis: np.ndarray  # (d*d, m): orthonormal basis of the operator span, flattened row-major
    e_Q: np.ndarray
    weight: np.ndarray  # d x d matrix W with lifted_trace(T) = Tr(W T) on the span

    def lifted_trace(self, T: np.ndarray) -> complex:
        T = np.asarray(T, dtype=complex)
        if not self.contains(T):
            raise NotAModule("operator is not in the basic construction")
        return complex(np.sum(self.weight.T * T))

    def contains(self, T: np.ndarray, tol: float | None = None) -> bool:
        tol = self.Q.parent.tol.verify * 100 if tol is None else tol
        v = np.asarray(T, dtype=complex).reshape(-1)
        res = v - self.algebra_basis @ (self.algebra_basis.conj().T @ v)
        return float(np.linalg.norm(res)) <= tol * max(1.0, float(np.linalg.norm(v)))

    def element(self, j: int) -> np.ndarray:
        d = self.ambient_dim
        return self.algebra_basis[:, j].reshape(d, d)


def basic_construction(Q: Subalgebra) -> BasicConstruction:
    A = Q.parent
    d = A.dim
    eq = Q.projection
    elems = A.orthonormal_basis()
    lefts = [A.left_matrix(x) for x in elems]
    ops, targets = [], []
    for x, lx in zip(elems, lefts):
        for y, ly in zip(elems, lefts):
            ops.append((lx @ eq @ ly).reshape(-1))
            targets.append(trace(A, x @ y))
    O = np.stack(ops, axis=1)
    basis = orth(O, A.tol)

    # closure of the span under products, asserted rather than assumed
    sample = [basis[:, j].reshape(d, d) for j in range(basis.shape[1])]
    step = max(1, len(sample) // 12)
    worst = 0.0
    for a in sample[::step]:
        for b in sample[::step]:
            v = (a @ b).reshape(-1)
            worst = max(worst, float(np.linalg.norm(v - basis @ (basis.conj().T @ v))))
    if worst > A.tol.verify * 100:
        raise NumericalFailure(f"span of x e_Q y is not closed under products ({worst:.2e})")

    # lifted trace: Tr(W O) = tau(xy), W taken inside the (conjugated) span
    # Tr(W O) = sum_ij W_ji O_ij = <conj(W^T), O> so solve for w = vec(W^T) in rows O^T
    rows = O.T
    t = np.asarray(targets)
    w, *_ = np.linalg.lstsq(rows, t, rcond=None)
    resid = float(np.max(np.abs(rows @ w - t)))
    if resid > A.tol.verify * 100:
        raise NumericalFailure(f"lifted trace equations inconsistent (residual {resid:.2e})")
    W = w.reshape(d, d).T
    return BasicConstruction(Q, d, basis, eq, W)


def _check_right_invariant(Q: Subalgebra, V: np.ndarray) -> None:
    A = Q.parent
    proj = V @ V.conj().T
    worst = 0.0
    for q in Q.basis:
        rq = A.right_matrix(q)
        m = rq @ V
        worst = max(worst, float(np.linalg.norm(m - proj @ m)))
    if worst > A.tol.verify * 100:
        raise NotAModule(f"subspace is not right Q-invariant (residual {worst:.2e})")


def dimQ(Q: Subalgebra, V: np.ndarray, bc: BasicConstruction | None = None) -> float:
    """Q-dimension of a right Q-invariant subspace given by orthonormal coordinate columns."""
    from .modules import pimsner_popa_basis

    V = np.asarray(V, dtype=complex)
    if V.ndim == 1:
        V = V[:, None]
    _check_right_invariant(Q, V)
    bc = bc or basic_construction(Q)
    pv = V @ V.conj().T
    via_trace = bc.lifted_trace(pv).real
    mod = pimsner_popa_basis(Q, V)
    via_basis = sum(trace(Q.parent, p).real for p in mod.projections)
    if abs(via_trace - via_basis) > Q.parent.tol.report:
        raise NumericalFailure(
            f"dim_Q mismatch: lifted trace {via_trace:.10f} vs Pimsner-Popa {via_basis:.10f}"
        )
    return float(via_trace)
