"""Right Q-modules inside L^2(N): conditional normalization and Pimsner-Popa bases."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .algebra import Element, functional_calculus, indicator_geq, inv_sqrt_geq, orth, trace
from .errors import NumericalFailure
from .subalgebra import Subalgebra, _check_right_invariant, q_inner

if TYPE_CHECKING:  # pragma: no cover
    from .dynamics import DynamicalSystem

__all__ = [
    "QModule",
    "normalize_conditional",
    "pimsner_popa_basis",
    "module_from_generators",
    "pp_expand",
]


@dataclass(frozen=True, eq=False)
class QModule:
    Q: Subalgebra
    basis: np.ndarray  # d x m orthonormal coordinate columns
    pp_basis: tuple[Element, ...] = field(default=())
    projections: tuple[Element, ...] = field(default=())

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def projection(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    def q_dim(self) -> float:
        return float(sum(trace(self.Q.parent, p).real for p in self.projections))


def _op_norm_psd(a: Element) -> float:
    return max((float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (b + b.conj().T))), initial=0.0)) for b in a.blocks), default=0.0)


def normalize_conditional(Q: Subalgebra, xi: Element, eps: float) -> tuple[Element, Element]:
    """Return (eta, p) with eta = xi b p, <eta, eta>_Q = p a projection."""
    A = Q.parent
    a = q_inner(Q, xi, xi)
    a = 0.5 * (a + a.adj())
    p = functional_calculus(A, a, indicator_geq(eps))
    b = functional_calculus(A, a, inv_sqrt_geq(eps))
    eta = xi @ b @ p
    return eta, p


def pp_expand(Q: Subalgebra, pp: Sequence[Element], xi: Element) -> Element:
    """sum_i xi_i <xi_i, xi>_Q."""
    out = Q.parent.zero()
    for e in pp:
        out = out + e @ q_inner(Q, e, xi)
    return out


def pimsner_popa_basis(Q: Subalgebra, V: np.ndarray) -> QModule:
    A = Q.parent
    tol = A.tol
    V = np.asarray(V, dtype=complex)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[1] == 0:
        return QModule(Q, V, (), ())
    _check_right_invariant(Q, V)
    cands = [A.from_vec(c) for c in V.T]
    pp: list[Element] = []
    projs: list[Element] = []
    prev_total = np.inf
    for _ in range(A.dim + 2):
        resid = [c - pp_expand(Q, pp, c) for c in cands]
        norms = np.array([float(np.linalg.norm(r.vec())) for r in resid])
        total = float(norms.sum())
        if norms.max() <= tol.verify * 10:
            break
        if total >= prev_total - tol.rank_abs:
            raise NumericalFailure("conditional Gram-Schmidt residual failed to decrease")
        prev_total = total
        # largest residual first; argmax keeps the lowest index on ties
        rounded = np.round(norms, 12)
        k = int(np.argmax(rounded))
        r = resid[k]
        a = q_inner(Q, r, r)
        eps = max(tol.rank_rel * _op_norm_psd(a), tol.rank_abs)
        eta, p = normalize_conditional(Q, r, eps)
        if float(np.linalg.norm(p.vec())) <= tol.rank_abs:
            raise NumericalFailure("conditional normalization produced a zero projection")
        pp.append(eta)
        projs.append(p)
    else:
        raise NumericalFailure("conditional Gram-Schmidt did not terminate")
    return QModule(Q, orth(V, tol), tuple(pp), tuple(projs))


def module_from_generators(
    Q: Subalgebra,
    S: Sequence[Element | np.ndarray],
    system: "DynamicalSystem | None" = None,
) -> QModule:
    """Smallest right Q-invariant (and optionally Gamma-invariant) subspace containing S."""
    A = Q.parent
    vecs = [s.vec() if isinstance(s, Element) else np.asarray(s, dtype=complex) for s in S]
    if not vecs:
        return QModule(Q, np.zeros((A.dim, 0), dtype=complex))
    maps = [A.right_matrix(q) for q in Q.basis]
    if system is not None:
        maps += list(system.koopman)
    basis = orth(np.stack(vecs, axis=1), A.tol)
    while True:
        grown = [basis] + [m @ basis for m in maps]
        nxt = orth(np.hstack(grown), A.tol)
        if nxt.shape[1] == basis.shape[1]:
            break
        basis = nxt
    if basis.shape[1] == 0:
        return QModule(Q, basis)
    return pimsner_popa_basis(Q, basis)
