"""Dense revised simplex with Bland's anti-cycling rule.

Two entry points:

* :func:`solve_standard_form` -- ``min q.y  s.t.  G y = h, y >= 0``.
* :func:`solve_inequality_form` -- ``min c.x  s.t.  A x <= b`` with free
  ``x``, solved through its standard-form dual so that the optimal basis
  is a set of row indices of ``A`` (the binding-constraint candidates)
  and the dual vector ``y >= 0`` comes out per row.

Everything is deterministic: Bland's rule picks the lowest eligible
index for entering columns and the lowest basic index on ratio ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LpInfeasible",
    "LpUnbounded",
    "SimplexFailure",
    "StandardFormResult",
    "InequalityResult",
    "solve_standard_form",
    "solve_inequality_form",
]

_RTOL = 1e-9
_MAX_ITER = 50_000


class LpInfeasible(RuntimeError):
    """The LP has no feasible point."""


class LpUnbounded(RuntimeError):
    """The LP objective is unbounded below."""


class SimplexFailure(RuntimeError):
    """Numerical breakdown or iteration limit."""


@dataclass
class StandardFormResult:
    y: np.ndarray
    basis: np.ndarray          # column indices, len m
    objective: float
    pi: np.ndarray             # simplex multipliers of the equality rows
    reduced_costs: np.ndarray
    iterations: int


@dataclass
class InequalityResult:
    x: np.ndarray              # primal point
    y: np.ndarray              # row duals, >= 0
    basis: np.ndarray          # row indices of A forming the dual basis
    objective: float
    slacks: np.ndarray         # b - A x
    iterations: int


def _pivot_loop(q, G, h, basis, tol, max_iter):
    """Primal simplex iterations from a feasible basis. Mutates ``basis``."""
    m, n = G.shape
    for it in range(max_iter):
        B = G[:, basis]
        try:
            xb = np.linalg.solve(B, h)
            pi = np.linalg.solve(B.T, q[basis])
        except np.linalg.LinAlgError:
            raise SimplexFailure("singular basis matrix") from None
        reduced = q - G.T @ pi
        reduced[basis] = 0.0
        candidates = np.nonzero(reduced < -tol)[0]
        if candidates.size == 0:
            return xb, pi, reduced, it
        j = int(candidates[0])  # Bland: lowest index
        d = np.linalg.solve(B, G[:, j])
        pos = np.nonzero(d > tol)[0]
        if pos.size == 0:
            raise LpUnbounded("no blocking row for entering column %d" % j)
        ratios = xb[pos] / d[pos]
        best = ratios.min()
        ties = pos[np.nonzero(ratios <= best + tol * (1.0 + abs(best)))[0]]
        leave = ties[np.argmin(basis[ties])]  # Bland: lowest basic index
        basis[leave] = j
    raise SimplexFailure(f"iteration limit {max_iter} reached")


def solve_standard_form(q, G, h, basis=None, max_iter=_MAX_ITER) -> StandardFormResult:
    """Two-phase revised simplex for ``min q.y : G y = h, y >= 0``.

    ``basis`` may carry a previous optimal basis; if it is still feasible
    phase 1 is skipped entirely (the hot path when only ``q`` changes).
    """
    q = np.asarray(q, dtype=float)
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    m, n = G.shape
    scale = 1.0 + float(np.abs(h).max(initial=0.0))
    tol = _RTOL * scale

    warm = None
    if basis is not None and len(basis) == m:
        b_arr = np.asarray(basis, dtype=int)
        if b_arr.min(initial=0) >= 0 and b_arr.max(initial=0) < n:
            try:
                xb = np.linalg.solve(G[:, b_arr], h)
                if xb.min(initial=0.0) >= -tol:
                    warm = b_arr.copy()
            except np.linalg.LinAlgError:
                warm = None

    total_iters = 0
    if warm is None:
        # phase 1: flip rows so h >= 0, start from an artificial basis
        flip = np.where(h < 0.0, -1.0, 1.0)
        G1 = np.hstack([G * flip[:, None], np.eye(m)])
        h1 = h * flip
        q1 = np.concatenate([np.zeros(n), np.ones(m)])
        basis1 = np.arange(n, n + m)
        xb, pi, _, iters = _pivot_loop(q1, G1, h1, basis1, tol, max_iter)
        total_iters += iters
        if float(q1[basis1] @ xb) > tol * m:
            raise LpInfeasible("phase-1 objective positive")
        if (basis1 >= n).any():
            # drive artificials out; a row with no real pivot is redundant
            B = G1[:, basis1]
            rows_drop = []
            for r in np.nonzero(basis1 >= n)[0]:
                er = np.zeros(m)
                er[r] = 1.0
                row_of_inv = np.linalg.solve(B.T, er)
                piv_row = row_of_inv @ G1[:, :n]
                piv_row[basis1[basis1 < n]] = 0.0
                cand = np.nonzero(np.abs(piv_row) > tol)[0]
                if cand.size:
                    basis1[r] = int(cand[0])
                    B = G1[:, basis1]
                else:
                    rows_drop.append(r)
            if rows_drop:
                # dependent equality rows would silently delete primal
                # variables in the inequality wrapper; refuse instead
                raise SimplexFailure(
                    f"{len(rows_drop)} dependent equality row(s): G lacks full row rank"
                )
        warm = basis1.astype(int)
        G1 = None
    basis = warm
    xb, pi, reduced, iters = _pivot_loop(q, G, h, basis, tol, max_iter)
    total_iters += iters
    y = np.zeros(n)
    y[basis] = np.maximum(xb, 0.0)
    return StandardFormResult(
        y=y,
        basis=basis,
        objective=float(q @ y),
        pi=pi,
        reduced_costs=reduced,
        iterations=total_iters,
    )


def solve_inequality_form(c, A, b, basis=None, max_iter=_MAX_ITER) -> InequalityResult:
    """``min c.x : A x <= b`` with free ``x``, via the standard-form dual.

    The dual is ``min b.y : A^T y = -c, y >= 0``; its optimal basis is a
    set of ``n`` row indices of ``A`` and its simplex multipliers are the
    primal point ``x``. Requires ``A`` to have full column rank (always
    true for SCED rows, which contain +-I blocks; ad-hoc polyhedra should
    include bounding rows).

    Raises :class:`LpInfeasible` when the primal has no feasible point and
    :class:`LpUnbounded` when it is unbounded below.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        res = solve_standard_form(b, A.T, -c, basis=basis, max_iter=max_iter)
    except LpInfeasible:
        raise LpUnbounded("dual infeasible: primal unbounded (or empty)") from None
    except LpUnbounded:
        raise LpInfeasible("dual unbounded: primal infeasible") from None
    x = res.pi
    slacks = b - A @ x
    return InequalityResult(
        x=x,
        y=res.y,
        basis=res.basis,
        objective=float(c @ x),
        slacks=slacks,
        iterations=res.iterations,
    )
