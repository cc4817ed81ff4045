"""SCED as a parametric LP: build, solve, duals, LMPs, DLR and ramp edits.

Constraint rows are fixed in the order ``balance+ | balance- | line+ |
line- | gen+ | gen-`` and numbered 1..n_c on every public surface, so the
row indices match the numbered constraint lists used for the 3-bus
fixtures (1,2 balance; 3..2+n_l forward line limits; then reverse line
limits; then generator upper and lower bounds).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from sprlab.grid import NetworkCase, ShiftFactorMatrix
from sprlab.simplex import LpInfeasible, LpUnbounded, solve_inequality_form

__all__ = [
    "ScedError",
    "InfeasibleDispatch",
    "UnboundedDispatch",
    "InfeasibleRamp",
    "ParametricLP",
    "DispatchSolution",
    "LMPVector",
    "build_sced",
    "DispatchSolver",
    "solve_lp",
    "compute_lmp",
    "apply_dlr",
    "apply_ramp",
]

BINDING_RTOL = 1e-7
DUAL_TOL = 1e-9


class ScedError(RuntimeError):
    pass


class InfeasibleDispatch(ScedError):
    """The load vector lies outside the feasible load set."""


class UnboundedDispatch(ScedError):
    """Malformed cost: the dispatch LP is unbounded below."""


class InfeasibleRamp(ScedError):
    """Ramp-tightened generator bounds produced an empty interval."""


@dataclass(frozen=True)
class ParametricLP:
    """``min c.P_G  s.t.  A P_G + s = b + W P_D, s >= 0``.

    ``W`` keeps only the load-bus columns of the network, so ``P_D`` has
    one entry per load bus (in ``case.load_buses`` order).
    """

    a: np.ndarray                 # n_c x n_g
    b: np.ndarray                 # n_c
    w: np.ndarray                 # n_c x n_d
    c: np.ndarray                 # n_g
    labels: tuple[str, ...]       # per row, e.g. "line+2"
    case: NetworkCase = field(repr=False)
    shift: ShiftFactorMatrix = field(repr=False)

    @property
    def n_c(self) -> int:
        return self.a.shape[0]

    @property
    def n_g(self) -> int:
        return self.a.shape[1]

    @property
    def n_d(self) -> int:
        return self.w.shape[1]

    def rhs(self, p_d: np.ndarray) -> np.ndarray:
        return self.b + self.w @ p_d

    def row_block(self, kind: str) -> slice:
        """Row slice (0-based) of one block: balance/line+/line-/gen+/gen-."""
        n_l, n_g = self.case.n_line, self.n_g
        return {
            "balance": slice(0, 2),
            "line+": slice(2, 2 + n_l),
            "line-": slice(2 + n_l, 2 + 2 * n_l),
            "gen+": slice(2 + 2 * n_l, 2 + 2 * n_l + n_g),
            "gen-": slice(2 + 2 * n_l + n_g, 2 + 2 * n_l + 2 * n_g),
        }[kind]

    def with_b(self, f=None, gen_lo=None, gen_hi=None) -> "ParametricLP":
        """Same A, W, c with selected right-hand-side blocks replaced."""
        b = self.b.copy()
        n_l = self.case.n_line
        if f is not None:
            f = np.asarray(f, dtype=float)
            if f.shape != (n_l,):
                raise ScedError(f"F override must have shape ({n_l},)")
            b[self.row_block("line+")] = f
            b[self.row_block("line-")] = f
        if gen_hi is not None:
            gen_hi = np.asarray(gen_hi, dtype=float)
            if gen_hi.shape != (self.n_g,):
                raise ScedError(f"gen_hi override must have shape ({self.n_g},)")
            b[self.row_block("gen+")] = gen_hi
        if gen_lo is not None:
            gen_lo = np.asarray(gen_lo, dtype=float)
            if gen_lo.shape != (self.n_g,):
                raise ScedError(f"gen_lo override must have shape ({self.n_g},)")
            b[self.row_block("gen-")] = -gen_lo
        return dataclasses.replace(self, b=b)


def build_sced(case: NetworkCase, shift: ShiftFactorMatrix, f=None,
               gen_lo=None, gen_hi=None) -> ParametricLP:
    """Assemble ``A = [1'; -1'; H; -H; I; -I]`` and matching ``b``, ``W``.

    Optional overrides substitute into ``b`` only (line ratings and
    generator bounds); ``A`` and ``W`` depend on the network alone.
    """
    if shift.h.shape != (case.n_line, case.n_bus):
        raise ScedError("shift-factor matrix does not match the case dimensions")
    n_g, n_l, n_d = case.n_gen, case.n_line, case.n_load
    gen_cols = [g.bus - 1 for g in case.generators]
    load_cols = [b - 1 for b in case.load_buses]
    h_g = shift.h[:, gen_cols]               # flows per unit generation
    h_d = shift.h[:, load_cols]              # flows per unit load
    ones_g = np.ones((1, n_g))
    ones_d = np.ones((1, n_d))
    zeros_d = np.zeros((n_g, n_d))
    a = np.vstack([ones_g, -ones_g, h_g, -h_g, np.eye(n_g), -np.eye(n_g)])
    w = np.vstack([ones_d, -ones_d, h_d, -h_d, zeros_d, zeros_d])
    b = np.concatenate([
        [0.0, 0.0],
        case.ratings,
        case.ratings,
        case.pmax,
        -case.pmin,
    ])
    labels = (
        ("balance+", "balance-")
        + tuple(f"line+{k + 1}" for k in range(n_l))
        + tuple(f"line-{k + 1}" for k in range(n_l))
        + tuple(f"gen+{k + 1}" for k in range(n_g))
        + tuple(f"gen-{k + 1}" for k in range(n_g))
    )
    lp = ParametricLP(a=a, b=b, w=w, c=case.cost.astype(float), labels=labels,
                      case=case, shift=shift)
    if f is not None or gen_lo is not None or gen_hi is not None:
        lp = lp.with_b(f=f, gen_lo=gen_lo, gen_hi=gen_hi)
    return lp


@dataclass
class DispatchSolution:
    p_g: np.ndarray
    objective: float
    lambda1: float                  # balance dual, $/MWh at the slack bus
    mu_plus: np.ndarray             # duals of H(P_G-P_D) <= F rows
    mu_minus: np.ndarray            # duals of -H(P_G-P_D) <= F rows
    eta_plus: np.ndarray            # duals of P_G <= P_G_max rows
    eta_minus: np.ndarray           # duals of P_G >= P_G_min rows
    y: np.ndarray                   # full stacked dual vector, >= 0
    slacks: np.ndarray
    binding: tuple[int, ...]        # 1-based rows with zero slack (both balance rows)
    binding_tol: float
    degenerate: bool
    degenerate_reason: str
    basis: tuple[int, ...]          # 0-based rows forming the simplex basis

    @property
    def reduced_binding(self) -> tuple[int, ...]:
        """Binding set with the second balance row dropped (1-based)."""
        return tuple(i for i in self.binding if i != 2)


@dataclass
class LMPVector:
    lam: np.ndarray  # $/MWh per bus

    def __iter__(self):
        return iter(self.lam)


class DispatchSolver:
    """Repeated solves of one ParametricLP with basis reuse.

    The standard-form dual's constraints depend on ``(A, c)`` only, so a
    previous optimal basis stays feasible when ``P_D`` (or ``b``) changes
    and re-solving costs a handful of pivots.
    """

    def __init__(self, lp: ParametricLP):
        self.lp = lp
        self._basis = None

    def solve(self, p_d, b=None) -> DispatchSolution:
        lp = self.lp
        p_d = np.asarray(p_d, dtype=float)
        if p_d.shape != (lp.n_d,):
            raise ScedError(f"P_D must have shape ({lp.n_d},), got {p_d.shape}")
        if not np.isfinite(p_d).all():
            raise ScedError("P_D must be finite")
        q = (lp.b if b is None else b) + lp.w @ p_d
        try:
            res = solve_inequality_form(lp.c, lp.a, q, basis=self._basis)
        except LpInfeasible:
            raise InfeasibleDispatch(f"no feasible dispatch for P_D={p_d.tolist()}") from None
        except LpUnbounded:
            raise UnboundedDispatch("dispatch LP unbounded; check the cost vector") from None
        self._basis = res.basis
        return _package(lp, q, res)


def solve_lp(lp: ParametricLP, p_d) -> DispatchSolution:
    """One-shot solve; see :class:`DispatchSolver` for the warm path."""
    return DispatchSolver(lp).solve(p_d)


def _package(lp: ParametricLP, q, res) -> DispatchSolution:
    n_l, n_g = lp.case.n_line, lp.n_g
    y = res.y
    slacks = np.maximum(res.slacks, 0.0)
    tol_rows = BINDING_RTOL * (1.0 + np.abs(q))
    binding = tuple(int(i) + 1 for i in np.nonzero(res.slacks <= tol_rows)[0])
    lambda1 = float(y[1] - y[0])
    mu_plus = y[lp.row_block("line+")].copy()
    mu_minus = y[lp.row_block("line-")].copy()
    eta_plus = y[lp.row_block("gen+")].copy()
    eta_minus = y[lp.row_block("gen-")].copy()

    reduced = [i for i in binding if i != 2]
    degenerate, reason = False, ""
    if len(reduced) != n_g:
        degenerate = True
        reason = f"{len(reduced)} binding rows after balance de-duplication, expected {n_g}"
    else:
        dual_tol = DUAL_TOL * (1.0 + float(np.abs(lp.c).max(initial=0.0)))
        weak = [int(i) for i in res.basis if i >= 2 and y[i] <= dual_tol]
        if weak:
            degenerate = True
            reason = f"near-zero duals on binding rows {[i + 1 for i in weak]}"
    return DispatchSolution(
        p_g=res.x,
        objective=res.objective,
        lambda1=lambda1,
        mu_plus=mu_plus,
        mu_minus=mu_minus,
        eta_plus=eta_plus,
        eta_minus=eta_minus,
        y=y,
        slacks=slacks,
        binding=binding,
        binding_tol=BINDING_RTOL,
        degenerate=degenerate,
        degenerate_reason=reason,
        basis=tuple(int(i) for i in res.basis),
    )


def compute_lmp(sol: DispatchSolution, shift: ShiftFactorMatrix) -> LMPVector:
    """Per-bus price: energy component plus congestion spread through H.

    A line binding at its forward limit raises prices downstream, so the
    congestion term enters as ``H'(mu_minus - mu_plus)``; the slack-bus
    entry equals ``lambda1`` because the slack column of H is zero.
    """
    lam = sol.lambda1 + shift.h.T @ (sol.mu_minus - sol.mu_plus)
    return LMPVector(lam=lam)


def apply_dlr(case: NetworkCase, xi: float) -> NetworkCase:
    """Scale every line rating by ``(1 + xi)``; everything else untouched."""
    if xi <= -1.0:
        raise ScedError(f"xi={xi} would make ratings nonpositive")
    if xi == 0.0:
        return case
    lines = tuple(dataclasses.replace(ln, rating=(1.0 + xi) * ln.rating) for ln in case.lines)
    return dataclasses.replace(case, lines=lines)


def apply_ramp(case: NetworkCase, p_g_prev, dt: float) -> NetworkCase:
    """Tighten generator bounds around the previous dispatch.

    New bounds are ``max(pmin, prev - R_down*dt) <= P_G <= min(pmax,
    prev + R_up*dt)``; when the ramp span covers the full capacity range
    the case comes back unchanged in value.
    """
    p_g_prev = np.asarray(p_g_prev, dtype=float)
    if p_g_prev.shape != (case.n_gen,):
        raise ScedError(f"previous dispatch must have shape ({case.n_gen},)")
    if dt <= 0:
        raise ScedError("dt must be positive minutes")
    gens = []
    for k, g in enumerate(case.generators):
        lo = max(g.pmin, p_g_prev[k] - g.ramp_down * dt)
        hi = min(g.pmax, p_g_prev[k] + g.ramp_up * dt)
        if lo > hi + 1e-9 * (1.0 + abs(hi)):
            raise InfeasibleRamp(
                f"generator {k + 1}: empty ramp interval [{lo:.6g}, {hi:.6g}]"
            )
        gens.append(dataclasses.replace(g, pmin=lo, pmax=max(lo, hi)))
    return dataclasses.replace(case, generators=tuple(gens))
