"""Multi-parametric analysis of the dispatch LP over the load space.

Every load vector with a non-degenerate optimum induces a pattern of
binding constraints; the set of loads sharing one pattern is a convex
polytope with a single LMP vector. This module computes those polytopes
analytically from the pattern, enumerates all of them inside a load box
by stepping across facets, and provides the adjacency / uniqueness /
cost-robustness predicates built on the same algebra.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from sprlab.grid import NetworkCase, compute_shift_factors
from sprlab.sced import (
    DispatchSolution,
    DispatchSolver,
    InfeasibleDispatch,
    LMPVector,
    ParametricLP,
    build_sced,
)
from sprlab.simplex import LpInfeasible, LpUnbounded, SimplexFailure, solve_inequality_form

logger = logging.getLogger(__name__)

__all__ = [
    "MprError",
    "DegenerateSolution",
    "InvalidPattern",
    "EmptyRegion",
    "NoFeasibleSeed",
    "SystemPattern",
    "SPRRecord",
    "LoadBox",
    "optimal_partition",
    "region_of",
    "enumerate_sprs",
    "are_adjacent",
    "verify_unique_lmps",
    "pattern_admits_cost",
    "default_box",
    "hrep_disagreements",
]

RADIUS_TOL = 1e-7
DUAL_MARGIN = 1e-9


class MprError(RuntimeError):
    pass


class DegenerateSolution(MprError):
    """The LP optimum does not determine a unique pattern or dual."""


class InvalidPattern(MprError):
    """Pattern whose binding rows are singular or dual-infeasible."""


class EmptyRegion(MprError):
    """Pattern algebra yields an empty or lower-dimensional region."""


class NoFeasibleSeed(MprError):
    """The load box does not intersect the feasible load set."""


@dataclass(frozen=True)
class SystemPattern:
    """Binding-constraint index set, 1-based, both balance rows listed."""

    binding: tuple[int, ...]
    n_c: int

    def __post_init__(self):
        idx = tuple(sorted(set(self.binding)))
        if idx != self.binding:
            object.__setattr__(self, "binding", idx)
        if not idx or idx[0] < 1 or idx[-1] > self.n_c:
            raise MprError(f"binding indices must lie in 1..{self.n_c}")

    @property
    def reduced(self) -> tuple[int, ...]:
        """Binding set with the redundant second balance row removed."""
        return tuple(i for i in self.binding if i != 2)

    def __str__(self):
        return "[" + ",".join(str(i) for i in self.binding) + "]"


@dataclass(frozen=True)
class LoadBox:
    """Axis-aligned bounds on the explored load space (per load bus)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        up = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        if lo.shape != up.shape or not (lo < up).all():
            raise MprError("load box requires lower < upper elementwise")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, p, slack=0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool((p >= self.lower - slack).all() and (p <= self.upper + slack).all())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def hrep(self):
        """Rows (A, b) with unit normals for the box inequalities."""
        d = self.dim
        eye = np.eye(d)
        return np.vstack([eye, -eye]), np.concatenate([self.upper, -self.lower])


@dataclass
class SPRRecord:
    """One region: pattern, minimal H-representation, LMP, witness point."""

    pattern: SystemPattern
    a_region: np.ndarray            # m x n_d, unit-norm rows
    b_region: np.ndarray            # m
    lmp: LMPVector
    interior_point: np.ndarray
    dual_y: np.ndarray              # duals on the reduced binding rows
    row_origin: tuple[int, ...] = ()  # 1-based source constraint per row
    radius: float = 0.0             # Chebyshev radius

    @property
    def n_rows(self) -> int:
        return self.a_region.shape[0]

    def contains(self, points, band=0.0):
        """Membership of one point or a batch, with a tolerance band."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ok = (pts @ self.a_region.T <= self.b_region + band).all(axis=1)
        return ok if ok.size > 1 else bool(ok[0])

    def normal_set(self, decimals=6) -> set:
        return {tuple(np.round(row, decimals)) for row in self.a_region}


def optimal_partition(sol: DispatchSolution) -> SystemPattern:
    """Binding set of a solved dispatch; refuses degenerate solutions."""
    if sol.degenerate:
        raise DegenerateSolution(sol.degenerate_reason)
    return SystemPattern(binding=sol.binding, n_c=len(sol.y))


def _pattern_duals(reduced: tuple[int, ...], lp: ParametricLP, c: np.ndarray):
    """Solve ``A_B' y_B = -c`` on the reduced binding set.

    Returns ``(energy_price, y_B, min_nonbalance_dual)``. The balance
    entry of ``y_B`` is sign-free (it stands for the equality pair);
    every other entry must be strictly positive for a valid pattern.
    """
    rows0 = [i - 1 for i in reduced]
    a_b = lp.a[rows0]
    if a_b.shape[0] != a_b.shape[1]:
        raise InvalidPattern(
            f"reduced binding set has {a_b.shape[0]} rows, expected {a_b.shape[1]}"
        )
    try:
        y_b = np.linalg.solve(a_b.T, -c)
    except np.linalg.LinAlgError:
        raise InvalidPattern("singular binding-row matrix") from None
    balance_pos = [k for k, i in enumerate(reduced) if i in (1, 2)]
    others = [k for k in range(len(reduced)) if k not in balance_pos]
    if balance_pos:
        k = balance_pos[0]
        energy = -y_b[k] if reduced[k] == 1 else y_b[k]
    else:
        energy = 0.0
    min_dual = float(y_b[others].min()) if others else np.inf
    return float(energy), y_b, min_dual


def _pattern_lmp(reduced, lp: ParametricLP, energy: float, y_b) -> LMPVector:
    mu_fwd = np.zeros(lp.case.n_line)
    mu_rev = np.zeros(lp.case.n_line)
    lo_fwd = lp.row_block("line+")
    lo_rev = lp.row_block("line-")
    for k, i in enumerate(reduced):
        r0 = i - 1
        if lo_fwd.start <= r0 < lo_fwd.stop:
            mu_fwd[r0 - lo_fwd.start] = y_b[k]
        elif lo_rev.start <= r0 < lo_rev.stop:
            mu_rev[r0 - lo_rev.start] = y_b[k]
    lam = energy + lp.shift.h.T @ (mu_rev - mu_fwd)
    return LMPVector(lam=lam)


def _guard_rows(dim: int, extent: float):
    eye = np.eye(dim)
    return np.vstack([eye, -eye]), np.full(2 * dim, extent)


def _chebyshev(a_rows, b_rows, extent, extra=None):
    """Largest inscribed ball; returns (center, radius)."""
    a_rows = np.asarray(a_rows, dtype=float)
    b_rows = np.asarray(b_rows, dtype=float)
    if extra is not None:
        a_rows = np.vstack([a_rows, extra[0]])
        b_rows = np.concatenate([b_rows, extra[1]])
    m, d = a_rows.shape
    ga, gb = _guard_rows(d, extent)
    a_lp = np.vstack([
        np.hstack([a_rows, np.ones((m, 1))]),
        np.hstack([ga, np.zeros((2 * d, 1))]),
        np.concatenate([np.zeros(d), [1.0]])[None, :],
    ])
    b_lp = np.concatenate([b_rows, gb, [extent]])
    c = np.zeros(d + 1)
    c[-1] = -1.0
    try:
        res = solve_inequality_form(c, a_lp, b_lp)
    except (LpInfeasible, LpUnbounded, SimplexFailure) as exc:
        raise EmptyRegion(f"Chebyshev LP failed: {exc}") from None
    return res.x[:-1], float(res.x[-1])


def _facet_ball(a_rows, b_rows, facet: int, extent: float, extra=None):
    """Largest (d-1)-ball inside facet ``facet`` of ``{Ax <= b}``.

    Rows other than the facet constrain the ball through the norm of
    their projection onto the facet hyperplane, so an opposing row of an
    adjacent region does not pin the radius to zero.
    """
    a_rows = np.asarray(a_rows, dtype=float)
    b_rows = np.asarray(b_rows, dtype=float)
    nf = a_rows[facet]
    others = [k for k in range(len(a_rows)) if k != facet]
    blocks_a = [a_rows[others]]
    blocks_b = [b_rows[others]]
    if extra is not None:
        blocks_a.append(np.asarray(extra[0], dtype=float))
        blocks_b.append(np.asarray(extra[1], dtype=float))
    a_oth = np.vstack(blocks_a) if blocks_a[0].size or len(blocks_a) > 1 else np.zeros((0, a_rows.shape[1]))
    b_oth = np.concatenate(blocks_b)
    proj = a_oth - np.outer(a_oth @ nf, nf)
    w = np.linalg.norm(proj, axis=1)
    d = a_rows.shape[1]
    m = a_oth.shape[0]
    ga, gb = _guard_rows(d, extent)
    a_lp = np.vstack([
        np.concatenate([nf, [0.0]])[None, :],
        np.concatenate([-nf, [0.0]])[None, :],
        np.hstack([a_oth, w[:, None]]),
        np.hstack([ga, np.zeros((2 * d, 1))]),
        np.concatenate([np.zeros(d), [1.0]])[None, :],
    ])
    b_lp = np.concatenate([[b_rows[facet], -b_rows[facet]], b_oth, gb, [extent]])
    c = np.zeros(d + 1)
    c[-1] = -1.0
    try:
        res = solve_inequality_form(c, a_lp, b_lp)
    except (LpInfeasible, LpUnbounded, SimplexFailure):
        return None, -np.inf
    return res.x[:-1], float(res.x[-1])


def region_of(pattern: SystemPattern, lp: ParametricLP) -> SPRRecord:
    """Analytical region of one pattern, in minimal representation.

    Eliminating the dispatch through the binding rows turns every
    non-binding row ``n`` into ``(A_n A_B^{-1} W_B - W_n) P_D < b_n -
    A_n A_B^{-1} b_B``; rows are unit-normalized, deduplicated, and
    pruned by per-row LPs. The witness point is the Chebyshev center.
    """
    reduced = pattern.reduced
    energy, y_b, min_dual = _pattern_duals(reduced, lp, lp.c)
    if min_dual <= DUAL_MARGIN * (1.0 + float(np.abs(lp.c).max())):
        raise InvalidPattern(
            f"pattern {pattern} dual-infeasible for the cost vector (min dual {min_dual:.3g})"
        )
    lmp = _pattern_lmp(reduced, lp, energy, y_b)

    rows0 = [i - 1 for i in reduced]
    n_rows = [i for i in range(lp.n_c) if (i + 1) not in reduced and i != 1]
    a_b = lp.a[rows0]
    m = np.linalg.solve(a_b.T, lp.a[n_rows].T).T     # A_N A_B^{-1}
    a_reg = m @ lp.w[rows0] - lp.w[n_rows]
    b_reg = lp.b[n_rows] - m @ lp.b[rows0]
    origins = [i + 1 for i in n_rows]

    norms = np.linalg.norm(a_reg, axis=1)
    keep, seen = [], set()
    for k in range(len(a_reg)):
        if norms[k] <= 1e-12:
            if b_reg[k] < -1e-9:
                raise EmptyRegion(f"pattern {pattern}: contradictory zero row")
            continue
        a_reg[k] /= norms[k]
        b_reg[k] /= norms[k]
        key = tuple(np.round(np.concatenate([a_reg[k], [b_reg[k]]]), 9))
        if key in seen:
            continue
        seen.add(key)
        keep.append(k)
    a_reg, b_reg = a_reg[keep], b_reg[keep]
    origins = [origins[k] for k in keep]

    extent = 1e3 * (1.0 + float(np.abs(b_reg).max(initial=1.0)))
    kept = list(range(len(a_reg)))
    k = 0
    while k < len(kept):
        others = kept[:k] + kept[k + 1:]
        row = kept[k]
        try:
            res = solve_inequality_form(
                np.concatenate([-a_reg[row]]),
                np.vstack([a_reg[others], _guard_rows(a_reg.shape[1], extent)[0]]),
                np.concatenate([b_reg[others], _guard_rows(a_reg.shape[1], extent)[1]]),
            )
            best = -res.objective
        except (LpInfeasible, LpUnbounded, SimplexFailure):
            best = np.inf
        if best <= b_reg[row] + 1e-7 * (1.0 + abs(b_reg[row])):
            kept.pop(k)
        else:
            k += 1
    a_reg, b_reg = a_reg[kept], b_reg[kept]
    origins = tuple(origins[k] for k in kept)

    center, radius = _chebyshev(a_reg, b_reg, extent)
    if radius <= RADIUS_TOL * (1.0 + np.abs(b_reg).max(initial=0.0)):
        raise EmptyRegion(f"pattern {pattern}: region is empty or lower-dimensional")
    return SPRRecord(
        pattern=pattern,
        a_region=a_reg,
        b_region=b_reg,
        lmp=lmp,
        interior_point=center,
        dual_y=y_b,
        row_origin=origins,
        radius=radius,
    )


def default_box(case: NetworkCase) -> LoadBox:
    """Symmetric box at +-2x total generation capacity per load bus."""
    cap = 2.0 * float(case.pmax.sum())
    d = case.n_load
    return LoadBox(lower=np.full(d, -cap), upper=np.full(d, cap))


def _feasible_seed(lp: ParametricLP, box: LoadBox) -> np.ndarray:
    """Max-margin point of the feasible load set inside the box."""
    n_g, n_d = lp.n_g, lp.n_d
    n_c = lp.n_c
    # variables: (P_G, P_D, t); maximize t
    a = np.zeros((n_c + 2 * n_d + 1, n_g + n_d + 1))
    b = np.zeros(n_c + 2 * n_d + 1)
    a[:n_c, :n_g] = lp.a
    a[:n_c, n_g:n_g + n_d] = -lp.w
    a[:n_c, -1] = 1.0
    a[:2, -1] = 0.0  # balance pair is an equality; no margin there
    b[:n_c] = lp.b
    eye = np.eye(n_d)
    a[n_c:n_c + n_d, n_g:n_g + n_d] = eye
    a[n_c:n_c + n_d, -1] = 1.0
    b[n_c:n_c + n_d] = box.upper
    a[n_c + n_d:n_c + 2 * n_d, n_g:n_g + n_d] = -eye
    a[n_c + n_d:n_c + 2 * n_d, -1] = 1.0
    b[n_c + n_d:n_c + 2 * n_d] = -box.lower
    a[-1, -1] = 1.0
    b[-1] = 0.5 * max(box.diagonal, 1.0)
    c = np.zeros(n_g + n_d + 1)
    c[-1] = -1.0
    try:
        res = solve_inequality_form(c, a, b)
    except (LpInfeasible, LpUnbounded) as exc:
        raise NoFeasibleSeed(f"seed LP failed: {exc}") from None
    if res.x[-1] <= RADIUS_TOL:
        raise NoFeasibleSeed("load box does not intersect the feasible load set")
    return res.x[n_g:n_g + n_d]


def _region_overlaps_box(reg: SPRRecord, box: LoadBox, extent: float) -> bool:
    try:
        _, r = _chebyshev(reg.a_region, reg.b_region, extent, extra=box.hrep())
    except EmptyRegion:
        return False
    return r > RADIUS_TOL


def enumerate_sprs(case: NetworkCase, box: LoadBox, lp: ParametricLP | None = None) -> list[SPRRecord]:
    """All regions reachable by facet stepping from a seed in the box.

    Breadth-first: solve at a facet-interior point stepped a small
    distance across each facet, recover the neighbor pattern, recurse.
    Regions whose interior lies outside the box are recorded when
    discovered but not expanded further. Degenerate crossings are
    retried with jittered steps, then logged and skipped.
    """
    if lp is None:
        lp = build_sced(case, compute_shift_factors(case))
    if box.dim != lp.n_d:
        raise MprError(f"box dimension {box.dim} != number of load buses {lp.n_d}")
    solver = DispatchSolver(lp)
    jitter_rng = np.random.Generator(np.random.Philox(0x5EED))
    eps = 1e-4 * box.diagonal
    extent = 10.0 * (box.diagonal + float(np.abs(box.upper).max())
                     + float(np.abs(box.lower).max()) + 1.0)

    seed = _feasible_seed(lp, box)
    first = None
    for _ in range(20):
        try:
            first = region_of(optimal_partition(solver.solve(seed)), lp)
            break
        except (DegenerateSolution, InvalidPattern, EmptyRegion):
            seed = seed + jitter_rng.normal(scale=max(eps, 1e-6), size=box.dim)
    if first is None:
        raise NoFeasibleSeed("could not find a non-degenerate seed in the box")

    visited = {first.pattern.reduced}
    out = [first]
    frontier = deque([first])
    while frontier:
        reg = frontier.popleft()
        for k in range(reg.n_rows):
            fx, fr = _facet_ball(reg.a_region, reg.b_region, k, extent)
            if fx is None or fr <= RADIUS_TOL * (1.0 + abs(reg.b_region[k])):
                continue
            normal = reg.a_region[k]
            found = None
            for attempt in range(10):
                step = eps * (3.0 ** (attempt // 3)) if attempt else eps
                x_new = fx + step * normal
                if attempt >= 3:
                    tang = jitter_rng.normal(size=box.dim)
                    tang -= (tang @ normal) * normal
                    nt = np.linalg.norm(tang)
                    if nt > 0:
                        x_new = x_new + (0.3 * fr * (attempt / 10.0) / nt) * tang
                try:
                    sol = solver.solve(x_new)
                except InfeasibleDispatch:
                    found = "boundary"
                    break
                if sol.degenerate:
                    continue
                pat = SystemPattern(binding=sol.binding, n_c=lp.n_c)
                if pat.reduced == reg.pattern.reduced:
                    continue  # did not actually cross; retry with jitter
                found = pat
                break
            if found is None:
                logger.warning("facet %d of %s: degenerate crossing, skipped",
                               k, reg.pattern)
                continue
            if found == "boundary" or found.reduced in visited:
                continue
            try:
                nb = region_of(found, lp)
            except (InvalidPattern, EmptyRegion) as exc:
                logger.warning("neighbor %s rejected: %s", found, exc)
                visited.add(found.reduced)
                continue
            visited.add(found.reduced)
            out.append(nb)
            if _region_overlaps_box(nb, box, extent):
                frontier.append(nb)
    out.sort(key=lambda r: r.pattern.reduced)
    return out


def are_adjacent(r1: SPRRecord, r2: SPRRecord) -> bool:
    """True iff the patterns differ in one entry and share a (d-1)-facet."""
    s1, s2 = set(r1.pattern.reduced), set(r2.pattern.reduced)
    if len(s1 - s2) != 1 or len(s2 - s1) != 1:
        return False
    j2 = next(iter(s2 - s1))
    j1 = next(iter(s1 - s2))
    rows_a = np.vstack([r1.a_region, r2.a_region])
    rows_b = np.concatenate([r1.b_region, r2.b_region])
    if j2 in r1.row_origin:
        facet = r1.row_origin.index(j2)
    elif j1 in r2.row_origin:
        facet = r1.n_rows + r2.row_origin.index(j1)
    else:
        return False
    extent = 1e3 * (1.0 + float(np.abs(rows_b).max(initial=1.0)))
    _, fr = _facet_ball(rows_a, rows_b, facet, extent)
    return fr > RADIUS_TOL * (1.0 + float(np.abs(rows_b).max(initial=1.0)))


def verify_unique_lmps(regions, tol=1e-6):
    """Check all LMP vectors are pairwise distinct beyond ``tol`` (inf-norm).

    Returns ``(True, None)`` or ``(False, (i, j))`` for the first
    offending pair of list positions.
    """
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            if np.abs(regions[i].lmp.lam - regions[j].lmp.lam).max() <= tol:
                return False, (i, j)
    return True, None


def pattern_admits_cost(pattern: SystemPattern, lp: ParametricLP, c_new, margin=DUAL_MARGIN) -> bool:
    """Would this pattern's region survive a change of the cost vector?

    True iff the binding-row dual system with ``c_new`` has a solution
    with strictly positive duals (balance entry sign-free).
    """
    c_new = np.asarray(c_new, dtype=float)
    if c_new.shape != (lp.n_g,):
        raise MprError(f"cost vector must have shape ({lp.n_g},)")
    try:
        _, _, min_dual = _pattern_duals(pattern.reduced, lp, c_new)
    except InvalidPattern as exc:
        logger.warning("pattern %s: %s", pattern, exc)
        return False
    return bool(min_dual > margin)


def region_vertices_2d(reg: SPRRecord, tol=1e-7):
    """Vertex polygon of a 2-D region, ordered counterclockwise.

    Intersects every row pair and keeps the feasible intersections; used
    for plot-data export of two-load cases.
    """
    a, b = reg.a_region, reg.b_region
    if a.shape[1] != 2:
        raise MprError("vertex export is for 2-D regions only")
    pts = []
    scale = 1.0 + float(np.abs(b).max(initial=0.0))
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            mat = np.vstack([a[i], a[j]])
            if abs(np.linalg.det(mat)) < 1e-10:
                continue
            v = np.linalg.solve(mat, np.array([b[i], b[j]]))
            if (a @ v <= b + tol * scale).all():
                pts.append(v)
    if not pts:
        return []
    pts = np.unique(np.round(np.array(pts), 7), axis=0)
    center = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
    return [list(map(float, p)) for p in pts[order]]


def hrep_disagreements(a1, b1, a2, b2, points, band=1e-6):
    """Count points classified inside one H-rep but outside the other.

    A point disagrees when it is strictly inside one system by more than
    ``band`` yet outside the other by more than ``band`` (both systems
    unit-normalized). Used for set-equality checks between an enumerated
    region and a reference inequality system.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    in1_strict = (pts @ np.asarray(a1).T <= np.asarray(b1) - band).all(axis=1)
    in1_loose = (pts @ np.asarray(a1).T <= np.asarray(b1) + band).all(axis=1)
    in2_strict = (pts @ np.asarray(a2).T <= np.asarray(b2) - band).all(axis=1)
    in2_loose = (pts @ np.asarray(a2).T <= np.asarray(b2) + band).all(axis=1)
    return int(((in1_strict & ~in2_loose) | (in2_strict & ~in1_loose)).sum())
