"""Data-driven region identification from load/price history.

Labels are LMP vectors (discrete across regions), classes are regions;
pairwise soft-margin linear SVMs vote for the multiclass decision, and
Platt-calibrated pair probabilities are coupled into multi-class
posteriors. A total-load threshold classifier serves as the
critical-load-level baseline, and feature projections model market
participants with partial load visibility.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "LearnError",
    "LabeledDataset",
    "BinarySVM",
    "PlattParams",
    "OvOModel",
    "CLLThreshold",
    "CLLModel",
    "group_labels",
    "train_binary_svm",
    "train_ovo",
    "predict",
    "predict_batch",
    "fit_platt",
    "platt_targets",
    "pair_probability",
    "posterior_multiclass",
    "train_cll",
    "train_cll_ovo",
    "predict_cll_batch",
    "project_features",
    "relabel_by_bus",
    "save_model",
    "load_model",
]

GROUP_TOL = 1e-6
DEFAULT_C_SEPARABLE = 1000.0
DEFAULT_C_OVERLAP = 1.0


class LearnError(RuntimeError):
    pass


@dataclass
class LabeledDataset:
    """Feature rows (MW), integer class labels, class -> LMP table."""

    x: np.ndarray                       # n x d
    labels: np.ndarray                  # n, ints in [0, n_classes)
    class_lmps: np.ndarray              # n_classes x n_lmp_columns
    feature_buses: tuple[int, ...]      # bus id of each leading feature column
    has_total: bool = False             # trailing total-load column present
    label_bus: int | None = None        # set after relabel_by_bus
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_classes(self) -> int:
        return self.class_lmps.shape[0]

    def validate(self):
        if self.x.shape[0] != self.labels.shape[0]:
            raise LearnError("features and labels disagree on row count")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.n_classes:
            raise LearnError("labels outside 0..n_classes-1")
        expected = len(self.feature_buses) + (1 if self.has_total else 0)
        if self.d != expected:
            raise LearnError(f"{self.d} feature columns, schema says {expected}")


def group_labels(loads, lmps, tol=GROUP_TOL, feature_buses=None, meta=None) -> LabeledDataset:
    """Group rows whose LMP vectors agree within a relative inf-norm tol.

    The first row of each group becomes the class representative stored
    in ``class_lmps``; classes are numbered in order of first appearance.
    """
    loads = np.asarray(loads, dtype=float)
    lmps = np.atleast_2d(np.asarray(lmps, dtype=float))
    if loads.shape[0] != lmps.shape[0]:
        raise LearnError("loads and lmps disagree on row count")
    reps: list[np.ndarray] = []
    labels = np.empty(loads.shape[0], dtype=int)
    for r, lam in enumerate(lmps):
        hit = -1
        for k, rep in enumerate(reps):
            if np.abs(lam - rep).max() <= tol * max(1.0, float(np.abs(rep).max())):
                hit = k
                break
        if hit < 0:
            reps.append(lam.copy())
            hit = len(reps) - 1
        labels[r] = hit
    if feature_buses is None:
        feature_buses = tuple(range(1, loads.shape[1] + 1))
    return LabeledDataset(
        x=loads,
        labels=labels,
        class_lmps=np.array(reps),
        feature_buses=tuple(feature_buses),
        meta=dict(meta or {}),
    )


@dataclass
class BinarySVM:
    """Soft-margin linear separator ``sign(w.x - b)`` for one class pair."""

    w: np.ndarray
    b: float
    c: float
    class_pair: tuple[int, int]         # (+1 side, -1 side)
    slack_sum: float
    duality_gap: float
    iterations: int

    def decision(self, x) -> np.ndarray:
        return np.atleast_2d(np.asarray(x, dtype=float)) @ self.w - self.b


def _smo_pairs(x, y, c, alpha, s, eps, max_iter, a_tol):
    """Pairwise coordinate ascent on the dual with shrinking.

    Maintains the score cache ``s = (x @ w)`` incrementally; the first
    pair member is the maximal violator, the second maximizes the
    second-order objective decrease (first-order selection zigzags at
    large C). Ties resolve to the lowest index. Returns the iteration
    count; ``alpha`` and ``s`` are updated in place.
    """
    n, d = x.shape
    sq = np.empty(n)
    for k in range(n):
        acc = 0.0
        for col in range(d):
            acc += x[k, col] * x[k, col]
        sq[k] = acc
    w = np.zeros(d)
    for k in range(n):
        if alpha[k] != 0.0:
            for col in range(d):
                w[col] += alpha[k] * y[k] * x[k, col]
    active = np.arange(n)
    n_act = n
    it = 0
    since_shrink = 0
    while it < max_iter:
        it += 1
        since_shrink += 1
        n_top = 4                          # gain-aware over several violators
        top_i = np.full(n_top, -1)
        top_v = np.full(n_top, -np.inf)
        m_up = -np.inf
        m_low = np.inf
        for a in range(n_act):
            k = active[a]
            v = y[k] - s[k]
            if (y[k] > 0 and alpha[k] < c - a_tol) or (y[k] < 0 and alpha[k] > a_tol):
                if v > m_up:
                    m_up = v
                if v > top_v[n_top - 1]:
                    pos = n_top - 1
                    while pos > 0 and v > top_v[pos - 1]:
                        top_v[pos] = top_v[pos - 1]
                        top_i[pos] = top_i[pos - 1]
                        pos -= 1
                    top_v[pos] = v
                    top_i[pos] = k
            if (y[k] > 0 and alpha[k] > a_tol) or (y[k] < 0 and alpha[k] < c - a_tol):
                if v < m_low:
                    m_low = v
        if top_i[0] < 0 or m_up - m_low <= eps:
            if n_act == n:
                break
            active = np.arange(n)          # reconcile on the full set
            n_act = n
            since_shrink = 0
            for k in range(n):             # stale scores outside the old set
                acc = 0.0
                for col in range(d):
                    acc += x[k, col] * w[col]
                s[k] = acc
            continue
        best = -np.inf
        i = -1
        j = -1
        t_best = 0.0
        for ti in range(n_top):
            ii = top_i[ti]
            if ii < 0:
                break
            vi = top_v[ti]
            for a in range(n_act):
                k = active[a]
                if not ((y[k] > 0 and alpha[k] > a_tol) or (y[k] < 0 and alpha[k] < c - a_tol)):
                    continue
                diff = vi - (y[k] - s[k])
                if diff <= 1e-15:
                    continue
                quad = sq[ii] + sq[k]
                for col in range(d):
                    quad -= 2.0 * x[ii, col] * x[k, col]
                if quad < 1e-12:
                    quad = 1e-12
                g = diff * diff / quad
                if g > best:
                    best = g
                    i = ii
                    j = k
                    t_best = diff / quad
        if j < 0:
            if n_act == n:
                break
            active = np.arange(n)
            n_act = n
            since_shrink = 0
            for k in range(n):
                acc = 0.0
                for col in range(d):
                    acc += x[k, col] * w[col]
                s[k] = acc
            continue
        t = t_best
        cap_i = (c - alpha[i]) if y[i] > 0 else alpha[i]
        cap_j = alpha[j] if y[j] > 0 else (c - alpha[j])
        if cap_i < t:
            t = cap_i
        if cap_j < t:
            t = cap_j
        if t <= 0.0:
            break
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        # land exactly on a hit bound so caps never shrink to epsilons
        for k in (i, j):
            if alpha[k] <= 4.0 * a_tol:
                alpha[k] = 0.0
            elif alpha[k] >= c - 4.0 * a_tol:
                alpha[k] = c
        for col in range(d):
            w[col] += t * (x[i, col] - x[j, col])
        for a in range(n_act):
            k = active[a]
            acc = 0.0
            for col in range(d):
                acc += x[k, col] * (x[i, col] - x[j, col])
            s[k] += t * acc
        if since_shrink >= 256 and n_act > 64:
            since_shrink = 0
            kept = 0
            for a in range(n_act):
                k = active[a]
                v = y[k] - s[k]
                lo_bound = alpha[k] <= a_tol
                hi_bound = alpha[k] >= c - a_tol
                drop = False
                if lo_bound:
                    drop = (v <= m_low) if y[k] > 0 else (v >= m_up)
                elif hi_bound:
                    drop = (v >= m_up) if y[k] > 0 else (v <= m_low)
                if not drop or k == i or k == j:
                    active[kept] = k
                    kept += 1
            if kept >= 2:
                n_act = kept
    for k in range(n):                     # leave a consistent score cache
        acc = 0.0
        for col in range(d):
            acc += x[k, col] * w[col]
        s[k] = acc
    return it


try:  # compiled hot loop when numba is around; plain numpy otherwise
    from numba import njit as _njit

    _smo_pairs_jit = _njit(cache=True, nogil=True)(_smo_pairs)
except ImportError:  # pragma: no cover - exercised only without numba
    _smo_pairs_jit = _smo_pairs


def train_binary_svm(x, y, c, tol=1e-6, max_iter=2_000_000) -> BinarySVM:
    """Soft-margin fit by dual coordinate ascent over multiplier pairs.

    ``tol`` is the relative primal/dual gap at which training stops; the
    violating-pair tolerance tightens automatically until the gap is
    met. Deterministic for a fixed row order.
    """
    x = np.ascontiguousarray(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise LearnError("x must be (n, d) with matching labels")
    if not ((y == 1) | (y == -1)).all():
        raise LearnError("labels must be +-1")
    if (y == 1).sum() == 0 or (y == -1).sum() == 0:
        raise LearnError("both classes must be present")
    if c <= 0:
        raise LearnError("C must be positive")
    n = x.shape[0]
    a_tol = 1e-12 * c
    alpha = np.zeros(n)
    s = np.zeros(n)
    # the dual is flat along most of the free face (rank-d Hessian), so the
    # true duality gap converges far earlier than the pairwise KKT residual;
    # run in chunks and stop on the gap itself
    eps = 1e-3
    chunk = 10_000
    it = 0
    tried_newton = False
    while True:
        ran = int(_smo_pairs_jit(x, y, float(c), alpha, s, float(eps),
                                 int(min(chunk, max(max_iter - it, 1))), float(a_tol)))
        it += ran
        w = x.T @ (alpha * y)
        gap = _svm_gap(x, y, alpha, w, c)
        if gap <= tol:
            break
        candidates = []
        polished = _polish_active_set(x, y, c, alpha, a_tol)
        if polished is not None:
            candidates.append(polished)
        if not tried_newton:
            # the pair steps crawl on raw-MW features; a smoothed-primal
            # Newton lands on the optimal margin partition immediately
            tried_newton = True
            hub = _huber_newton(x, y, c)
            if hub is not None:
                candidates.append(hub[0])
                polished = _polish_active_set(x, y, c, hub[0], a_tol)
                if polished is not None:
                    candidates.append(polished)
        for cand in candidates:
            w2 = x.T @ (cand * y)
            g2 = _svm_gap(x, y, cand, w2, c)
            if g2 < gap:
                alpha, w, gap = cand, w2, g2
        s = x @ w
        if gap <= tol or it >= max_iter:
            break
        if ran < chunk:                    # pair criterion met at this eps
            if eps <= 1e-12:
                break
            eps = max(eps * 0.1, 1e-12)
    w = x.T @ (alpha * y)
    s = x @ w
    b, _ = _scan_threshold(s, y)
    slack = np.maximum(0.0, 1.0 - y * (s - b))
    primal = 0.5 * float(w @ w) + c * float(slack.sum())
    dual = float(alpha.sum()) - 0.5 * float(w @ w)
    return BinarySVM(
        w=w,
        b=b,
        c=c,
        class_pair=(1, -1),
        slack_sum=float(slack.sum()),
        duality_gap=(primal - dual) / max(1.0, abs(primal)),
        iterations=it,
    )


@dataclass
class PlattParams:
    """Sigmoid link ``r(f) = 1 / (1 + exp(a*f + b))`` for one pair."""

    a: float
    b: float
    converged: bool = True
    nll_path: tuple[float, ...] = ()


def _face_optimize(x, y, c, alpha, free, at_c):
    """Optimize the dual on one (free, at-C) face, exactly.

    Stationarity on the face means unit margins for the free set plus
    the balance equality. When that system is inconsistent the face is
    unbounded along a null direction of the free-point geometry; the
    multipliers are then pushed along the steepest such ray until one
    hits a bound and leaves the free set. Mutates ``free``/``at_c`` and
    returns ``(alpha, w, b)`` or None on numerical breakdown.
    """
    alpha = alpha.copy()
    for _ in range(free.sum() + 1):
        f_idx = np.nonzero(free)[0]
        fixed = np.where(at_c & ~free, c, 0.0)
        w_fix = x.T @ (fixed * y)
        bal_rhs = -float((fixed * y).sum())
        nf = len(f_idx)
        if nf == 0:
            a_new = fixed
            b, _ = _scan_threshold(x @ w_fix, y)
            return a_new, w_fix, float(b)
        xf = x[f_idx]
        yf = y[f_idx]
        mat = np.zeros((nf + 1, nf + 1))
        mat[:nf, :nf] = (yf[:, None] * yf[None, :]) * (xf @ xf.T)
        mat[:nf, nf] = -yf
        mat[nf, :nf] = yf
        rhs = np.concatenate([1.0 - yf * (xf @ w_fix), [bal_rhs]])
        sol, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
        if not np.isfinite(sol).all():
            return None
        if np.abs(mat @ sol - rhs).max() <= 1e-7 * (1.0 + np.abs(rhs).max()):
            a_new = fixed.copy()
            a_new[f_idx] = sol[:nf]
            return a_new, x.T @ (a_new * y), float(sol[nf])
        # inconsistent: descend along the null direction with the largest
        # multiplier-sum growth until a bound removes one free index
        geom = np.vstack([xf.T * yf, yf[None, :]])        # (d+1) x nf
        _, sv, vh = np.linalg.svd(geom)
        null = vh[np.sum(sv > 1e-9 * max(1.0, sv.max())):]
        if null.size == 0:
            return None
        u = null.T @ (null @ np.ones(nf))
        total = float(u.sum())
        if abs(total) <= 1e-12:
            return None
        if total < 0:
            u = -u
        af = alpha[f_idx].clip(0.0, c)
        t_max = np.inf
        hit = -1
        hit_hi = False
        for k in range(nf):
            if u[k] > 1e-14:
                t = (c - af[k]) / u[k]
                if t < t_max - 1e-15:
                    t_max, hit, hit_hi = t, k, True
            elif u[k] < -1e-14:
                t = af[k] / (-u[k])
                if t < t_max - 1e-15:
                    t_max, hit, hit_hi = t, k, False
        if hit < 0 or not np.isfinite(t_max):
            return None
        af = af + t_max * u
        alpha[f_idx] = af.clip(0.0, c)
        g = f_idx[hit]
        free[g] = False
        at_c[g] = hit_hi
        alpha[g] = c if hit_hi else 0.0
    return None


def _polish_active_set(x, y, c, alpha, a_tol, max_rounds=200):
    """Finish the dual exactly from a near-optimal multiplier vector.

    Phase 1 re-solves the free-set KKT system and repartitions all
    indices by their margins (finite-Newton style jumps); phase 2 walks
    one worst violator at a time for the endgame. Returns the refined
    multipliers or None when the walk cycles without reaching KKT.
    """
    n = x.shape[0]
    d = x.shape[1]
    free = (alpha > a_tol) & (alpha < c - a_tol)
    at_c = alpha >= c - a_tol
    if free.sum() > d + 2:
        idx = np.nonzero(free)[0]
        interior = np.minimum(alpha, c - alpha)
        order = idx[np.argsort(-interior[idx], kind="stable")]
        for k in order[d + 2:]:
            free[k] = False
            at_c[k] = alpha[k] > 0.5 * c
    kkt_tol = 1e-9 * (1.0 + c)
    band = 1e-8
    seen = set()
    for _ in range(30):                    # phase 1: margin repartition jumps
        key = (free.tobytes(), at_c.tobytes())
        if key in seen:
            break
        seen.add(key)
        out = _face_optimize(x, y, c, alpha, free, at_c)
        if out is None:
            return None
        a_new, w, b = out
        if (a_new >= -kkt_tol).all() and (a_new <= c + kkt_tol).all():
            margins = y * (x @ w - b)
            bad_z = (~free) & (~at_c) & (margins < 1.0 - band)
            bad_c = at_c & (~free) & (margins > 1.0 + band)
            if not bad_z.any() and not bad_c.any():
                return np.clip(a_new, 0.0, c)
        alpha = np.clip(a_new, 0.0, c)
        margins = y * (x @ w - b)
        free = np.abs(margins - 1.0) <= band
        at_c = margins < 1.0 - band
        if free.sum() > d + 2:
            # the generic optimum frees at most d+1 multipliers; keep the
            # closest-to-margin ones so face solves stay few-by-few
            idx = np.nonzero(free)[0]
            order = idx[np.argsort(np.abs(margins[idx] - 1.0), kind="stable")]
            for k in order[d + 2:]:
                free[k] = False
                at_c[k] = margins[k] < 1.0
    seen = set()
    for _ in range(max_rounds):            # phase 2: one index at a time
        key = (free.tobytes(), at_c.tobytes())
        if key in seen:
            return None
        seen.add(key)
        out = _face_optimize(x, y, c, alpha, free, at_c)
        if out is None:
            return None
        a_new, w, b = out
        alpha = np.clip(a_new, 0.0, c)
        margins = y * (x @ w - b)
        # worst violation wins; lowest index on ties keeps this deterministic
        best_kind, best_score, best_idx = None, kkt_tol, -1
        for kind, score in (
            ("f->z", np.where(free, -a_new, -np.inf)),
            ("f->c", np.where(free, a_new - c, -np.inf)),
            ("->f", np.where(free, -np.inf,
                             np.where(at_c, margins - 1.0, 1.0 - margins))),
        ):
            k = int(np.argmax(score))
            if score[k] > best_score:
                best_kind, best_score, best_idx = kind, float(score[k]), k
        if best_idx < 0:
            return np.clip(a_new, 0.0, c)
        if best_kind == "f->z":
            free[best_idx] = False
            at_c[best_idx] = False
        elif best_kind == "f->c":
            free[best_idx] = False
            at_c[best_idx] = True
        else:
            free[best_idx] = True
            at_c[best_idx] = False
    return None


def _huber_newton(x, y, c, mu_final=1e-7):
    """Warm start: Newton on the Huber-smoothed primal in (w, b) space.

    The smoothed objective is twice differentiable, the unknown count is
    d+1, and the smoothing width shrinks geometrically, so this lands on
    the optimal margin partition at trivial cost. Returns ``(alpha, w,
    b)`` with a feasible dual vector recovered from the smoothed slopes.
    """
    n, d = x.shape
    z = np.hstack([x * y[:, None], -y[:, None]])          # margins = z @ theta
    theta = np.zeros(d + 1)
    mu = 1.0
    while True:
        for _ in range(50):
            m = z @ theta
            quad = (m < 1.0) & (m > 1.0 - mu)
            lin = m <= 1.0 - mu
            hp = np.zeros(n)
            hp[quad] = -(1.0 - m[quad]) / mu
            hp[lin] = -1.0
            grad = np.concatenate([theta[:d], [0.0]]) + c * (z.T @ hp)
            if np.abs(grad).max() <= 1e-10 * (1.0 + c):
                break
            hess = np.diag(np.concatenate([np.ones(d), [0.0]]))
            zq = z[quad]
            if zq.size:
                hess = hess + (c / mu) * (zq.T @ zq)
            hess[d, d] += 1e-9 * (1.0 + c)
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                return None
            fcur = _huber_value(theta, z, c, mu, d)
            t = 1.0
            for _ in range(60):
                cand = theta + t * step
                if _huber_value(cand, z, c, mu, d) <= fcur + 1e-12:
                    theta = cand
                    break
                t *= 0.5
            else:
                break
        if mu <= mu_final:
            break
        mu = max(mu * 0.05, mu_final)
    m = z @ theta
    quad = (m < 1.0) & (m > 1.0 - mu)
    alpha = np.zeros(n)
    alpha[quad] = c * (1.0 - m[quad]) / mu
    alpha[m <= 1.0 - mu] = c
    return alpha, theta[:d].copy(), float(theta[d])


def _huber_value(theta, z, c, mu, d):
    m = z @ theta
    h = np.where(m >= 1.0, 0.0,
                 np.where(m > 1.0 - mu, (1.0 - m) ** 2 / (2.0 * mu),
                          (1.0 - m) - mu / 2.0))
    return 0.5 * float(theta[:d] @ theta[:d]) + c * float(h.sum())


def _svm_gap(x, y, alpha, w, c) -> float:
    # primal evaluated at the hinge-optimal bias for the current w, so the
    # reported gap closes as soon as (w, alpha) reach the optimum
    s = x @ w
    b, hinge = _scan_threshold(s, y)
    primal = 0.5 * float(w @ w) + c * hinge
    dual = float(alpha.sum()) - 0.5 * float(w @ w)
    return (primal - dual) / max(1.0, abs(primal))


def platt_targets(y) -> np.ndarray:
    """Regularized targets: (N+ + 1)/(N+ + 2) for +1 rows, 1/(N- + 2) else."""
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    n_neg = int((y == -1).sum())
    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    return t


def _platt_nll(z, t):
    # -sum t*log(r) + (1-t)*log(1-r) with r = sigmoid(-z), stably
    return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)),
                                 (t - 1.0) * z + np.log1p(np.exp(z)))))


def fit_platt(svm: BinarySVM, x, y, max_iter=200, min_step=1e-10, sigma=1e-12) -> PlattParams:
    """Newton fit of the sigmoid link on the classifier scores.

    Backtracks until the negative log likelihood decreases, so the
    recorded ``nll_path`` is monotone nonincreasing over accepted steps.
    """
    f = np.asarray(svm.decision(x)).ravel()
    y = np.asarray(y)
    if (y == 1).sum() == 0 or (y == -1).sum() == 0:
        raise LearnError("both classes must be present to fit the link")
    t = platt_targets(y)
    n_pos = int((y == 1).sum())
    n_neg = int((y == -1).sum())
    a, b = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    z = a * f + b
    nll = _platt_nll(z, t)
    path = [nll]
    converged = False
    for _ in range(max_iter):
        r = 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))
        # gradient of nll wrt z is (t - r); chain through z = a*f + b
        g = t - r
        ga = float(g @ f)
        gb = float(g.sum())
        h = r * (1.0 - r)
        haa = float((h * f * f).sum()) + sigma
        hab = float((h * f).sum())
        hbb = float(h.sum()) + sigma
        det = haa * hbb - hab * hab
        if det <= 0:
            break
        da = -(hbb * ga - hab * gb) / det
        db = -(haa * gb - hab * ga) / det
        step = 1.0
        improved = False
        for _ in range(30):
            za = (a + step * da) * f + (b + step * db)
            new_nll = _platt_nll(za, t)
            if new_nll <= nll + 1e-15:
                a += step * da
                b += step * db
                z = za
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        path.append(new_nll)
        if abs(nll - new_nll) < min_step:
            nll = new_nll
            converged = True
            break
        nll = new_nll
    if not converged:
        logger.warning("sigmoid fit stopped before tolerance (|dNLL| >= %g)", min_step)
    return PlattParams(a=a, b=b, converged=converged, nll_path=tuple(path))


def pair_probability(params: PlattParams, score) -> np.ndarray:
    z = np.clip(params.a * np.asarray(score, dtype=float) + params.b, -500, 500)
    return 1.0 / (1.0 + np.exp(z))


@dataclass
class OvOModel:
    """One classifier per unordered class pair plus the class LMP table."""

    classes: int
    pairs: list[tuple[int, int]]
    classifiers: list[BinarySVM]
    platt: list[PlattParams | None]
    pair_counts: dict[tuple[int, int], int]
    class_lmps: np.ndarray
    feature_buses: tuple[int, ...]
    has_total: bool = False
    label_bus: int | None = None
    svm_c: float = DEFAULT_C_SEPARABLE
    flagged_classes: tuple[int, ...] = ()

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def train_ovo(ds: LabeledDataset, c=DEFAULT_C_SEPARABLE, fit_posteriors=True,
              jobs=1) -> OvOModel:
    """Train all n(n-1)/2 pairwise separators on each pair's rows only.

    Pairwise fits are independent; ``jobs`` > 1 runs them on a thread
    pool (the hot loop releases the GIL).
    """
    ds.validate()
    k = ds.n_classes
    if k < 2:
        raise LearnError("need at least 2 classes for one-vs-one training")
    counts = np.bincount(ds.labels, minlength=k)
    flagged = tuple(int(i) for i in np.nonzero(counts < 2)[0])
    if flagged:
        logger.warning("classes with fewer than 2 samples: %s", flagged)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)
             if counts[i] > 0 and counts[j] > 0]
    tasks = []
    for i, j in pairs:
        mask = (ds.labels == i) | (ds.labels == j)
        tasks.append((ds.x[mask], np.where(ds.labels[mask] == i, 1.0, -1.0)))

    def fit(task):
        xi, yi = task
        svm = train_binary_svm(xi, yi, c)
        return svm, (fit_platt(svm, xi, yi) if fit_posteriors else None)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            fitted = list(pool.map(fit, tasks))
    else:
        fitted = [fit(t) for t in tasks]
    classifiers, platt, pair_counts = [], [], {}
    for (i, j), task, (svm, pl) in zip(pairs, tasks, fitted):
        svm.class_pair = (i, j)
        classifiers.append(svm)
        platt.append(pl)
        pair_counts[(i, j)] = len(task[1])
    return OvOModel(
        classes=k,
        pairs=pairs,
        classifiers=classifiers,
        platt=platt,
        pair_counts=pair_counts,
        class_lmps=ds.class_lmps.copy(),
        feature_buses=ds.feature_buses,
        has_total=ds.has_total,
        label_bus=ds.label_bus,
        svm_c=c,
        flagged_classes=flagged,
    )


def _votes(model: OvOModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != len(model.feature_buses) + (1 if model.has_total else 0):
        raise LearnError(f"feature dimension {x.shape[1]} does not match the model")
    votes = np.zeros((x.shape[0], model.classes), dtype=int)
    for (i, j), svm in zip(model.pairs, model.classifiers):
        side = svm.decision(x).ravel() >= 0.0
        votes[side, i] += 1
        votes[~side, j] += 1
    return votes


def predict(model: OvOModel, x):
    """Max-vote class for one load vector; ties go to the lowest index.

    Returns ``(class index, class LMP row)``.
    """
    idx = int(np.argmax(_votes(model, x)[0]))
    return idx, model.class_lmps[idx]


def predict_batch(model: OvOModel, x) -> np.ndarray:
    return np.argmax(_votes(model, x), axis=1)


def posterior_multiclass(model: OvOModel, x, tol=1e-8, max_sweeps=10_000) -> np.ndarray:
    """Couple the calibrated pair probabilities into one posterior vector.

    Fixed-point iteration ``p_i <- p_i * sum n_ij r_ij / sum n_ij mu_ij``
    with renormalization each update; two-class models are exact in one
    step. Oscillation without convergence returns the average of the
    last two sweeps (logged).
    """
    x = np.asarray(x, dtype=float).ravel()
    if any(p is None for p in model.platt):
        raise LearnError("posteriors need fitted Platt parameters on every pair")
    k = model.classes
    r = np.full((k, k), 0.5)
    n = np.zeros((k, k))
    for (i, j), svm, params in zip(model.pairs, model.classifiers, model.platt):
        rij = float(pair_probability(params, svm.decision(x[None, :])).ravel()[0])
        rij = min(max(rij, 1e-12), 1.0 - 1e-12)
        r[i, j] = rij
        r[j, i] = 1.0 - rij
        n[i, j] = n[j, i] = model.pair_counts[(i, j)]
    p = np.full(k, 1.0 / k)
    prev = p.copy()
    for sweep in range(max_sweeps):
        for i in range(k):
            others = n[i] > 0
            if not others.any():
                continue
            mu_i = p[i] / (p[i] + p[others])
            num = float(n[i, others] @ r[i, others])
            den = float(n[i, others] @ mu_i)
            if den <= 0:
                continue
            p[i] *= num / den
            p = p / p.sum()
        if np.abs(p - prev).max() < tol:
            return p / p.sum()
        prev = p.copy()
    logger.warning("posterior coupling hit the sweep limit; averaging last iterates")
    p = 0.5 * (p + prev)
    return p / p.sum()


@dataclass
class CLLThreshold:
    """Total-load step classifier: class +1 iff direction*(x - b) >= 0."""

    direction: float        # +1 or -1
    b: float
    slack_sum: float

    def decision(self, total) -> np.ndarray:
        return self.direction * (np.asarray(total, dtype=float) - self.b)


def _scan_threshold(z, y):
    """Exact minimizer of sum_i max(0, 1 - y_i (z_i - b)) over b."""
    pos = np.sort(z[y > 0])
    neg = np.sort(z[y < 0])
    pos_pref = np.concatenate([[0.0], np.cumsum(pos)])
    neg_pref = np.concatenate([[0.0], np.cumsum(neg)])
    cand = np.unique(np.concatenate([pos - 1.0, neg + 1.0]))
    # positives with z < b+1 contribute (1 - z + b); negatives with z > b-1 contribute (1 + z - b)
    ip = np.searchsorted(pos, cand + 1.0, side="left")
    inn = np.searchsorted(neg, cand - 1.0, side="right")
    obj = (ip * (1.0 + cand) - pos_pref[ip]) \
        + ((neg_pref[-1] - neg_pref[inn]) - (neg.size - inn) * (cand - 1.0))
    best = obj.min()
    ties = cand[obj <= best + 1e-9 * (1.0 + abs(best))]
    return float((ties.min() + ties.max()) / 2.0), float(best)


def train_cll(total_load, y, c=1.0) -> CLLThreshold:
    """Best 1-D threshold on the total load (both orientations scored).

    ``c`` only scales the objective and cannot move the minimizer; kept
    for signature symmetry with the SVM trainer.
    """
    z = np.asarray(total_load, dtype=float).ravel()
    y = np.asarray(y, dtype=float)
    if (y == 1).sum() == 0 or (y == -1).sum() == 0:
        raise LearnError("both classes must be present")
    b_fwd, o_fwd = _scan_threshold(z, y)
    b_rev, o_rev = _scan_threshold(-z, y)
    if o_fwd <= o_rev:
        return CLLThreshold(direction=1.0, b=b_fwd, slack_sum=o_fwd)
    return CLLThreshold(direction=-1.0, b=-b_rev, slack_sum=o_rev)


@dataclass
class CLLModel:
    classes: int
    pairs: list[tuple[int, int]]
    thresholds: list[CLLThreshold]
    class_lmps: np.ndarray


def train_cll_ovo(ds: LabeledDataset) -> CLLModel:
    """One-vs-one over total-load thresholds (the CLL baseline)."""
    ds.validate()
    total = ds.x.sum(axis=1) if not ds.has_total else ds.x[:, -1]
    k = ds.n_classes
    pairs, thresholds = [], []
    for i in range(k):
        for j in range(i + 1, k):
            mask = (ds.labels == i) | (ds.labels == j)
            if not mask.any() or (ds.labels[mask] == i).all() or (ds.labels[mask] == j).all():
                continue
            yi = np.where(ds.labels[mask] == i, 1.0, -1.0)
            pairs.append((i, j))
            thresholds.append(train_cll(total[mask], yi))
    return CLLModel(classes=k, pairs=pairs, thresholds=thresholds,
                    class_lmps=ds.class_lmps.copy())


def predict_cll_batch(model: CLLModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    total = x.sum(axis=1)
    votes = np.zeros((x.shape[0], model.classes), dtype=int)
    for (i, j), th in zip(model.pairs, model.thresholds):
        side = th.decision(total) >= 0.0
        votes[side, i] += 1
        votes[~side, j] += 1
    return np.argmax(votes, axis=1)


def project_features(ds: LabeledDataset, keep_buses, include_total=False) -> LabeledDataset:
    """Restrict features to selected buses, optionally appending the total.

    The total is the row sum of the *original* feature columns (system
    load), not of the kept subset.
    """
    keep_buses = tuple(int(b) for b in keep_buses)
    if not keep_buses and not include_total:
        raise LearnError("projection would leave no features")
    cols = []
    for b in keep_buses:
        if b not in ds.feature_buses:
            raise LearnError(f"bus {b} is not a feature column")
        cols.append(ds.feature_buses.index(b))
    base = ds.x[:, :len(ds.feature_buses)]
    parts = [base[:, cols]] if cols else []
    if include_total:
        parts.append(base.sum(axis=1, keepdims=True))
    return LabeledDataset(
        x=np.hstack(parts),
        labels=ds.labels.copy(),
        class_lmps=ds.class_lmps.copy(),
        feature_buses=keep_buses,
        has_total=include_total,
        label_bus=ds.label_bus,
        meta=dict(ds.meta),
    )


def relabel_by_bus(ds: LabeledDataset, bus: int, tol=GROUP_TOL) -> LabeledDataset:
    """Merge classes that price identically at one bus.

    ``class_lmps`` becomes a single column of that bus's distinct prices.
    """
    n_b = ds.class_lmps.shape[1]
    if not 1 <= bus <= n_b:
        raise LearnError(f"bus {bus} outside 1..{n_b}")
    col = ds.class_lmps[:, bus - 1]
    reps: list[float] = []
    remap = np.empty(ds.n_classes, dtype=int)
    for k, v in enumerate(col):
        hit = -1
        for m, rep in enumerate(reps):
            if abs(v - rep) <= tol * max(1.0, abs(rep)):
                hit = m
                break
        if hit < 0:
            reps.append(float(v))
            hit = len(reps) - 1
        remap[k] = hit
    return LabeledDataset(
        x=ds.x.copy(),
        labels=remap[ds.labels],
        class_lmps=np.array(reps)[:, None],
        feature_buses=ds.feature_buses,
        has_total=ds.has_total,
        label_bus=bus,
        meta=dict(ds.meta),
    )


def save_model(model: OvOModel, path) -> None:
    """Serialize per-pair separators, link parameters, and the LMP table."""
    doc = {
        "classes": model.classes,
        "svm_c": model.svm_c,
        "class_lmps": model.class_lmps.tolist(),
        "feature_buses": list(model.feature_buses),
        "has_total": model.has_total,
        "label_bus": model.label_bus,
        "flagged_classes": list(model.flagged_classes),
        "pairs": [
            {
                "i": i,
                "j": j,
                "w": svm.w.tolist(),
                "b": svm.b,
                "slack_sum": svm.slack_sum,
                "platt_a": (pl.a if pl else None),
                "platt_b": (pl.b if pl else None),
                "n_ij": model.pair_counts[(i, j)],
            }
            for (i, j), svm, pl in zip(model.pairs, model.classifiers, model.platt)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path) -> OvOModel:
    with open(path) as fh:
        doc = json.load(fh)
    pairs, classifiers, platt, counts = [], [], [], {}
    for row in doc["pairs"]:
        i, j = int(row["i"]), int(row["j"])
        pairs.append((i, j))
        classifiers.append(BinarySVM(
            w=np.asarray(row["w"], dtype=float),
            b=float(row["b"]),
            c=float(doc.get("svm_c", DEFAULT_C_SEPARABLE)),
            class_pair=(i, j),
            slack_sum=float(row.get("slack_sum", 0.0)),
            duality_gap=0.0,
            iterations=0,
        ))
        platt.append(
            PlattParams(a=float(row["platt_a"]), b=float(row["platt_b"]))
            if row.get("platt_a") is not None else None
        )
        counts[(i, j)] = int(row["n_ij"])
    return OvOModel(
        classes=int(doc["classes"]),
        pairs=pairs,
        classifiers=classifiers,
        platt=platt,
        pair_counts=counts,
        class_lmps=np.asarray(doc["class_lmps"], dtype=float),
        feature_buses=tuple(int(b) for b in doc["feature_buses"]),
        has_total=bool(doc.get("has_total", False)),
        label_bus=doc.get("label_bus"),
        svm_c=float(doc.get("svm_c", DEFAULT_C_SEPARABLE)),
        flagged_classes=tuple(doc.get("flagged_classes", ())),
    )
