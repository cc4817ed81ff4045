"""k-fold cross validation and forecast accuracy metrics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from sprlab import learn

__all__ = [
    "EvalError",
    "kfold_split",
    "classification_accuracy",
    "lmp_forecast_accuracy",
    "FoldReport",
    "cross_validate",
]

ZERO_LMP_TOL = 1e-9


class EvalError(ValueError):
    pass


def kfold_split(n: int, k: int, seed: int):
    """Random partition of ``range(n)`` into k folds of near-equal size.

    Fold sizes differ by at most one; the permutation comes from a
    counter-based Philox generator so the split is reproducible.
    """
    if not 2 <= k <= n:
        raise EvalError(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.Generator(np.random.Philox(seed))
    perm = rng.permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def classification_accuracy(pred, truth) -> float:
    """Exact-match ratio."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise EvalError("prediction and truth lengths differ")
    return float(np.mean(pred == truth))


def lmp_forecast_accuracy(pred_lmps, true_lmps, zero_tol=ZERO_LMP_TOL):
    """Per-bus and overall forecast accuracy, 1 - |rel. deviation| clamped.

    Each term is ``1 - |pred - true| / |true|`` clamped to [0, 1]; terms
    with ``|true| < zero_tol`` are skipped and counted. Returns
    ``(beta_i, beta, n_skipped)``.
    """
    pred = np.atleast_2d(np.asarray(pred_lmps, dtype=float))
    true = np.atleast_2d(np.asarray(true_lmps, dtype=float))
    if pred.shape != true.shape:
        raise EvalError(f"shape mismatch {pred.shape} vs {true.shape}")
    ok = np.abs(true) >= zero_tol
    acc = np.zeros_like(true)
    acc[ok] = np.clip(1.0 - np.abs(pred[ok] - true[ok]) / np.abs(true[ok]), 0.0, 1.0)
    counts = ok.sum(axis=0)
    sums = (acc * ok).sum(axis=0)
    beta_i = np.divide(sums, counts, out=np.full(true.shape[1], np.nan), where=counts > 0)
    valid = ~np.isnan(beta_i)
    beta = float(beta_i[valid].mean()) if valid.any() else float("nan")
    return beta_i, beta, int((~ok).sum())


@dataclass
class FoldReport:
    """Per-fold accuracies plus averages and stage timings (seconds)."""

    folds: list[dict] = field(default_factory=list)
    alpha_avg: float = 0.0
    beta_avg: float = 0.0
    beta_i_avg: np.ndarray | None = None
    timings: dict = field(default_factory=dict)

    def validate(self):
        seen = np.concatenate([np.asarray(f["indices"]) for f in self.folds])
        if len(np.unique(seen)) != len(seen):
            raise EvalError("folds overlap")
        sizes = [len(f["indices"]) for f in self.folds]
        if max(sizes) - min(sizes) > 1:
            raise EvalError("fold sizes differ by more than one")
        for f in self.folds:
            if not 0.0 <= f["alpha"] <= 1.0:
                raise EvalError("alpha outside [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "folds": [
                {
                    "fold": f["fold"],
                    "n_validation": len(f["indices"]),
                    "alpha": f["alpha"],
                    "beta": f["beta"],
                    "beta_i": list(map(float, f["beta_i"])),
                    "skipped_terms": f["skipped"],
                }
                for f in self.folds
            ],
            "alpha_avg": self.alpha_avg,
            "beta_avg": self.beta_avg,
            "beta_i_avg": (list(map(float, self.beta_i_avg))
                           if self.beta_i_avg is not None else None),
            "timings": self.timings,
        }

    def to_csv_text(self) -> str:
        lines = ["fold,alpha,beta"]
        for f in self.folds:
            lines.append(f"{f['fold']},{f['alpha']:.9g},{f['beta']:.9g}")
        lines.append(f"avg,{self.alpha_avg:.9g},{self.beta_avg:.9g}")
        return "\n".join(lines) + "\n"


def cross_validate(ds: learn.LabeledDataset, k=5, seed=0, c=learn.DEFAULT_C_SEPARABLE,
                   classifier="svm", fit_posteriors=False) -> FoldReport:
    """k-fold report in the fold / classification / LMP-forecast layout.

    True per-row LMPs come from ``ds.meta['lmps']`` when the generator
    stored them, otherwise from the class representatives.
    """
    ds.validate()
    true_all = np.asarray(ds.meta.get("lmps", ds.class_lmps[ds.labels]), dtype=float)
    report = FoldReport()
    t_train = t_pred = t_post = 0.0
    betas_i = []
    for fold, val_idx in enumerate(kfold_split(ds.n, k, seed), start=1):
        mask = np.zeros(ds.n, dtype=bool)
        mask[val_idx] = True
        train = learn.LabeledDataset(
            x=ds.x[~mask], labels=ds.labels[~mask], class_lmps=ds.class_lmps,
            feature_buses=ds.feature_buses, has_total=ds.has_total,
            label_bus=ds.label_bus,
        )
        t0 = time.perf_counter()
        if classifier == "svm":
            model = learn.train_ovo(train, c=c, fit_posteriors=fit_posteriors)
        elif classifier == "cll":
            model = learn.train_cll_ovo(train)
        else:
            raise EvalError(f"unknown classifier '{classifier}'")
        t1 = time.perf_counter()
        if classifier == "svm":
            pred = learn.predict_batch(model, ds.x[mask])
        else:
            pred = learn.predict_cll_batch(model, ds.x[mask])
        t2 = time.perf_counter()
        alpha = classification_accuracy(pred, ds.labels[mask])
        beta_i, beta, skipped = lmp_forecast_accuracy(
            ds.class_lmps[pred], true_all[mask]
        )
        t3 = time.perf_counter()
        t_train += t1 - t0
        t_pred += t2 - t1
        t_post += t3 - t2
        betas_i.append(beta_i)
        report.folds.append({
            "fold": fold, "indices": val_idx, "alpha": alpha, "beta": beta,
            "beta_i": beta_i, "skipped": skipped,
        })
    report.alpha_avg = float(np.mean([f["alpha"] for f in report.folds]))
    report.beta_avg = float(np.mean([f["beta"] for f in report.folds]))
    report.beta_i_avg = np.nanmean(np.vstack(betas_i), axis=0)
    report.timings = {"training": t_train, "predicting": t_pred,
                      "data_post_processing": t_post}
    report.validate()
    return report
