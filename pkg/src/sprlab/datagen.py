"""Monte-Carlo scenario and dataset generation (SLR / DLR / ramp).

All randomness flows through one counter-based Philox stream per run, so
a (case, config, seed) triple regenerates bit-identical datasets.
Infeasible draws are resampled and counted; ramp chains that hit an
infeasible interval are truncated with a warning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from sprlab import learn
from sprlab.grid import NetworkCase, compute_shift_factors
from sprlab.sced import DispatchSolver, InfeasibleDispatch, build_sced, compute_lmp

logger = logging.getLogger(__name__)

__all__ = [
    "DataGenError",
    "ScenarioConfig",
    "make_rng",
    "sine_profile",
    "sample_loads",
    "generate_dataset",
    "write_dataset_csv",
    "read_dataset_csv",
]

RAMP_BASE_MINUTES = 15.0      # a unit traverses its full range in 15 min
MIN_FEASIBLE_RATE = 0.01
MAX_XI = 0.95                 # |xi| draws beyond this are redrawn


class DataGenError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    mode: str = "slr"                 # slr | dlr | ramp
    n_samples: int = 1440
    seed: int = 0
    sigma_frac: float = 0.10          # load std as a fraction of the mean
    xi_sigma: float = 0.10            # rating-factor std (dlr)
    ramp_scale: float = 1.0           # R / R0
    sampling: str = "uniform-box"     # uniform-box | normal-profile
    dt: float = 5.0                   # minutes between sequential solves

    def __post_init__(self):
        if self.mode not in ("slr", "dlr", "ramp"):
            raise DataGenError(f"unknown mode '{self.mode}'")
        if self.sampling not in ("uniform-box", "normal-profile"):
            raise DataGenError(f"unknown sampling '{self.sampling}'")
        if self.n_samples <= 0:
            raise DataGenError("n_samples must be positive")
        if self.sigma_frac < 0:
            raise DataGenError("sigma_frac must be >= 0")
        if self.ramp_scale <= 0:
            raise DataGenError("ramp_scale must be positive")


def make_rng(seed: int) -> np.random.Generator:
    """Philox4x64-10 counter-based generator; the documented RNG."""
    return np.random.Generator(np.random.Philox(seed))


def sine_profile(case: NetworkCase, n_steps: int, low_frac=0.15, high_frac=0.80,
                 period=288) -> np.ndarray:
    """Synthetic daily mean-load profile, equal share per load bus.

    Total mean swings between ``low_frac`` and ``high_frac`` of the total
    generation capacity over ``period`` steps (288 = one day at 5 min).
    """
    cap = float(case.pmax.sum())
    t = np.arange(n_steps)
    shape = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / period))
    total = (low_frac + (high_frac - low_frac) * shape) * cap
    return np.tile((total / case.n_load)[:, None], (1, case.n_load))


def _draw(rng, config: ScenarioConfig, box, profile, t):
    if config.sampling == "uniform-box":
        return rng.uniform(box.lower, box.upper)
    mu = profile[t]
    return mu + rng.normal(size=mu.shape) * config.sigma_frac * np.abs(mu)


def _draw_xi(rng, config: ScenarioConfig) -> float:
    while True:
        xi = float(rng.normal(scale=config.xi_sigma))
        if abs(xi) < MAX_XI:
            return xi


def sample_loads(config: ScenarioConfig, case: NetworkCase, box=None, profile=None):
    """LP-feasible load vectors; returns ``(loads, n_resampled)``.

    Infeasible draws are replaced (uniform mode: fresh box draw; profile
    mode: fresh noise at the same step). Aborts when the feasibility rate
    drops below 1%.
    """
    ds = generate_dataset(case, config, box=box, profile=profile, labels=False)
    return ds["loads"], ds["n_resampled"]


def generate_dataset(case: NetworkCase, config: ScenarioConfig, box=None,
                     profile=None, labels=True, group_tol=learn.GROUP_TOL):
    """Solve one dispatch per sample and label rows by their LMP vector.

    SLR solves are independent; DLR applies a fresh rating factor per
    sample; ramp mode solves sequentially, tightening generator bounds
    around the previous dispatch with ``R = ramp_scale * (pmax - pmin) /
    15`` MW/min and leaving the first interval unconstrained.
    """
    if config.sampling == "uniform-box":
        if box is None:
            raise DataGenError("uniform-box sampling needs a load box")
        if box.dim != case.n_load:
            raise DataGenError("box dimension does not match the load buses")
    else:
        if profile is None:
            raise DataGenError("normal-profile sampling needs a profile")
        profile = np.asarray(profile, dtype=float)
        if profile.ndim != 2 or profile.shape[1] != case.n_load:
            raise DataGenError(f"profile must be (n_steps, {case.n_load})")
        if profile.shape[0] < config.n_samples:
            raise DataGenError("profile shorter than n_samples")

    rng = make_rng(config.seed)
    shift = compute_shift_factors(case)
    lp = build_sced(case, shift)
    solver = DispatchSolver(lp)
    ramp_span = config.ramp_scale * (case.pmax - case.pmin) / RAMP_BASE_MINUTES * config.dt

    loads = np.zeros((config.n_samples, case.n_load))
    lmps = np.zeros((config.n_samples, case.n_bus))
    xis = np.zeros(config.n_samples)
    degenerate = np.zeros(config.n_samples, dtype=bool)
    n_resampled = 0
    attempts = 0
    prev_pg = None
    n_done = 0
    for t in range(config.n_samples):
        row = None
        for _ in range(10_000):
            attempts += 1
            p_d = _draw(rng, config, box, profile, t)
            xi = _draw_xi(rng, config) if config.mode == "dlr" else 0.0
            b = None
            if config.mode == "dlr":
                b = lp.with_b(f=(1.0 + xi) * case.ratings).b
            elif config.mode == "ramp" and prev_pg is not None:
                lo = np.maximum(case.pmin, prev_pg - ramp_span)
                hi = np.minimum(case.pmax, prev_pg + ramp_span)
                b = lp.with_b(gen_lo=lo, gen_hi=hi).b
            try:
                sol = solver.solve(p_d, b=b)
            except InfeasibleDispatch:
                n_resampled += 1
                if attempts > 200 and (attempts - n_resampled) / attempts < MIN_FEASIBLE_RATE:
                    raise DataGenError(
                        f"feasibility rate below 1% after {attempts} draws"
                    ) from None
                if config.mode == "ramp" and prev_pg is not None and n_resampled % 50 == 0:
                    # the ramp window itself may be blocking; give up on the chain
                    row = "truncate"
                    break
                continue
            row = (p_d, sol, xi)
            break
        if row == "truncate" or row is None:
            logger.warning("ramp chain truncated at step %d (infeasible interval)", t)
            break
        p_d, sol, xi = row
        loads[t] = p_d
        lmps[t] = compute_lmp(sol, shift).lam
        xis[t] = xi
        degenerate[t] = sol.degenerate
        prev_pg = sol.p_g
        n_done = t + 1
    loads, lmps, xis, degenerate = (a[:n_done] for a in (loads, lmps, xis, degenerate))
    if degenerate.any():
        logger.warning("%d degenerate solves flagged", int(degenerate.sum()))
    meta = {
        "lmps": lmps,
        "xi": xis,
        "scenario": config.mode,
        "idx": np.arange(n_done),
        "degenerate": degenerate,
        "n_resampled": n_resampled,
    }
    if not labels:
        return {"loads": loads, "lmps": lmps, "xi": xis, "n_resampled": n_resampled}
    ds = learn.group_labels(loads, lmps, tol=group_tol,
                            feature_buses=case.load_buses, meta=meta)
    return ds


def write_dataset_csv(path, case: NetworkCase, loads, lmps, xi, scenario: str) -> None:
    """Columns: idx, PD_<bus> per load bus, LMP_<bus> per bus, xi, scenario."""
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    lmps = np.atleast_2d(np.asarray(lmps, dtype=float))
    xi = np.asarray(xi, dtype=float)
    header = (
        ["idx"]
        + [f"PD_{b}" for b in case.load_buses]
        + [f"LMP_{b}" for b in range(1, case.n_bus + 1)]
        + ["xi", "scenario"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(loads.shape[0]):
            vals = [f"{v:.9g}" for v in loads[k]] + [f"{v:.9g}" for v in lmps[k]]
            fh.write(f"{k}," + ",".join(vals) + f",{xi[k]:.9g},{scenario}\n")


def read_dataset_csv(path, group_tol=learn.GROUP_TOL) -> learn.LabeledDataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if not header or header[0] != "idx":
        raise DataGenError(f"{path}: not a dataset CSV (missing idx column)")
    pd_cols = [k for k, h in enumerate(header) if h.startswith("PD_")]
    lmp_cols = [k for k, h in enumerate(header) if h.startswith("LMP_")]
    if not pd_cols or not lmp_cols:
        raise DataGenError(f"{path}: missing PD_/LMP_ columns")
    xi_col = header.index("xi")
    scen_col = header.index("scenario")
    loads = np.array([[float(r[k]) for k in pd_cols] for r in rows])
    lmps = np.array([[float(r[k]) for k in lmp_cols] for r in rows])
    xi = np.array([float(r[xi_col]) for r in rows])
    scenario = rows[0][scen_col] if rows else "slr"
    buses = tuple(int(header[k][3:]) for k in pd_cols)
    meta = {"lmps": lmps, "xi": xi, "scenario": scenario,
            "idx": np.arange(len(rows)), "n_resampled": 0}
    return learn.group_labels(loads, lmps, tol=group_tol,
                              feature_buses=buses, meta=meta)
