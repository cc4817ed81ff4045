"""Command-line front end: gen, solve, enumerate, train, predict, eval.

Every command writes its outputs plus a ``<out>.manifest.json`` recording
the exact configuration, seed, inputs/outputs, package version, and
wall-clock timings, so any artifact can be regenerated bit-identically.

Exit codes: 0 success, 2 validation/schema error, 3 infeasible or
degenerate abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

import sprlab
from sprlab import datagen, learn, mpr, sced
from sprlab import eval as evaluation
from sprlab.grid import CaseError, builtin_case, compute_shift_factors, load_case

EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: list[str]
    outputs: list[str]
    version: str = sprlab.__version__
    timings: dict = field(default_factory=dict)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=1, default=str)


class _Timer:
    def __init__(self):
        self.stages = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = timer.stages.get(name, 0.0) + time.perf_counter() - self.t0

        return _Ctx()


def _resolve_case(spec: str):
    if os.path.exists(spec):
        return load_case(spec)
    return builtin_case(spec)


def _parse_box(text: str, n_d: int) -> mpr.LoadBox:
    """``lo:hi`` (shared) or ``lo:hi,lo:hi,...`` (one range per load bus)."""
    parts = text.split(",")
    if len(parts) == 1:
        parts = parts * n_d
    if len(parts) != n_d:
        raise CaseError(f"box needs 1 or {n_d} ranges, got {len(parts)}")
    lo, hi = [], []
    for p in parts:
        a, _, b = p.partition(":")
        lo.append(float(a))
        hi.append(float(b))
    return mpr.LoadBox(lower=np.array(lo), upper=np.array(hi))


def _seed_from(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SPRLAB_SEED")
    return int(env) if env else 0


def _manifest(args, command, seed, inputs, outputs, timings) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    man = RunManifest(command=command, config=cfg, seed=seed,
                      inputs=inputs, outputs=outputs, timings=timings)
    man.write(outputs[0] + ".manifest.json")


def cmd_gen(args) -> int:
    case = _resolve_case(args.case)
    seed = _seed_from(args)
    timer = _Timer()
    cfg = datagen.ScenarioConfig(
        mode=args.mode, n_samples=args.n, seed=seed,
        sigma_frac=args.sigma_frac, xi_sigma=args.xi_sigma,
        ramp_scale=args.ramp_scale,
        sampling="normal-profile" if args.profile else "uniform-box",
        dt=args.dt,
    )
    box = profile = None
    if args.profile:
        if args.profile != "sine":
            raise datagen.DataGenError(f"unknown profile '{args.profile}'")
        profile = datagen.sine_profile(case, args.n)
    else:
        box = _parse_box(args.box, case.n_load) if args.box else mpr.default_box(case)
    with timer.stage("generate"):
        ds = datagen.generate_dataset(case, cfg, box=box, profile=profile)
    with timer.stage("write"):
        datagen.write_dataset_csv(args.out, case, ds.x, ds.meta["lmps"],
                                  ds.meta["xi"], cfg.mode)
    _manifest(args, "gen", seed, [args.case], [args.out], timer.stages)
    print(f"wrote {ds.n} rows, {ds.n_classes} classes -> {args.out}")
    return 0


def cmd_solve(args) -> int:
    case = _resolve_case(args.case)
    if args.xi:
        case = sced.apply_dlr(case, args.xi)
    shift = compute_shift_factors(case)
    lp = sced.build_sced(case, shift)
    p_d = np.array([float(v) for v in args.pd.split(",")])
    sol = sced.solve_lp(lp, p_d)
    lam = sced.compute_lmp(sol, shift)
    doc = {
        "pd": p_d.tolist(),
        "objective": sol.objective,
        "p_g": sol.p_g.tolist(),
        "lmp": lam.lam.tolist(),
        "lambda1": sol.lambda1,
        "mu_plus": sol.mu_plus.tolist(),
        "mu_minus": sol.mu_minus.tolist(),
        "eta_plus": sol.eta_plus.tolist(),
        "eta_minus": sol.eta_minus.tolist(),
        "binding": list(sol.binding),
        "degenerate": sol.degenerate,
    }
    text = json.dumps(doc, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        _manifest(args, "solve", None, [args.case], [args.out], {})
    else:
        print(text)
    return 0


def cmd_enumerate(args) -> int:
    case = _resolve_case(args.case)
    if args.xi:
        case = sced.apply_dlr(case, args.xi)
    timer = _Timer()
    box = _parse_box(args.box, case.n_load) if args.box else mpr.default_box(case)
    with timer.stage("enumerate"):
        regions = mpr.enumerate_sprs(case, box)
    doc = {
        "case": case.name,
        "box": {"lower": box.lower.tolist(), "upper": box.upper.tolist()},
        "regions": [
            {
                "pattern": list(r.pattern.binding),
                "reduced": list(r.pattern.reduced),
                "a_region": r.a_region.tolist(),
                "b_region": r.b_region.tolist(),
                "lmp": r.lmp.lam.tolist(),
                "interior_point": r.interior_point.tolist(),
                "radius": r.radius,
                "row_origin": list(r.row_origin),
                "vertices": (mpr.region_vertices_2d(r) if case.n_load == 2 else None),
            }
            for r in regions
        ],
    }
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=1)
    outputs = [args.out]
    if args.grid:
        with timer.stage("grid"):
            lattice_path = args.grid_out or (os.path.splitext(args.out)[0] + "_grid.csv")
            _write_lattice(lattice_path, case, box, regions, args.grid)
            outputs.append(lattice_path)
    _manifest(args, "enumerate", None, [args.case], outputs, timer.stages)
    print(f"{len(regions)} regions -> {args.out}")
    return 0


def _write_lattice(path, case, box, regions, n) -> None:
    if case.n_load > 3:
        raise CaseError("lattice export supports at most 3 load buses")
    axes = [np.linspace(box.lower[k], box.upper[k], n) for k in range(case.n_load)]
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    labels = np.full(len(mesh), -1, dtype=int)
    for idx, reg in enumerate(regions):
        inside = reg.contains(mesh)
        labels[np.asarray(inside) & (labels == -1)] = idx
    header = [f"PD_{b}" for b in case.load_buses] + ["region"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row, lab in zip(mesh, labels):
            fh.write(",".join(f"{v:.9g}" for v in row) + f",{lab}\n")


def _apply_views(ds, args):
    if args.features:
        spec = args.features
        if not spec.startswith("buses="):
            raise learn.LearnError("--features expects 'buses=i,j,...'")
        buses = [int(b) for b in spec[len("buses="):].split(",") if b]
        ds = learn.project_features(ds, buses, include_total=args.total)
    elif args.total:
        ds = learn.project_features(ds, ds.feature_buses, include_total=True)
    if args.label_bus:
        ds = learn.relabel_by_bus(ds, args.label_bus)
    return ds


def cmd_train(args) -> int:
    ds = datagen.read_dataset_csv(args.data)
    ds = _apply_views(ds, args)
    if ds.n_classes < 2:
        raise learn.LearnError("dataset has a single class; nothing to train")
    timer = _Timer()
    with timer.stage("training"):
        model = learn.train_ovo(ds, c=args.c, fit_posteriors=not args.no_posterior,
                                jobs=args.jobs)
    learn.save_model(model, args.out)
    _manifest(args, "train", None, [args.data], [args.out], timer.stages)
    print(f"{model.n_pairs} pairwise classifiers -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = learn.load_model(args.model)
    ds = datagen.read_dataset_csv(args.data)
    ds = _apply_views(ds, args)
    timer = _Timer()
    with timer.stage("predicting"):
        pred = learn.predict_batch(model, ds.x)
    rows = model.class_lmps[pred]
    post = None
    if args.posterior:
        with timer.stage("data_post_processing"):
            post = np.vstack([learn.posterior_multiclass(model, x) for x in ds.x])
    with open(args.out, "w") as fh:
        header = ["idx", "class"] + [f"LMP_{k + 1}" for k in range(rows.shape[1])]
        if post is not None:
            header += [f"p_{k}" for k in range(model.classes)]
        fh.write(",".join(header) + "\n")
        for k in range(len(pred)):
            vals = [str(k), str(int(pred[k]))] + [f"{v:.9g}" for v in rows[k]]
            if post is not None:
                vals += [f"{v:.9g}" for v in post[k]]
            fh.write(",".join(vals) + "\n")
    _manifest(args, "predict", None, [args.model, args.data], [args.out], timer.stages)
    print(f"{len(pred)} predictions -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    ds = datagen.read_dataset_csv(args.data)
    ds = _apply_views(ds, args)
    seed = _seed_from(args)
    report = evaluation.cross_validate(ds, k=args.folds, seed=seed, c=args.c,
                                       classifier=args.classifier)
    doc = report.to_json_dict()
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=1)
    outputs = [args.out]
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(report.to_csv_text())
        outputs.append(args.csv)
    _manifest(args, "eval", seed, [args.data], outputs, report.timings)
    for f in report.folds:
        print(f"fold {f['fold']}: classification {f['alpha']:.2%}  LMP forecast {f['beta']:.2%}")
    print(f"avg: classification {report.alpha_avg:.2%}  LMP forecast {report.beta_avg:.2%}")
    print("timings: " + ", ".join(f"{k} {v:.2f}s" for k, v in report.timings.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sprlab", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a Monte-Carlo dataset CSV")
    g.add_argument("--case", required=True, help="case JSON path or builtin name (fig1, fig13)")
    g.add_argument("--mode", default="slr", choices=["slr", "dlr", "ramp"])
    g.add_argument("--n", type=int, default=1440)
    g.add_argument("--seed", type=int, default=None, help="default: $SPRLAB_SEED or 0")
    g.add_argument("--box", default=None, help="'lo:hi' or per-bus 'lo:hi,lo:hi'")
    g.add_argument("--profile", default=None, help="'sine' for the synthetic daily profile")
    g.add_argument("--sigma-frac", type=float, default=0.10, dest="sigma_frac")
    g.add_argument("--xi-sigma", type=float, default=0.10, dest="xi_sigma")
    g.add_argument("--ramp-scale", type=float, default=1.0, dest="ramp_scale")
    g.add_argument("--dt", type=float, default=5.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve one dispatch and print the solution")
    s.add_argument("--case", required=True)
    s.add_argument("--pd", required=True, help="comma-separated load vector")
    s.add_argument("--xi", type=float, default=0.0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("enumerate", help="enumerate the regions inside a load box")
    e.add_argument("--case", required=True)
    e.add_argument("--box", default=None)
    e.add_argument("--xi", type=float, default=0.0)
    e.add_argument("--grid", type=int, default=0, help="emit an NxN classified lattice CSV")
    e.add_argument("--grid-out", default=None, dest="grid_out")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_enumerate)

    t = sub.add_parser("train", help="train a one-vs-one model from a dataset CSV")
    t.add_argument("--data", required=True)
    t.add_argument("--c", type=float, default=learn.DEFAULT_C_SEPARABLE)
    t.add_argument("--features", default=None, help="'buses=2,3' partial-information view")
    t.add_argument("--total", action="store_true", help="append the total-load column")
    t.add_argument("--label-bus", type=int, default=0, dest="label_bus")
    t.add_argument("--no-posterior", action="store_true", dest="no_posterior")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify load vectors with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--total", action="store_true")
    p.add_argument("--label-bus", type=int, default=0, dest="label_bus")
    p.add_argument("--posterior", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    v = sub.add_parser("eval", help="k-fold cross-validation report")
    v.add_argument("--data", required=True)
    v.add_argument("--folds", type=int, default=5)
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--c", type=float, default=learn.DEFAULT_C_SEPARABLE)
    v.add_argument("--classifier", default="svm", choices=["svm", "cll"])
    v.add_argument("--features", default=None)
    v.add_argument("--total", action="store_true")
    v.add_argument("--label-bus", type=int, default=0, dest="label_bus")
    v.add_argument("--csv", default=None)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CaseError, datagen.DataGenError, learn.LearnError,
            evaluation.EvalError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (sced.InfeasibleDispatch, sced.InfeasibleRamp, sced.UnboundedDispatch,
            mpr.NoFeasibleSeed, mpr.DegenerateSolution) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
