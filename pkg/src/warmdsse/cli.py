"""Command-line entry point.

Exit codes: 0 success, 2 usage or file error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as B
from .dataset import (
    DatasetError,
    EmptyDatasetError,
    ProfileLibrary,
    build_dataset,
    default_profiles,
    read_dataset,
    sample_scenarios,
    write_dataset,
)
from .estimator import EstimatorConfig, estimate, mu_index, nu_index
from .feeder import DATA_DIR, FeederError, load_ieee37, parse_feeder
from .measurements import MeasurementError, build_measurement_set, load_measurement_config
from .nn import ModelFileError, TrainConfig, TrainingError, load_model, save_model, train
from .oracle3bus import InfeasibleMeasurement, ThreeBusParams, roundtrip_table
from .powerflow import PowerFlowError, StateVector

log = logging.getLogger("warmdsse")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _feeder(path):
    return load_ieee37() if path is None else parse_feeder(Path(path))


def _layout(args):
    model = _feeder(args.feeder)
    cfg = load_measurement_config(args.meas_config)
    return model, cfg, build_measurement_set(model, cfg)


def _profiles(args) -> ProfileLibrary:
    if args.profiles is None:
        return default_profiles(args.jitter)
    return ProfileLibrary.from_csv(args.profiles, args.jitter)


def _est_cfg(args) -> EstimatorConfig:
    if args.damped:
        return EstimatorConfig(max_iter=args.max_iter)
    return EstimatorConfig(max_iter=args.max_iter, adaptive_damping=False)


def _dump(obj, path):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# --- subcommands ---------------------------------------------------------------

def cmd_gen_data(args):
    model, _, mset = _layout(args)
    scen = sample_scenarios(_profiles(args), model, args.n, args.seed)
    ds = build_dataset(model, mset, scen, args.noise, args.seed)
    write_dataset(ds, args.out)
    log.info("wrote %d samples (%d skipped) to %s", len(ds), ds.skipped, args.out)
    print(f"{args.out}: {len(ds)} samples, L={ds.Z.shape[1]}, 2K={ds.V.shape[1]}, skipped={ds.skipped}")


def cmd_train(args):
    ds = read_dataset(args.dataset)
    if not args.skip_layout_check:
        _, _, mset = _layout(args)
        ds.check_fingerprint(mset.fingerprint)
    cfg = TrainConfig(
        epsilon=args.epsilon, hidden=args.hidden, epochs=args.epochs, batch_size=args.batch_size,
        lr=args.lr, seed=args.seed, patience=args.patience, split=args.split, eps_space=args.eps_space,
    )
    model, trace = train(ds, cfg)
    save_model(model, args.out)
    trace_path = args.trace or str(args.out) + ".trace.csv"
    trace.to_csv(trace_path)
    print(f"{args.out}: T={model.T}, epochs={len(trace.train_loss)}, best_epoch={trace.best_epoch}, "
          f"val_hinge={trace.val_loss[trace.best_epoch]:.6g}")


def _read_z(path, L):
    p = Path(path)
    text = p.read_text()
    v_true = None
    if p.suffix == ".json":
        doc = json.loads(text)
        z = np.asarray(doc["z"], dtype=float)
        if "v_true" in doc:
            v_true = np.asarray(doc["v_true"], dtype=float)
    else:
        z = np.array([float(t) for t in text.replace(",", " ").split()])
    if z.shape != (L,):
        raise UsageError(f"{path}: expected {L} measurements, found {z.size}")
    return z, v_true


def cmd_estimate(args):
    model, _, mset = _layout(args)
    z, v_true = _read_z(args.measurements, len(mset))
    ms = mset.with_z(z)
    nn = None
    if args.init == "nn":
        if args.model is None:
            raise UsageError("--init nn needs --model")
        nn = load_model(args.model, expected_fingerprint=mset.fingerprint)
    v0 = B.initial_state(args.init, model, ms, nn)
    rep = estimate(ms, v0, _est_cfg(args))
    out = rep.to_dict(include_state=True, include_timing=False)
    out["init"] = args.init
    out["mu"] = mu_index(ms, rep.v_hat)
    if v_true is not None:
        out["nu"] = nu_index(rep.v_hat, StateVector.from_x(v_true))
    _dump(out, args.out)


def _methods(text):
    ms = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in ms if m not in B.METHODS]
    if bad or not ms:
        raise UsageError(f"unknown methods {bad}; choose from {','.join(B.METHODS)}")
    return ms


def cmd_bench(args):
    model, _, mset = _layout(args)
    methods = _methods(args.methods)
    nn = None
    if "nn" in methods:
        if args.model is None:
            raise UsageError("method nn needs --model")
        nn = load_model(args.model, expected_fingerprint=mset.fingerprint)
    cases = B.make_cases(model, mset, _profiles(args), args.runs, args.seed, noise=not args.noiseless)
    meta = {"runs": args.runs, "seed": args.seed, "methods": methods, "damped": args.damped,
            "max_iter": args.max_iter, "noiseless": args.noiseless, "cases": len(cases)}
    rep = B.run_bench(model, cases, methods, nn, _est_cfg(args), args.jobs, meta)
    rep.write(args.out, args.timing)
    if args.hist:
        rep.write_histogram_csv(args.hist)
    for m, a in rep.aggregates().items():
        print(f"{m:5s} runs={a['runs']} mean_iter={a['mean_iterations']:.3f} div={a['divergences']} "
              f"mean_nu={a['mean_nu']:.4g} mean_mu={a['mean_mu']:.4g}")


def _floats(text):
    try:
        return [float(eval_frac(t)) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def eval_frac(t: str) -> float:
    """Parse '0.5', '1/4' or '1/sqrt2'."""
    t = t.strip().replace(" ", "")
    if t == "1/sqrt2":
        return 2**-0.5
    if "/" in t:
        a, b = t.split("/")
        return float(a) / float(b)
    return float(t)


def cmd_eps_sweep(args):
    model, _, mset = _layout(args)
    ds = read_dataset(args.dataset, expected_fingerprint=mset.fingerprint)
    cfg = TrainConfig(hidden=args.hidden, epochs=args.epochs, seed=args.seed, eps_space=args.eps_space)
    cases = B.make_cases(model, mset, _profiles(args), args.runs, args.seed + 1)
    rows, _ = B.eps_sweep(ds, cases, model, _floats(args.eps), cfg, _est_cfg(args), args.jobs)
    out = {"rows": rows, "meta": {"runs": args.runs, "seed": args.seed, "hidden": args.hidden,
                                  "eps_space": args.eps_space}}
    if args.hidden_sweep:
        n = min(args.hidden_sweep_samples, len(ds))
        sizes = [int(s) for s in args.hidden_sweep.split(",")]
        mh = B.minimal_hidden(ds.Z[:n], ds.V[:n], [r["epsilon"] for r in rows], sizes,
                              TrainConfig(epochs=args.epochs, batch_size=32, lr=3e-3, patience=args.epochs,
                                          seed=args.seed, eps_space=args.eps_space))
        out["minimal_hidden"] = {repr(k): v for k, v in mh.items()}
    _dump(out, args.out)
    for r in rows:
        print(f"eps={r['epsilon']:.4g} mean_iter={r['mean_iterations']:.3f} div={r['divergences']} "
              f"mean_mu={r['mean_mu']:.4g}")


def cmd_reconfig(args):
    model = _feeder(args.feeder)
    cfg = load_measurement_config(args.meas_config)
    scen = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    bad = [s for s in scen if s not in model.switch_scenarios]
    if bad:
        raise UsageError(f"undefined scenario(s) {bad}; known: {sorted(model.switch_scenarios)}")
    nn = load_model(args.model)
    reps = B.reconfig(model, cfg, nn, _profiles(args), scen, args.runs, args.seed,
                      _methods(args.methods), _est_cfg(args), args.jobs)
    _dump({sid: r.to_dict() for sid, r in reps.items()}, args.out)
    for sid, r in reps.items():
        for m, a in r.aggregates().items():
            print(f"{sid} {m:5s} mean_nu={a['mean_nu']:.4g} div={a['divergences']} mean_iter={a['mean_iterations']:.3f}")


def cmd_oracle3bus(args):
    p = ThreeBusParams(args.B12, args.B13, tuple(args.vmag))
    rows = roundtrip_table(p, args.points)
    print("theta12,theta13,err12,err13")
    for r in rows:
        print(",".join(f"{x:.6e}" for x in r))
    print(f"# max round-trip error {max(max(r[2], r[3]) for r in rows):.3e}")


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="warmdsse", description="Learning-initialised distribution state estimation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def layout(p):
        p.add_argument("--feeder", help="feeder document (default: shipped IEEE-37)")
        p.add_argument("--meas-config", help="measurement layout (default: shipped IEEE-37 layout)")

    def profiles(p):
        p.add_argument("--profiles", help=f"profile CSV (default: {DATA_DIR / 'profiles.csv'})")
        p.add_argument("--jitter", type=float, default=0.1)

    def solver(p, damped=False):
        # benchmarks default to plain GN (the baseline behaviour); single estimates default to damping
        g = p.add_mutually_exclusive_group()
        g.add_argument("--damped", dest="damped", action="store_true", default=damped,
                       help="adaptive Levenberg damping")
        g.add_argument("--no-damping", dest="damped", action="store_false", help="plain Gauss-Newton")
        p.add_argument("--max-iter", type=int, default=50)

    p = sub.add_parser("gen-data", help="sample scenarios, solve and write a dataset")
    layout(p)
    profiles(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", choices=["noiseless", "noisy"], default="noiseless")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the shallow network")
    layout(p)
    p.add_argument("--skip-layout-check", action="store_true",
                   help="train on a dataset from another feeder without checking its fingerprint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--epsilon", type=eval_frac, default=0.0)
    p.add_argument("--eps-space", choices=["pu", "normalized"], default="pu")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--split", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="training trace CSV (default: <out>.trace.csv)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("estimate", help="estimate one state from a measurement vector")
    layout(p)
    solver(p, damped=True)
    p.add_argument("--model")
    p.add_argument("--measurements", required=True, help="JSON {'z': [...]} or whitespace/comma separated values")
    p.add_argument("--init", choices=list(B.METHODS), default="nn")
    p.add_argument("--out", default="-")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("bench", help="compare initialisations over fresh noisy scenarios")
    layout(p)
    profiles(p)
    solver(p)
    p.add_argument("--model")
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--methods", default="nn,flat,pmu")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--hist", help="histogram CSV of NN output distances")
    p.add_argument("--timing", help="wall-time sidecar JSON")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("eps-sweep", help="train per epsilon and compare GN iterations")
    layout(p)
    profiles(p)
    solver(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--eps", default="0,1/8,1/4,1/2,1/sqrt2,1,2")
    p.add_argument("--eps-space", choices=["pu", "normalized"], default="pu")
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--hidden-sweep", help="comma list of hidden sizes for the minimal-T sweep")
    p.add_argument("--hidden-sweep-samples", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eps_sweep)

    p = sub.add_parser("reconfig", help="evaluate a base-topology model after switching")
    layout(p)
    profiles(p)
    solver(p)
    p.add_argument("--model", required=True)
    p.add_argument("--scenarios", default="A,B,C")
    p.add_argument("--methods", default="nn,pmu")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_reconfig)

    p = sub.add_parser("oracle3bus", help="print the 3-bus closed-form round-trip error table")
    p.add_argument("--B12", type=float, default=10.0)
    p.add_argument("--B13", type=float, default=10.0)
    p.add_argument("--vmag", type=float, nargs=3, default=[1.0, 1.0, 1.0])
    p.add_argument("--points", type=int, default=100)
    p.set_defaults(fn=cmd_oracle3bus)
    return ap


USAGE_ERRORS = (UsageError, OSError, FeederError, MeasurementError, DatasetError, ModelFileError,
                json.JSONDecodeError, KeyError, InfeasibleMeasurement)
NUMERIC_ERRORS = (PowerFlowError, TrainingError, EmptyDatasetError, np.linalg.LinAlgError, FloatingPointError)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
