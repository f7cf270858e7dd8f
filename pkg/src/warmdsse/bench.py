"""Benchmark harness: initialisation comparisons, epsilon sweeps, hidden-size sweeps
and reconfiguration runs. Reports hold only deterministic quantities; wall times
are collected separately so reruns with the same seed are byte-identical."""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import ProfileLibrary, sample_scenarios, sample_seed
from .estimator import UNDAMPED, EstimatorConfig, estimate, flat_start, mu_index, nu_index, pmu_anchored_start
from .feeder import FeederModel, apply_scenario
from .measurements import MeasurementSet, build_measurement_set, synthesize_measurements
from .nn import NnModel, TrainConfig, fit, forward, hinge_loss
from .powerflow import PowerFlowError, StateVector, solve_power_flow

METHODS = ("nn", "flat", "pmu")
HIST_BINS = 50


@dataclass
class EvalCase:
    run: int
    scenario_id: int
    v_true: StateVector
    mset: MeasurementSet  # carries the noisy z


@dataclass
class RunRecord:
    run: int
    scenario_id: int
    method: str
    iterations: int
    converged: bool
    reason: str
    nu: float
    mu: float
    nn_distance: float | None = None


@dataclass
class BenchReport:
    methods: list
    records: list = field(default_factory=list)
    histogram: dict | None = None
    meta: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)  # excluded from the JSON report

    def for_method(self, method):
        return [r for r in self.records if r.method == method]

    def aggregates(self) -> dict:
        out = {}
        for m in self.methods:
            rs = self.for_method(m)
            if not rs:
                continue
            conv = [r for r in rs if r.converged]
            out[m] = {
                "runs": len(rs),
                "mean_nu": float(np.mean([r.nu for r in rs])),
                "mean_mu": float(np.mean([r.mu for r in rs])),
                "mean_iterations": float(np.mean([r.iterations for r in rs])),
                "divergences": len(rs) - len(conv),
                "mean_nu_converged": float(np.mean([r.nu for r in conv])) if conv else None,
                "mean_mu_converged": float(np.mean([r.mu for r in conv])) if conv else None,
            }
        return out

    def to_dict(self) -> dict:
        return {
            "schema": "benchreport/1",
            "meta": self.meta,
            "aggregates": self.aggregates(),
            "histogram": self.histogram,
            "records": [asdict(r) for r in self.records],
        }

    def write(self, path, timing_path=None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        if timing_path is not None:
            with open(timing_path, "w") as fh:
                json.dump(self.timing, fh, indent=1, sort_keys=True)

    def write_histogram_csv(self, path) -> None:
        if self.histogram is None:
            return
        h = self.histogram
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(h["edges"][:-1], h["edges"][1:], h["counts"]):
                w.writerow([repr(lo), repr(hi), c])


def distance_histogram(d, bins: int = HIST_BINS) -> dict:
    d = np.asarray(d, dtype=float)
    top = float(d.max()) if d.size and d.max() > 0 else 1.0
    counts, edges = np.histogram(d, bins=bins, range=(0.0, top))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def make_cases(model: FeederModel, mset: MeasurementSet, lib: ProfileLibrary, runs: int, seed: int,
               noise: bool = True) -> list[EvalCase]:
    """Fresh scenarios solved on ``model`` with noisy measurements; unsolvable ones are dropped."""
    cases = []
    for sid, sc in enumerate(sample_scenarios(lib, model, runs, seed)):
        try:
            v = solve_power_flow(model, sc)
        except PowerFlowError:
            continue
        ms = synthesize_measurements(mset, v, sample_seed(seed, sid), noise=noise)
        cases.append(EvalCase(len(cases), sid, v, ms))
    return cases


def initial_state(method: str, model: FeederModel, ms: MeasurementSet, nn: NnModel | None) -> StateVector:
    if method == "nn":
        if nn is None:
            raise ValueError("nn initialisation needs a trained model")
        return StateVector.from_x(forward(nn, ms.z))
    if method == "flat":
        return flat_start(model)
    if method == "pmu":
        return pmu_anchored_start(model, ms)
    raise ValueError(f"unknown method {method!r}")


def _run_case(case: EvalCase, model, methods, nn, cfg):
    recs, times = [], {}
    for meth in methods:
        t0 = time.perf_counter()
        v0 = initial_state(meth, model, case.mset, nn)
        rep = estimate(case.mset, v0, cfg)
        times[meth] = time.perf_counter() - t0
        dist = float(np.linalg.norm(v0.x - case.v_true.x)) if meth == "nn" else None
        recs.append(RunRecord(
            case.run, case.scenario_id, meth, rep.iterations, rep.converged, rep.reason,
            nu_index(rep.v_hat, case.v_true), mu_index(case.mset, rep.v_hat), dist,
        ))
    return recs, times


def run_bench(model: FeederModel, cases, methods=METHODS, nn: NnModel | None = None,
              cfg: EstimatorConfig = UNDAMPED, jobs: int = 1, meta: dict | None = None) -> BenchReport:
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    if "nn" in methods and nn is None:
        raise ValueError("method 'nn' needs a trained model")
    work = lambda c: _run_case(c, model, methods, nn, cfg)  # noqa: E731
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(work, cases))
    else:
        results = [work(c) for c in cases]
    rep = BenchReport(methods, meta=dict(meta or {}))
    per_run = []
    for recs, times in results:
        rep.records.extend(recs)
        per_run.append(times)
    rep.timing = {
        m: {"total_s": float(sum(t[m] for t in per_run)), "mean_ms": 1e3 * float(np.mean([t[m] for t in per_run]))}
        for m in methods if per_run
    }
    if "nn" in methods and rep.records:
        rep.histogram = distance_histogram([r.nn_distance for r in rep.for_method("nn")])
    return rep


# --- sweeps ------------------------------------------------------------------

EPS_DEFAULT = (0.0, 0.125, 0.25, 0.5, 2**-0.5, 1.0, 2.0)


def eps_sweep(dataset, cases, model: FeederModel, eps_values=EPS_DEFAULT, train_cfg: TrainConfig = TrainConfig(),
              est_cfg: EstimatorConfig = UNDAMPED, jobs: int = 1):
    """Train one model per epsilon and evaluate NN-initialised GN on ``cases``."""
    from .dataset import split_dataset

    tr, va = split_dataset(dataset, train_cfg.split, train_cfg.seed)
    rows, models = [], {}
    for eps in eps_values:
        cfg = TrainConfig(**{**asdict(train_cfg), "epsilon": float(eps)})
        nn, trace = fit(tr.Z, tr.V, va.Z, va.V, cfg, dataset.fingerprint)
        models[eps] = nn
        agg = run_bench(model, cases, ["nn"], nn, est_cfg, jobs).aggregates()["nn"]
        rows.append({
            "epsilon": float(eps),
            "hidden": cfg.hidden,
            "epochs_run": len(trace.train_loss),
            "train_hinge": hinge_loss(nn, tr.Z, tr.V, eps),
            "val_hinge": hinge_loss(nn, va.Z, va.V, eps) if len(va) else None,
            **agg,
        })
    return rows, models


def minimal_hidden(Z, V, eps_values, hidden_sizes=(1, 2, 4, 8, 16, 32, 64), train_cfg: TrainConfig | None = None):
    """Smallest hidden size whose trained model reaches zero training hinge loss, per epsilon."""
    base = train_cfg or TrainConfig(epochs=300, batch_size=32, lr=3e-3, patience=300, stop_at_zero=True)
    out = {}
    for eps in eps_values:
        out[float(eps)] = None
        for T in sorted(hidden_sizes):
            cfg = TrainConfig(**{**asdict(base), "epsilon": float(eps), "hidden": int(T), "stop_at_zero": True})
            # train and validate on the same samples: the question is representability
            nn, _ = fit(Z, V, Z, V, cfg)
            if hinge_loss(nn, Z, V, eps) == 0.0:
                out[float(eps)] = int(T)
                break
    return out


def reconfig(model: FeederModel, meas_config: dict, nn: NnModel, lib: ProfileLibrary, scenario_ids=("A", "B", "C"),
             runs: int = 100, seed: int = 0, methods=("nn", "pmu"), cfg: EstimatorConfig = UNDAMPED, jobs: int = 1):
    """Evaluate a model trained on the base topology after each switching scenario.

    Truth and the estimator both use the new topology.
    """
    out = {}
    for sid in scenario_ids:
        new = apply_scenario(model, sid)
        mset = build_measurement_set(new, meas_config)
        if mset.fingerprint != nn.fingerprint:
            raise ValueError("model layout does not match the measurement configuration")
        cases = make_cases(new, mset, lib, runs, seed)
        out[sid] = run_bench(new, cases, methods, nn, cfg, jobs, meta={"scenario": sid, "runs": runs, "seed": seed})
    return out
