"""IEEE-37 end to end at a small scale: sample operating points, train a
network on noiseless (z, v) pairs, then compare NN, flat and PMU-anchored
starts for plain Gauss-Newton on noisy measurements.

    python demos/ieee37_warm_start.py [n_samples] [hidden] [runs]

Defaults (2000, 128, 50) finish in about a minute; the acceptance harness uses
10000 samples and T=512.
"""
import sys
import time

import numpy as np

from warmdsse import bench
from warmdsse.dataset import build_dataset, default_profiles, sample_scenarios, split_dataset
from warmdsse.feeder import load_ieee37
from warmdsse.measurements import build_ieee37_measurement_set
from warmdsse.nn import TrainConfig, fit

n = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
T = int(sys.argv[2]) if len(sys.argv) > 2 else 128
runs = int(sys.argv[3]) if len(sys.argv) > 3 else 50

model = load_ieee37()
mset = build_ieee37_measurement_set(model)
print(f"{model.name}: K={model.K} phase-nodes, L={len(mset)} measurements")

t = time.time()
lib = default_profiles()
ds = build_dataset(model, mset, sample_scenarios(lib, model, n, seed=1), seed=1)
print(f"dataset: {len(ds)} samples ({ds.skipped} skipped) in {time.time() - t:.1f}s")

tr, va = split_dataset(ds, 0.9, seed=0)
t = time.time()
nn, trace = fit(tr.Z, tr.V, va.Z, va.V, TrainConfig(hidden=T, epochs=100), ds.fingerprint)
print(f"trained T={T}: {len(trace.train_loss)} epochs, best val loss {min(trace.val_loss):.3e} "
      f"({time.time() - t:.1f}s)")

cases = bench.make_cases(model, mset, lib, runs, seed=99)
rep = bench.run_bench(model, cases, ["nn", "flat", "pmu"], nn)
print(f"\n{'init':6s}{'mean iter':>10s}{'diverged':>10s}{'mean nu':>12s}{'mean mu':>12s}")
for m, a in rep.aggregates().items():
    print(f"{m:6s}{a['mean_iterations']:10.2f}{a['divergences']:10d}{a['mean_nu']:12.3g}{a['mean_mu']:12.3g}")
d = np.array([r.nn_distance for r in rep.for_method("nn")])
print(f"\nNN start distance to truth: median {np.median(d):.4f}, max {d.max():.4f}")
