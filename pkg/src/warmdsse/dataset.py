"""Scenario sampling, ground-truth solving and (z, v) dataset persistence."""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feeder import DATA_DIR, FeederModel
from .measurements import MeasurementSet, synthesize_measurements
from .powerflow import InjectionScenario, PowerFlowError, solve_power_flow

log = logging.getLogger(__name__)

NOISE_MODES = ("noiseless", "noisy")  # noisy: the measurement set's sigmas

MAGIC = b"DSSE"
VERSION = 1
# magic, version, L, 2K, count, seed, fingerprint (sha256 hex)
_HEADER = struct.Struct("<4sIIIQq64s")


class DatasetError(ValueError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class FingerprintMismatch(DatasetError):
    pass


# --- profiles ----------------------------------------------------------------

@dataclass(frozen=True)
class ProfileLibrary:
    """Per-class multiplier time series; ``shapes[cls][t]`` scales base injections."""

    shapes: dict
    jitter: float = 0.1

    def __post_init__(self):
        if not self.shapes:
            raise DatasetError("profile library is empty")
        lens = {len(v) for v in self.shapes.values()}
        if len(lens) != 1:
            raise DatasetError("all profile classes need the same number of time steps")
        if "load" in self.shapes and np.any(np.asarray(self.shapes["load"]) < 0):
            raise DatasetError("load multipliers must be non-negative")
        if not 0 <= self.jitter < 1:
            raise DatasetError("jitter must lie in [0, 1)")

    @property
    def steps(self) -> int:
        return len(next(iter(self.shapes.values())))

    def multiplier(self, unit_class: str, t: int) -> float:
        try:
            return float(self.shapes[unit_class][t])
        except KeyError:
            raise DatasetError(f"no profile for unit class {unit_class!r}") from None

    @classmethod
    def from_csv(cls, path, jitter: float = 0.1) -> "ProfileLibrary":
        rows: dict[str, dict[int, float]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"t", "unit_class", "multiplier"} <= set(reader.fieldnames):
                raise DatasetError(f"{path}: profile CSV needs header t,unit_class,multiplier")
            for r in reader:
                rows.setdefault(r["unit_class"], {})[int(r["t"])] = float(r["multiplier"])
        shapes = {k: np.array([v[t] for t in sorted(v)]) for k, v in rows.items()}
        return cls(shapes, jitter)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "unit_class", "multiplier"])
            for cls_, shape in self.shapes.items():
                for t, m in enumerate(shape):
                    w.writerow([t, cls_, repr(float(m))])


def synthetic_profiles(steps: int = 24, jitter: float = 0.1) -> ProfileLibrary:
    """Residential-style load curve (morning and evening peaks) and a clear-sky solar bell."""
    h = np.arange(steps) * 24.0 / steps
    load = 0.55 + 0.2 * np.exp(-((h - 8.0) / 2.0) ** 2) + 0.45 * np.exp(-((h - 19.0) / 2.5) ** 2)
    solar = np.clip(np.sin(np.pi * (h - 6.0) / 13.0), 0.0, None)
    return ProfileLibrary({"load": np.round(load, 6), "der": np.round(solar, 6)}, jitter)


def default_profiles(jitter: float = 0.1) -> ProfileLibrary:
    return ProfileLibrary.from_csv(DATA_DIR / "profiles.csv", jitter)


def sample_scenarios(lib: ProfileLibrary, model: FeederModel, n: int, seed: int) -> list[InjectionScenario]:
    """Base injection x profile multiplier at a random step x (1 + uniform jitter)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    base = np.array([u.sign * u.rating for u in model.injections])
    classes = [u.kind for u in model.injections]
    out = []
    for _ in range(n):
        t = int(rng.integers(lib.steps))
        mult = np.array([lib.multiplier(c, t) for c in classes])
        jit = rng.uniform(-lib.jitter, lib.jitter, size=len(base)) if lib.jitter > 0 else np.zeros(len(base))
        out.append(InjectionScenario(base * mult * (1.0 + jit)))
    return out


# --- datasets ----------------------------------------------------------------

@dataclass(eq=False)
class Dataset:
    Z: np.ndarray  # N x L
    V: np.ndarray  # N x 2K, rectangular truth
    scenario_ids: np.ndarray
    fingerprint: str = ""
    seed: int = 0
    skipped: int = 0

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float).reshape(len(self.scenario_ids), -1)
        self.V = np.asarray(self.V, dtype=float).reshape(len(self.scenario_ids), -1)
        self.scenario_ids = np.asarray(self.scenario_ids, dtype=np.int64)

    def __len__(self):
        return len(self.scenario_ids)

    @property
    def L(self) -> int:
        return self.Z.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.Z[idx], self.V[idx], self.scenario_ids[idx], self.fingerprint, self.seed)

    def check_fingerprint(self, expected: str) -> None:
        if self.fingerprint != expected:
            raise FingerprintMismatch("dataset was generated for a different feeder/measurement layout")


def sample_seed(seed: int, scenario_id: int) -> int:
    return int(np.random.SeedSequence([seed, scenario_id]).generate_state(1)[0])


def build_dataset(model: FeederModel, mset: MeasurementSet, scenarios, noise: str = "noiseless", seed: int = 0) -> Dataset:
    """Solve each scenario and synthesise its measurements; failed scenarios are skipped."""
    if noise not in NOISE_MODES:
        raise ValueError(f"noise must be one of {NOISE_MODES}")
    Z, V, ids = [], [], []
    skipped = 0
    for sid, sc in enumerate(scenarios):
        try:
            v = solve_power_flow(model, sc)
        except PowerFlowError as exc:
            skipped += 1
            log.info("scenario %d skipped: %s", sid, exc)
            continue
        ms = synthesize_measurements(mset, v, sample_seed(seed, sid), noise=(noise == "noisy"))
        Z.append(ms.z)
        V.append(v.x)
        ids.append(sid)
    if skipped:
        log.warning("%d of %d scenarios skipped", skipped, len(scenarios))
    if not ids:
        raise EmptyDatasetError("every scenario failed to solve")
    return Dataset(np.array(Z), np.array(V), np.array(ids), mset.fingerprint, seed, skipped)


def split_dataset(ds: Dataset, fraction: float, seed: int):
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_tr = int(round(fraction * len(ds)))
    return ds.subset(np.sort(perm[:n_tr])), ds.subset(np.sort(perm[n_tr:]))


def write_dataset(ds: Dataset, path) -> None:
    fp = ds.fingerprint.encode("ascii").ljust(64, b"\0")[:64]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ds.Z.shape[1], ds.V.shape[1], len(ds), ds.seed, fp))
        fh.write(np.hstack([ds.Z, ds.V]).astype("<f8").tobytes())
        fh.write(ds.scenario_ids.astype("<i8").tobytes())


def read_dataset(path, expected_fingerprint: str | None = None) -> Dataset:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise DatasetError(f"{path}: not a dataset file (bad magic)")
    magic, ver, L, K2, n, seed, fp = _HEADER.unpack_from(data)
    if ver != VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {ver}")
    width = L + K2
    expect = _HEADER.size + 8 * n * (width + 1)
    if len(data) != expect:
        raise DatasetError(f"{path}: truncated or oversized file ({len(data)} bytes, expected {expect})")
    rows = np.frombuffer(data, "<f8", count=n * width, offset=_HEADER.size).reshape(n, width)
    ids = np.frombuffer(data, "<i8", count=n, offset=_HEADER.size + 8 * n * width)
    ds = Dataset(rows[:, :L].copy(), rows[:, L:].copy(), ids.copy(), fp.rstrip(b"\0").decode("ascii"), seed)
    if expected_fingerprint is not None:
        ds.check_fingerprint(expected_fingerprint)
    return ds

