"""Closed-form oracle for a 3-bus lossless radial network (bus 1 feeds 2 and 3).

Angles are differences theta_1j = angle(v_1) - angle(v_j). The reactive-flow
expression follows the printed form |v_1|^2 - B |v_1||v_j| cos(theta); the
physical sending-end flow of a lossless line carries B |v_1|^2 instead, which
is what the full-pipeline encoding uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .feeder import DATA_DIR, FeederModel, parse_feeder
from .measurements import (
    MeasurementSet,
    measurement_fingerprint,
    mk_branch_power,
    mk_vmag_sq,
    mk_voltage_phasor,
)
from .powerflow import StateVector

CONTINUITY_EPS = 1e-9


class InfeasibleMeasurement(ValueError):
    pass


@dataclass(frozen=True)
class ThreeBusParams:
    B12: float = 10.0
    B13: float = 10.0
    vmag: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.vmag) != 3:
            raise ValueError("vmag must have three entries")
        v1, v2, v3 = self.vmag
        if self.B12 * v1 * v2 < CONTINUITY_EPS or self.B13 * v1 * v3 < CONTINUITY_EPS:
            raise ValueError("B |v_i||v_j| must be bounded away from zero")

    @property
    def k12(self) -> float:
        return self.B12 * self.vmag[0] * self.vmag[1]

    @property
    def k13(self) -> float:
        return self.B13 * self.vmag[0] * self.vmag[2]


def forward_3bus(p: ThreeBusParams, theta12: float, theta13: float):
    """(P12, Q12, P13, Q13) per the printed flow equations."""
    v1 = p.vmag[0]
    return (
        p.k12 * math.sin(theta12),
        v1 * v1 - p.k12 * math.cos(theta12),
        p.k13 * math.sin(theta13),
        v1 * v1 - p.k13 * math.cos(theta13),
    )


def inverse_3bus(p: ThreeBusParams, P12: float, P13: float):
    """Principal-branch angles from the two active flows."""
    out = []
    for P, k in ((P12, p.k12), (P13, p.k13)):
        s = P / k
        if not -1.0 <= s <= 1.0:
            raise InfeasibleMeasurement(f"|P/(B|v_i||v_j|)| = {abs(s):.3g} exceeds 1")
        out.append(math.asin(s))
    return tuple(out)


def roundtrip_table(p: ThreeBusParams, n: int = 100, span: float = 1.4):
    """Rows (theta12, theta13, err12, err13) on an n-point grid of (-span, span)."""
    grid = np.linspace(-span, span, n)
    rows = []
    for t12, t13 in zip(grid, grid[::-1]):
        P12, _, P13, _ = forward_3bus(p, t12, t13)
        r12, r13 = inverse_3bus(p, P12, P13)
        rows.append((float(t12), float(t13), abs(r12 - t12), abs(r13 - t13)))
    return rows


# --- encoding as a feeder ----------------------------------------------------

def threebus_document(p: ThreeBusParams = ThreeBusParams()) -> dict:
    def line(to, B):
        return {
            "id": f"1-{to}", "from": "1", "to": to, "phases": ["a"],
            "Z_real": [[0.0]], "Z_imag": [[1.0 / B]],
            "Ysh_real": [[0.0]], "Ysh_imag": [[0.0]],
            "switchable": False, "closed": True,
        }

    def load(bus):
        return {"id": f"L{bus}", "bus": bus, "kind": "load", "connection": "wye",
                "terminals": [["a"]], "rating": [0.5, 0.1], "split": [1.0]}

    return {
        "schema": "feeder/1",
        "name": "threebus",
        "base": {},
        "buses": [{"id": b, "phases": ["a"]} for b in ("1", "2", "3")],
        "branches": [line("2", p.B12), line("3", p.B13)],
        "injections": [load("2"), load("3")],
    }


def threebus_feeder(p: ThreeBusParams = ThreeBusParams()) -> FeederModel:
    return parse_feeder(threebus_document(p))


def load_threebus_fixture() -> FeederModel:
    return parse_feeder(DATA_DIR / "threebus.json")


def threebus_state(p: ThreeBusParams, theta12: float, theta13: float) -> StateVector:
    v1, v2, v3 = p.vmag
    return StateVector([v1, v2 * np.exp(-1j * theta12), v3 * np.exp(-1j * theta13)])


def threebus_measurement_set(model: FeederModel, sigma: float = 1e-3) -> MeasurementSet:
    """|v|^2 everywhere, P/Q flows on both lines and Im(v_1) as the angle reference."""
    fns = [mk_vmag_sq(model, b, "a", sigma) for b in ("1", "2", "3")]
    for br in ("1-2", "1-3"):
        fns.extend(mk_branch_power(model, br, "a", sigma))
    fns.append(mk_voltage_phasor(model, "1", "a", sigma)[1])
    targets = [f"{f.kind}:{'/'.join(str(t) for t in f.target)}" for f in fns]
    return MeasurementSet(tuple(fns), fingerprint=measurement_fingerprint(model, targets))


def angles_of(v) -> tuple[float, float]:
    v = np.asarray(getattr(v, "v", v))
    d = np.angle(v[0] * np.conj(v[1:]))
    return float(d[0]), float(d[1])


def sample_threebus(p: ThreeBusParams, n: int, seed: int, span: float = 1.0, vmag_spread: float = 0.05):
    """Noiseless (Z, V) pairs over random angles and magnitudes for NN experiments."""
    model = threebus_feeder(p)
    mset = threebus_measurement_set(model)
    rng = np.random.default_rng(seed)
    Z, V = [], []
    for _ in range(n):
        th = rng.uniform(-span, span, size=2)
        vm = np.asarray(p.vmag) * (1.0 + rng.uniform(-vmag_spread, vmag_spread, size=3))
        v = threebus_state(ThreeBusParams(p.B12, p.B13, tuple(vm)), th[0], th[1])
        Z.append(mset.h(v))
        V.append(v.x)
    return np.array(Z), np.array(V), mset.fingerprint
