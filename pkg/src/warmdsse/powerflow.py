"""Ground-truth multiphase power flow (implicit Z-bus fixed point)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .feeder import FeederModel


class PowerFlowError(RuntimeError):
    pass


class NonConvergenceError(PowerFlowError):
    pass


class VoltageCollapseError(PowerFlowError):
    pass


COLLAPSE_VMAG = 0.5


class StateVector:
    """Complex phase-node voltages with the rectangular packing x = [Re v; Im v]."""

    __slots__ = ("v",)

    def __init__(self, v):
        self.v = np.asarray(v, dtype=complex).copy()

    @classmethod
    def from_x(cls, x) -> "StateVector":
        x = np.asarray(x, dtype=float)
        K = x.size // 2
        return cls(x[:K] + 1j * x[K:])

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.v.real, self.v.imag])

    @property
    def K(self) -> int:
        return self.v.size

    def __len__(self):
        return self.v.size

    def __repr__(self):
        return f"StateVector(K={self.K})"


@dataclass(frozen=True, eq=False)
class InjectionScenario:
    """Injected complex power per unit of ``model.injections`` (loads negative)."""

    s: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.s)):
            raise ValueError("scenario contains non-finite injections")

    @classmethod
    def from_mapping(cls, model: FeederModel, powers: dict[str, complex]) -> "InjectionScenario":
        ids = [u.id for u in model.injections]
        extra = set(powers) - set(ids)
        missing = set(ids) - set(powers)
        if extra or missing:
            raise ValueError(f"scenario must cover every unit exactly once (missing={sorted(missing)}, unknown={sorted(extra)})")
        return cls(np.array([complex(powers[i]) for i in ids]))

    @classmethod
    def nominal(cls, model: FeederModel, scale: float = 1.0) -> "InjectionScenario":
        return cls(np.array([u.sign * u.rating * scale for u in model.injections]))

    @classmethod
    def zero(cls, model: FeederModel) -> "InjectionScenario":
        return cls(np.zeros(len(model.injections), dtype=complex))


@dataclass(frozen=True)
class _Terminals:
    unit: np.ndarray
    weight: np.ndarray
    p: np.ndarray
    q: np.ndarray  # -1 for wye terminals


@lru_cache(maxsize=64)
def _terminals(model: FeederModel) -> _Terminals:
    unit, weight, p, q = [], [], [], []
    for k, u in enumerate(model.injections):
        for term, w in zip(u.terminals, u.split):
            unit.append(k)
            weight.append(w)
            p.append(model.node(u.bus, term[0]))
            q.append(model.node(u.bus, term[1]) if u.connection == "delta" else -1)
    return _Terminals(np.array(unit, dtype=int), np.array(weight), np.array(p, dtype=int), np.array(q, dtype=int))


def terminal_currents(model: FeederModel, v: np.ndarray, scenario: InjectionScenario):
    """Per-terminal injected current and its (from, to) nodes."""
    t = _terminals(model)
    s = scenario.s[t.unit] * t.weight
    wye = t.q < 0
    dv = v[t.p] - np.where(wye, 0.0, v[np.where(wye, 0, t.q)])
    i = np.conj(s / dv)
    return i, t.p, t.q


def injection_currents(model: FeederModel, v: np.ndarray, scenario: InjectionScenario) -> np.ndarray:
    i_t, p, q = terminal_currents(model, v, scenario)
    out = np.zeros(model.K, dtype=complex)
    np.add.at(out, p, i_t)
    delta = q >= 0
    np.add.at(out, q[delta], -i_t[delta])
    return out


def scheduled_phase_power(model: FeederModel, v: np.ndarray, scenario: InjectionScenario) -> np.ndarray:
    """Per phase-node complex power implied by the unit models at voltage ``v``."""
    return v * np.conj(injection_currents(model, v, scenario))


@lru_cache(maxsize=64)
def _reduced_factor(model: FeederModel):
    Y = model.Ybus.toarray()
    sub = model.substation_nodes
    rest = np.setdiff1d(np.arange(model.K), sub)
    lu = la.lu_factor(Y[np.ix_(rest, rest)])
    return lu, Y[np.ix_(rest, sub)], rest, sub


def solve_power_flow(
    model: FeederModel,
    scenario: InjectionScenario,
    tol: float = 1e-9,
    max_iter: int = 200,
    v0: np.ndarray | StateVector | None = None,
) -> StateVector:
    if tol <= 0:
        raise ValueError("tol must be positive")
    lu, Y_rs, rest, sub = _reduced_factor(model)
    v = model.v_ref.copy() if v0 is None else np.array(getattr(v0, "v", v0), dtype=complex)
    v[sub] = model.v_ref[sub]
    ysrc = Y_rs @ v[sub]
    for _ in range(max_iter):
        i_inj = injection_currents(model, v, scenario)
        v_new = v.copy()
        v_new[rest] = la.lu_solve(lu, i_inj[rest] - ysrc)
        if not np.all(np.isfinite(v_new)):
            raise VoltageCollapseError("power flow produced non-finite voltages")
        if np.min(np.abs(v_new)) < COLLAPSE_VMAG:
            raise VoltageCollapseError(f"voltage below {COLLAPSE_VMAG} p.u.")
        step = np.max(np.abs(v_new - v))
        v = v_new
        if step <= tol:
            return StateVector(v)
    raise NonConvergenceError(f"power flow did not converge in {max_iter} iterations")


def power_balance_residual(model: FeederModel, v, scenario: InjectionScenario) -> float:
    v = np.asarray(getattr(v, "v", v), dtype=complex)
    s_net = v * np.conj(model.Ybus @ v)
    s_sched = scheduled_phase_power(model, v, scenario)
    mask = np.ones(model.K, dtype=bool)
    mask[model.substation_nodes] = False
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(s_net - s_sched)[mask]))


def read_scenarios(path, model: FeederModel) -> list[InjectionScenario]:
    """Read a scenario CSV with header ``t,unit_id,P,Q`` (injected power, p.u.)."""
    by_t: dict[str, dict[str, complex]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "unit_id", "P", "Q"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: scenario CSV needs header t,unit_id,P,Q")
        for row in reader:
            by_t.setdefault(row["t"], {})[row["unit_id"]] = complex(float(row["P"]), float(row["Q"]))
    return [InjectionScenario.from_mapping(model, powers) for powers in by_t.values()]


def write_scenarios(path, model: FeederModel, scenarios) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "unit_id", "P", "Q"])
        for t, sc in enumerate(scenarios):
            for u, s in zip(model.injections, sc.s):
                w.writerow([t, u.id, repr(float(s.real)), repr(float(s.imag))])
