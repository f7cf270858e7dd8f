"""Weighted least-squares state estimation by Gauss-Newton in rectangular coordinates."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .feeder import FeederModel
from .measurements import MeasurementSet
from .powerflow import StateVector


@dataclass(frozen=True)
class EstimatorConfig:
    max_iter: int = 50
    step_tol: float = 1e-8
    damping: float = 1e-10
    adaptive_damping: bool = True
    divergence_cost_growth: int = 5
    divergence_norm_cap: float = 1e3

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        for name in ("step_tol", "damping", "divergence_cost_growth", "divergence_norm_cap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


UNDAMPED = EstimatorConfig(adaptive_damping=False)


@dataclass
class EstimateReport:
    v_hat: StateVector
    iterations: int
    converged: bool
    cost_trace: list[float]
    wall_time: float
    reason: str = ""
    gradient_norm: float = float("nan")
    steps: list[float] = field(default_factory=list)

    def to_dict(self, include_state: bool = True, include_timing: bool = True) -> dict:
        d = {
            "iterations": self.iterations,
            "converged": self.converged,
            "reason": self.reason,
            "cost_trace": [float(c) for c in self.cost_trace],
            "gradient_norm": float(self.gradient_norm),
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        if include_state:
            d["v_hat_re"] = self.v_hat.v.real.tolist()
            d["v_hat_im"] = self.v_hat.v.imag.tolist()
        return d


def _require_z(mset: MeasurementSet):
    if mset.z is None:
        raise ValueError("measurement set has no observed values (z)")


def wls_cost(mset: MeasurementSet, v) -> float:
    _require_z(mset)
    r = mset.z - mset.h(v)
    return float(np.sum(mset.weights * r * r))


def _basis(mset: MeasurementSet, n: int) -> np.ndarray | None:
    N = mset.constraint_basis
    if N is not None and N.shape[0] != n:
        raise ValueError("constraint basis does not match the state dimension")
    return N


def project_to_constraints(mset: MeasurementSet, v) -> StateVector:
    """Orthogonal projection of a state onto the structural-constraint subspace."""
    x = np.asarray(getattr(v, "x", None) if hasattr(v, "x") else StateVector(v).x)
    N = _basis(mset, x.size)
    if N is None:
        return StateVector.from_x(x)
    return StateVector.from_x(N @ (N.T @ x))


def estimate(mset: MeasurementSet, v0, cfg: EstimatorConfig = EstimatorConfig()) -> EstimateReport:
    """Gauss-Newton / Levenberg iterations on J(x) = (z - h)^T W (z - h).

    The iterate is kept in the structural-constraint subspace when the set
    carries a basis. Failures are reported (``converged=False``), never raised.
    """
    _require_z(mset)
    t0 = time.perf_counter()
    x = np.asarray(v0.x if isinstance(v0, StateVector) else StateVector(v0).x, dtype=float)
    w = mset.weights
    N = _basis(mset, x.size)
    if N is not None:
        x = N @ (N.T @ x)

    def fail(reason, x_last, trace, it, steps):
        return EstimateReport(StateVector.from_x(x_last), it, False, trace, time.perf_counter() - t0, reason, steps=steps)

    if not np.all(np.isfinite(x)):
        return fail("non-finite initial state", x, [float("nan")], 0, [])

    r = mset.z - mset.h(StateVector.from_x(x))
    J = float(np.sum(w * r * r))
    trace = [J]
    steps: list[float] = []
    lam = None
    growth = 0
    grad = np.inf
    for it in range(1, cfg.max_iter + 1):
        v = StateVector.from_x(x)
        H = mset.jacobian(v)
        if N is not None:
            H = H @ N
        HW = H.T * w
        A = HW @ H
        g = HW @ r
        n = A.shape[0]
        floor = cfg.damping * np.trace(A) / n
        if lam is None or not cfg.adaptive_damping:
            lam = floor
        try:
            if not np.isfinite(lam) or lam <= 0:
                raise la.LinAlgError("degenerate normal equations")
            dy = la.solve(A + lam * np.eye(n), g, assume_a="pos")
        except (la.LinAlgError, ValueError):
            trace.append(J)
            return fail("singular normal equations", x, trace, it, steps)
        dx = N @ dy if N is not None else dy
        x_new = x + dx
        step = float(np.max(np.abs(dx)))
        steps.append(step)
        if not np.all(np.isfinite(x_new)):
            trace.append(J)
            return fail("non-finite iterate", x, trace, it, steps)
        if np.linalg.norm(x_new) > cfg.divergence_norm_cap:
            trace.append(J)
            return fail("state norm above cap", x_new, trace, it, steps)
        r_new = mset.z - mset.h(StateVector.from_x(x_new))
        J_new = float(np.sum(w * r_new * r_new))

        if cfg.adaptive_damping:
            # accept on decrease; tiny final steps are accepted within rounding slack
            if J_new <= J * (1 + 1e-12) + 1e-300 or step <= cfg.step_tol:
                if J_new <= J * (1 + 1e-12):
                    x, r, J = x_new, r_new, J_new
                lam = max(lam / 10.0, floor)
            else:
                lam *= 10.0
                trace.append(J)
                continue
        else:
            growth = growth + 1 if J_new > J else 0
            x, r, J = x_new, r_new, J_new
            if growth >= cfg.divergence_cost_growth:
                trace.append(J)
                return fail("cost increased repeatedly", x, trace, it, steps)
        trace.append(J)
        if step <= cfg.step_tol:
            v = StateVector.from_x(x)
            Hf = mset.jacobian(v)
            if N is not None:
                Hf = Hf @ N
            grad = float(np.max(np.abs((Hf.T * w) @ r)))
            return EstimateReport(v, it, True, trace, time.perf_counter() - t0, "step tolerance", grad, steps)
    return fail("max_iter reached", x, trace, cfg.max_iter, steps)


def flat_start(model: FeederModel) -> StateVector:
    return StateVector(model.v_ref)


def pmu_anchored_start(model: FeederModel, mset: MeasurementSet) -> StateVector:
    v = model.v_ref.copy()
    if mset.z is not None:
        for k, re, im in mset.pmu_nodes():
            v[k] = re + 1j * im
    return StateVector(v)


def nu_index(v_hat, v_true) -> float:
    a = np.asarray(getattr(v_hat, "v", v_hat))
    b = np.asarray(getattr(v_true, "v", v_true))
    if a.shape != b.shape:
        raise ValueError("state shapes differ")
    return float(np.sum(np.abs(a - b) ** 2))


def mu_index(mset: MeasurementSet, v_hat) -> float:
    _require_z(mset)
    r = mset.z - mset.h(v_hat)
    return float(np.sum(r * r))
