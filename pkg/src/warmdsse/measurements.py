"""Measurement functions in the canonical quadratic form

    h(v) = conj(v)^T D v + c^T v + conj(c)^T conj(v)

with D Hermitian, plus measurement sets and noisy synthesis.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .feeder import DATA_DIR, FeederError, FeederModel, branch_series_admittance, to_document

KINDS = ("v_re", "v_im", "i_re", "i_im", "vmag_sq", "imag_sq", "p_flow", "q_flow", "p_inj", "q_inj")
SQUARED = ("vmag_sq", "imag_sq")
REAL_TOL = 1e-12


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MeasurementFn:
    kind: str
    D: sp.csr_matrix
    c: np.ndarray
    sigma: float
    target: tuple
    is_pseudo: bool = False

    @property
    def weight(self) -> float:
        return self.sigma**-2

    @property
    def squared(self) -> bool:
        return self.kind in SQUARED

    @property
    def K(self) -> int:
        return self.c.size


def _unit(K, k, coef=1.0):
    e = np.zeros(K, dtype=complex)
    e[k] = coef
    return e


def _zeroD(K):
    return sp.csr_matrix((K, K), dtype=complex)


def _outer(a, b):
    """Sparse a b^T for dense vectors."""
    ia, ib = np.flatnonzero(a), np.flatnonzero(b)
    rr, cc = np.meshgrid(ia, ib, indexing="ij")
    vals = np.outer(a[ia], b[ib])
    return sp.csr_matrix((vals.ravel(), (rr.ravel(), cc.ravel())), shape=(a.size, b.size))


def _power_forms(a, k, K):
    """(D_p, D_q) with v^H D v = Re / Im of v_k conj(a^T v)."""
    M = _outer(np.conj(a), _unit(K, k))
    MH = M.conj().T.tocsr()
    return ((M + MH) * 0.5).tocsr(), ((M - MH) * (0.5 / 1j)).tocsr()


def _branch_row(model: FeederModel, branch_id: str, phase: str):
    br = model.branch(branch_id)
    if not br.closed:
        raise MeasurementError(f"branch {branch_id} is open")
    if phase not in br.phases:
        raise MeasurementError(f"phase {phase!r} not on branch {branch_id}")
    Y = branch_series_admittance(br)
    f, t = model.branch_nodes(br)
    r = br.phases.index(phase)
    a = np.zeros(model.K, dtype=complex)
    a[f] += Y[r]
    a[t] -= Y[r]
    return a, f[r]


def _node(model, bus, phase):
    try:
        return model.node(bus, phase)
    except FeederError as exc:
        raise MeasurementError(str(exc)) from None


def mk_voltage_phasor(model: FeederModel, bus: str, phase: str, sigma: float):
    k = _node(model, bus, phase)
    K = model.K
    tgt = ("node", bus, phase, k)
    re = MeasurementFn("v_re", _zeroD(K), _unit(K, k, 0.5), sigma, tgt)
    im = MeasurementFn("v_im", _zeroD(K), _unit(K, k, 0.5 / 1j), sigma, tgt)
    return re, im


def mk_vmag_sq(model: FeederModel, bus: str, phase: str, sigma_mag: float) -> MeasurementFn:
    k = _node(model, bus, phase)
    K = model.K
    D = sp.csr_matrix(([1.0 + 0j], ([k], [k])), shape=(K, K))
    return MeasurementFn("vmag_sq", D, np.zeros(K, dtype=complex), sigma_mag, ("node", bus, phase, k))


def mk_current_phasor(model: FeederModel, branch: str, phase: str, sigma: float):
    a, _ = _branch_row(model, branch, phase)
    K = model.K
    tgt = ("branch", branch, phase)
    re = MeasurementFn("i_re", _zeroD(K), 0.5 * a, sigma, tgt)
    im = MeasurementFn("i_im", _zeroD(K), a / 2j, sigma, tgt)
    return re, im


def mk_current_mag_sq(model: FeederModel, branch: str, phase: str, sigma_mag: float) -> MeasurementFn:
    a, _ = _branch_row(model, branch, phase)
    D = _outer(np.conj(a), a)
    D = ((D + D.conj().T) * 0.5).tocsr()  # exact Hermitian symmetry despite rounding
    return MeasurementFn("imag_sq", D, np.zeros(model.K, dtype=complex), sigma_mag, ("branch", branch, phase))


def mk_branch_power(model: FeederModel, branch: str, phase: str, sigma: float):
    """Sending-end active/reactive flow on one phase of a branch."""
    a, k = _branch_row(model, branch, phase)
    Dp, Dq = _power_forms(a, k, model.K)
    zero = np.zeros(model.K, dtype=complex)
    tgt = ("branch", branch, phase)
    return MeasurementFn("p_flow", Dp, zero, sigma, tgt), MeasurementFn("q_flow", Dq, zero, sigma, tgt)


def mk_injection_pseudo(model: FeederModel, bus: str, phase: str, sigma: float):
    k = _node(model, bus, phase)
    a = np.asarray(model.Ybus[k].toarray()).ravel()
    Dp, Dq = _power_forms(a, k, model.K)
    zero = np.zeros(model.K, dtype=complex)
    tgt = ("node", bus, phase, k)
    return (
        MeasurementFn("p_inj", Dp, zero, sigma, tgt, is_pseudo=True),
        MeasurementFn("q_inj", Dq, zero, sigma, tgt, is_pseudo=True),
    )


def mk_bus_injection_pseudo(model: FeederModel, bus: str, sigma: float):
    """Aggregate (all-phase) net injection at a bus, as forecasts are reported."""
    parts = [mk_injection_pseudo(model, bus, ph, sigma) for ph in model.bus(bus).phases]
    Dp = sum((p.D for p, _ in parts), _zeroD(model.K)).tocsr()
    Dq = sum((q.D for _, q in parts), _zeroD(model.K)).tocsr()
    zero = np.zeros(model.K, dtype=complex)
    tgt = ("bus", bus)
    return (
        MeasurementFn("p_inj", Dp, zero, sigma, tgt, is_pseudo=True),
        MeasurementFn("q_inj", Dq, zero, sigma, tgt, is_pseudo=True),
    )


def _as_v(v):
    return np.asarray(getattr(v, "v", v), dtype=complex)


def evaluate(fn: MeasurementFn, v) -> float:
    v = _as_v(v)
    if v.shape != (fn.K,):
        raise MeasurementError(f"state length {v.size} does not match measurement size {fn.K}")
    quad = np.vdot(v, fn.D @ v)
    lin = fn.c @ v
    val = quad + lin + np.conj(lin)
    # rounding grows with the size of the summed terms, not with the result
    av = np.abs(v)
    scale = max(1.0, float(av @ (abs(fn.D) @ av)) + 2.0 * float(np.abs(fn.c) @ av))
    if abs(val.imag) > REAL_TOL * scale:
        raise MeasurementError(f"{fn.kind}: complex residue {val.imag:.3e} in real measurement")
    return float(val.real)


def jacobian_row(fn: MeasurementFn, v) -> np.ndarray:
    """Gradient of h with respect to x = [Re v; Im v]."""
    v = _as_v(v)
    u = 2.0 * (fn.D @ v) + 2.0 * np.conj(fn.c)
    return np.concatenate([u.real, u.imag])


def effective_sigma(fns, z) -> np.ndarray:
    """Per-measurement std; squared magnitudes use sigma' = 2 |z_mag| sigma (floored at sigma^2)."""
    sig = np.array([f.sigma for f in fns], dtype=float)
    sq = np.array([f.squared for f in fns], dtype=bool)
    if z is not None and sq.any():
        zmag = np.sqrt(np.maximum(np.asarray(z)[sq], 0.0))
        sig[sq] = np.maximum(2.0 * zmag * sig[sq], sig[sq] ** 2)
    return sig


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    fns: tuple[MeasurementFn, ...]
    z: np.ndarray | None = None
    constraint_basis: np.ndarray | None = field(default=None, repr=False)
    fingerprint: str = ""
    _shared: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.fns)

    @property
    def K(self) -> int:
        return self.fns[0].K

    def with_z(self, z) -> "MeasurementSet":
        z = np.asarray(z, dtype=float)
        if z.shape != (len(self.fns),):
            raise MeasurementError(f"expected {len(self.fns)} measurements, got {z.shape}")
        return replace(self, z=z.copy())

    @cached_property
    def sigma(self) -> np.ndarray:
        return effective_sigma(self.fns, self.z)

    @cached_property
    def weights(self) -> np.ndarray:
        return self.sigma**-2

    @property
    def _stack(self):
        # shared between copies made by with_z()
        if "stack" not in self._shared:
            D = sp.vstack([f.D for f in self.fns]).tocsr()
            C = np.array([f.c for f in self.fns])
            self._shared["stack"] = (D, C)
        return self._shared["stack"]

    def h(self, v) -> np.ndarray:
        v = _as_v(v)
        D, C = self._stack
        Dv = (D @ v).reshape(len(self.fns), -1)
        return (np.conj(v) @ Dv.T).real + 2.0 * (C @ v).real

    def jacobian(self, v) -> np.ndarray:
        v = _as_v(v)
        D, C = self._stack
        U = 2.0 * (D @ v).reshape(len(self.fns), -1) + 2.0 * np.conj(C)
        return np.hstack([U.real, U.imag])

    @property
    def targets(self) -> list[str]:
        return [f"{f.kind}:{'/'.join(str(t) for t in f.target)}" for f in self.fns]

    def pmu_nodes(self):
        """(node index, z_re, z_im) for each complete voltage-phasor pair with data."""
        re, im = {}, {}
        for f, zl in zip(self.fns, self.z if self.z is not None else [np.nan] * len(self.fns)):
            if f.kind == "v_re":
                re[f.target[-1]] = zl
            elif f.kind == "v_im":
                im[f.target[-1]] = zl
        return [(k, re[k], im[k]) for k in re if k in im]


def synthesize_measurements(mset: MeasurementSet, v_true, rng_seed, noise: bool = True) -> MeasurementSet:
    """z = h(v_true) + xi with xi ~ N(0, sigma^2); magnitudes are perturbed before squaring."""
    h = mset.h(v_true)
    sig = np.array([f.sigma for f in mset.fns])
    sq = np.array([f.squared for f in mset.fns], dtype=bool)
    rng = np.random.default_rng(rng_seed)
    xi = rng.standard_normal(len(h)) * sig if noise else np.zeros(len(h))
    if not noise:
        return mset.with_z(h)
    z = h + np.where(sq, 0.0, xi)
    if sq.any():
        mag = np.sqrt(np.maximum(h[sq], 0.0)) + xi[sq]
        z[sq] = mag**2
    return mset.with_z(z)


# --- structural (zero-injection) constraints --------------------------------

def structural_constraints(model: FeederModel) -> np.ndarray:
    """Real rows C with C x = 0 whenever the nodal currents are consistent with
    the connected units (zero-injection buses, unused phases of delta units)."""
    K = model.K
    Y = model.Ybus.tocsr()
    sub = set(model.substation_nodes.tolist())
    rows = []
    for bus in model.buses:
        nodes = [model.node(bus.id, ph) for ph in bus.phases]
        if nodes[0] in sub:
            continue
        pos = {ph: i for i, ph in enumerate(bus.phases)}
        patterns = []
        for u in model.injections:
            if u.bus != bus.id:
                continue
            for t in u.terminals:
                p = np.zeros(len(nodes))
                p[pos[t[0]]] = 1.0
                if u.connection == "delta":
                    p[pos[t[1]]] = -1.0
                patterns.append(p)
        if patterns:
            comp = la.null_space(np.array(patterns))
        else:
            comp = np.eye(len(nodes))
        if comp.size == 0:
            continue
        Yn = Y[nodes].toarray()
        for u in comp.T:
            r = u @ Yn
            rows.append(np.concatenate([r.real, -r.imag]))
            rows.append(np.concatenate([r.imag, r.real]))
    if not rows:
        return np.zeros((0, 2 * K))
    return np.array(rows)


def constraint_basis(model: FeederModel) -> np.ndarray | None:
    C = structural_constraints(model)
    if C.shape[0] == 0:
        return None
    return la.null_space(C, rcond=1e-10)


# --- configured measurement sets -------------------------------------------

def measurement_fingerprint(model: FeederModel, targets) -> str:
    """Hash of the feeder document (switch positions excluded) and measurement ordering."""
    doc = to_document(model)
    for br in doc["branches"]:
        if br["switchable"]:
            br.pop("closed")
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n" + "\n".join(targets)
    return hashlib.sha256(payload.encode()).hexdigest()


def load_measurement_config(path=None) -> dict:
    path = DATA_DIR / "ieee37_measurements.json" if path is None else Path(path)
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != "measurements/1":
        raise MeasurementError(f"{path}: expected schema 'measurements/1'")
    return doc


def build_measurement_set(model: FeederModel, config: dict, structural: bool = True) -> MeasurementSet:
    sig = config.get("sigma", {})
    s_pmu = float(sig.get("pmu", 1e-3))
    s_cur = float(sig.get("current_mag", 1e-2))
    s_pse = float(sig.get("pseudo", 1e-1))
    s_vm = float(sig.get("vmag", 1e-2))
    s_pf = float(sig.get("power_flow", 1e-2))
    fns: list[MeasurementFn] = []
    for bus in config.get("pmu_buses", []):
        for ph in model.bus(bus).phases:
            fns.extend(mk_voltage_phasor(model, bus, ph, s_pmu))
    for bus in config.get("vmag_buses", []):
        for ph in model.bus(bus).phases:
            fns.append(mk_vmag_sq(model, bus, ph, s_vm))
    for bid in config.get("current_mag_branches", []):
        for ph in model.branch(bid).phases:
            fns.append(mk_current_mag_sq(model, bid, ph, s_cur))
    for bid in config.get("power_flow_branches", []):
        for ph in model.branch(bid).phases:
            fns.extend(mk_branch_power(model, bid, ph, s_pf))
    for bus in config.get("pseudo_buses", []):
        fns.extend(mk_bus_injection_pseudo(model, bus, s_pse))
    basis = constraint_basis(model) if structural else None
    mset = MeasurementSet(tuple(fns), constraint_basis=basis)
    return replace(mset, fingerprint=measurement_fingerprint(model, mset.targets))


def build_ieee37_measurement_set(model: FeederModel, structural: bool = True) -> MeasurementSet:
    config = load_measurement_config()
    if model.name != config["feeder"] or model.K != 105:
        raise MeasurementError(f"model {model.name!r} is not the IEEE-37 fixture")
    return build_measurement_set(model, config, structural=structural)
