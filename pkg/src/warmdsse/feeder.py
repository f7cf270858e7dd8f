"""Multiphase feeder description, switching and admittance assembly."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

PHASES = ("a", "b", "c")
SCHEMA = "feeder/1"
SINGULAR_COND = 1e12
REF_ANGLES = {"a": 0.0, "b": -2.0 * np.pi / 3.0, "c": 2.0 * np.pi / 3.0}


class FeederError(ValueError):
    """Base class for invalid feeder descriptions."""


class SchemaError(FeederError):
    pass


class UnknownBusError(FeederError):
    pass


class MatrixShapeError(FeederError):
    pass


class DisconnectedError(FeederError):
    pass


class SwitchError(FeederError):
    pass


class SingularImpedanceError(FeederError):
    pass


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    Z: np.ndarray
    Yshunt: np.ndarray
    switchable: bool = False
    closed: bool = True


@dataclass(frozen=True, eq=False)
class InjectionUnit:
    """A load or DER. ``rating`` is the base complex power (p.u., magnitude
    convention: consumption for loads, production for DERs), distributed over
    ``terminals`` by the real weights ``split``."""

    id: str
    bus: str
    kind: str
    connection: str
    terminals: tuple[tuple[str, ...], ...]
    rating: complex
    split: tuple[float, ...]

    @property
    def sign(self) -> float:
        return -1.0 if self.kind == "load" else 1.0


@dataclass(frozen=True, eq=False)
class FeederModel:
    name: str
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    injections: tuple[InjectionUnit, ...]
    base: dict = field(default_factory=dict)
    switch_scenarios: dict = field(default_factory=dict)

    # --- indexing -------------------------------------------------------
    @cached_property
    def state_order(self) -> tuple[tuple[str, str], ...]:
        return tuple((b.id, ph) for b in self.buses for ph in b.phases)

    @cached_property
    def node_index(self) -> dict[tuple[str, str], int]:
        return {key: k for k, key in enumerate(self.state_order)}

    @property
    def K(self) -> int:
        return len(self.state_order)

    @property
    def substation(self) -> Bus:
        return self.buses[0]

    @cached_property
    def substation_nodes(self) -> np.ndarray:
        sub = self.substation
        return np.array([self.node_index[(sub.id, ph)] for ph in sub.phases])

    @cached_property
    def v_ref(self) -> np.ndarray:
        """Flat reference profile: 1 p.u. with nominal phase rotation."""
        return np.array([np.exp(1j * REF_ANGLES[ph]) for _, ph in self.state_order])

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise UnknownBusError(f"unknown bus {bus_id!r}")

    def branch(self, branch_id: str) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise FeederError(f"unknown branch {branch_id!r}")

    def node(self, bus_id: str, phase: str) -> int:
        try:
            return self.node_index[(bus_id, phase)]
        except KeyError:
            if bus_id not in {b.id for b in self.buses}:
                raise UnknownBusError(f"unknown bus {bus_id!r}") from None
            raise FeederError(f"phase {phase!r} not present at bus {bus_id!r}") from None

    def branch_nodes(self, br: Branch) -> tuple[np.ndarray, np.ndarray]:
        f = np.array([self.node(br.from_bus, ph) for ph in br.phases])
        t = np.array([self.node(br.to_bus, ph) for ph in br.phases])
        return f, t

    # --- admittance -----------------------------------------------------
    @cached_property
    def Ybus(self) -> sp.csr_matrix:
        return assemble_bus_admittance(self)

    @cached_property
    def fingerprint(self) -> str:
        doc = json.dumps(to_document(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(doc.encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, FeederModel):
            return NotImplemented
        return to_document(self) == to_document(other)

    __hash__ = object.__hash__


def branch_series_admittance(branch: Branch) -> np.ndarray:
    Z = np.asarray(branch.Z, dtype=complex)
    if np.linalg.cond(Z) > SINGULAR_COND:
        raise SingularImpedanceError(f"branch {branch.id}: impedance matrix is singular")
    return np.linalg.inv(Z)


def assemble_bus_admittance(model: FeederModel) -> sp.csr_matrix:
    """Y-bus over ``state_order``; series admittance plus half the shunt at each end."""
    rows, cols, vals = [], [], []
    for br in model.branches:
        if not br.closed:
            continue
        Y = branch_series_admittance(br)
        half = 0.5 * np.asarray(br.Yshunt, dtype=complex)
        f, t = model.branch_nodes(br)
        for a, b, block in ((f, f, Y + half), (t, t, Y + half), (f, t, -Y), (t, f, -Y)):
            rr, cc = np.meshgrid(a, b, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(block.ravel())
    K = model.K
    if not rows:
        return sp.csr_matrix((K, K), dtype=complex)
    Y = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(K, K)
    )
    return Y.tocsr()


def _check_connected(name, buses, branches):
    idx = {b.id: k for k, b in enumerate(buses)}
    edges = [(idx[br.from_bus], idx[br.to_bus]) for br in branches if br.closed]
    n = len(buses)
    if n == 1:
        return
    if not edges:
        raise DisconnectedError(f"{name}: no closed branches")
    e = np.array(edges)
    adj = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    if ncomp > 1:
        cut = sorted(buses[k].id for k in range(n) if labels[k] != labels[0])
        raise DisconnectedError(f"{name}: buses {cut} are not connected to the substation")


def _matrix(doc, key_re, key_im, n, where):
    try:
        re = np.asarray(doc[key_re], dtype=float)
        im = np.asarray(doc.get(key_im, np.zeros_like(re)), dtype=float)
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{where}: bad {key_re}/{key_im}: {exc}") from None
    if re.shape != (n, n) or im.shape != (n, n):
        raise MatrixShapeError(f"{where}: {key_re} must be {n}x{n}, got {re.shape}")
    return re + 1j * im


def parse_feeder(doc) -> FeederModel:
    """Build a validated model from a feeder document (dict, path or JSON text)."""
    if isinstance(doc, (str, Path)):
        p = Path(doc)
        if isinstance(doc, Path) or (len(str(doc)) < 4096 and p.exists()):
            doc = json.loads(p.read_text())
        else:
            doc = json.loads(doc)
    if doc.get("schema") != SCHEMA:
        raise SchemaError(f"expected schema {SCHEMA!r}, got {doc.get('schema')!r}")

    buses = []
    for b in doc.get("buses", []):
        phases = tuple(ph for ph in PHASES if ph in b["phases"])
        if not phases or len(phases) != len(b["phases"]):
            raise SchemaError(f"bus {b.get('id')}: bad phase set {b.get('phases')}")
        buses.append(Bus(str(b["id"]), phases))
    if not buses:
        raise SchemaError("feeder has no buses")
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate bus ids")
    bus_map = {b.id: b for b in buses}

    branches = []
    for d in doc.get("branches", []):
        bid = str(d.get("id", f"{d.get('from')}-{d.get('to')}"))
        frm, to = str(d["from"]), str(d["to"])
        for end in (frm, to):
            if end not in bus_map:
                raise UnknownBusError(f"branch {bid}: references undeclared bus {end!r}")
        phases = tuple(ph for ph in PHASES if ph in d["phases"])
        for end in (frm, to):
            missing = set(phases) - set(bus_map[end].phases)
            if missing:
                raise SchemaError(f"branch {bid}: phases {sorted(missing)} absent at bus {end}")
        n = len(phases)
        Z = _matrix(d, "Z_real", "Z_imag", n, f"branch {bid}")
        if "Ysh_real" in d:
            Ysh = _matrix(d, "Ysh_real", "Ysh_imag", n, f"branch {bid}")
        else:
            Ysh = np.zeros((n, n), dtype=complex)
        switchable = bool(d.get("switchable", False))
        closed = bool(d.get("closed", True))
        if not switchable and not closed:
            raise SwitchError(f"branch {bid}: non-switchable branch must be closed")
        br = Branch(bid, frm, to, phases, Z, Ysh, switchable, closed)
        if closed:
            branch_series_admittance(br)
        branches.append(br)
    if len({br.id for br in branches}) != len(branches):
        raise SchemaError("duplicate branch ids")

    units = []
    for d in doc.get("injections", []):
        uid = str(d.get("id", f"{d['kind']}@{d['bus']}"))
        bus = str(d["bus"])
        if bus not in bus_map:
            raise UnknownBusError(f"injection {uid}: references undeclared bus {bus!r}")
        kind, conn = d["kind"], d["connection"]
        if kind not in ("load", "der") or conn not in ("wye", "delta"):
            raise SchemaError(f"injection {uid}: bad kind/connection {kind}/{conn}")
        terms = tuple(tuple(t) if isinstance(t, (list, tuple)) else (t,) for t in d["terminals"])
        for t in terms:
            if conn == "delta" and (len(t) != 2 or t[0] == t[1]):
                raise SchemaError(f"injection {uid}: delta terminals must be distinct phase pairs")
            if conn == "wye" and len(t) != 1:
                raise SchemaError(f"injection {uid}: wye terminals are single phases")
            if any(ph not in bus_map[bus].phases for ph in t):
                raise SchemaError(f"injection {uid}: terminal {t} not present at bus {bus}")
        rating = d["rating"]
        rating = complex(rating[0], rating[1]) if isinstance(rating, (list, tuple)) else complex(rating)
        split = tuple(float(s) for s in d.get("split", [1.0 / len(terms)] * len(terms)))
        if len(split) != len(terms):
            raise SchemaError(f"injection {uid}: split must match terminals")
        units.append(InjectionUnit(uid, bus, kind, conn, terms, rating, split))

    model = FeederModel(
        name=str(doc.get("name", "feeder")),
        buses=tuple(buses),
        branches=tuple(branches),
        injections=tuple(units),
        base=dict(doc.get("base", {})),
        switch_scenarios=copy.deepcopy(doc.get("switch_scenarios", {})),
    )
    _check_connected(model.name, model.buses, model.branches)
    return model


def to_document(model: FeederModel) -> dict:
    def mat(M, part):
        return getattr(np.asarray(M), part).tolist()

    doc = {
        "schema": SCHEMA,
        "name": model.name,
        "base": model.base,
        "buses": [{"id": b.id, "phases": list(b.phases)} for b in model.buses],
        "branches": [
            {
                "id": br.id, "from": br.from_bus, "to": br.to_bus, "phases": list(br.phases),
                "Z_real": mat(br.Z, "real"), "Z_imag": mat(br.Z, "imag"),
                "Ysh_real": mat(br.Yshunt, "real"), "Ysh_imag": mat(br.Yshunt, "imag"),
                "switchable": br.switchable, "closed": br.closed,
            }
            for br in model.branches
        ],
        "injections": [
            {
                "id": u.id, "bus": u.bus, "kind": u.kind, "connection": u.connection,
                "terminals": [list(t) for t in u.terminals],
                "rating": [u.rating.real, u.rating.imag], "split": list(u.split),
            }
            for u in model.injections
        ],
    }
    if model.switch_scenarios:
        doc["switch_scenarios"] = model.switch_scenarios
    return doc


def set_switch_states(model: FeederModel, states: dict[str, bool]) -> FeederModel:
    by_id = {br.id: br for br in model.branches}
    for bid in states:
        if bid not in by_id:
            raise SwitchError(f"unknown branch {bid!r}")
        if not by_id[bid].switchable:
            raise SwitchError(f"branch {bid} is not switchable")
    branches = []
    for br in model.branches:
        if br.id in states:
            br = replace(br, closed=bool(states[br.id]))
            if br.closed:
                branch_series_admittance(br)
        branches.append(br)
    _check_connected(model.name, model.buses, branches)
    return FeederModel(
        name=model.name,
        buses=model.buses,
        branches=tuple(branches),
        injections=model.injections,
        base=model.base,
        switch_scenarios=model.switch_scenarios,
    )


def apply_scenario(model: FeederModel, scenario_id: str) -> FeederModel:
    if scenario_id not in model.switch_scenarios:
        raise SwitchError(f"undefined reconfiguration scenario {scenario_id!r}")
    return set_switch_states(model, model.switch_scenarios[scenario_id])


DATA_DIR = Path(__file__).parent / "data"


def load_ieee37() -> FeederModel:
    return parse_feeder(DATA_DIR / "ieee37.json")
