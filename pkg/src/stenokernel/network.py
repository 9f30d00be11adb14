"""Arterial network data model and its TOML configuration loader.

A network is a rooted tree of 1-D vessel segments. The root segment is fed by
the left-ventricle model, interior connections are bifurcations, leaves end in
three-element Windkessel models, and optionally one vessel is split into a
proximal and a distal part joined by a lumped stenosis.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SCHEMA_VERSION = 1


class NetworkConfigError(ValueError):
    """Raised when a network configuration cannot be parsed or validated."""


@dataclass(frozen=True)
class FluidProperties:
    density: float = 1.06      # g/cm^3
    viscosity: float = 0.045   # poise
    poisson_ratio: float = 0.5

    @property
    def friction(self) -> float:
        """Friction parameter K_r = 22*pi*eta/rho in cm^2/s."""
        return 22.0 * math.pi * self.viscosity / self.density


@dataclass(frozen=True)
class VesselSegment:
    id: int
    length: float       # cm
    rest_area: float    # cm^2
    stiffness: float    # G0, dyn/cm^2
    dz: float           # cm, l / dz is integral
    node_count: int
    name: str = ""

    @property
    def nodes(self) -> np.ndarray:
        z = np.arange(self.node_count) * self.dz
        z[-1] = self.length
        return z

    def rest_wave_speed(self, fluid: FluidProperties) -> float:
        return math.sqrt(self.stiffness / (2.0 * fluid.density))

    def impedance(self, fluid: FluidProperties) -> float:
        """Characteristic impedance rho*c(A0)/A0 in dyn*s/cm^5."""
        return fluid.density * self.rest_wave_speed(fluid) / self.rest_area


@dataclass(frozen=True)
class HeartParams:
    """Left-ventricle elastance model; pressures in mmHg, volumes in cm^3."""

    V0: float = 10.0
    V_max: float = 130.0
    T: float = 1.0
    T_vcp: float = 0.30
    T_vrp: float = 0.15
    E_max: float = 2.75
    E_min: float = 0.08
    R: float = 3.0e-3
    B: float = 2.5e-5
    L: float = 5.0e-4
    S_coeff: float = 5.0e-4


@dataclass(frozen=True)
class WindkesselParams:
    R1: float           # dyn*s/cm^5
    R2: float           # dyn*s/cm^5
    C: float            # cm^5/dyn
    venous_pressure: float = 0.0  # dyn/cm^2


@dataclass(frozen=True)
class StenosisPlacement:
    proximal: int
    distal: int
    length: float       # cm
    rest_area: float    # cm^2
    degree: float


@dataclass(frozen=True)
class Junction:
    parent: int
    children: tuple[int, int]


@dataclass(frozen=True)
class Terminal:
    segment: int
    windkessel: WindkesselParams


@dataclass(frozen=True)
class Monitor:
    name: str
    segment: int
    node: int


@dataclass(frozen=True)
class NetworkTopology:
    name: str
    fluid: FluidProperties
    segments: tuple[VesselSegment, ...]
    inlet: int
    heart: HeartParams
    junctions: tuple[Junction, ...] = ()
    terminals: tuple[Terminal, ...] = ()
    stenosis: StenosisPlacement | None = None
    monitors: tuple[Monitor, ...] = field(default=())

    def segment(self, sid: int) -> VesselSegment:
        for seg in self.segments:
            if seg.id == sid:
                return seg
        raise KeyError(sid)

    def monitor(self, name: str) -> Monitor:
        for m in self.monitors:
            if m.name == name:
                return m
        raise KeyError(name)

    def with_stenosis_degree(self, degree: float) -> NetworkTopology:
        if self.stenosis is None:
            raise ValueError("network has no stenosis")
        if not 0.0 <= degree <= 1.0:
            raise ValueError(f"stenosis degree {degree} outside [0, 1]")
        st = StenosisPlacement(self.stenosis.proximal, self.stenosis.distal,
                               self.stenosis.length, self.stenosis.rest_area, float(degree))
        return _replace(self, stenosis=st)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Stable hash of the topology (used to key warm-up caches and provenance)."""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _replace(topo: NetworkTopology, **changes) -> NetworkTopology:
    d = {f: getattr(topo, f) for f in topo.__dataclass_fields__}
    d.update(changes)
    return NetworkTopology(**d)


def fit_grid(length: float, target_dz: float) -> tuple[float, int]:
    """Largest spacing <= target_dz dividing `length` exactly; returns (dz, node_count)."""
    if length <= 0 or target_dz <= 0:
        raise ValueError("length and target spacing must be positive")
    cells = max(1, math.ceil(length / target_dz - 1e-9))
    return length / cells, cells + 1


def pressure_from_area(A, seg: VesselSegment):
    """Transmural pressure G0*(sqrt(A/A0) - 1) in dyn/cm^2."""
    A = np.asarray(A, dtype=float)
    if np.any(A <= 0):
        raise ValueError("section area must be positive")
    p = seg.stiffness * (np.sqrt(A / seg.rest_area) - 1.0)
    return p if p.ndim else float(p)


def area_from_pressure(p, seg: VesselSegment):
    """Inverse of `pressure_from_area`; fails for collapsed vessels (p <= -G0)."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= -seg.stiffness):
        raise ValueError("pressure at or below -G0: collapsed vessel")
    A = seg.rest_area * (p / seg.stiffness + 1.0) ** 2
    return A if A.ndim else float(A)


# --------------------------------------------------------------------------
# configuration loading

def _req(table: dict, key: str, where: str):
    if key not in table:
        raise NetworkConfigError(f"{where}: missing field '{key}'")
    return table[key]


def _num(table: dict, key: str, where: str, default=None, positive=False) -> float:
    if key not in table:
        if default is None:
            raise NetworkConfigError(f"{where}: missing field '{key}'")
        return float(default)
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise NetworkConfigError(f"{where}.{key}: expected a number, got {val!r}")
    if positive and not val > 0:
        raise NetworkConfigError(f"{where}.{key}: must be > 0 (got {val})")
    return float(val)


def _parse_segment(tab: dict, idx: int, target_dz: float) -> VesselSegment:
    where = f"segment[{idx}]"
    sid = _req(tab, "id", where)
    if not isinstance(sid, int):
        raise NetworkConfigError(f"{where}.id: expected an integer")
    where = f"segment id={sid}"
    length = _num(tab, "length", where, positive=True)
    A0 = _num(tab, "rest_area", where, positive=True)
    if ("G0" in tab) == ("beta" in tab):
        raise NetworkConfigError(f"{where}: give exactly one of 'G0' or 'beta'")
    if "G0" in tab:
        G0 = _num(tab, "G0", where, positive=True)
    else:
        G0 = _num(tab, "beta", where, positive=True) * math.sqrt(A0)
    tdz = _num(tab, "target_dz", where, default=target_dz, positive=True)
    dz, n = fit_grid(length, tdz)
    return VesselSegment(sid, length, A0, G0, dz, n, str(tab.get("name", "")))


def _parse_heart(tab: dict) -> HeartParams:
    defaults = asdict(HeartParams())
    unknown = set(tab) - set(defaults)
    if unknown:
        raise NetworkConfigError(f"inlet.heart: unknown fields {sorted(unknown)}")
    vals = {k: _num(tab, k, "inlet.heart", default=v, positive=True) for k, v in defaults.items()}
    hp = HeartParams(**vals)
    if hp.T_vcp + hp.T_vrp > hp.T:
        raise NetworkConfigError("inlet.heart: T_vcp + T_vrp must not exceed T")
    return hp


def load_network(text: str) -> NetworkTopology:
    """Parse and validate a network configuration given as TOML text."""
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise NetworkConfigError(f"parse error: {exc}") from exc

    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise NetworkConfigError(f"schema_version {version} not supported (expected {SCHEMA_VERSION})")

    ftab = cfg.get("fluid", {})
    fluid = FluidProperties(density=_num(ftab, "density", "fluid", default=1.06, positive=True),
                            viscosity=_num(ftab, "viscosity", "fluid", default=0.045))
    if fluid.viscosity < 0:
        raise NetworkConfigError("fluid.viscosity: must be >= 0")
    target_dz = _num(cfg.get("grid", {}), "target_dz", "grid", default=0.1, positive=True)

    seg_tabs = cfg.get("segment", [])
    if not seg_tabs:
        raise NetworkConfigError("no [[segment]] entries")
    segments = [_parse_segment(t, i, target_dz) for i, t in enumerate(seg_tabs)]
    ids = [s.id for s in segments]
    if len(set(ids)) != len(ids):
        raise NetworkConfigError(f"duplicate segment ids in {ids}")
    by_id = {s.id: s for s in segments}

    def check_id(sid, where):
        if sid not in by_id:
            raise NetworkConfigError(f"{where}: unknown segment id {sid!r}")
        return sid

    inlet_tab = cfg.get("inlet")
    if not isinstance(inlet_tab, dict):
        raise NetworkConfigError("missing [inlet] table (exactly one inlet required)")
    inlet = check_id(_req(inlet_tab, "segment", "inlet"), "inlet.segment")
    heart = _parse_heart(inlet_tab.get("heart", {}))

    junctions = []
    for i, jt in enumerate(cfg.get("junction", [])):
        where = f"junction[{i}]"
        parent = check_id(_req(jt, "parent", where), where + ".parent")
        children = _req(jt, "children", where)
        if not isinstance(children, list) or len(children) != 2:
            raise NetworkConfigError(f"{where}.children: expected two segment ids")
        for c in children:
            check_id(c, where + ".children")
        junctions.append(Junction(parent, (children[0], children[1])))

    terminals = []
    for i, tt in enumerate(cfg.get("terminal", [])):
        where = f"terminal[{i}]"
        sid = check_id(_req(tt, "segment", where), where + ".segment")
        seg = by_id[sid]
        Z = seg.impedance(fluid)
        if "R1" in tt:
            R1 = _num(tt, "R1", where, positive=True)
            if not math.isclose(R1, Z, rel_tol=1e-9):
                raise NetworkConfigError(
                    f"{where}.R1: must equal the characteristic impedance {Z:.6g} of segment {sid}")
        if "R2" in tt:
            R2 = _num(tt, "R2", where, positive=True)
        else:
            R2 = _num(tt, "R_total", where, positive=True) - Z
            if R2 <= 0:
                raise NetworkConfigError(f"{where}.R_total: must exceed R1 = {Z:.6g}")
        C = _num(tt, "C", where, positive=True)
        pv = _num(tt, "venous_pressure", where, default=0.0)
        terminals.append(Terminal(sid, WindkesselParams(Z, R2, C, pv)))

    stenosis = None
    if "stenosis" in cfg:
        st = cfg["stenosis"]
        prox = check_id(_req(st, "proximal", "stenosis"), "stenosis.proximal")
        dist = check_id(_req(st, "distal", "stenosis"), "stenosis.distal")
        sp, sd = by_id[prox], by_id[dist]
        if sp.rest_area != sd.rest_area or sp.stiffness != sd.stiffness:
            raise NetworkConfigError(
                "stenosis: proximal and distal segments must share rest_area and stiffness")
        degree = _num(st, "degree", "stenosis", default=1e-6)
        if not 0.0 <= degree <= 1.0:
            raise NetworkConfigError(f"stenosis.degree: must lie in [0, 1] (got {degree})")
        stenosis = StenosisPlacement(prox, dist, _num(st, "length", "stenosis", positive=True),
                                     _num(st, "rest_area", "stenosis", default=sp.rest_area,
                                          positive=True),
                                     degree)

    monitors = []
    for i, mt in enumerate(cfg.get("monitor", [])):
        where = f"monitor[{i}]"
        sid = check_id(_req(mt, "segment", where), where + ".segment")
        node = mt.get("node", "mid")
        n = by_id[sid].node_count
        if node == "mid":
            node = (n - 1) // 2
        elif not isinstance(node, int) or not 0 <= node < n:
            raise NetworkConfigError(f"{where}.node: expected 'mid' or an index in [0, {n - 1}]")
        monitors.append(Monitor(str(mt.get("name", sid)), sid, node))
    if len({m.name for m in monitors}) != len(monitors):
        raise NetworkConfigError("monitor names must be unique")

    topo = NetworkTopology(str(cfg.get("name", "network")), fluid, tuple(segments), inlet, heart,
                           tuple(junctions), tuple(terminals), stenosis, tuple(monitors))
    _check_tree(topo)
    return topo


def _check_tree(topo: NetworkTopology) -> None:
    left: dict[int, list[str]] = {s.id: [] for s in topo.segments}
    right: dict[int, list[str]] = {s.id: [] for s in topo.segments}
    left[topo.inlet].append("inlet")
    for j in topo.junctions:
        right[j.parent].append("junction parent")
        for c in j.children:
            left[c].append("junction child")
    for t in topo.terminals:
        right[t.segment].append("terminal")
    if topo.stenosis is not None:
        right[topo.stenosis.proximal].append("stenosis proximal")
        left[topo.stenosis.distal].append("stenosis distal")
    for sid in left:
        for side, table in (("inlet end", left), ("outlet end", right)):
            kinds = table[sid]
            if len(kinds) != 1:
                raise NetworkConfigError(
                    f"segment {sid}: {side} must have exactly one attachment, found {kinds or 'none'}")

    children: dict[int, list[int]] = {s.id: [] for s in topo.segments}
    for j in topo.junctions:
        children[j.parent].extend(j.children)
    if topo.stenosis is not None:
        children[topo.stenosis.proximal].append(topo.stenosis.distal)
    seen, stack = set(), [topo.inlet]
    while stack:
        sid = stack.pop()
        if sid in seen:
            raise NetworkConfigError(f"segment {sid} reached twice: network is not a tree")
        seen.add(sid)
        stack.extend(children[sid])
    missing = sorted(set(children) - seen)
    if missing:
        raise NetworkConfigError(f"segments {missing} are not connected to the inlet")


def load_network_file(path) -> NetworkTopology:
    with open(path, encoding="utf-8") as fh:
        return load_network(fh.read())


def bundled_network_path(name: str = "desk"):
    from importlib.resources import files
    return files("stenokernel") / "data" / f"{name}.toml"


def load_bundled(name: str = "desk") -> NetworkTopology:
    return load_network(bundled_network_path(name).read_text(encoding="utf-8"))
