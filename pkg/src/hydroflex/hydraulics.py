"""1D hydraulic network: elastic pipes, surge tanks, reservoirs, valves and machine nodes.

Pipes are discretised as lumped inertance/compliance/resistance ladders (the
electrical analogy): each segment carries a discharge state, each node between
segments carries a piezometric head state, and the compliance of the two half
segments adjacent to a pipe end is lumped into the junction node it touches.
Valves and machines are algebraic branches whose discharge is a function of
the head difference across them. The whole system is advanced with the
implicit trapezoidal rule and a Newton iteration.

Sign convention for port discharges: positive means water flowing out of the
junction into the element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

G = 9.81

FlowLaw = Callable[[float], "tuple[float, float]"]
MachineSetpoint = Union[float, FlowLaw]


class NetworkError(ValueError):
    """Invalid network description."""


class SimulationError(RuntimeError):
    """A transient run left its admissible domain (non-finite state, tank overflow...)."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message if time is None else f"t={time:.3f} s: {message}")
        self.time = time


@dataclass(frozen=True)
class Reservoir:
    id: str
    elevation: float
    elevation_max: float | None = None

    ports = ("port",)

    def __post_init__(self):
        if not math.isfinite(self.elevation):
            raise NetworkError(f"reservoir {self.id}: elevation must be finite")
        if self.elevation_max is not None and self.elevation_max < self.elevation:
            raise NetworkError(f"reservoir {self.id}: elevation_max below elevation")

    def level(self, condition: str = "min") -> float:
        if condition == "max" and self.elevation_max is not None:
            return self.elevation_max
        return self.elevation


@dataclass(frozen=True)
class Pipe:
    id: str
    length: float
    diameter: float
    wave_speed: float
    friction_factor: float = 0.0
    n_segments: int = 1

    ports = ("in", "out")

    def __post_init__(self):
        if not self.length > 0:
            raise NetworkError(f"pipe {self.id}: length must be positive, got {self.length}")
        if not self.diameter > 0:
            raise NetworkError(f"pipe {self.id}: diameter must be positive, got {self.diameter}")
        if not self.wave_speed > 0:
            raise NetworkError(f"pipe {self.id}: wave speed must be positive")
        if self.friction_factor < 0:
            raise NetworkError(f"pipe {self.id}: friction factor must be >= 0")
        if int(self.n_segments) != self.n_segments or self.n_segments < 1:
            raise NetworkError(f"pipe {self.id}: n_segments must be an integer >= 1")

    @property
    def area(self) -> float:
        return math.pi * self.diameter**2 / 4.0

    @property
    def segment_length(self) -> float:
        return self.length / self.n_segments

    @property
    def segment_travel_time(self) -> float:
        return self.segment_length / self.wave_speed

    def head_loss(self, discharge: float) -> float:
        """Darcy-Weisbach head loss over the full length."""
        v = discharge / self.area
        return self.friction_factor * self.length / self.diameter * v * abs(v) / (2.0 * G)


@dataclass(frozen=True)
class SurgeTank:
    id: str
    cross_section: float
    base_elevation: float
    max_level: float
    min_level: float | None = None
    throttle_loss: float = 0.0

    ports = ("port",)

    def __post_init__(self):
        if not self.cross_section > 0:
            raise NetworkError(f"surge tank {self.id}: cross section must be positive")
        lo = self.base_elevation if self.min_level is None else self.min_level
        if lo < self.base_elevation or self.max_level <= lo:
            raise NetworkError(f"surge tank {self.id}: need base <= min_level < max_level")
        if self.throttle_loss < 0:
            raise NetworkError(f"surge tank {self.id}: throttle loss must be >= 0")

    @property
    def lowest_level(self) -> float:
        return self.base_elevation if self.min_level is None else self.min_level


@dataclass(frozen=True)
class Valve:
    """Orifice valve, ``Q = opening * discharge_area * sqrt(2 g dH)``.

    With ``outlet_head`` set the valve is a terminal element discharging to a
    constant head (free outlet) and has a single ``in`` port.
    """

    id: str
    discharge_area: float
    opening: float = 1.0
    outlet_head: float | None = None

    def __post_init__(self):
        if not self.discharge_area > 0:
            raise NetworkError(f"valve {self.id}: discharge area must be positive")
        if not 0.0 <= self.opening <= 1.0:
            raise NetworkError(f"valve {self.id}: opening must lie in [0, 1]")

    @property
    def ports(self) -> tuple[str, ...]:
        return ("in",) if self.outlet_head is not None else ("in", "out")


@dataclass(frozen=True)
class MachineNode:
    """Hydraulic machine boundary; ``in`` is the spiral case, ``out`` the draft tube."""

    id: str
    unit: str

    ports = ("in", "out")


Element = Union[Reservoir, Pipe, SurgeTank, Valve, MachineNode]

# Valve flow law is linearised below this head difference to keep dQ/dH finite.
_VALVE_DH_EPS = 1e-4


def valve_flow(opening: float, discharge_area: float, dh: float) -> tuple[float, float]:
    k = opening * discharge_area * math.sqrt(2.0 * G)
    if k == 0.0:
        return 0.0, 0.0
    adh = abs(dh)
    if adh < _VALVE_DH_EPS:
        slope = k / math.sqrt(_VALVE_DH_EPS)
        return slope * dh, slope
    root = math.sqrt(adh)
    return math.copysign(k * root, dh), 0.5 * k / root


def throttle_flow(loss: float, area: float, dh: float) -> tuple[float, float]:
    # dh = loss * v|v| / 2g with v = Q / area
    k = area * math.sqrt(2.0 * G / loss)
    adh = abs(dh)
    if adh < _VALVE_DH_EPS:
        slope = k / math.sqrt(_VALVE_DH_EPS)
        return slope * dh, slope
    root = math.sqrt(adh)
    return math.copysign(k * root, dh), 0.5 * k / root


@dataclass
class _AlgBranch:
    kind: str  # "valve" | "machine" | "throttle"
    element: str
    a: int
    b: int


class HydraulicNetwork:
    """Immutable topology plus the compiled node/branch structure.

    Use :func:`build_network` to construct one from a plain description.
    """

    def __init__(self, elements: Sequence[Element], junctions: Mapping[str, Sequence[str]]):
        self.elements: dict[str, Element] = {}
        for el in elements:
            if el.id in self.elements:
                raise NetworkError(f"duplicate element id {el.id!r}")
            self.elements[el.id] = el
        self.junctions: dict[str, tuple[str, ...]] = {j: tuple(p) for j, p in junctions.items()}
        self._compile()

    # ------------------------------------------------------------------ topology
    def _compile(self) -> None:
        port_owner: dict[tuple[str, str], str] = {}
        for jid, ports in self.junctions.items():
            if not ports:
                raise NetworkError(f"junction {jid} has no ports")
            for ref in ports:
                eid, _, port = ref.partition(".")
                el = self.elements.get(eid)
                if el is None:
                    raise NetworkError(f"junction {jid}: dangling reference to element {eid!r}")
                if not port:
                    if len(el.ports) != 1:
                        raise NetworkError(f"junction {jid}: element {eid} needs an explicit port")
                    port = el.ports[0]
                if port not in el.ports:
                    raise NetworkError(f"junction {jid}: element {eid} has no port {port!r}")
                key = (eid, port)
                if key in port_owner:
                    raise NetworkError(f"port {eid}.{port} attached to junctions {port_owner[key]} and {jid}")
                port_owner[key] = jid
        for eid, el in self.elements.items():
            for port in el.ports:
                if (eid, port) not in port_owner:
                    raise NetworkError(f"port {eid}.{port} is not attached to any junction")
        self._port_junction = port_owner

        # nodes: one per junction, interior pipe nodes, throttled tank nodes, valve outlets
        node_names: list[str] = []
        fixed: dict[int, float] = {}
        fixed_elev: dict[int, Reservoir] = {}
        cap: list[float] = []
        junction_node: dict[str, int] = {}

        def new_node(name: str) -> int:
            node_names.append(name)
            cap.append(0.0)
            return len(node_names) - 1

        for jid in self.junctions:
            junction_node[jid] = new_node(jid)

        for (eid, port), jid in port_owner.items():
            el = self.elements[eid]
            if isinstance(el, Reservoir):
                n = junction_node[jid]
                if n in fixed:
                    raise NetworkError(f"junction {jid} touches two reservoirs")
                fixed[n] = el.elevation
                fixed_elev[n] = el

        ind_a: list[int] = []
        ind_b: list[int] = []
        ind_L: list[float] = []
        ind_R: list[float] = []
        pipe_branches: dict[str, tuple[int, int]] = {}
        pipe_nodes: dict[str, list[int]] = {}
        pipe_half_c: dict[str, float] = {}
        alg: list[_AlgBranch] = []
        tank_node: dict[str, int] = {}

        for eid, el in self.elements.items():
            if isinstance(el, Pipe):
                n_in = junction_node[port_owner[(eid, "in")]]
                n_out = junction_node[port_owner[(eid, "out")]]
                if n_in == n_out:
                    raise NetworkError(f"pipe {eid} connects a junction to itself")
                dx = el.segment_length
                c_seg = G * el.area * dx / el.wave_speed**2
                nodes = [n_in] + [new_node(f"{eid}#{k}") for k in range(1, el.n_segments)] + [n_out]
                for k, n in enumerate(nodes):
                    cap[n] += c_seg / 2.0 if k in (0, len(nodes) - 1) else c_seg
                first = len(ind_a)
                for k in range(el.n_segments):
                    ind_a.append(nodes[k])
                    ind_b.append(nodes[k + 1])
                    ind_L.append(dx / (G * el.area))
                    ind_R.append(el.friction_factor * dx / (2.0 * G * el.diameter * el.area**2))
                pipe_branches[eid] = (first, len(ind_a))
                pipe_nodes[eid] = nodes
                pipe_half_c[eid] = c_seg / 2.0
            elif isinstance(el, SurgeTank):
                nj = junction_node[port_owner[(eid, "port")]]
                if el.throttle_loss > 0:
                    nt = new_node(f"{eid}#tank")
                    cap[nt] += el.cross_section
                    alg.append(_AlgBranch("throttle", eid, nj, nt))
                    tank_node[eid] = nt
                else:
                    cap[nj] += el.cross_section
                    tank_node[eid] = nj
            elif isinstance(el, Valve):
                na = junction_node[port_owner[(eid, "in")]]
                if el.outlet_head is not None:
                    nb = new_node(f"{eid}#outlet")
                    fixed[nb] = el.outlet_head
                else:
                    nb = junction_node[port_owner[(eid, "out")]]
                alg.append(_AlgBranch("valve", eid, na, nb))
            elif isinstance(el, MachineNode):
                na = junction_node[port_owner[(eid, "in")]]
                nb = junction_node[port_owner[(eid, "out")]]
                alg.append(_AlgBranch("machine", eid, na, nb))

        n_nodes = len(node_names)
        for n in range(n_nodes):
            if n not in fixed and cap[n] <= 0.0:
                raise NetworkError(
                    f"node {node_names[n]} has neither storage nor fixed head; "
                    "attach a pipe, surge tank or reservoir"
                )
        self._check_connected(n_nodes, list(zip(ind_a, ind_b)) + [(b.a, b.b) for b in alg], fixed)

        self.node_names = node_names
        self.n_nodes = n_nodes
        self.fixed_mask = np.zeros(n_nodes, dtype=bool)
        self.fixed_mask[list(fixed)] = True
        self.fixed_heads = np.zeros(n_nodes)
        for n, h in fixed.items():
            self.fixed_heads[n] = h
        self._fixed_reservoirs = fixed_elev
        self.capacitance = np.array(cap)
        self.dyn_nodes = np.flatnonzero(~self.fixed_mask)
        self.dyn_index = -np.ones(n_nodes, dtype=int)
        self.dyn_index[self.dyn_nodes] = np.arange(self.dyn_nodes.size)
        self.ind_a = np.array(ind_a, dtype=int)
        self.ind_b = np.array(ind_b, dtype=int)
        self.ind_L = np.array(ind_L)
        self.ind_R = np.array(ind_R)
        self.alg = alg
        self.alg_a = np.array([b.a for b in alg], dtype=int)
        self.alg_b = np.array([b.b for b in alg], dtype=int)
        self.junction_node = junction_node
        self.pipe_branches = pipe_branches
        self.pipe_nodes = pipe_nodes
        self.pipe_half_c = pipe_half_c
        self.tank_node = tank_node
        self.machine_ids = [b.element for b in alg if b.kind == "machine"]

    @staticmethod
    def _check_connected(n_nodes: int, edges: list[tuple[int, int]], fixed: Mapping[int, float]) -> None:
        parent = list(range(n_nodes))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in edges:
            parent[find(a)] = find(b)
        roots = {find(i) for i in range(n_nodes) if not i >= n_nodes}
        if len(roots) > 1:
            raise NetworkError("network is not connected")
        if not fixed:
            raise NetworkError("network needs at least one reservoir or free outlet")

    # ------------------------------------------------------------------ helpers
    @property
    def n_dynamic(self) -> int:
        return int(self.dyn_nodes.size)

    @property
    def n_branches(self) -> int:
        return int(self.ind_a.size)

    @property
    def n_states(self) -> int:
        return self.n_dynamic + self.n_branches

    def with_head_condition(self, condition: str) -> "HydraulicNetwork":
        """Copy whose reservoirs sit at their ``min`` or ``max`` elevation."""
        if condition not in ("min", "max"):
            raise ValueError("head condition must be 'min' or 'max'")
        clone = object.__new__(HydraulicNetwork)
        clone.__dict__.update(self.__dict__)
        clone.fixed_heads = self.fixed_heads.copy()
        for n, res in self._fixed_reservoirs.items():
            clone.fixed_heads[n] = res.level(condition)
        return clone

    def check_discretisation(self, dt: float) -> None:
        for el in self.elements.values():
            if isinstance(el, Pipe) and el.segment_travel_time < dt * (1.0 - 1e-9):
                raise NetworkError(
                    f"pipe {el.id}: segment travel time {el.segment_travel_time:.4g} s is shorter "
                    f"than the solver step {dt} s; reduce n_segments"
                )

    def full_heads(self, x: np.ndarray) -> np.ndarray:
        h = self.fixed_heads.copy()
        h[self.dyn_nodes] = x[: self.n_dynamic]
        return h


@dataclass(frozen=True)
class HydraulicState:
    """Snapshot of the network: node heads, segment discharges and algebraic branch flows."""

    t: float
    heads: np.ndarray
    discharges: np.ndarray
    branch_flows: np.ndarray
    head_rates: np.ndarray
    network: HydraulicNetwork = field(repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.heads, self.discharges, self.branch_flows, self.head_rates):
            arr.setflags(write=False)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.heads[self.network.dyn_nodes], self.discharges])

    def head(self, ref: str) -> float:
        """Piezometric head at a junction id, ``element.port`` reference or surge tank id."""
        net = self.network
        if ref in net.junction_node:
            return float(self.heads[net.junction_node[ref]])
        if ref in net.tank_node:
            return float(self.heads[net.tank_node[ref]])
        eid, _, port = ref.partition(".")
        el = net.elements[eid]
        port = port or el.ports[0]
        return float(self.heads[net.junction_node[net._port_junction[(eid, port)]]])

    def tank_level(self, tank_id: str) -> float:
        return float(self.heads[self.network.tank_node[tank_id]])

    def machine_flow(self, machine_id: str) -> float:
        for k, b in enumerate(self.network.alg):
            if b.kind == "machine" and b.element == machine_id:
                return float(self.branch_flows[k])
        raise KeyError(machine_id)

    def machine_head(self, machine_id: str) -> float:
        for b in self.network.alg:
            if b.kind == "machine" and b.element == machine_id:
                return float(self.heads[b.a] - self.heads[b.b])
        raise KeyError(machine_id)

    def pipe_discharge(self, pipe_id: str) -> np.ndarray:
        lo, hi = self.network.pipe_branches[pipe_id]
        return self.discharges[lo:hi]

    def port_flow(self, eid: str, port: str) -> float:
        """Discharge from the junction into element ``eid`` through ``port``."""
        net = self.network
        el = net.elements[eid]
        node = net.junction_node[net._port_junction[(eid, port)]]
        if isinstance(el, Pipe):
            lo, hi = net.pipe_branches[eid]
            store = net.pipe_half_c[eid] * self.head_rates[node]
            return float(self.discharges[lo] + store) if port == "in" else float(-self.discharges[hi - 1] + store)
        if isinstance(el, SurgeTank):
            if el.throttle_loss > 0:
                for k, b in enumerate(net.alg):
                    if b.kind == "throttle" and b.element == eid:
                        return float(self.branch_flows[k])
            return float(el.cross_section * self.head_rates[node])
        if isinstance(el, (Valve, MachineNode)):
            for k, b in enumerate(net.alg):
                if b.element == eid:
                    return float(self.branch_flows[k]) if port == "in" else float(-self.branch_flows[k])
        if isinstance(el, Reservoir):
            others = sum(
                self.port_flow(e, p) for (e, p), j in net._port_junction.items()
                if net.junction_node[j] == node and e != eid
            )
            return -others
        raise KeyError(eid)

    def junction_imbalance(self) -> dict[str, float]:
        """Signed discharge sum per junction (zero up to solver tolerance)."""
        net = self.network
        out: dict[str, float] = {}
        for jid, ports in net.junctions.items():
            total = 0.0
            for ref in ports:
                eid, _, port = ref.partition(".")
                total += self.port_flow(eid, port or net.elements[eid].ports[0])
            out[jid] = total
        return out


def _element_from_dict(kind: str, spec: Mapping) -> Element:
    spec = dict(spec)
    try:
        if kind == "reservoir":
            return Reservoir(**spec)
        if kind == "pipe":
            return Pipe(**spec)
        if kind == "surge_tank":
            return SurgeTank(**spec)
        if kind == "valve":
            return Valve(**spec)
        if kind == "machine":
            return MachineNode(**spec)
    except TypeError as exc:
        raise NetworkError(f"{kind} {spec.get('id', '?')}: {exc}") from None
    raise NetworkError(f"unknown element kind {kind!r}")


def build_network(config: Mapping) -> HydraulicNetwork:
    """Build a network from a plain mapping.

    ``config`` holds lists under ``reservoir``, ``pipe``, ``surge_tank``,
    ``valve`` and ``machine`` (each entry a mapping of field values) and a
    ``junction`` list of ``{"id": ..., "ports": ["pipe1.out", "tank"]}``.
    """
    elements: list[Element] = []
    for kind in ("reservoir", "pipe", "surge_tank", "valve", "machine"):
        for spec in config.get(kind, ()):
            elements.append(_element_from_dict(kind, spec))
    junctions: dict[str, list[str]] = {}
    for j in config.get("junction", ()):
        if j["id"] in junctions:
            raise NetworkError(f"duplicate junction id {j['id']!r}")
        junctions[j["id"]] = list(j["ports"])
    return HydraulicNetwork(elements, junctions)


# --------------------------------------------------------------------------- dynamics

BranchLaw = Callable[[np.ndarray, float], "tuple[np.ndarray, np.ndarray]"]


class TransientSolver:
    """Implicit trapezoidal integrator for a :class:`HydraulicNetwork`.

    ``branch_law(dh, t)`` must return the discharge of every algebraic branch
    (valves, machines, throttles, in ``network.alg`` order) and its derivative
    with respect to the head difference across the branch.
    """

    def __init__(self, network: HydraulicNetwork, dt: float, tol: float = 1e-10, max_iter: int = 12):
        if not dt > 0:
            raise ValueError("dt must be positive")
        network.check_discretisation(dt)
        self.net = network
        self.dt = dt
        self.tol = tol
        self.max_iter = max_iter
        nd, nb = network.n_dynamic, network.n_branches
        self.nd, self.nb = nd, nb
        self.inv_c = 1.0 / network.capacitance[network.dyn_nodes]
        self.inv_L = 1.0 / network.ind_L
        # constant part of the jacobian
        J = np.zeros((nd + nb, nd + nb))
        di = network.dyn_index
        for k, (a, b) in enumerate(zip(network.ind_a, network.ind_b)):
            if di[a] >= 0:
                J[di[a], nd + k] -= self.inv_c[di[a]]
                J[nd + k, di[a]] += self.inv_L[k]
            if di[b] >= 0:
                J[di[b], nd + k] += self.inv_c[di[b]]
                J[nd + k, di[b]] -= self.inv_L[k]
        self.J_lin = J
        # incidence of segment discharges into dynamic node balances
        self.B = np.zeros((nd, nb))
        for k, (a, b) in enumerate(zip(network.ind_a, network.ind_b)):
            if di[a] >= 0:
                self.B[di[a], k] -= 1.0
            if di[b] >= 0:
                self.B[di[b], k] += 1.0
        na = len(network.alg)
        self.A_alg = np.zeros((nd, na))
        for k, br in enumerate(network.alg):
            if di[br.a] >= 0:
                self.A_alg[di[br.a], k] -= 1.0
            if di[br.b] >= 0:
                self.A_alg[di[br.b], k] += 1.0
        # jacobian stamps for algebraic branches: d(node balance)/d(head)
        rows, cols, sgn, br_idx = [], [], [], []
        for k, br in enumerate(network.alg):
            for node, s_node in ((br.a, -1.0), (br.b, 1.0)):
                if di[node] < 0:
                    continue
                for other, s_dh in ((br.a, 1.0), (br.b, -1.0)):
                    if di[other] < 0:
                        continue
                    rows.append(di[node])
                    cols.append(di[other])
                    sgn.append(s_node * s_dh * self.inv_c[di[node]])
                    br_idx.append(k)
        self._st_rows = np.array(rows, dtype=int)
        self._st_cols = np.array(cols, dtype=int)
        self._st_sgn = np.array(sgn)
        self._st_br = np.array(br_idx, dtype=int)
        self._qq = np.arange(nd, nd + nb)
        self._eye = np.eye(nd + nb)
        self.scale = np.concatenate([np.full(nd, 1.0), np.full(nb, 1.0)])

    def rates(self, x: np.ndarray, q_alg: np.ndarray) -> np.ndarray:
        net = self.net
        h = net.full_heads(x)
        q = x[self.nd:]
        dh_seg = h[net.ind_a] - h[net.ind_b]
        fq = self.inv_L * (dh_seg - net.ind_R * q * np.abs(q))
        fh = self.inv_c * (self.B @ q + self.A_alg @ q_alg)
        return np.concatenate([fh, fq])

    def alg_dh(self, x: np.ndarray) -> np.ndarray:
        h = self.net.full_heads(x)
        return h[self.net.alg_a] - h[self.net.alg_b]

    def advance(self, x0: np.ndarray, f0: np.ndarray, branch_law: BranchLaw, t1: float):
        """One implicit trapezoidal step; returns ``(x1, f1, q_alg1)``."""
        dt = self.dt
        x = x0 + dt * f0
        half = 0.5 * dt
        rhs0 = x0 + half * f0
        for it in range(self.max_iter):
            dh = self.alg_dh(x)
            q_alg, dq_alg = branch_law(dh, t1)
            f = self.rates(x, q_alg)
            g = x - rhs0 - half * f
            J = self.J_lin.copy()
            q = x[self.nd:]
            J[self._qq, self._qq] = -2.0 * self.net.ind_R * np.abs(q) * self.inv_L
            if self._st_rows.size:
                np.add.at(J, (self._st_rows, self._st_cols), self._st_sgn * dq_alg[self._st_br])
            delta = np.linalg.solve(self._eye - half * J, -g)
            x = x + delta
            if np.max(np.abs(delta)) < self.tol * (1.0 + np.max(np.abs(x))):
                break
        else:
            raise SimulationError("Newton iteration did not converge in the hydraulic step", t1)
        dh = self.alg_dh(x)
        q_alg, _ = branch_law(dh, t1)
        f = self.rates(x, q_alg)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(q_alg))):
            raise SimulationError("non-finite hydraulic state", t1)
        return x, f, q_alg


def default_branch_law(network: HydraulicNetwork, machines: Mapping[str, MachineSetpoint] | None = None,
                       valve_openings: Mapping[str, float | Callable[[float], float]] | None = None) -> BranchLaw:
    """Branch law with configured valve openings and machines as fixed flows or callables."""
    machines = dict(machines or {})
    valve_openings = dict(valve_openings or {})
    laws: list[Callable[[float, float], tuple[float, float]]] = []
    for br in network.alg:
        el = network.elements[br.element]
        if br.kind == "valve":
            op = valve_openings.get(el.id, el.opening)
            area = el.discharge_area
            if callable(op):
                laws.append(lambda dh, t, op=op, area=area: valve_flow(op(t), area, dh))
            else:
                laws.append(lambda dh, t, op=op, area=area: valve_flow(op, area, dh))
        elif br.kind == "throttle":
            laws.append(lambda dh, t, el=el: throttle_flow(el.throttle_loss, el.cross_section, dh))
        else:
            sp = machines.get(el.id, 0.0)
            if callable(sp):
                laws.append(lambda dh, t, sp=sp: sp(dh))
            else:
                laws.append(lambda dh, t, q=float(sp): (q, 0.0))

    def law(dh: np.ndarray, t: float):
        q = np.empty(len(laws))
        dq = np.empty(len(laws))
        for k, fn in enumerate(laws):
            q[k], dq[k] = fn(float(dh[k]), t)
        return q, dq

    return law


def _make_state(net: HydraulicNetwork, t: float, x: np.ndarray, f: np.ndarray, q_alg: np.ndarray) -> HydraulicState:
    rates = np.zeros(net.n_nodes)
    rates[net.dyn_nodes] = f[: net.n_dynamic]
    return HydraulicState(t, net.full_heads(x), x[net.n_dynamic:].copy(), np.asarray(q_alg, float).copy(), rates, net)


def steady_state(network: HydraulicNetwork, unit_setpoints: Mapping[str, MachineSetpoint] | None = None,
                 valve_openings: Mapping[str, float] | None = None, tol: float = 1e-10,
                 max_iter: int = 60) -> HydraulicState:
    """Stationary heads and discharges for fixed machine flows or flow laws.

    ``unit_setpoints`` maps machine id to either an imposed discharge (m3/s) or
    a callable ``dh -> (Q, dQ/dh)``. Residuals are driven below ``tol`` in
    per-unit (heads scaled by the largest fixed head, discharges by the
    largest branch flow, at least 1).
    """
    law = default_branch_law(network, unit_setpoints, valve_openings)
    solver = _StaticSolver(network)
    x = solver.initial_guess()
    h_ref = max(1.0, float(np.max(np.abs(network.fixed_heads))))
    for it in range(max_iter):
        r, J, q_alg = solver.residual(x, law)
        q_ref = max(1.0, float(np.max(np.abs(np.concatenate([x[network.n_dynamic:], q_alg]))))) if x.size else 1.0
        scaled = np.concatenate([r[: network.n_dynamic] / q_ref, r[network.n_dynamic:] / h_ref])
        if np.max(np.abs(scaled), initial=0.0) < tol:
            break
        try:
            delta = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        # damped Newton: limit head moves to a fraction of the head scale
        step = 1.0
        big = np.max(np.abs(delta[: network.n_dynamic]), initial=0.0)
        if big > 0.5 * h_ref:
            step = 0.5 * h_ref / big
        x = x + step * delta
    else:
        raise SimulationError(f"steady state did not converge (residual {np.max(np.abs(scaled)):.3e})")
    f = np.zeros_like(x)
    return _make_state(network, 0.0, x, f, q_alg)


class _StaticSolver:
    def __init__(self, net: HydraulicNetwork):
        self.net = net
        self.tr = TransientSolver.__new__(TransientSolver)
        # reuse the incidence assembly without the discretisation check
        TransientSolver.__init__(self.tr, net, dt=1e-9)

    def initial_guess(self) -> np.ndarray:
        net = self.net
        fixed = net.fixed_heads[net.fixed_mask]
        h0 = float(np.mean(fixed))
        return np.concatenate([np.full(net.n_dynamic, h0), np.zeros(net.n_branches)])

    def residual(self, x: np.ndarray, law: BranchLaw):
        """Flow balance (m3/s) per dynamic node and head balance (m) per segment."""
        net, tr = self.net, self.tr
        dh = tr.alg_dh(x)
        q_alg, dq_alg = law(dh, 0.0)
        h = net.full_heads(x)
        q = x[tr.nd:]
        r_node = tr.B @ q + tr.A_alg @ q_alg
        r_seg = h[net.ind_a] - h[net.ind_b] - net.ind_R * q * np.abs(q)
        # jacobian = diag(C, L) @ J_lin-style stamps
        nd, nb = tr.nd, tr.nb
        J = np.zeros((nd + nb, nd + nb))
        J[:nd, nd:] = tr.B
        J[nd:, :nd] = (tr.J_lin[nd:, :nd] * net.ind_L[:, None])
        J[nd + np.arange(nb), nd + np.arange(nb)] = -2.0 * net.ind_R * np.abs(q)
        if tr._st_rows.size:
            cvec = net.capacitance[net.dyn_nodes]
            np.add.at(J, (tr._st_rows, tr._st_cols), tr._st_sgn * cvec[tr._st_rows] * dq_alg[tr._st_br])
        # a lossless, flowless segment leaves its row singular in q; regularise
        diag = J[nd + np.arange(nb), nd + np.arange(nb)]
        J[nd + np.arange(nb), nd + np.arange(nb)] = np.where(np.abs(diag) < 1e-12, -1e-12, diag)
        return np.concatenate([r_node, r_seg]), J, q_alg


_solver_cache: dict[tuple[int, float], TransientSolver] = {}


def step(network: HydraulicNetwork, state: HydraulicState, dt: float,
         unit_setpoints: Mapping[str, MachineSetpoint] | None = None,
         valve_openings: Mapping[str, float | Callable[[float], float]] | None = None) -> HydraulicState:
    """Advance ``state`` by ``dt`` with given machine flow laws and valve openings."""
    key = (id(network), dt)
    solver = _solver_cache.get(key)
    if solver is None or solver.net is not network:
        solver = TransientSolver(network, dt)
        _solver_cache[key] = solver
    law = default_branch_law(network, unit_setpoints, valve_openings)
    x0 = state.x
    q_alg0, _ = law(solver.alg_dh(x0), state.t)
    f0 = solver.rates(x0, q_alg0)
    t1 = state.t + dt
    x1, f1, q1 = solver.advance(x0, f0, law, t1)
    new = _make_state(network, t1, x1, f1, q1)
    check_tanks(network, new)
    return new


def check_tanks(network: HydraulicNetwork, state: HydraulicState) -> None:
    for eid, node in network.tank_node.items():
        tank = network.elements[eid]
        level = state.heads[node]
        if not tank.lowest_level <= level <= tank.max_level:
            raise SimulationError(
                f"surge tank {eid} level {level:.2f} m outside [{tank.lowest_level}, {tank.max_level}]", state.t
            )


def simulate(network: HydraulicNetwork, state: HydraulicState, dt: float, duration: float,
             unit_setpoints: Mapping[str, MachineSetpoint] | None = None,
             valve_openings: Mapping[str, float | Callable[[float], float]] | None = None,
             record: Callable[[HydraulicState], object] | None = None) -> list:
    """Repeated :func:`step`; returns ``record(state)`` for every step including the start."""
    record = record or (lambda s: s)
    solver = TransientSolver(network, dt)
    law = default_branch_law(network, unit_setpoints, valve_openings)
    x = state.x
    q_alg, _ = law(solver.alg_dh(x), state.t)
    f = solver.rates(x, q_alg)
    out = [record(state)]
    n = int(round(duration / dt))
    t = state.t
    for k in range(1, n + 1):
        t1 = state.t + k * dt
        x, f, q_alg = solver.advance(x, f, law, t1)
        s = _make_state(network, t1, x, f, q_alg)
        check_tanks(network, s)
        out.append(record(s))
    return out
