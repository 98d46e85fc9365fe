"""Instance and solution data model for CVSAP.

Node ids are dense nonnegative integers.  An :class:`Instance` couples a
directed capacitated network with a request (root, Steiner sites, terminals).
The extended graph adds a super source ``o+`` and two super sinks ``o-S``
(absorption) and ``o-r`` (root sink); all flow-based modules work on it.
All objects in this module are immutable after construction and all
operations are pure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


class Orientation(str, enum.Enum):
    AGGREGATION = "aggregation"
    MULTICAST = "multicast"


class CvsapError(Exception):
    """Base error for this package."""


class InvalidInstanceError(CvsapError):
    """Raised when an operation requires a valid instance and got none."""


@dataclass(frozen=True)
class Network:
    """Directed capacitated network with positive edge costs.

    ``edges[i]`` is the (tail, head) pair of edge i; ``edge_cost`` and
    ``edge_capacity`` are parallel to it.  Edge ids are positions.
    """

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    edge_cost: tuple[float, ...]
    edge_capacity: tuple[int, ...]

    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: i for i, e in enumerate(self.edges)}

    def out_edges(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, (u, _) in enumerate(self.edges):
            out[u].append(i)
        return out


@dataclass(frozen=True)
class Request:
    root: int
    steiner_sites: frozenset[int]
    terminals: frozenset[int]
    root_capacity: int
    site_cost: Mapping[int, float]
    site_capacity: Mapping[int, int]
    orientation: Orientation = Orientation.AGGREGATION


@dataclass(frozen=True)
class Instance:
    network: Network
    request: Request


@dataclass(frozen=True)
class Path:
    """A walk given by its vertex sequence; simplicity is not implied."""

    vertices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.vertices)

    def arcs(self) -> list[tuple[int, int]]:
        v = self.vertices
        return [(v[i], v[i + 1]) for i in range(len(v) - 1)]


@dataclass(frozen=True)
class VirtualArborescence:
    """Arborescence over root/terminals/active sites with path-mapped edges."""

    nodes: frozenset[int]
    virtual_edges: frozenset[tuple[int, int]]
    root: int
    edge_paths: Mapping[tuple[int, int], Path]

    def active_sites(self, inst: Instance) -> set[int]:
        return set(self.nodes) & set(inst.request.steiner_sites)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str

    def __str__(self) -> str:  # pragma: no cover - convenience
        return f"{self.code}: {self.detail}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}


def validate_instance(inst: Instance) -> ValidationReport:
    """Check all Network/Request invariants; returns the list of violations.

    Edge costs may be zero only because the collocation gadget introduces
    zero-cost pendant edges; negative costs are always rejected.
    """
    net, req = inst.network, inst.request
    v: list[Violation] = []
    n = net.num_nodes
    if n <= 0:
        v.append(Violation("empty-network", "num_nodes must be positive"))
    if not (len(net.edges) == len(net.edge_cost) == len(net.edge_capacity)):
        v.append(Violation("ragged-edges", "edge arrays have different lengths"))
        return ValidationReport(tuple(v))
    seen: set[tuple[int, int]] = set()
    for i, (tail, head) in enumerate(net.edges):
        if tail == head:
            v.append(Violation("self-loop", f"edge {i} = ({tail},{head})"))
        if not (0 <= tail < n) or not (0 <= head < n):
            v.append(Violation("undeclared-node", f"edge {i} endpoint outside 0..{n - 1}"))
        if (tail, head) in seen:
            v.append(Violation("duplicate-edge", f"edge ({tail},{head})"))
        seen.add((tail, head))
        if net.edge_cost[i] < 0:
            v.append(Violation("cost < 0", f"edge {i} cost {net.edge_cost[i]}"))
        if net.edge_capacity[i] < 1:
            v.append(Violation("capacity < 1", f"edge {i} capacity {net.edge_capacity[i]}"))
    if not (0 <= req.root < n):
        v.append(Violation("undeclared-node", f"root {req.root}"))
    if req.root in req.terminals:
        v.append(Violation("root in terminals", f"root {req.root}"))
    if req.root in req.steiner_sites:
        v.append(Violation("root in sites", f"root {req.root}"))
    overlap = req.steiner_sites & req.terminals
    if overlap:
        v.append(Violation("site-terminal overlap", f"nodes {sorted(overlap)}"))
    if not req.terminals:
        v.append(Violation("no terminals", "T must be nonempty"))
    for t in req.terminals:
        if not (0 <= t < n):
            v.append(Violation("undeclared-node", f"terminal {t}"))
    for s in req.steiner_sites:
        if not (0 <= s < n):
            v.append(Violation("undeclared-node", f"site {s}"))
        if s not in req.site_cost or req.site_cost[s] <= 0:
            v.append(Violation("site cost <= 0", f"site {s}"))
        if s not in req.site_capacity or req.site_capacity[s] < 1:
            v.append(Violation("site capacity < 1", f"site {s}"))
    if req.root_capacity < 1:
        v.append(Violation("root capacity < 1", f"u_r = {req.root_capacity}"))
    return ValidationReport(tuple(v))


# Edge class tags in an ExtendedGraph.
EDGE_ORIGINAL = "original"
EDGE_ROOT_SINK = "root-sink"
EDGE_SITE_SINK = "site-sink"
EDGE_SITE_SOURCE = "site-source"
EDGE_TERMINAL_SOURCE = "terminal-source"


@dataclass(frozen=True)
class ExtendedGraph:
    """Instance graph plus super source and the two super sinks.

    Extended edge ids extend the network's edge ids: original edges first in
    input order, then (r, o-r), then site->o-S, o+->site, o+->terminal, the
    last three in ascending site/terminal id order.
    """

    instance: Instance
    super_source: int
    steiner_sink: int
    root_sink: int
    edges: tuple[tuple[int, int], ...]
    edge_kind: tuple[str, ...]
    sites: tuple[int, ...]       # ascending
    terminals: tuple[int, ...]   # ascending
    out_edges: tuple[tuple[int, ...], ...] = field(repr=False)
    in_edges: tuple[tuple[int, ...], ...] = field(repr=False)
    _index: Mapping[tuple[int, int], int] = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.instance.network.num_nodes + 3

    @property
    def num_original_edges(self) -> int:
        return len(self.instance.network.edges)

    def edge_id(self, tail: int, head: int) -> int:
        return self._index[(tail, head)]

    def is_restricted(self, eid: int) -> bool:
        """Membership in E^R: every extended edge except the site sink ones."""
        return self.edge_kind[eid] != EDGE_SITE_SINK

    def site_sink_edge(self, s: int) -> int:
        return self._index[(s, self.steiner_sink)]

    def source_edge(self, v: int) -> int:
        return self._index[(self.super_source, v)]

    def root_sink_edge(self) -> int:
        return self._index[(self.instance.request.root, self.root_sink)]

    def edge_costs(self) -> list[float]:
        """Cost per extended edge; edges to and from the super nodes are free."""
        costs = list(self.instance.network.edge_cost)
        costs.extend(0.0 for _ in range(len(self.edges) - len(costs)))
        return costs


def build_extended_graph(inst: Instance) -> ExtendedGraph:
    """Construct the extended graph for an aggregation instance.

    Multicast callers must reverse the instance first.  Edge ordering is
    deterministic, see :class:`ExtendedGraph`.
    """
    report = validate_instance(inst)
    if not report.ok:
        raise InvalidInstanceError("; ".join(str(x) for x in report.violations))
    if inst.request.orientation is not Orientation.AGGREGATION:
        raise InvalidInstanceError("extended graph requires aggregation orientation")
    net, req = inst.network, inst.request
    n = net.num_nodes
    o_plus, o_minus_s, o_minus_r = n, n + 1, n + 2
    sites = tuple(sorted(req.steiner_sites))
    terminals = tuple(sorted(req.terminals))
    edges: list[tuple[int, int]] = list(net.edges)
    kinds: list[str] = [EDGE_ORIGINAL] * len(net.edges)
    edges.append((req.root, o_minus_r))
    kinds.append(EDGE_ROOT_SINK)
    for s in sites:
        edges.append((s, o_minus_s))
        kinds.append(EDGE_SITE_SINK)
    for s in sites:
        edges.append((o_plus, s))
        kinds.append(EDGE_SITE_SOURCE)
    for t in terminals:
        edges.append((o_plus, t))
        kinds.append(EDGE_TERMINAL_SOURCE)
    out: list[list[int]] = [[] for _ in range(n + 3)]
    incoming: list[list[int]] = [[] for _ in range(n + 3)]
    for i, (u, w) in enumerate(edges):
        out[u].append(i)
        incoming[w].append(i)
    return ExtendedGraph(
        instance=inst,
        super_source=o_plus,
        steiner_sink=o_minus_s,
        root_sink=o_minus_r,
        edges=tuple(edges),
        edge_kind=tuple(kinds),
        sites=sites,
        terminals=terminals,
        out_edges=tuple(tuple(x) for x in out),
        in_edges=tuple(tuple(x) for x in incoming),
        _index={e: i for i, e in enumerate(edges)},
    )


def _arborescence_failures(va: VirtualArborescence, toward_root: bool) -> list[Violation]:
    fails: list[Violation] = []
    if va.root not in va.nodes:
        fails.append(Violation("VA-1", f"root {va.root} not in node set"))
    succ: dict[int, int] = {}
    outdeg: dict[int, int] = {v: 0 for v in va.nodes}
    for (u, w) in va.virtual_edges:
        a, b = (u, w) if toward_root else (w, u)
        # a is the node whose unique "toward root" edge this must be
        if u not in va.nodes or w not in va.nodes:
            fails.append(Violation("VA-1", f"virtual edge ({u},{w}) leaves the node set"))
            continue
        outdeg[a] = outdeg.get(a, 0) + 1
        succ[a] = b
    for v in sorted(va.nodes):
        want = 0 if v == va.root else 1
        if outdeg.get(v, 0) != want:
            fails.append(
                Violation("VA-1", f"node {v} has {outdeg.get(v, 0)} rootward edges, expected {want}")
            )
    if fails:
        return fails
    # Out-degree exactly one everywhere but the root: acyclic iff every chain
    # reaches the root.
    state: dict[int, int] = {}
    for v in sorted(va.nodes):
        chain = []
        w = v
        while state.get(w, 0) == 0 and w != va.root:
            state[w] = 1
            chain.append(w)
            if w not in succ:
                break
            w = succ[w]
        if state.get(w, 0) == 1 and w != va.root:
            fails.append(Violation("VA-1", f"cycle through node {w}"))
            for c in chain:
                state[c] = 2
            break
        for c in chain:
            state[c] = 2
    return fails


@dataclass(frozen=True)
class VaReport:
    violations: tuple[Violation, ...]

    @property
    def feasible(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}


def check_va(inst: Instance, va: VirtualArborescence) -> VaReport:
    """Check VA-1/VA-2 structure and the five CVSAP feasibility conditions."""
    net, req = inst.network, inst.request
    toward_root = req.orientation is Orientation.AGGREGATION
    fails: list[Violation] = []
    fails.extend(_arborescence_failures(va, toward_root))

    edge_ids = net.edge_index()
    for (u, w) in sorted(va.virtual_edges):
        path = va.edge_paths.get((u, w))
        if path is None:
            fails.append(Violation("VA-2", f"virtual edge ({u},{w}) has no mapped path"))
            continue
        verts = path.vertices
        if len(verts) < 2 or verts[0] != u or verts[-1] != w:
            fails.append(Violation("VA-2", f"path for ({u},{w}) has wrong endpoints"))
            continue
        if len(set(verts)) != len(verts):
            fails.append(Violation("VA-2", f"path for ({u},{w}) is not simple"))
        for (a, b) in path.arcs():
            if (a, b) not in edge_ids:
                fails.append(Violation("VA-2", f"path for ({u},{w}) uses missing edge ({a},{b})"))

    allowed = {req.root} | req.steiner_sites | req.terminals
    if not ({req.root} | req.terminals) <= va.nodes:
        missing = sorted(({req.root} | req.terminals) - va.nodes)
        fails.append(Violation("CVSAP-1", f"missing required nodes {missing}"))
    extra = sorted(va.nodes - allowed)
    if extra:
        fails.append(Violation("CVSAP-1", f"non-site nodes {extra} in arborescence"))

    deg: dict[int, int] = {v: 0 for v in va.nodes}
    for (u, w) in va.virtual_edges:
        deg[u] = deg.get(u, 0) + 1
        deg[w] = deg.get(w, 0) + 1
    for t in sorted(req.terminals):
        if deg.get(t, 0) != 1:
            fails.append(Violation("CVSAP-2", f"terminal {t} has degree {deg.get(t, 0)}"))
    if deg.get(req.root, 0) > req.root_capacity:
        fails.append(
            Violation("CVSAP-3", f"root degree {deg.get(req.root, 0)} > {req.root_capacity}")
        )
    for s in sorted(req.steiner_sites & va.nodes):
        cap = req.site_capacity[s] + 1
        if deg.get(s, 0) > cap:
            fails.append(Violation("CVSAP-4", f"site {s} degree {deg.get(s, 0)} > {cap}"))

    usage = path_edge_usage(va, edge_ids)
    for eid, count in enumerate(usage):
        if count > net.edge_capacity[eid]:
            u, w = net.edges[eid]
            fails.append(
                Violation("CVSAP-5", f"edge ({u},{w}) used {count} > {net.edge_capacity[eid]}")
            )
    return VaReport(tuple(fails))


def path_edge_usage(
    va: VirtualArborescence, edge_ids: Mapping[tuple[int, int], int] | None = None
) -> list[int]:
    """Multiplicity of every network edge over the mapped paths."""
    if edge_ids is None:
        # derive the edge universe from the paths themselves
        edge_ids = {}
        for p in va.edge_paths.values():
            for a in p.arcs():
                edge_ids.setdefault(a, len(edge_ids))
    usage = [0] * (max(edge_ids.values()) + 1 if edge_ids else 0)
    for key in sorted(va.virtual_edges):
        p = va.edge_paths.get(key)
        if p is None:
            continue
        for a in p.arcs():
            if a in edge_ids:
                usage[edge_ids[a]] += 1
    return usage


def cost_cvsap(inst: Instance, va: VirtualArborescence) -> float:
    """Edge usage cost plus activation cost of the sites in the arborescence."""
    report = check_va(inst, va)
    if not report.feasible:
        raise CvsapError(
            "cost_cvsap requires a feasible arborescence: "
            + "; ".join(str(x) for x in report.violations)
        )
    net = inst.network
    edge_ids = net.edge_index()
    usage = path_edge_usage(va, edge_ids)
    total = 0.0
    for eid, count in enumerate(usage):
        total += net.edge_cost[eid] * count
    for s in sorted(va.nodes & inst.request.steiner_sites):
        total += inst.request.site_cost[s]
    return total


def reverse_instance(inst: Instance) -> Instance:
    """Flip every edge and toggle the orientation; an involution."""
    net, req = inst.network, inst.request
    flipped = Network(
        num_nodes=net.num_nodes,
        edges=tuple((h, t) for (t, h) in net.edges),
        edge_cost=net.edge_cost,
        edge_capacity=net.edge_capacity,
    )
    other = (
        Orientation.MULTICAST
        if req.orientation is Orientation.AGGREGATION
        else Orientation.AGGREGATION
    )
    return Instance(flipped, Request(
        root=req.root,
        steiner_sites=req.steiner_sites,
        terminals=req.terminals,
        root_capacity=req.root_capacity,
        site_cost=req.site_cost,
        site_capacity=req.site_capacity,
        orientation=other,
    ))


def reverse_va(va: VirtualArborescence) -> VirtualArborescence:
    """Map an arborescence of the reversed instance back to the original."""
    edges = frozenset((w, u) for (u, w) in va.virtual_edges)
    paths = {
        (w, u): Path(tuple(reversed(p.vertices))) for (u, w), p in va.edge_paths.items()
    }
    return VirtualArborescence(va.nodes, edges, va.root, paths)


def add_collocated_terminal(inst: Instance, node: int) -> Instance:
    """Attach a pendant terminal to ``node`` so a site can also host a demand.

    The pendant is joined by a capacity-1, zero-cost edge oriented so the new
    terminal can participate (toward ``node`` under aggregation, away under
    multicast).  Returns a new instance with one extra node.
    """
    net, req = inst.network, inst.request
    if node in req.terminals:
        raise CvsapError(f"node {node} is already a terminal")
    pendant = net.num_nodes
    arc = (pendant, node) if req.orientation is Orientation.AGGREGATION else (node, pendant)
    new_net = Network(
        num_nodes=net.num_nodes + 1,
        edges=net.edges + (arc,),
        edge_cost=net.edge_cost + (0.0,),
        edge_capacity=net.edge_capacity + (1,),
    )
    new_req = Request(
        root=req.root,
        steiner_sites=req.steiner_sites,
        terminals=req.terminals | {pendant},
        root_capacity=req.root_capacity,
        site_cost=req.site_cost,
        site_capacity=req.site_capacity,
        orientation=req.orientation,
    )
    return Instance(new_net, new_req)


def set_cover_reduction(universe: Iterable, family: Sequence[Iterable], k: int) -> Instance:
    """CVSAP feasibility instance that is solvable iff a <=k set cover exists.

    One terminal per element, one Steiner site per family set, an edge from a
    terminal to every site whose set contains it, an edge from every site to
    the root.  Root capacity k, site capacity |U|, all edge capacities and
    costs 1, site costs 1.
    """
    elements = sorted(set(universe))
    if not elements:
        raise CvsapError("empty universe")
    if k < 1:
        raise CvsapError("k must be >= 1")
    sets = [frozenset(fs) for fs in family]
    # terminals 0..|U|-1, sites |U|..|U|+|F|-1, root last
    t_of = {u: i for i, u in enumerate(elements)}
    base = len(elements)
    root = base + len(sets)
    edges: list[tuple[int, int]] = []
    for j, fs in enumerate(sets):
        for u in elements:
            if u in fs:
                edges.append((t_of[u], base + j))
    for j in range(len(sets)):
        edges.append((base + j, root))
    net = Network(
        num_nodes=root + 1,
        edges=tuple(edges),
        edge_cost=tuple(1.0 for _ in edges),
        edge_capacity=tuple(1 for _ in edges),
    )
    req = Request(
        root=root,
        steiner_sites=frozenset(range(base, base + len(sets))),
        terminals=frozenset(range(base)),
        root_capacity=k,
        site_cost={base + j: 1.0 for j in range(len(sets))},
        site_capacity={base + j: len(elements) for j in range(len(sets))},
        orientation=Orientation.AGGREGATION,
    )
    return Instance(net, req)


def flow_subgraph(ext: ExtendedGraph, f: Sequence[float], threshold: float = 1.0) -> set[int]:
    """Edge ids carrying at least one unit of flow (or ``threshold`` for
    fractional callers)."""
    if len(f) != len(ext.edges):
        raise CvsapError("flow vector length does not match the extended edge set")
    return {i for i, v in enumerate(f) if v >= threshold}


def paths_using_edge(paths: Iterable[Path], e: tuple[int, int]) -> int:
    """Number of paths whose arc sequence contains ``e`` (with multiplicity)."""
    count = 0
    for p in paths:
        if e in p.arcs():
            count += 1
    return count


def reachable(start: int, out_edges: Sequence[Sequence[int]], edges: Sequence[tuple[int, int]],
              alive: Sequence[bool]) -> set[int]:
    """Nodes reachable from ``start`` over edges whose ``alive`` flag is set."""
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for eid in out_edges[v]:
            if not alive[eid]:
                continue
            w = edges[eid][1]
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen
