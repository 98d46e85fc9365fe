"""Multi-commodity baseline formulation.

One aggregated integer commodity carries all terminal flow; every Steiner
site gets its own binary commodity that must leave the site when activated.
Cycles among site connections are excluded by priority variables
(Miller-Tucker-Zemlin style); three optional families of valid inequalities
tighten the relaxation and are on by default.  The model is completely
static, so the branch-and-cut engine runs it with separation disabled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import lp
from .core import (
    CvsapError,
    Instance,
    Orientation,
    Path,
    VirtualArborescence,
    validate_instance,
)


@dataclass(frozen=True)
class McfExtendedGraph:
    """Instance edges plus a single super sink fed by the root and sites."""

    instance: Instance
    super_sink: int
    edges: tuple[tuple[int, int], ...]   # original edges, (r, o-), then S x {o-}
    _index: Mapping[tuple[int, int], int] = field(repr=False)

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(sorted(self.instance.request.steiner_sites))

    def edge_id(self, tail: int, head: int) -> int:
        return self._index[(tail, head)]

    def sink_edge(self, v: int) -> int:
        return self._index[(v, self.super_sink)]


def build_mcf_graph(inst: Instance) -> McfExtendedGraph:
    report = validate_instance(inst)
    if not report.ok:
        raise CvsapError("; ".join(str(v) for v in report.violations))
    if inst.request.orientation is not Orientation.AGGREGATION:
        raise CvsapError("the baseline model requires aggregation orientation")
    n = inst.network.num_nodes
    edges = list(inst.network.edges)
    edges.append((inst.request.root, n))
    for s in sorted(inst.request.steiner_sites):
        edges.append((s, n))
    return McfExtendedGraph(inst, n, tuple(edges), {e: i for i, e in enumerate(edges)})


@dataclass(frozen=True)
class McfSolution:
    x: Mapping[int, int]
    fT: np.ndarray                       # per extended edge
    fs: Mapping[int, np.ndarray]         # site -> per extended edge (binary)
    p: Mapping[int, float]


@dataclass
class McfModel:
    graph: McfExtendedGraph
    starred: bool = True
    problem: lp.LpProblem = field(default_factory=lp.LpProblem)
    _ft0: int = 0
    _fs0: dict[int, int] = field(default_factory=dict)
    _x0: dict[int, int] = field(default_factory=dict)
    _p0: dict[int, int] = field(default_factory=dict)

    def ft_var(self, eid: int) -> int:
        return self._ft0 + eid

    def fs_var(self, site: int, eid: int) -> int:
        return self._fs0[site] + eid

    def x_var(self, site: int) -> int:
        return self._x0[site]

    def p_var(self, site: int) -> int:
        return self._p0[site]

    def integer_vars(self) -> list[int]:
        out = list(range(self._ft0, self._ft0 + len(self.graph.edges)))
        for s in self.graph.sites:
            out.extend(range(self._fs0[s], self._fs0[s] + len(self.graph.edges)))
        out.extend(self._x0[s] for s in self.graph.sites)
        return out

    def branch_groups(self) -> list[list[int]]:
        xs = [self._x0[s] for s in self.graph.sites]
        flows = [j for j in self.integer_vars() if j not in set(xs)]
        return [xs, flows]

    def solution(self, x_vec: np.ndarray) -> McfSolution:
        g = self.graph
        ne = len(g.edges)
        fT = np.rint(x_vec[self._ft0:self._ft0 + ne]).astype(np.int64)
        fs = {s: np.rint(x_vec[self._fs0[s]:self._fs0[s] + ne]).astype(np.int64)
              for s in g.sites}
        x = {s: int(round(x_vec[self._x0[s]])) for s in g.sites}
        p = {s: float(x_vec[self._p0[s]]) for s in g.sites}
        return McfSolution(x, fT, fs, p)


def build_mcf(inst: Instance, starred: bool = True) -> McfModel:
    g = build_mcf_graph(inst)
    model = McfModel(graph=g, starred=starred)
    prob = model.problem
    net = inst.network
    req = inst.request
    sites = g.sites
    num_e = len(g.edges)
    num_orig = len(net.edges)

    def edge_bound(eid: int) -> float:
        u, w = g.edges[eid]
        if eid < num_orig:
            return float(net.edge_capacity[eid])
        if u == req.root:
            return float(req.root_capacity)
        return float(req.site_capacity[u])

    model._ft0 = 0
    for eid in range(num_e):
        cost = net.edge_cost[eid] if eid < num_orig else 0.0
        prob.add_variable(0.0, edge_bound(eid), cost, name=f"FT{eid:05d}")
    for s in sites:
        model._fs0[s] = prob.num_vars
        for eid in range(num_e):
            cost = net.edge_cost[eid] if eid < num_orig else 0.0
            prob.add_variable(0.0, 1.0, cost, name=f"FS{s:04d}_{eid:05d}")
    for s in sites:
        model._x0[s] = prob.add_variable(0.0, 1.0, req.site_cost[s], name=f"X{s:05d}")
    for s in sites:
        model._p0[s] = prob.add_variable(0.0, max(len(sites) - 1, 0), 0.0,
                                         name=f"P{s:05d}")

    out_ids: list[list[int]] = [[] for _ in range(net.num_nodes)]
    in_ids: list[list[int]] = [[] for _ in range(net.num_nodes)]
    for eid, (u, w) in enumerate(g.edges):
        if u < net.num_nodes:
            out_ids[u].append(eid)
        if w < net.num_nodes:
            in_ids[w].append(eid)

    # terminal commodity conservation, supply 1 at each terminal
    for v in range(net.num_nodes):
        coeffs: dict[int, float] = {}
        for eid in out_ids[v]:
            coeffs[model.ft_var(eid)] = coeffs.get(model.ft_var(eid), 0.0) + 1.0
        for eid in in_ids[v]:
            coeffs[model.ft_var(eid)] = coeffs.get(model.ft_var(eid), 0.0) - 1.0
        rhs = 1.0 if v in req.terminals else 0.0
        prob.add_row(coeffs, lp.EQ, rhs, name=f"consT_v{v}")

    # per-site commodity conservation with supply x_s at the site
    for s in sites:
        for v in range(net.num_nodes):
            coeffs = {}
            for eid in out_ids[v]:
                coeffs[model.fs_var(s, eid)] = 1.0
            for eid in in_ids[v]:
                coeffs[model.fs_var(s, eid)] = coeffs.get(model.fs_var(s, eid), 0.0) - 1.0
            if v == s:
                coeffs[model.x_var(s)] = -1.0
            prob.add_row(coeffs, lp.EQ, 0.0, name=f"consS{s}_v{v}")

    # joint capacities with the three-case right-hand side
    for eid in range(num_e):
        coeffs = {model.ft_var(eid): 1.0}
        for s in sites:
            coeffs[model.fs_var(s, eid)] = 1.0
        u, w = g.edges[eid]
        if eid < num_orig:
            prob.add_row(coeffs, lp.LE, float(net.edge_capacity[eid]), name=f"cap_e{eid}")
        elif u == req.root:
            prob.add_row(coeffs, lp.LE, float(req.root_capacity), name="cap_root")
        else:
            coeffs[model.x_var(u)] = -float(req.site_capacity[u])
            prob.add_row(coeffs, lp.LE, 0.0, name=f"cap_s{u}")

    # priority rows: absorbing a site's commodity forces a strictly larger
    # priority, which excludes site-to-site cycles
    big = float(len(sites))
    for s in sites:
        for sbar in sites:
            coeffs = {model.fs_var(s, g.sink_edge(sbar)): -big}
            if s != sbar:
                coeffs[model.p_var(s)] = 1.0
                coeffs[model.p_var(sbar)] = -1.0
            prob.add_row(coeffs, lp.GE, 1.0 - big, name=f"mtz_{s}_{sbar}")

    if starred:
        for s in sites:
            for sbar in sites:
                if sbar == s:
                    continue
                prob.add_row({model.fs_var(s, g.sink_edge(sbar)): 1.0,
                              model.x_var(sbar): -1.0}, lp.LE, 0.0,
                             name=f"act_{s}_{sbar}")
        for s in sites:
            prob.lower[model.fs_var(s, g.sink_edge(s))] = 0.0
            prob.upper[model.fs_var(s, g.sink_edge(s))] = 0.0
        for i, s in enumerate(sites):
            for sbar in sites[i + 1:]:
                prob.add_row({model.fs_var(s, g.sink_edge(sbar)): 1.0,
                              model.fs_var(sbar, g.sink_edge(s)): 1.0},
                             lp.LE, 1.0, name=f"pair_{s}_{sbar}")
    return model


def _trace_site_path(g: McfExtendedGraph, fs: np.ndarray, s: int) -> list[int]:
    """Edge-simple walk of the unit commodity from its site to the sink."""
    used = set()
    trail = [s]
    guard = 0
    while trail[-1] != g.super_sink:
        guard += 1
        if guard > len(g.edges) + 1:
            raise CvsapError(f"site {s} commodity does not reach the sink")
        v = trail[-1]
        nxt = None
        for eid, (u, w) in enumerate(g.edges):
            if u == v and eid not in used and fs[eid] >= 1:
                nxt = (eid, w)
                break
        if nxt is None:
            raise CvsapError(f"site {s} commodity is stuck at node {v}")
        used.add(nxt[0])
        trail.append(nxt[1])
    return trail


def _bfs_positive(g: McfExtendedGraph, flow: np.ndarray, source: int) -> Optional[list[int]]:
    parent: dict[int, int] = {source: -1}
    queue = [source]
    qi = 0
    while qi < len(queue):
        v = queue[qi]
        qi += 1
        if v == g.super_sink:
            trail = [v]
            while parent[trail[-1]] != -1:
                trail.append(parent[trail[-1]])
            trail.reverse()
            return trail
        for eid, (u, w) in enumerate(g.edges):
            if u == v and flow[eid] >= 1 and w not in parent:
                parent[w] = v
                queue.append(w)
    return None


def mcf_to_va(model: McfModel, sol: McfSolution) -> VirtualArborescence:
    """Read the arborescence out of a feasible point: each activated site's
    commodity is its connecting path, and the aggregated terminal flow is
    peeled into one path per terminal."""
    from .decompose import simplify

    g = model.graph
    inst = g.instance
    req = inst.request
    nodes = {req.root} | set(req.terminals) | {s for s in g.sites if sol.x.get(s, 0)}
    edges: set[tuple[int, int]] = set()
    paths: dict[tuple[int, int], Path] = {}
    for s in g.sites:
        if not sol.x.get(s, 0):
            continue
        trail = _trace_site_path(g, sol.fs[s], s)
        simple = simplify(Path(tuple(trail[:-1])))
        head = simple.vertices[-1]
        edges.add((s, head))
        paths[(s, head)] = simple
    remaining = sol.fT.astype(np.int64).copy()
    for t in sorted(req.terminals):
        trail = _bfs_positive(g, remaining, t)
        if trail is None:
            raise CvsapError(f"terminal {t} has no remaining flow to the sink")
        for i in range(len(trail) - 1):
            remaining[g.edge_id(trail[i], trail[i + 1])] -= 1
        head = trail[-2]
        edges.add((t, head))
        paths[(t, head)] = Path(tuple(trail[:-1]))
    return VirtualArborescence(frozenset(nodes), frozenset(edges), req.root, paths)
