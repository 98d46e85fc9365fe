"""Single-commodity flow formulation over the extended graph.

One flow variable per extended edge and one binary activation variable per
Steiner site.  Static rows cover conservation, capacities and the
source/sink couplings; the connectivity requirements (for sites, and
optionally the per-terminal strengthening) are not materialized here, they
are separated lazily during branch-and-cut.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import lp
from .core import (
    EDGE_ORIGINAL,
    CvsapError,
    ExtendedGraph,
    Instance,
    VirtualArborescence,
    check_va,
    path_edge_usage,
)

# constraint family tags
CONSERVATION = "IP-1"
CONNECTIVITY = "IP-2"
TERMINAL_CUT = "IP-3"
ABSORPTION = "IP-4"
SITE_CAPACITY = "IP-5"
ROOT_CAPACITY = "IP-6"
EDGE_CAPACITY = "IP-7"
TERMINAL_SUPPLY = "IP-8"
SITE_SUPPLY = "IP-9"
DOMAINS = "IP-10"


@dataclass(frozen=True)
class ScfFlags:
    include_terminal_cuts: bool = True   # separate the per-terminal cuts
    include_absorption: bool = True      # active sites must absorb one unit


@dataclass(frozen=True)
class IpSolution:
    """Integral point: site activations and flow on every extended edge."""

    x: Mapping[int, int]
    f: np.ndarray

    @staticmethod
    def from_edge_map(ext: ExtendedGraph, x: Mapping[int, int],
                      f: Mapping[tuple[int, int], int]) -> "IpSolution":
        vec = np.zeros(len(ext.edges), dtype=np.int64)
        for (u, w), v in f.items():
            vec[ext.edge_id(u, w)] = v
        return IpSolution({int(s): int(v) for s, v in x.items()}, vec)


@dataclass(frozen=True)
class ScfRow:
    family: str
    coeffs: tuple[tuple[int, float], ...]
    sense: str
    rhs: float
    label: str


@dataclass
class ScfModel:
    """Variable layout: flow variables share the extended edge ids, the site
    variables follow in ascending site order."""

    ext: ExtendedGraph
    flags: ScfFlags
    rows: list[ScfRow] = field(default_factory=list)
    _site_pos: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._site_pos:
            self._site_pos.update({s: i for i, s in enumerate(self.ext.sites)})

    @property
    def num_flow_vars(self) -> int:
        return len(self.ext.edges)

    @property
    def num_vars(self) -> int:
        return self.num_flow_vars + len(self.ext.sites)

    def x_var(self, site: int) -> int:
        return self.num_flow_vars + self._site_pos[site]

    def f_var(self, eid: int) -> int:
        return eid

    def objective(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        net = self.ext.instance.network
        for eid in range(len(net.edges)):
            c[eid] = net.edge_cost[eid]
        for s in self.ext.sites:
            c[self.x_var(s)] = self.ext.instance.request.site_cost[s]
        return c

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Box per variable; the upper bounds are the row-implied ones."""
        ext = self.ext
        net = ext.instance.network
        req = ext.instance.request
        lo = np.zeros(self.num_vars)
        hi = np.zeros(self.num_vars)
        for eid, kind in enumerate(ext.edge_kind):
            if kind == EDGE_ORIGINAL:
                hi[eid] = net.edge_capacity[eid]
            elif kind == "root-sink":
                hi[eid] = req.root_capacity
            elif kind == "site-sink":
                hi[eid] = req.site_capacity[ext.edges[eid][0]]
            else:
                hi[eid] = 1.0
        for s in ext.sites:
            hi[self.x_var(s)] = 1.0
        return lo, hi

    def to_lp(self) -> lp.LpProblem:
        """LP relaxation: single-variable rows become bounds, the rest become
        matrix rows."""
        prob = lp.LpProblem()
        lo, hi = self.bounds()
        c = self.objective()
        ext = self.ext
        for eid in range(self.num_flow_vars):
            u, w = ext.edges[eid]
            prob.add_variable(lo[eid], hi[eid], c[eid], name=f"F{eid:06d}")
        for s in ext.sites:
            j = self.x_var(s)
            prob.add_variable(lo[j], hi[j], c[j], name=f"X{s:06d}")
        for row in self.rows:
            if len(row.coeffs) == 1:
                j, a = row.coeffs[0]
                v = row.rhs / a
                if row.sense == lp.EQ:
                    prob.lower[j], prob.upper[j] = v, v
                elif (row.sense == lp.LE) == (a > 0):
                    prob.upper[j] = min(prob.upper[j], v)
                else:
                    prob.lower[j] = max(prob.lower[j], v)
            else:
                prob.add_row(dict(row.coeffs), row.sense, row.rhs, name=row.label)
        return prob

    def point(self, sol: lp.LpSolution) -> tuple[dict[int, float], np.ndarray]:
        x = {s: float(sol.x[self.x_var(s)]) for s in self.ext.sites}
        return x, sol.x[: self.num_flow_vars].copy()


def build_scf(ext: ExtendedGraph, flags: ScfFlags = ScfFlags()) -> ScfModel:
    """Materialize the static rows (the two cut families stay lazy)."""
    model = ScfModel(ext=ext, flags=flags)
    net = ext.instance.network
    req = ext.instance.request
    rows = model.rows
    for v in range(net.num_nodes):
        coeffs: dict[int, float] = {}
        for eid in ext.out_edges[v]:
            coeffs[eid] = coeffs.get(eid, 0.0) + 1.0
        for eid in ext.in_edges[v]:
            coeffs[eid] = coeffs.get(eid, 0.0) - 1.0
        rows.append(ScfRow(CONSERVATION, tuple(sorted(coeffs.items())), lp.EQ, 0.0,
                           f"cons_v{v}"))
    for eid in range(len(net.edges)):
        rows.append(ScfRow(EDGE_CAPACITY, ((eid, 1.0),), lp.LE,
                           float(net.edge_capacity[eid]), f"cap_e{eid}"))
    rows.append(ScfRow(ROOT_CAPACITY, ((ext.root_sink_edge(), 1.0),), lp.LE,
                       float(req.root_capacity), "cap_root"))
    for s in ext.sites:
        sink = ext.site_sink_edge(s)
        xv = model.x_var(s)
        rows.append(ScfRow(SITE_CAPACITY,
                           ((sink, 1.0), (xv, -float(req.site_capacity[s]))),
                           lp.LE, 0.0, f"scap_s{s}"))
        if flags.include_absorption:
            rows.append(ScfRow(ABSORPTION, ((sink, 1.0), (xv, -1.0)), lp.GE, 0.0,
                               f"absorb_s{s}"))
    for t in ext.terminals:
        rows.append(ScfRow(TERMINAL_SUPPLY, ((ext.source_edge(t), 1.0),), lp.EQ, 1.0,
                           f"supply_t{t}"))
    for s in ext.sites:
        rows.append(ScfRow(SITE_SUPPLY,
                           ((ext.source_edge(s), 1.0), (model.x_var(s), -1.0)),
                           lp.EQ, 0.0, f"supply_s{s}"))
    return model


def cost_ip(ext: ExtendedGraph, sol: IpSolution) -> float:
    """Objective of a point: network edge usage plus activation costs; the
    super source/sink edges are free."""
    net = ext.instance.network
    total = float(np.dot(sol.f[: len(net.edges)], np.asarray(net.edge_cost)))
    for s, v in sol.x.items():
        if v:
            total += ext.instance.request.site_cost[s]
    return total


@dataclass(frozen=True)
class IpReport:
    violations: Mapping[str, tuple[str, ...]]

    @property
    def feasible(self) -> bool:
        return all(not v for v in self.violations.values())

    def ok(self, family: str) -> bool:
        return not self.violations.get(family, ())


def _flow_reach(ext: ExtendedGraph, f: Sequence[float], start: int,
                restricted: bool = True) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for eid in ext.out_edges[v]:
            if f[eid] < 1:
                continue
            if restricted and not ext.is_restricted(eid):
                continue
            w = ext.edges[eid][1]
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def is_ip_feasible(ext: ExtendedGraph, sol: IpSolution,
                   flags: ScfFlags = ScfFlags()) -> IpReport:
    """Arithmetic check of every constraint family; connectivity (for sites)
    and terminal reachability are decided on the flow-carrying subgraph."""
    net = ext.instance.network
    req = ext.instance.request
    f = sol.f
    out: dict[str, list[str]] = {k: [] for k in (
        CONSERVATION, CONNECTIVITY, TERMINAL_CUT, ABSORPTION, SITE_CAPACITY,
        ROOT_CAPACITY, EDGE_CAPACITY, TERMINAL_SUPPLY, SITE_SUPPLY, DOMAINS)}
    for s in ext.sites:
        xv = sol.x.get(s, 0)
        if xv not in (0, 1):
            out[DOMAINS].append(f"x[{s}] = {xv}")
    if np.any(f < 0):
        out[DOMAINS].append("negative flow")
    for v in range(net.num_nodes):
        balance = sum(f[e] for e in ext.out_edges[v]) - sum(f[e] for e in ext.in_edges[v])
        if balance != 0:
            out[CONSERVATION].append(f"node {v} imbalance {balance}")
    for s in ext.sites:
        sink = ext.site_sink_edge(s)
        xv = sol.x.get(s, 0)
        if flags.include_absorption and f[sink] < xv:
            out[ABSORPTION].append(f"site {s} absorbs {f[sink]} < {xv}")
        if f[sink] > req.site_capacity[s] * xv:
            out[SITE_CAPACITY].append(f"site {s} absorbs {f[sink]} > cap*x")
        src = ext.source_edge(s)
        if f[src] != xv:
            out[SITE_SUPPLY].append(f"site {s} source flow {f[src]} != {xv}")
    if f[ext.root_sink_edge()] > req.root_capacity:
        out[ROOT_CAPACITY].append(f"root sink {f[ext.root_sink_edge()]} > {req.root_capacity}")
    for eid in range(len(net.edges)):
        if f[eid] > net.edge_capacity[eid]:
            out[EDGE_CAPACITY].append(f"edge {eid} flow {f[eid]} > {net.edge_capacity[eid]}")
    for t in ext.terminals:
        if f[ext.source_edge(t)] != 1:
            out[TERMINAL_SUPPLY].append(f"terminal {t} source flow != 1")
    for s in ext.sites:
        if sol.x.get(s, 0) == 1 and ext.root_sink not in _flow_reach(ext, f, s):
            out[CONNECTIVITY].append(f"active site {s} cannot reach the root sink")
    for t in ext.terminals:
        if ext.root_sink not in _flow_reach(ext, f, t):
            out[TERMINAL_CUT].append(f"terminal {t} cannot reach the root sink")
    return IpReport({k: tuple(v) for k, v in out.items()})


def va_to_ip(ext: ExtendedGraph, va: VirtualArborescence) -> IpSolution:
    """Map a feasible arborescence to an equal-cost integral point."""
    inst = ext.instance
    report = check_va(inst, va)
    if not report.feasible:
        raise CvsapError("va_to_ip requires a feasible arborescence: "
                         + "; ".join(str(x) for x in report.violations))
    net = inst.network
    req = inst.request
    f = np.zeros(len(ext.edges), dtype=np.int64)
    usage = path_edge_usage(va, net.edge_index())
    f[: len(usage)] = usage
    indeg: dict[int, int] = {}
    for (_, w) in va.virtual_edges:
        indeg[w] = indeg.get(w, 0) + 1
    x = {s: (1 if s in va.nodes else 0) for s in ext.sites}
    for v in sorted(va.nodes):
        if v != req.root:
            f[ext.source_edge(v)] = 1
    for s in ext.sites:
        if x[s]:
            f[ext.site_sink_edge(s)] = indeg.get(s, 0)
    f[ext.root_sink_edge()] = indeg.get(req.root, 0)
    return IpSolution(x, f)
