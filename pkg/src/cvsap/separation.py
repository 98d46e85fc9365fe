"""Violated-cut detection via max-flow/min-cut.

For every activated site the point must ship its activation value across
every node set containing the site, over the sink-free edge set E^R; the
optional per-terminal variant demands a full unit.  Violations are found
with Edmonds-Karp (BFS augmenting paths) s-t computations, one per source.

Two quality refinements follow the classic Steiner separation playbook:
creep-flow (a tiny uniform capacity bump so returned min cuts prefer few
arcs) and nested cuts (saturate a found cut and re-separate the same
source).  Back cuts are deliberately not implemented.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import CvsapError, ExtendedGraph


@dataclass(frozen=True)
class SeparationConfig:
    use_terminal_cuts: bool = True
    use_creep_flow: bool = True
    use_nested_cuts: bool = True
    creep_epsilon: float = 1e-6      # divided by |E_ext| before use
    nested_round_limit: int = 5
    violation_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if not (0 < self.creep_epsilon < 1e-3):
            raise CvsapError("creep epsilon out of range")
        if self.violation_tolerance < 1e-6:
            raise CvsapError("violation tolerance below 1e-6")


SETTINGS = {
    "ts": SeparationConfig(True, True, True),
    "t": SeparationConfig(True, False, False),
    "s": SeparationConfig(False, True, True),
    "none": SeparationConfig(False, False, False),
}


@dataclass(frozen=True)
class CutRow:
    """f(delta+_{E^R}(W)) >= x_s (site source) or >= 1 (terminal source)."""

    node_set: frozenset[int]
    source_kind: str            # "site" | "terminal"
    source: int
    violation: float

    def key(self) -> tuple:
        return (self.source_kind, self.source, tuple(sorted(self.node_set)))


class MaxFlowGraph:
    """Residual arc-list network for repeated s-t computations."""

    def __init__(self, num_nodes: int):
        self.n = num_nodes
        self.head: list[int] = []
        self.cap: list[float] = []
        self.adj: list[list[int]] = [[] for _ in range(num_nodes)]

    def add_arc(self, u: int, v: int, cap: float) -> int:
        aid = len(self.head)
        self.head.append(v)
        self.cap.append(cap)
        self.adj[u].append(aid)
        self.head.append(u)
        self.cap.append(0.0)
        self.adj[v].append(aid + 1)
        return aid

    def set_caps(self, caps: Sequence[float]) -> None:
        for i, c in enumerate(caps):
            self.cap[2 * i] = c
            self.cap[2 * i + 1] = 0.0


def max_flow(graph: MaxFlowGraph, source: int, sink: int) -> tuple[float, set[int]]:
    """Edmonds-Karp; returns the flow value and the source side of a minimum
    cut (the nodes reachable in the final residual graph)."""
    if source == sink:
        raise CvsapError("max_flow requires distinct source and sink")
    cap = graph.cap
    head = graph.head
    adj = graph.adj
    total = 0.0
    parent_arc = [-1] * graph.n
    while True:
        for i in range(graph.n):
            parent_arc[i] = -1
        parent_arc[source] = -2
        queue = [source]
        qi = 0
        reached = False
        while qi < len(queue) and not reached:
            u = queue[qi]
            qi += 1
            for aid in adj[u]:
                if cap[aid] > 1e-12 and parent_arc[head[aid]] == -1:
                    parent_arc[head[aid]] = aid
                    if head[aid] == sink:
                        reached = True
                        break
                    queue.append(head[aid])
        if not reached:
            break
        bottleneck = float("inf")
        v = sink
        while v != source:
            aid = parent_arc[v]
            bottleneck = min(bottleneck, cap[aid])
            v = head[aid ^ 1]
        v = sink
        while v != source:
            aid = parent_arc[v]
            cap[aid] -= bottleneck
            cap[aid ^ 1] += bottleneck
            v = head[aid ^ 1]
        total += bottleneck
    seen = {source}
    stack = [source]
    while stack:
        u = stack.pop()
        for aid in adj[u]:
            if cap[aid] > 1e-12 and head[aid] not in seen:
                seen.add(head[aid])
                stack.append(head[aid])
    return total, seen


def restricted_arcs(ext: ExtendedGraph) -> list[int]:
    """Extended edge ids in E^R, in ascending id order."""
    return [eid for eid in range(len(ext.edges)) if ext.is_restricted(eid)]


def cut_capacity(ext: ExtendedGraph, f: Sequence[float], node_set: frozenset[int]) -> float:
    """f(delta+_{E^R}(W)) for W inside the original node set."""
    total = 0.0
    for eid in restricted_arcs(ext):
        u, w = ext.edges[eid]
        if u in node_set and w not in node_set:
            total += f[eid]
    return total


def _separate_source(ext: ExtendedGraph, arcs: list[int], f: Sequence[float],
                     source: int, threshold: float, kind: str,
                     cfg: SeparationConfig) -> list[CutRow]:
    tol = cfg.violation_tolerance
    eps = cfg.creep_epsilon / len(ext.edges) if cfg.use_creep_flow else 0.0
    n_orig = ext.instance.network.num_nodes
    graph = MaxFlowGraph(ext.num_nodes)
    arc_ids = []
    for eid in arcs:
        u, w = ext.edges[eid]
        graph.add_arc(u, w, 0.0)
        arc_ids.append(eid)
    caps = [float(f[eid]) for eid in arc_ids]
    cuts: list[CutRow] = []
    seen_sets: set[frozenset[int]] = set()
    rounds = cfg.nested_round_limit if cfg.use_nested_cuts else 1
    for _ in range(max(rounds, 1)):
        graph.set_caps(caps)
        value, _side = max_flow(graph, source, ext.root_sink)
        if value >= threshold - tol:
            break
        if eps:
            # rerun with the perturbed capacities purely to pick a small cut
            graph.set_caps([c + eps for c in caps])
            _v2, side = max_flow(graph, source, ext.root_sink)
        else:
            side = _side
        node_set = frozenset(v for v in side if v < n_orig)
        true_violation = threshold - cut_capacity(ext, f, node_set)
        if true_violation < tol:
            # the perturbed run picked a slack cut; fall back to the exact one
            node_set = frozenset(v for v in _side if v < n_orig)
            true_violation = threshold - cut_capacity(ext, f, node_set)
        if true_violation < tol or node_set in seen_sets:
            break
        seen_sets.add(node_set)
        cuts.append(CutRow(node_set, kind, source, float(true_violation)))
        if not cfg.use_nested_cuts:
            break
        # saturate the crossing arcs so the next round finds a nested cut
        for pos, eid in enumerate(arc_ids):
            u, w = ext.edges[eid]
            if u in node_set and w not in node_set:
                caps[pos] = 1.0
    return cuts


def separate(ext: ExtendedGraph, x_hat: Mapping[int, float], f_hat: Sequence[float],
             cfg: SeparationConfig) -> list[CutRow]:
    """All violated cut rows at the fractional point, canonically ordered.

    Sites whose activation value is below tolerance are skipped; terminals
    are separated only when the config enables their cuts.  The CVSAP_THREADS
    environment variable (default 1) fans the per-source computations out to
    a thread pool; results are order-independent.
    """
    arcs = restricted_arcs(ext)
    tol = cfg.violation_tolerance
    jobs: list[tuple[int, float, str]] = []
    for s in ext.sites:
        if x_hat.get(s, 0.0) > tol:
            jobs.append((s, float(x_hat[s]), "site"))
    if cfg.use_terminal_cuts:
        for t in ext.terminals:
            jobs.append((t, 1.0, "terminal"))

    threads = int(os.environ.get("CVSAP_THREADS", "1") or "1")
    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda j: _separate_source(ext, arcs, f_hat, j[0], j[1], j[2], cfg), jobs))
    else:
        results = [_separate_source(ext, arcs, f_hat, s, thr, kind, cfg)
                   for (s, thr, kind) in jobs]
    cuts = [c for group in results for c in group]
    cuts.sort(key=lambda c: c.key())
    return cuts
