"""Primal heuristics: randomized rounding of LP points and local pruning.

Phase 1 peels each terminal's share of the fractional flow into sink-bound
paths and keeps one of the surviving candidates with probability
proportional to its carried amount; a path that opens a Steiner site turns
that site into a pending terminal.  Phase 2 patches everything still
unconnected with capacitated shortest paths, giving up (``None``) when that
fails.  The finished arborescence is then handed to the pruning local
search, which repeatedly tries to buy out the least loaded site from its
own activation and routing budget.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import (
    CvsapError,
    ExtendedGraph,
    Path,
    VirtualArborescence,
    path_edge_usage,
)
from .instances import StableRng

FLOW_EPS = 1e-9


@dataclass(frozen=True)
class WeightedPathSet:
    items: tuple[tuple[Path, float], ...]

    def total(self) -> float:
        return sum(a for _, a in self.items)

    def __iter__(self):
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)


def _widest_path(ext: ExtendedGraph, f: np.ndarray, source: int,
                 sinks: set[int]) -> Optional[list[int]]:
    """Maximum-bottleneck path over positive-flow edges (deterministic)."""
    width = {source: float("inf")}
    parent: dict[int, int] = {}
    heap = [(-float("inf"), source)]
    done: set[int] = set()
    while heap:
        negw, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        if v in sinks:
            trail = [v]
            while trail[-1] != source:
                trail.append(parent[trail[-1]])
            trail.reverse()
            return trail
        for eid in ext.out_edges[v]:
            if f[eid] <= FLOW_EPS:
                continue
            w = ext.edges[eid][1]
            cand = min(-negw, float(f[eid]))
            if cand > width.get(w, 0.0) + 1e-15:
                width[w] = cand
                parent[w] = v
                heapq.heappush(heap, (-cand, w))
    return None


def flow_decomposition(ext: ExtendedGraph, f: np.ndarray, amount: float,
                       source: int, sinks: set[int],
                       strict: bool = True) -> WeightedPathSet:
    """Peel ``amount`` units from ``source`` into sink-bound simple paths.

    Greedy max-bottleneck peeling; per-edge totals never exceed the given
    flow.  With ``strict`` the full amount must decompose, otherwise the
    achievable part is returned (imbalanced flows occur mid-heuristic).
    """
    remaining = float(amount)
    work = np.asarray(f, dtype=float).copy()
    items: list[tuple[Path, float]] = []
    while remaining > 1e-7:
        trail = _widest_path(ext, work, source, sinks)
        if trail is None:
            if strict:
                raise CvsapError(
                    f"insufficient flow: {remaining} left undecomposed from {source}")
            break
        eids = [ext.edge_id(trail[i], trail[i + 1]) for i in range(len(trail) - 1)]
        take = min(remaining, min(float(work[e]) for e in eids))
        if take <= FLOW_EPS:
            if strict:
                raise CvsapError("insufficient flow: zero-width path")
            break
        for e in eids:
            work[e] -= take
            if work[e] < FLOW_EPS:
                work[e] = 0.0
        items.append((Path(tuple(trail)), take))
        remaining -= take
    return WeightedPathSet(tuple(items))


def shortest_path_capacitated(
    ext: ExtendedGraph, residual: np.ndarray, source: int, sinks: set[int],
    acyclic_ok: Callable[[int], bool] | None = None,
) -> Optional[Path]:
    """Cheapest path to a sink over edges with residual capacity.

    Original edges cost their network cost, the super edges are free.  Ties
    are broken toward the lexicographically smallest vertex sequence.  A
    candidate whose second-to-last vertex fails ``acyclic_ok`` is skipped;
    None when nothing acceptable remains.
    """
    costs = ext.edge_costs()
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (source,))]
    settled: set[int] = set()
    while heap:
        dist, trail = heapq.heappop(heap)
        v = trail[-1]
        if v in sinks:
            if acyclic_ok is None or acyclic_ok(trail[-2]):
                return Path(trail)
            continue
        if v in settled:
            continue
        settled.add(v)
        for eid in ext.out_edges[v]:
            if residual[eid] < 1:
                continue
            w = ext.edges[eid][1]
            if w in settled or w in trail:
                continue
            heapq.heappush(heap, (dist + costs[eid], trail + (w,)))
    return None


def pick_weighted(items: Sequence[tuple[Path, float]], rng: StableRng) -> tuple[Path, float]:
    """Choose an item with probability proportional to its amount."""
    total = sum(a for _, a in items)
    if total <= 0:
        return items[0]
    r = rng.uniform(0.0, total)
    acc = 0.0
    for it in items:
        acc += it[1]
        if r <= acc:
            return it
    return items[-1]


def _extends_acyclically(out_of: dict[int, int], tail: int, head: int) -> bool:
    """Would the virtual edge (tail, head) close a cycle given the current
    one-out-edge map?"""
    if head == tail:
        return False
    cur = head
    while cur in out_of:
        cur = out_of[cur]
        if cur == tail:
            return False
    return True


def _initial_capacity(ext: ExtendedGraph) -> np.ndarray:
    net = ext.instance.network
    req = ext.instance.request
    u = np.ones(len(ext.edges), dtype=np.int64)
    for eid in range(len(net.edges)):
        u[eid] = net.edge_capacity[eid]
    u[ext.root_sink_edge()] = req.root_capacity
    for s in ext.sites:
        u[ext.site_sink_edge(s)] = req.site_capacity[s]
    return u


def flow_deco_round(ext: ExtendedGraph, x_hat: Mapping[int, float],
                    f_hat: Sequence[float], seed: int) -> Optional[VirtualArborescence]:
    """Randomized rounding of an LP relaxation point; None on failure.

    Deterministic for a fixed seed.  Non-None results are feasible and
    already pruned.
    """
    rng = StableRng(seed)
    inst = ext.instance
    root = inst.request.root
    sinks = {ext.steiner_sink, ext.root_sink}
    f = np.asarray(f_hat, dtype=float).copy()
    u = _initial_capacity(ext)
    nodes: set[int] = {root}
    out_of: dict[int, int] = {}
    paths: dict[tuple[int, int], Path] = {}
    pending = sorted(ext.terminals)

    while pending:
        t = pending.pop(rng.below(len(pending)))
        amount = float(f[ext.source_edge(t)])
        gamma = flow_decomposition(ext, f, amount, t, sinks, strict=False)
        for p, a in gamma:
            for i in range(len(p.vertices) - 1):
                eid = ext.edge_id(p.vertices[i], p.vertices[i + 1])
                f[eid] -= a
                if f[eid] < FLOW_EPS:
                    f[eid] = 0.0
        survivors = []
        for p, a in gamma:
            eids = [ext.edge_id(p.vertices[i], p.vertices[i + 1])
                    for i in range(len(p.vertices) - 1)]
            if any(u[e] < 1 for e in eids):
                continue
            if not _extends_acyclically(out_of, t, p.vertices[-2]):
                continue
            survivors.append((p, a, eids))
        if not survivors:
            continue
        p, _a = pick_weighted([(p, a) for p, a, _ in survivors], rng)
        eids = next(e for q, a, e in survivors if q is p)
        head = p.vertices[-2]
        if head not in nodes:
            pending.append(head)
            nodes.add(head)
        nodes.add(t)
        out_of[t] = head
        paths[(t, head)] = p
        for e in eids:
            u[e] -= 1

    for s in ext.sites:
        if s not in nodes:
            u[ext.site_sink_edge(s)] = 0
    unconnected = sorted(
        set(ext.terminals) - nodes | {s for s in ext.sites if s in nodes and s not in out_of}
    )
    for t in unconnected:
        p = shortest_path_capacitated(
            ext, u, t, sinks,
            acyclic_ok=lambda w, t=t: _extends_acyclically(out_of, t, w))
        if p is None:
            return None
        head = p.vertices[-2]
        nodes.add(t)
        out_of[t] = head
        paths[(t, head)] = p
        for i in range(len(p.vertices) - 1):
            u[ext.edge_id(p.vertices[i], p.vertices[i + 1])] -= 1

    edges = frozenset((t, h) for t, h in out_of.items())
    stripped = {(t, h): Path(paths[(t, h)].vertices[:-1]) for (t, h) in edges}
    va = VirtualArborescence(frozenset(nodes), edges, root, stripped)
    return prune_steiner_nodes(ext, va)


def _residual_from_va(ext: ExtendedGraph, nodes: set[int],
                      edges: set[tuple[int, int]],
                      paths: Mapping[tuple[int, int], Path]) -> np.ndarray:
    net = ext.instance.network
    req = ext.instance.request
    u = np.ones(len(ext.edges), dtype=np.int64)
    usage = path_edge_usage(
        VirtualArborescence(frozenset(nodes), frozenset(edges), req.root, dict(paths)),
        net.edge_index(),
    )
    for eid in range(len(net.edges)):
        u[eid] = net.edge_capacity[eid] - usage[eid]
    indeg: dict[int, int] = {}
    for (_, h) in edges:
        indeg[h] = indeg.get(h, 0) + 1
    u[ext.root_sink_edge()] = req.root_capacity - indeg.get(req.root, 0)
    for s in ext.sites:
        if s in nodes:
            u[ext.site_sink_edge(s)] = req.site_capacity[s] - indeg.get(s, 0)
        else:
            # reconnection may not open new sites
            u[ext.site_sink_edge(s)] = 0
    return u


def prune_steiner_nodes(ext: ExtendedGraph, va: VirtualArborescence) -> VirtualArborescence:
    """Remove activated sites whose activation-plus-routing budget can buy
    cheaper reconnections for their children; never increases cost."""
    inst = ext.instance
    req = inst.request
    costs = ext.edge_costs()
    sinks = {ext.steiner_sink, ext.root_sink}

    def path_cost(p: Path) -> float:
        return sum(costs[ext.edge_id(p.vertices[i], p.vertices[i + 1])]
                   for i in range(len(p.vertices) - 1))

    nodes = set(va.nodes)
    edges = set(va.virtual_edges)
    paths = dict(va.edge_paths)
    candidates = sorted(nodes & set(req.steiner_sites))

    def ratio(s: int) -> float:
        indeg = sum(1 for (_, h) in edges if h == s)
        return req.site_cost[s] / indeg if indeg else float("inf")

    while candidates:
        s = max(candidates, key=lambda q: (ratio(q), -q))
        candidates.remove(s)
        children = sorted(t for (t, h) in edges if h == s)
        removed = [(t, s) for t in children] + [(s, h) for (u2, h) in edges if u2 == s]
        removed = [e for e in removed if e in edges]
        budget = req.site_cost[s] + sum(path_cost(paths[e]) for e in removed)
        new_nodes = nodes - set(children) - {s}
        new_edges = edges - set(removed)
        new_paths = {e: paths[e] for e in new_edges}
        out_of = {t: h for (t, h) in new_edges}
        residual = _residual_from_va(ext, new_nodes, new_edges, new_paths)
        ok = True
        for t in children:
            p = shortest_path_capacitated(
                ext, residual, t, sinks,
                acyclic_ok=lambda w, t=t: (
                    _extends_acyclically(out_of, t, w) and w in new_nodes))
            if p is None or budget - path_cost(p) <= 0:
                ok = False
                break
            budget -= path_cost(p)
            head = p.vertices[-2]
            new_nodes.add(t)
            new_edges.add((t, head))
            new_paths[(t, head)] = Path(p.vertices[:-1])
            out_of[t] = head
            for i in range(len(p.vertices) - 1):
                residual[ext.edge_id(p.vertices[i], p.vertices[i + 1])] -= 1
        if ok:
            nodes, edges, paths = new_nodes, new_edges, new_paths
            candidates = sorted(nodes & set(req.steiner_sites))
    return VirtualArborescence(frozenset(nodes), frozenset(edges), va.root, paths)
