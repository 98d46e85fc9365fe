"""Brute-force ground truth on tiny instances.

Enumerates site activations and integral flows on the original edges; the
sink-edge flows are forced by conservation, and every completed assignment
is accepted exactly when the full feasibility check passes.  A branch-and-
prune walk over edge values keeps the search civil; a naive product-space
mode exists to validate the pruning.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .core import CvsapError, ExtendedGraph
from .scf import IpSolution, cost_ip, is_ip_feasible

SPACE_LIMIT = 10_000_000


class SearchSpaceTooLarge(CvsapError):
    pass


@dataclass(frozen=True)
class OracleResult:
    status: str                      # "optimal" | "infeasible"
    best_cost: Optional[float]
    best: Optional[IpSolution]
    feasible_count: int


def search_space(ext: ExtendedGraph) -> int:
    """Free assignments: activation bits and original-edge flows (the sink
    flows are forced by conservation)."""
    net = ext.instance.network
    size = 1
    for _ in ext.sites:
        size *= 2
        if size > SPACE_LIMIT:
            return size
    for u in net.edge_capacity:
        size *= u + 1
        if size > SPACE_LIMIT:
            return size
    return size


def _sink_values(ext: ExtendedGraph, x: dict[int, int], f: np.ndarray) -> bool:
    """Force the sink flows from conservation; False when impossible."""
    net = ext.instance.network
    req = ext.instance.request
    for s in ext.sites:
        out_eg = sum(f[e] for e in ext.out_edges[s] if e < len(net.edges))
        in_eg = sum(f[e] for e in ext.in_edges[s] if e < len(net.edges))
        sink = in_eg + x[s] - out_eg
        if sink < 0 or sink > req.site_capacity[s] * x[s]:
            return False
        f[ext.site_sink_edge(s)] = sink
    r = req.root
    out_eg = sum(f[e] for e in ext.out_edges[r] if e < len(net.edges))
    in_eg = sum(f[e] for e in ext.in_edges[r] if e < len(net.edges))
    src = 0
    sink = in_eg + src - out_eg
    if sink < 0 or sink > req.root_capacity:
        return False
    f[ext.root_sink_edge()] = sink
    return True


def enumerate_feasible(ext: ExtendedGraph, naive: bool = False) -> Iterator[IpSolution]:
    """Yield every integral feasible point (guarded by the space limit)."""
    if search_space(ext) > SPACE_LIMIT:
        raise SearchSpaceTooLarge(f"more than {SPACE_LIMIT} assignments")
    net = ext.instance.network
    req = ext.instance.request
    num_eg = len(net.edges)
    sites = ext.sites
    terminals = set(ext.terminals)
    site_set = set(sites)

    for bits in itertools.product((0, 1), repeat=len(sites)):
        x = {s: bits[i] for i, s in enumerate(sites)}
        if naive:
            yield from _enumerate_naive(ext, x)
            continue
        # per-node target interval for (out - in) over original edges
        lo = np.zeros(net.num_nodes, dtype=np.int64)
        hi = np.zeros(net.num_nodes, dtype=np.int64)
        for v in range(net.num_nodes):
            if v in terminals:
                lo[v] = hi[v] = 1
            elif v in site_set:
                lo[v], hi[v] = x[v] - req.site_capacity[v] * x[v], 0
            elif v == req.root:
                lo[v], hi[v] = -req.root_capacity, 0
        out_sum = np.zeros(net.num_nodes, dtype=np.int64)
        in_sum = np.zeros(net.num_nodes, dtype=np.int64)
        rem_out = np.zeros(net.num_nodes, dtype=np.int64)
        rem_in = np.zeros(net.num_nodes, dtype=np.int64)
        for eid, (u, w) in enumerate(net.edges):
            rem_out[u] += net.edge_capacity[eid]
            rem_in[w] += net.edge_capacity[eid]
        order = sorted(range(num_eg), key=lambda e: (min(net.edges[e]), net.edges[e]))
        fvals = np.zeros(num_eg, dtype=np.int64)

        def ok(v: int) -> bool:
            diff = out_sum[v] - in_sum[v]
            return diff - rem_in[v] <= hi[v] and diff + rem_out[v] >= lo[v]

        def walk(pos: int) -> Iterator[IpSolution]:
            if pos == num_eg:
                f = np.zeros(len(ext.edges), dtype=np.int64)
                f[:num_eg] = fvals
                for t in ext.terminals:
                    f[ext.source_edge(t)] = 1
                for s in sites:
                    f[ext.source_edge(s)] = x[s]
                if not _sink_values(ext, x, f):
                    return
                sol = IpSolution(dict(x), f)
                if is_ip_feasible(ext, sol).feasible:
                    yield sol
                return
            eid = order[pos]
            u, w = net.edges[eid]
            cap = net.edge_capacity[eid]
            rem_out[u] -= cap
            rem_in[w] -= cap
            for val in range(cap + 1):
                fvals[eid] = val
                out_sum[u] += val
                in_sum[w] += val
                if ok(u) and ok(w):
                    yield from walk(pos + 1)
                out_sum[u] -= val
                in_sum[w] -= val
            fvals[eid] = 0
            rem_out[u] += cap
            rem_in[w] += cap

        yield from walk(0)


def _enumerate_naive(ext: ExtendedGraph, x: dict[int, int]) -> Iterator[IpSolution]:
    """Full product space over original edges and sink edges, no pruning."""
    net = ext.instance.network
    req = ext.instance.request
    num_eg = len(net.edges)
    domains = [range(net.edge_capacity[e] + 1) for e in range(num_eg)]
    for s in ext.sites:
        domains.append(range(x[s], req.site_capacity[s] * x[s] + 1))
    domains.append(range(req.root_capacity + 1))
    for combo in itertools.product(*domains):
        f = np.zeros(len(ext.edges), dtype=np.int64)
        f[:num_eg] = combo[:num_eg]
        for i, s in enumerate(ext.sites):
            f[ext.site_sink_edge(s)] = combo[num_eg + i]
        f[ext.root_sink_edge()] = combo[-1]
        for t in ext.terminals:
            f[ext.source_edge(t)] = 1
        for s in ext.sites:
            f[ext.source_edge(s)] = x[s]
        sol = IpSolution(dict(x), f)
        if is_ip_feasible(ext, sol).feasible:
            yield sol


def _lex_key(ext: ExtendedGraph, sol: IpSolution) -> tuple:
    return (tuple(sol.x[s] for s in ext.sites), tuple(int(v) for v in sol.f))


def brute_force(ext: ExtendedGraph, naive: bool = False) -> OracleResult:
    """Exhaustive optimum; the reported point is the lexicographically first
    one among the optima, independent of enumeration order."""
    best: Optional[IpSolution] = None
    best_cost = None
    best_key = None
    count = 0
    for sol in enumerate_feasible(ext, naive=naive):
        count += 1
        c = cost_ip(ext, sol)
        key = _lex_key(ext, sol)
        if best_cost is None or c < best_cost - 1e-12 or (
            abs(c - best_cost) <= 1e-12 and key < best_key
        ):
            best, best_cost, best_key = sol, c, key
    if best is None:
        return OracleResult("infeasible", None, None, 0)
    return OracleResult("optimal", best_cost, best, count)
