"""Reconstruction of a virtual arborescence from an integral flow point.

The flow is peeled one unit at a time: pick a pending terminal, walk a
flow-carrying path toward the root sink while decrementing, and whenever a
decrement strands an active site (no remaining route to the root sink over
the sink-free edges), revert it and reroute the walk inside the stranded
region toward the absorption sink.  A site whose absorption flow hits zero
is demoted to a pending terminal and later connected like one.  The result
is feasible and never costs more than the flow point it came from.
"""

from __future__ import annotations

from collections import deque
from typing import Callable, Optional

import numpy as np

from .core import (
    EDGE_ORIGINAL,
    EDGE_ROOT_SINK,
    CvsapError,
    ExtendedGraph,
    Path,
    VirtualArborescence,
)
from .scf import IpSolution, is_ip_feasible


class DecompositionDefect(CvsapError):
    """A path guaranteed to exist was not found: the input was not a feasible
    integral point, or there is a bug.  Never a recoverable condition."""


def simplify(path: Path) -> Path:
    """Remove cycles from a walk by splicing out everything between repeated
    visits; endpoints are preserved."""
    verts = path.vertices
    if not verts:
        raise CvsapError("simplify needs a nonempty walk")
    out: list[int] = []
    pos: dict[int, int] = {}
    for v in verts:
        if v in pos:
            for w in out[pos[v] + 1:]:
                del pos[w]
            del out[pos[v] + 1:]
        else:
            pos[v] = len(out)
            out.append(v)
    return Path(tuple(out))


def _reach(ext: ExtendedGraph, f: np.ndarray, start: int) -> set[int]:
    """Forward reachability over flow-carrying E^R edges."""
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for eid in ext.out_edges[v]:
            if f[eid] < 1 or not ext.is_restricted(eid):
                continue
            w = ext.edges[eid][1]
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def _reach_reverse(ext: ExtendedGraph, f: np.ndarray, start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for eid in ext.in_edges[v]:
            if f[eid] < 1 or not ext.is_restricted(eid):
                continue
            u = ext.edges[eid][0]
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return seen


def check_connectivity(
    ext: ExtendedGraph, f: np.ndarray, active: set[int]
) -> Optional[tuple[int, frozenset[int]]]:
    """None when every given site reaches the root sink over flow-carrying
    E^R edges; otherwise (site, W) where W certifies the violation."""
    n = ext.instance.network.num_nodes
    for s in sorted(active):
        reach = _reach(ext, f, s)
        if ext.root_sink not in reach:
            return s, frozenset(v for v in reach if v < n)
    return None


def _check_after_removal(
    ext: ExtendedGraph, f: np.ndarray, active: set[int], tail: int
) -> Optional[tuple[int, frozenset[int]]]:
    """Connectivity re-check after the edge out of ``tail`` lost its last
    unit: only sites that can reach ``tail`` can be affected."""
    fwd = _reach(ext, f, tail)
    if ext.root_sink in fwd:
        return None
    rev = _reach_reverse(ext, f, tail)
    n = ext.instance.network.num_nodes
    for s in sorted(active):
        if s not in rev:
            continue
        reach = _reach(ext, f, s)
        if ext.root_sink not in reach:
            return s, frozenset(v for v in reach if v < n)
    return None


def _dfs_path(ext: ExtendedGraph, f: np.ndarray, start: int,
              accept: Callable[[int], bool],
              allowed: Callable[[int, int], bool]) -> list[int] | None:
    """First simple path (deterministic DFS, ascending edge ids) from
    ``start`` to a node satisfying ``accept``, over flow-carrying edges that
    pass ``allowed(eid, head)``."""
    parent: dict[int, int] = {start: -1}
    stack = [start]
    while stack:
        v = stack.pop()
        if accept(v):
            trail = [v]
            while parent[trail[-1]] != -1:
                trail.append(parent[trail[-1]])
            trail.reverse()
            return trail
        for eid in reversed(ext.out_edges[v]):
            if f[eid] < 1:
                continue
            w = ext.edges[eid][1]
            if w in parent or not allowed(eid, w):
                continue
            parent[w] = v
            stack.append(w)
    return None


def decompose(ext: ExtendedGraph, sol: IpSolution, check: bool = True,
              debug: bool = False) -> VirtualArborescence:
    """Turn a feasible integral point into a feasible arborescence.

    Requires the absorption rows to hold (active sites absorb at least one
    unit).  ``debug`` re-verifies connectivity from scratch after every flow
    change.
    """
    if check:
        report = is_ip_feasible(ext, sol)
        if not report.feasible:
            broken = {k: v for k, v in report.violations.items() if v}
            raise CvsapError(f"decompose precondition violated: {broken}")
    inst = ext.instance
    root = inst.request.root
    f = np.array(sol.f, dtype=np.int64)
    active = {s for s in ext.sites if sol.x.get(s, 0) >= 1}
    initial_active = frozenset(active)
    pending: deque[int] = deque(sorted(ext.terminals))
    nodes = {root} | set(ext.terminals) | set(initial_active)
    edges: set[tuple[int, int]] = set()
    paths: dict[tuple[int, int], Path] = {}
    sink_flow = {s: ext.site_sink_edge(s) for s in ext.sites}

    def restricted_ok(eid: int, _w: int) -> bool:
        return ext.is_restricted(eid)

    while pending:
        t = pending.popleft()
        tail = _dfs_path(ext, f, t, lambda v: v == ext.root_sink, restricted_ok)
        if tail is None:
            raise DecompositionDefect(f"no flow-carrying route from {t} to the root sink")
        P = [ext.super_source] + tail
        j = 0
        while j < len(P) - 1:
            eid = ext.edge_id(P[j], P[j + 1])
            if f[eid] < 1:
                raise DecompositionDefect(f"walk uses empty edge {ext.edges[eid]}")
            f[eid] -= 1
            viol = None
            if (
                f[eid] == 0
                and ext.edge_kind[eid] in (EDGE_ORIGINAL, EDGE_ROOT_SINK)
            ):
                viol = _check_after_removal(ext, f, active, P[j])
            if debug:
                full = check_connectivity(ext, f, active)
                assert (viol is None) == (full is None), "incremental check disagrees"
            if viol is not None:
                s_bad, region = viol
                f[eid] += 1
                if debug:
                    assert P[j] in region, "decremented tail must lie in the violated set"

                def absorbing(v: int, region=region) -> bool:
                    e = sink_flow.get(v)
                    return e is not None and v in region and f[e] >= 1

                alt = _dfs_path(
                    ext, f, P[j], absorbing,
                    lambda e, w, region=region: (
                        ext.edge_kind[e] == EDGE_ORIGINAL and w in region),
                )
                if alt is None:
                    raise DecompositionDefect(
                        f"no absorption route inside the stranded region of site {s_bad}")
                eid2 = ext.edge_id(alt[0], alt[1]) if len(alt) > 1 else sink_flow[alt[0]]
                f[eid2] -= 1
                P = P[: j + 1] + alt[1:] + [ext.steiner_sink]
                if debug:
                    assert check_connectivity(ext, f, active) is None, (
                        "rerouting broke connectivity")
            j += 1
        last, second_last = P[-1], P[-2]
        if last == ext.steiner_sink and f[sink_flow[second_last]] == 0:
            active.discard(second_last)
            pending.append(second_last)
        edges.add((t, second_last))
        paths[(t, second_last)] = simplify(Path(tuple(P[1:-1])))

    if active:
        raise DecompositionDefect(f"sites never demoted: {sorted(active)}")
    return VirtualArborescence(frozenset(nodes), frozenset(edges), root, paths)
