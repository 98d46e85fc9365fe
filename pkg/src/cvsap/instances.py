"""Seeded instance generators and the cvsap-1 file format.

Determinism contract: every generator is a pure function of its parameter
record (seed included), and the byte content of a written instance file is a
function of the instance alone.  Randomness comes from the raw 64-bit output
stream of numpy's PCG64 bit generator; bounded integers use rejection
sampling and shuffles are Fisher-Yates, so the mapping seed -> instance is
stable across library versions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Union

import numpy as np

from .core import CvsapError, Instance, Network, Orientation, Request, validate_instance

FORMAT_TAG = "cvsap-1"


class StableRng:
    """Deterministic helper over the raw PCG64 stream."""

    def __init__(self, seed: int):
        self._bg = np.random.PCG64(seed)

    def u64(self) -> int:
        return int(self._bg.random_raw())

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection on the top of the stream."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.u64()
            if r < limit:
                return r % n

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.u64() >> 11) * (1.0 / (1 << 53)))

    def shuffle(self, xs: list) -> None:
        for i in range(len(xs) - 1, 0, -1):
            j = self.below(i + 1)
            xs[i], xs[j] = xs[j], xs[i]

    def sample(self, xs: list, k: int) -> list:
        pool = list(xs)
        self.shuffle(pool)
        return pool[:k]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class GridParams:
    n: int
    seed: int = 0
    edge_capacity: int = 3
    node_capacity: int = 5      # root and Steiner sites
    edge_cost: float = 1.0
    site_cost: float = 20.0
    site_fraction: float = 0.20
    terminal_fraction: float = 0.25


def gen_grid(p: GridParams) -> Instance:
    """n x n grid with antiparallel directed lattice edges.

    Special node counts are round-half-up fractions of n^2; root, sites and
    terminals are sampled uniformly and disjointly (root first) from all
    cells.
    """
    if p.n < 3:
        raise CvsapError("grid side must be at least 3")
    if not (0 < p.site_fraction < 1 and 0 < p.terminal_fraction < 1):
        raise CvsapError("fractions must lie in (0,1)")
    n2 = p.n * p.n
    num_sites = _round_half_up(p.site_fraction * n2)
    num_terminals = _round_half_up(p.terminal_fraction * n2)
    if 1 + num_sites + num_terminals > n2:
        raise CvsapError("grid too small to place root, sites and terminals")

    edges: list[tuple[int, int]] = []
    for r in range(p.n):
        for c in range(p.n):
            v = r * p.n + c
            if c + 1 < p.n:
                edges.append((v, v + 1))
                edges.append((v + 1, v))
            if r + 1 < p.n:
                edges.append((v, v + p.n))
                edges.append((v + p.n, v))

    rng = StableRng(p.seed)
    cells = list(range(n2))
    rng.shuffle(cells)
    root = cells[0]
    sites = sorted(cells[1:1 + num_sites])
    terminals = sorted(cells[1 + num_sites:1 + num_sites + num_terminals])

    net = Network(
        num_nodes=n2,
        edges=tuple(edges),
        edge_cost=tuple(float(p.edge_cost) for _ in edges),
        edge_capacity=tuple(int(p.edge_capacity) for _ in edges),
    )
    req = Request(
        root=root,
        steiner_sites=frozenset(sites),
        terminals=frozenset(terminals),
        root_capacity=p.node_capacity,
        site_cost={s: float(p.site_cost) for s in sites},
        site_capacity={s: int(p.node_capacity) for s in sites},
        orientation=Orientation.AGGREGATION,
    )
    inst = Instance(net, req)
    report = validate_instance(inst)
    assert report.ok, report.violations
    return inst


@dataclass(frozen=True)
class ClusterParams:
    """Clustered ISP-like topology (an emulation, not a port of the original
    generator; edge counts are only approximately reproducible)."""

    total_nodes: int
    pops_per_cluster: int
    internal_pop_links: int
    pop_peer_links: int
    site_count: int
    terminal_count: int
    seed: int = 0
    cluster_grid: tuple[int, int] = (20, 6)
    inter_pop_capacity: int = 10
    intra_as_capacity: int = 2
    node_capacity: int = 5      # root and Steiner sites
    site_cost_range: tuple[float, float] = (25.0, 75.0)


IGEN1600 = ClusterParams(
    total_nodes=1600, pops_per_cluster=3, internal_pop_links=2,
    pop_peer_links=2, site_count=200, terminal_count=300)
IGEN3200 = ClusterParams(
    total_nodes=3200, pops_per_cluster=4, internal_pop_links=3,
    pop_peer_links=2, site_count=400, terminal_count=600)


def gen_cluster(p: ClusterParams) -> Instance:
    """Clustered topology: PoPs per cluster, internal nodes attached to their
    nearest PoPs, PoPs peered via a thinned Delaunay triangulation.

    Edge costs are Euclidean lengths; activation costs are the mean edge
    length times U(25, 75).  The root is a PoP and is excluded from the
    Steiner sites; terminals are non-PoP nodes.
    """
    h, v = p.cluster_grid
    num_clusters = h * v
    if p.total_nodes < num_clusters * (p.pops_per_cluster + 1):
        raise CvsapError("not enough nodes for the cluster grid")
    total_pops = num_clusters * p.pops_per_cluster
    if p.site_count > total_pops - 1:
        raise CvsapError("site_count exceeds the PoPs available beside the root")
    if p.terminal_count > p.total_nodes - total_pops:
        raise CvsapError("terminal_count exceeds the non-PoP nodes")

    rng = StableRng(p.seed)
    xs = np.array([rng.uniform() for _ in range(p.total_nodes)])
    ys = np.array([rng.uniform() for _ in range(p.total_nodes)])

    cluster_of = np.minimum((xs * h).astype(int), h - 1) * v + np.minimum(
        (ys * v).astype(int), v - 1)

    pops: list[int] = []
    for c in range(num_clusters):
        members = np.flatnonzero(cluster_of == c)
        if len(members) < p.pops_per_cluster + 1:
            raise CvsapError(f"cluster {c} has too few nodes; choose another seed")
        cx, cy = xs[members].mean(), ys[members].mean()
        d2 = (xs[members] - cx) ** 2 + (ys[members] - cy) ** 2
        order = members[np.lexsort((members, d2))]
        pops.extend(int(x) for x in order[: p.pops_per_cluster])
    pop_set = set(pops)

    und: set[tuple[int, int]] = set()

    def link(a: int, b: int) -> None:
        und.add((min(a, b), max(a, b)))

    # internal nodes to their nearest intra-cluster PoPs
    for c in range(num_clusters):
        cluster_pops = [q for q in pops if cluster_of[q] == c]
        parr = np.array(cluster_pops)
        for u in np.flatnonzero(cluster_of == c):
            u = int(u)
            if u in pop_set:
                continue
            d2 = (xs[parr] - xs[u]) ** 2 + (ys[parr] - ys[u]) ** 2
            order = parr[np.lexsort((parr, d2))]
            for q in order[: p.internal_pop_links]:
                link(u, int(q))

    # PoP peering: Delaunay neighbours, thinned to the nearest ones
    from scipy.spatial import Delaunay

    parr = np.array(sorted(pops))
    points = np.column_stack([xs[parr], ys[parr]])
    tri = Delaunay(points)
    neighbours: dict[int, set[int]] = {int(q): set() for q in parr}
    for simplex in tri.simplices:
        for i in range(3):
            a, b = int(parr[simplex[i]]), int(parr[simplex[(i + 1) % 3]])
            neighbours[a].add(b)
            neighbours[b].add(a)
    for q in sorted(neighbours):
        cand = sorted(neighbours[q])
        d2 = [(xs[q] - xs[w]) ** 2 + (ys[q] - ys[w]) ** 2 for w in cand]
        order = [w for _, w in sorted(zip(d2, cand))]
        for w in order[: p.pop_peer_links]:
            link(q, w)

    # connectivity repair: join components by their closest PoP pair
    def components() -> list[set[int]]:
        adj: dict[int, list[int]] = {i: [] for i in range(p.total_nodes)}
        for (a, b) in und:
            adj[a].append(b)
            adj[b].append(a)
        seen: set[int] = set()
        comps = []
        for s in range(p.total_nodes):
            if s in seen:
                continue
            comp = {s}
            stack = [s]
            seen.add(s)
            while stack:
                x = stack.pop()
                for y in adj[x]:
                    if y not in seen:
                        seen.add(y)
                        comp.add(y)
                        stack.append(y)
            comps.append(comp)
        return comps

    comps = components()
    while len(comps) > 1:
        comps.sort(key=len, reverse=True)
        main, rest = comps[0], comps[1]
        a_pops = sorted(q for q in main if q in pop_set) or sorted(main)
        b_pops = sorted(q for q in rest if q in pop_set) or sorted(rest)
        best = None
        for a in a_pops:
            for b in b_pops:
                d2 = (xs[a] - xs[b]) ** 2 + (ys[a] - ys[b]) ** 2
                if best is None or d2 < best[0]:
                    best = (d2, a, b)
        link(best[1], best[2])
        comps = components()

    edge_list = sorted(und)
    edges: list[tuple[int, int]] = []
    cost: list[float] = []
    cap: list[int] = []
    for (a, b) in edge_list:
        d = math.dist((xs[a], ys[a]), (xs[b], ys[b]))
        c = max(d, 1e-9)
        k = p.inter_pop_capacity if (a in pop_set and b in pop_set) else p.intra_as_capacity
        for arc in ((a, b), (b, a)):
            edges.append(arc)
            cost.append(c)
            cap.append(k)

    mean_len = sum(cost) / len(cost)
    pop_pool = sorted(pop_set)
    root = pop_pool[rng.below(len(pop_pool))]
    sites = sorted(rng.sample([q for q in pop_pool if q != root], p.site_count))
    non_pops = sorted(set(range(p.total_nodes)) - pop_set)
    terminals = sorted(rng.sample(non_pops, p.terminal_count))
    lo, hi = p.site_cost_range
    site_cost = {s: mean_len * rng.uniform(lo, hi) for s in sites}

    net = Network(p.total_nodes, tuple(edges), tuple(cost), tuple(cap))
    req = Request(
        root=root,
        steiner_sites=frozenset(sites),
        terminals=frozenset(terminals),
        root_capacity=p.node_capacity,
        site_cost=site_cost,
        site_capacity={s: p.node_capacity for s in sites},
        orientation=Orientation.AGGREGATION,
    )
    inst = Instance(net, req)
    report = validate_instance(inst)
    assert report.ok, report.violations
    return inst


def instance_to_dict(inst: Instance) -> dict:
    net, req = inst.network, inst.request
    return {
        "format": FORMAT_TAG,
        "nodes": net.num_nodes,
        "edges": [
            [t, h, net.edge_cost[i], net.edge_capacity[i]]
            for i, (t, h) in enumerate(net.edges)
        ],
        "root": req.root,
        "root_capacity": req.root_capacity,
        "steiner_sites": [
            [s, req.site_cost[s], req.site_capacity[s]] for s in sorted(req.steiner_sites)
        ],
        "terminals": sorted(req.terminals),
        "orientation": req.orientation.value,
    }


def instance_from_dict(doc: dict) -> Instance:
    if not isinstance(doc, dict):
        raise CvsapError("instance document must be a JSON object")
    tag = doc.get("format")
    if tag != FORMAT_TAG:
        raise CvsapError(f"unsupported format version: {tag!r}")
    for key in ("nodes", "edges", "root", "root_capacity", "steiner_sites",
                "terminals", "orientation"):
        if key not in doc:
            raise CvsapError(f"missing field {key!r}")
    try:
        edges = tuple((int(t), int(h)) for t, h, _, _ in doc["edges"])
        cost = tuple(float(c) for _, _, c, _ in doc["edges"])
        cap = tuple(int(u) for _, _, _, u in doc["edges"])
        net = Network(int(doc["nodes"]), edges, cost, cap)
        sites = {int(s): (float(c), int(u)) for s, c, u in doc["steiner_sites"]}
        req = Request(
            root=int(doc["root"]),
            steiner_sites=frozenset(sites),
            terminals=frozenset(int(t) for t in doc["terminals"]),
            root_capacity=int(doc["root_capacity"]),
            site_cost={s: c for s, (c, _) in sites.items()},
            site_capacity={s: u for s, (_, u) in sites.items()},
            orientation=Orientation(doc["orientation"]),
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise CvsapError(f"malformed instance document: {exc}") from exc
    return Instance(net, req)


def write_instance(inst: Instance, path: Union[str, IO[str]]) -> None:
    text = json.dumps(instance_to_dict(inst), indent=1) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def read_instance(path: Union[str, IO[str]]) -> Instance:
    if hasattr(path, "read"):
        doc = json.load(path)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    return instance_from_dict(doc)


def solution_to_dict(inst: Instance, va, cost: float) -> dict:
    return {
        "format": FORMAT_TAG,
        "active_sites": sorted(va.nodes & inst.request.steiner_sites),
        "virtual_edges": [
            {"tail": u, "head": w, "path": list(va.edge_paths[(u, w)].vertices)}
            for (u, w) in sorted(va.virtual_edges)
        ],
        "cost": cost,
    }


def solution_from_dict(doc: dict, root: int | None = None):
    from .core import Path, VirtualArborescence

    if doc.get("format") != FORMAT_TAG:
        raise CvsapError(f"unsupported format version: {doc.get('format')!r}")
    edges = set()
    paths = {}
    nodes = set(int(s) for s in doc["active_sites"])
    for rec in doc["virtual_edges"]:
        u, w = int(rec["tail"]), int(rec["head"])
        edges.add((u, w))
        paths[(u, w)] = Path(tuple(int(x) for x in rec["path"]))
        nodes.add(u)
        nodes.add(w)
    if root is None:
        # aggregation arborescences point at the root: the head that is no tail
        heads = {w for (_, w) in edges}
        tails = {u for (u, _) in edges}
        roots = heads - tails
        root = sorted(roots)[0] if roots else (sorted(nodes)[0] if nodes else 0)
    nodes.add(root)
    return VirtualArborescence(frozenset(nodes), frozenset(edges), root, paths), float(
        doc["cost"]
    )
