"""Branch-and-cut engine.

One engine drives both formulations: LP relaxation, lazy cut rounds (for the
flow formulation), most-fractional branching on the activation variables
first, bound pruning against the incumbent, and periodic primal rounding.
Integral relaxation points never become incumbents directly; they are
certified by the decomposition (or the baseline's readout) so the product is
always a checked arborescence.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import lp
from .core import (
    CvsapError,
    Instance,
    Orientation,
    VirtualArborescence,
    build_extended_graph,
    cost_cvsap,
)
from .decompose import decompose
from .heuristics import flow_deco_round, prune_steiner_nodes
from .mcf import McfModel, build_mcf, mcf_to_va
from .scf import ScfFlags, IpSolution, build_scf
from .separation import CutRow, SeparationConfig, separate


@dataclass(frozen=True)
class SolverConfig:
    time_limit: float = 600.0
    node_limit: int = 1_000_000
    separation: SeparationConfig = field(default_factory=SeparationConfig)
    node_order: str = "best-bound"          # or "depth-first"
    heuristic_frequency: int = 25           # every k processed nodes; 0 disables
    integrality_tol: float = 1e-6
    root_cut_rounds: int = 50
    node_cut_rounds: int = 5
    seed: int = 0
    deterministic_time: bool = False        # logical clock in trace rows

    def __post_init__(self) -> None:
        if self.time_limit <= 0 or self.node_limit <= 0:
            raise CvsapError("limits must be positive")


@dataclass
class TraceRow:
    time_s: float
    primal: float
    dual: float
    gap: float
    cuts_steiner: int
    cuts_terminal: int
    nodes: int
    origin: str

    def csv(self) -> str:
        return (f"{self.time_s!r},{self.primal!r},{self.dual!r},{self.gap!r},"
                f"{self.cuts_steiner},{self.cuts_terminal},{self.nodes},{self.origin}")


TRACE_HEADER = "time_s,primal,dual,gap,cuts_steiner,cuts_terminal,nodes,origin"


def objective_gap(primal: float, dual: float) -> float:
    """|P - D| / |D|; infinite while there is no incumbent."""
    if math.isinf(primal) or math.isinf(dual):
        return float("inf")
    if dual == 0:
        return 0.0 if primal == 0 else float("inf")
    return abs(primal - dual) / abs(dual)


@dataclass
class SolveReport:
    status: str                              # optimal | feasible | infeasible | limit
    incumbent: Optional[VirtualArborescence]
    incumbent_cost: float
    dual_bound: float
    gap: float
    trace: list[TraceRow]
    cut_counts: dict[str, int]
    nodes_processed: int
    timings: dict[str, float]
    incumbent_origin: Optional[str]
    root_bound_pre_cuts: float = float("-inf")
    root_bound_post_cuts: float = float("-inf")

    def trace_csv(self) -> str:
        return "\n".join([TRACE_HEADER] + [r.csv() for r in self.trace]) + "\n"


class ScfAdapter:
    """The single-commodity model plus its lazy separation and certification."""

    def __init__(self, inst: Instance, sep_cfg: SeparationConfig,
                 flags: ScfFlags | None = None):
        self.inst = inst
        self.ext = build_extended_graph(inst)
        self.flags = flags or ScfFlags(include_terminal_cuts=sep_cfg.use_terminal_cuts)
        self.model = build_scf(self.ext, self.flags)
        self.problem = self.model.to_lp()
        self.sep_cfg = sep_cfg
        self.integer_vars = list(range(self.model.num_vars))
        self.branch_groups = [
            [self.model.x_var(s) for s in self.ext.sites],
            list(range(self.model.num_flow_vars)),
        ]
        net = inst.network
        self.integral_objective = all(float(c).is_integer() for c in net.edge_cost) and all(
            float(inst.request.site_cost[s]).is_integer() for s in inst.request.steiner_sites)

    def find_cuts(self, sol: lp.LpSolution) -> list[CutRow]:
        x_hat, f_hat = self.model.point(sol)
        return separate(self.ext, x_hat, f_hat, self.sep_cfg)

    def cut_to_row(self, cut: CutRow) -> tuple[dict[int, float], str, float]:
        coeffs: dict[int, float] = {}
        for eid in range(len(self.ext.edges)):
            if not self.ext.is_restricted(eid):
                continue
            u, w = self.ext.edges[eid]
            if u in cut.node_set and w not in cut.node_set:
                coeffs[self.model.f_var(eid)] = 1.0
        if cut.source_kind == "site":
            coeffs[self.model.x_var(cut.source)] = -1.0
            return coeffs, lp.GE, 0.0
        return coeffs, lp.GE, 1.0

    def certify(self, sol: lp.LpSolution) -> VirtualArborescence:
        x = {s: int(round(sol.x[self.model.x_var(s)])) for s in self.ext.sites}
        f = np.rint(sol.x[: self.model.num_flow_vars]).astype(np.int64)
        va = decompose(self.ext, IpSolution(x, f))
        return prune_steiner_nodes(self.ext, va)

    def heuristic(self, sol: lp.LpSolution, seed: int) -> Optional[VirtualArborescence]:
        x_hat, f_hat = self.model.point(sol)
        return flow_deco_round(self.ext, x_hat, f_hat, seed)

    def va_cost(self, va: VirtualArborescence) -> float:
        return cost_cvsap(self.inst, va)


class McfAdapter:
    """The static baseline model run through the same engine, separation off."""

    def __init__(self, inst: Instance, starred: bool = True):
        self.inst = inst
        self.mcf: McfModel = build_mcf(inst, starred=starred)
        self.problem = self.mcf.problem
        self.ext = build_extended_graph(inst)
        self.integer_vars = self.mcf.integer_vars()
        self.branch_groups = self.mcf.branch_groups()
        net = inst.network
        self.integral_objective = all(float(c).is_integer() for c in net.edge_cost) and all(
            float(inst.request.site_cost[s]).is_integer() for s in inst.request.steiner_sites)

    def find_cuts(self, sol: lp.LpSolution) -> list[CutRow]:
        return []

    def cut_to_row(self, cut: CutRow):  # pragma: no cover - never called
        raise CvsapError("the baseline model has no lazy cuts")

    def certify(self, sol: lp.LpSolution) -> VirtualArborescence:
        va = mcf_to_va(self.mcf, self.mcf.solution(np.asarray(sol.x)))
        return prune_steiner_nodes(self.ext, va)

    def heuristic(self, sol: lp.LpSolution, seed: int) -> Optional[VirtualArborescence]:
        return None

    def va_cost(self, va: VirtualArborescence) -> float:
        return cost_cvsap(self.inst, va)


@dataclass
class _Node:
    bound: float
    seq: int
    depth: int
    bounds: dict[int, tuple[float, float]]
    basis: Optional[lp.Basis]

    def sort_key(self) -> tuple:
        return (self.bound, self.seq)


class _Engine:
    def __init__(self, adapter, cfg: SolverConfig):
        self.adapter = adapter
        self.cfg = cfg
        self.t0 = time.monotonic()
        self.ticks = 0
        self.incumbent: Optional[VirtualArborescence] = None
        self.incumbent_cost = float("inf")
        self.incumbent_origin: Optional[str] = None
        self.cut_counts = {"steiner": 0, "terminal": 0}
        self.cut_keys: set[tuple] = set()
        self.trace: list[TraceRow] = []
        self.nodes_processed = 0
        self.open: list[tuple[tuple, _Node]] = []
        self.seq = 0
        self.published_dual = float("-inf")
        self.current_bound = float("inf")
        self.last_trace_time = -10.0
        self.timings = {"lp": 0.0, "separation": 0.0, "heuristic": 0.0,
                        "certify": 0.0, "total": 0.0}
        self.root_pre = float("-inf")
        self.root_post = float("-inf")
        self.status_override: Optional[str] = None

    # -- clocks and traces --------------------------------------------------

    def now(self) -> float:
        if self.cfg.deterministic_time:
            return self.ticks * 1e-3
        return time.monotonic() - self.t0

    def raw_dual(self) -> float:
        vals = [n.bound for _, n in self.open]
        if self.current_bound < float("inf"):
            vals.append(self.current_bound)
        if not vals:
            return self.incumbent_cost
        return min(vals)

    def emit(self, origin: str = "", force: bool = False) -> None:
        d_raw = min(self.raw_dual(), self.incumbent_cost)
        self.published_dual = max(self.published_dual, d_raw)
        t = self.now()
        if not force and t - self.last_trace_time < 1.0 and not origin:
            return
        self.last_trace_time = t
        self.trace.append(TraceRow(
            t, self.incumbent_cost, self.published_dual,
            objective_gap(self.incumbent_cost, self.published_dual),
            self.cut_counts["steiner"], self.cut_counts["terminal"],
            self.nodes_processed, origin))

    # -- helpers ------------------------------------------------------------

    def effective(self, bound: float) -> float:
        if self.adapter.integral_objective and math.isfinite(bound):
            return max(bound, math.ceil(bound - 1e-6))
        return bound

    def out_of_limits(self) -> bool:
        if self.nodes_processed >= self.cfg.node_limit:
            return True
        return (time.monotonic() - self.t0) >= self.cfg.time_limit

    def solve_lp(self, node: _Node, warm: Optional[lp.Basis]) -> lp.LpSolution:
        t = time.monotonic()
        sol = lp.solve(self.adapter.problem, warm=warm, bounds_override=node.bounds)
        self.timings["lp"] += time.monotonic() - t
        self.ticks += 1
        return sol

    def integral(self, sol: lp.LpSolution) -> bool:
        tol = self.cfg.integrality_tol
        xs = sol.x
        return all(abs(xs[j] - round(xs[j])) <= tol for j in self.adapter.integer_vars)

    def try_incumbent(self, va: VirtualArborescence, origin: str) -> bool:
        cost = self.adapter.va_cost(va)
        if cost < self.incumbent_cost - 1e-12:
            self.incumbent = va
            self.incumbent_cost = cost
            self.incumbent_origin = origin
            self.emit(origin=origin, force=True)
            return True
        return False

    def push(self, node: _Node) -> None:
        if self.cfg.node_order == "depth-first":
            self.open.append(((0,), node))
        else:
            heapq.heappush(self.open, (node.sort_key(), node))

    def pop(self) -> _Node:
        if self.cfg.node_order == "depth-first":
            return self.open.pop()[1]
        return heapq.heappop(self.open)[1]

    # -- the main loop ------------------------------------------------------

    def run(self) -> SolveReport:
        root = _Node(float("-inf"), self.next_seq(), 0, {}, None)
        self.push(root)
        hit_limit = False
        while self.open:
            if self.out_of_limits():
                hit_limit = True
                break
            node = self.pop()
            if self.effective(node.bound) >= self.incumbent_cost - 1e-9:
                continue
            self.process(node)
            self.nodes_processed += 1
            self.emit()
        self.current_bound = float("inf")
        total = time.monotonic() - self.t0
        self.timings["total"] = total
        if self.status_override:
            status = self.status_override
        elif hit_limit or self.open:
            status = "feasible" if self.incumbent is not None else "limit"
        else:
            status = "optimal" if self.incumbent is not None else "infeasible"
        if status == "optimal":
            self.published_dual = self.incumbent_cost
        elif status == "infeasible":
            self.published_dual = float("inf")
        self.emit(force=True)
        gap = objective_gap(self.incumbent_cost, self.published_dual)
        if status == "optimal":
            gap = 0.0
        return SolveReport(
            status=status,
            incumbent=self.incumbent,
            incumbent_cost=self.incumbent_cost,
            dual_bound=self.published_dual,
            gap=gap,
            trace=self.trace,
            cut_counts=dict(self.cut_counts),
            nodes_processed=self.nodes_processed,
            timings=dict(self.timings),
            incumbent_origin=self.incumbent_origin,
            root_bound_pre_cuts=self.root_pre,
            root_bound_post_cuts=self.root_post,
        )

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def process(self, node: _Node) -> None:
        cfg = self.cfg
        is_root = node.depth == 0
        cap = cfg.root_cut_rounds if is_root else cfg.node_cut_rounds
        rounds = 0
        warm = node.basis
        sol = self.solve_lp(node, warm)
        while True:
            if sol.status == lp.LpStatus.INFEASIBLE:
                self.current_bound = float("inf")
                return
            if sol.status != lp.LpStatus.OPTIMAL:
                raise CvsapError(f"LP breakdown at a node: {sol.status}")
            node.bound = sol.objective
            self.current_bound = sol.objective
            if is_root and self.root_pre == float("-inf"):
                self.root_pre = sol.objective
            if self.effective(node.bound) >= self.incumbent_cost - 1e-9:
                self.current_bound = float("inf")
                return
            integral = self.integral(sol)
            cuts: list[CutRow] = []
            if integral or rounds < cap:
                t = time.monotonic()
                cuts = self.adapter.find_cuts(sol)
                self.timings["separation"] += time.monotonic() - t
            fresh = [c for c in cuts if c.key() not in self.cut_keys]
            if fresh:
                for cut in fresh:
                    self.cut_keys.add(cut.key())
                    coeffs, sense, rhs = self.adapter.cut_to_row(cut)
                    self.adapter.problem.add_row(coeffs, sense, rhs)
                    if cut.source_kind == "site":
                        self.cut_counts["steiner"] += 1
                    else:
                        self.cut_counts["terminal"] += 1
                rounds += 1
                sol = self.solve_lp(node, sol.basis)
                continue
            if integral:
                if cuts:
                    raise CvsapError("violated cuts re-emitted for rows already present")
                if is_root and self.root_post == float("-inf"):
                    self.root_post = sol.objective
                t = time.monotonic()
                va = self.adapter.certify(sol)
                self.timings["certify"] += time.monotonic() - t
                self.try_incumbent(va, "integral-relaxation")
                self.current_bound = float("inf")
                return
            if is_root and self.root_post == float("-inf"):
                self.root_post = sol.objective
            self.maybe_heuristic(sol)
            self.branch(node, sol)
            self.current_bound = float("inf")
            return

    def maybe_heuristic(self, sol: lp.LpSolution) -> None:
        k = self.cfg.heuristic_frequency
        if not k or (self.nodes_processed % k) != 0:
            return
        t = time.monotonic()
        va = self.adapter.heuristic(sol, self.cfg.seed + self.nodes_processed)
        self.timings["heuristic"] += time.monotonic() - t
        if va is not None:
            self.try_incumbent(va, "heuristic")

    def branch(self, node: _Node, sol: lp.LpSolution) -> None:
        tol = self.cfg.integrality_tol
        target = -1
        best_frac = tol
        for group in self.adapter.branch_groups:
            for j in group:
                v = sol.x[j]
                frac = min(v - math.floor(v), math.ceil(v) - v)
                if frac > best_frac + 1e-12:
                    target, best_frac = j, frac
            if target >= 0:
                break
        if target < 0:
            raise CvsapError("branching requested on an integral point")
        v = sol.x[target]
        base_lo, base_hi = self._bounds_of(node, target)
        lo_child = dict(node.bounds)
        lo_child[target] = (base_lo, float(math.floor(v)))
        hi_child = dict(node.bounds)
        hi_child[target] = (float(math.ceil(v)), base_hi)
        floor_node = _Node(node.bound, self.next_seq(), node.depth + 1, lo_child, sol.basis)
        ceil_node = _Node(node.bound, self.next_seq(), node.depth + 1, hi_child, sol.basis)
        # depth-first pops the ceiling child first
        self.push(floor_node)
        self.push(ceil_node)

    def _bounds_of(self, node: _Node, j: int) -> tuple[float, float]:
        if j in node.bounds:
            return node.bounds[j]
        return self.adapter.problem.lower[j], self.adapter.problem.upper[j]


def solve_adapter(adapter, cfg: SolverConfig) -> SolveReport:
    return _Engine(adapter, cfg).run()


def solve(inst: Instance, cfg: SolverConfig | None = None,
          formulation: str = "scf", mcf_starred: bool = True) -> SolveReport:
    """Solve an aggregation instance to proven optimality (within limits)."""
    cfg = cfg or SolverConfig()
    if inst.request.orientation is not Orientation.AGGREGATION:
        raise CvsapError("solve requires aggregation orientation; reverse first")
    if formulation == "scf":
        adapter = ScfAdapter(inst, cfg.separation)
    elif formulation == "mcf":
        adapter = McfAdapter(inst, starred=mcf_starred)
    else:
        raise CvsapError(f"unknown formulation {formulation!r}")
    return solve_adapter(adapter, cfg)


@dataclass(frozen=True)
class RootBound:
    pre_cuts: float
    post_cuts: float
    cuts_steiner: int
    cuts_terminal: int


def root_bound(inst: Instance, cfg: SolverConfig | None = None,
               formulation: str = "scf") -> RootBound:
    """Dual bound at the root only: the plain relaxation and the value after
    the cut loop has run to quiescence."""
    cfg = cfg or SolverConfig()
    if formulation == "scf":
        adapter = ScfAdapter(inst, cfg.separation)
    else:
        adapter = McfAdapter(inst)
    sol = lp.solve(adapter.problem)
    if sol.status == lp.LpStatus.INFEASIBLE:
        return RootBound(float("inf"), float("inf"), 0, 0)
    if sol.status != lp.LpStatus.OPTIMAL:
        raise CvsapError(f"LP breakdown at the root: {sol.status}")
    pre = sol.objective
    keys: set[tuple] = set()
    counts = {"site": 0, "terminal": 0}
    for _ in range(cfg.root_cut_rounds):
        cuts = adapter.find_cuts(sol)
        fresh = [c for c in cuts if c.key() not in keys]
        if not fresh:
            break
        for cut in fresh:
            keys.add(cut.key())
            coeffs, sense, rhs = adapter.cut_to_row(cut)
            adapter.problem.add_row(coeffs, sense, rhs)
            counts[cut.source_kind] += 1
        sol = lp.solve(adapter.problem, warm=sol.basis)
        if sol.status == lp.LpStatus.INFEASIBLE:
            return RootBound(pre, float("inf"), counts["site"], counts["terminal"])
        if sol.status != lp.LpStatus.OPTIMAL:
            raise CvsapError(f"LP breakdown in the root cut loop: {sol.status}")
    return RootBound(pre, sol.objective, counts["site"], counts["terminal"])
