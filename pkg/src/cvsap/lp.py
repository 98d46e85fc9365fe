"""Bounded-variable linear programming core.

A dense revised simplex over box-bounded variables, built for the desk-scale
LPs this package produces (a few hundred rows).  Rows can be appended after a
solve (cut rows) and a basis token from an earlier solve warm-starts the next
one; new rows enter the basis through their slacks, so warm starts survive
both row growth and bound changes from branching.

Feasibility is restored by a composite phase 1 (piecewise-linear
infeasibility minimization) from whatever basis is given; phase 2 is a
textbook bounded-variable primal simplex with Dantzig pricing and a Bland
fallback once a degeneracy stall is detected.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import CvsapError

INF = float("inf")


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-7
    optimality: float = 1e-7
    pivot: float = 1e-7          # smaller pivots poison the basis
    stall_limit: int = 400       # iterations without progress before Bland's rule
    refactor_every: int = 100
    max_iterations: int = 200_000
    basis_blowup: float = 1e13   # reject warm bases with larger inverse entries


DEFAULT_TOL = Tolerances()


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"
    NUMERICAL = "numerical"


# row senses
LE, EQ, GE = "L", "E", "G"


@dataclass(frozen=True)
class Row:
    coeffs: tuple[tuple[int, float], ...]
    sense: str
    rhs: float
    name: str


@dataclass(frozen=True)
class Basis:
    """Opaque warm-start token.

    ``basic`` lists the basic columns in row order; nonbasic columns in
    ``at_upper`` rest at their upper bound.  Slack columns are encoded as
    ("s", row index), structural columns as ("x", column index), which keeps
    tokens valid when rows are appended later.
    """

    basic: tuple[tuple[str, int], ...]
    at_upper: frozenset[tuple[str, int]]


class LpProblem:
    """min c'x subject to box bounds and linear rows; single-writer."""

    def __init__(self) -> None:
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.obj: list[float] = []
        self.names: list[str] = []
        self.rows: list[Row] = []

    @property
    def num_vars(self) -> int:
        return len(self.obj)

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    def add_variable(self, lower: float, upper: float, obj: float = 0.0,
                     name: str | None = None) -> int:
        if lower > upper:
            raise CvsapError(f"variable bounds crossed: [{lower}, {upper}]")
        idx = len(self.obj)
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.obj.append(float(obj))
        self.names.append(name or f"C{idx + 1:07d}")
        return idx

    def add_row(self, coeffs: Mapping[int, float], sense: str, rhs: float,
                name: str | None = None) -> int:
        if sense not in (LE, EQ, GE):
            raise CvsapError(f"unknown sense {sense!r}")
        for j in coeffs:
            if not (0 <= j < self.num_vars):
                raise CvsapError(f"row references unknown variable {j}")
        idx = len(self.rows)
        items = tuple(sorted((int(j), float(v)) for j, v in coeffs.items() if v != 0.0))
        self.rows.append(Row(items, sense, float(rhs), name or f"R{idx + 1:07d}"))
        return idx

    def add_rows(self, rows: Sequence[tuple[Mapping[int, float], str, float]]) -> list[int]:
        return [self.add_row(*r) for r in rows]

    def to_mps(self, name: str = "CVSAP") -> str:
        return to_mps(self, name)


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray                    # structural values
    objective: float
    duals: np.ndarray                # one multiplier per row (y = c_B B^-1)
    reduced_costs: np.ndarray        # structural reduced costs c - y A
    basis: Optional[Basis]
    iterations: int = 0
    rhs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def dual_objective(self, lower: Sequence[float], upper: Sequence[float]) -> float:
        """b'y plus the bound terms; equals the primal objective at optimality."""
        extra = 0.0
        for j, rc in enumerate(self.reduced_costs):
            if rc > 1e-12 and np.isfinite(lower[j]):
                extra += rc * lower[j]
            elif rc < -1e-12 and np.isfinite(upper[j]):
                extra += rc * upper[j]
        return float(self.duals @ self.rhs) + extra


def _slack_bounds(sense: str) -> tuple[float, float]:
    if sense == LE:
        return 0.0, INF
    if sense == GE:
        return -INF, 0.0
    return 0.0, 0.0


class _Simplex:
    def __init__(self, problem: LpProblem, tol: Tolerances,
                 bounds_override: Mapping[int, tuple[float, float]] | None):
        n, m = problem.num_vars, problem.num_rows
        self.n, self.m = n, m
        self.tol = tol
        ncols = n + m
        self.A = np.zeros((m, ncols))
        self.b = np.zeros(m)
        for i, row in enumerate(problem.rows):
            for j, v in row.coeffs:
                self.A[i, j] = v
            self.A[i, n + i] = 1.0
            self.b[i] = row.rhs
        self.c = np.zeros(ncols)
        self.c[:n] = problem.obj
        self.lower = np.empty(ncols)
        self.upper = np.empty(ncols)
        self.lower[:n] = problem.lower
        self.upper[:n] = problem.upper
        if bounds_override:
            for j, (lo, hi) in bounds_override.items():
                self.lower[j], self.upper[j] = lo, hi
        for i, row in enumerate(problem.rows):
            self.lower[n + i], self.upper[n + i] = _slack_bounds(row.sense)
        if np.any(self.lower[:n] == -INF) or np.any(self.upper[:n] == INF):
            raise CvsapError("structural variables must be box-bounded")
        self.trivially_infeasible = bool(np.any(self.lower > self.upper))
        self.basic = np.arange(n, ncols)
        self.in_basis = np.zeros(ncols, dtype=bool)
        self.in_basis[n:] = True
        self.at_upper = np.zeros(ncols, dtype=bool)
        self.Binv = np.eye(m)
        self.xB = np.zeros(m)
        self.iterations = 0
        self.bland = False
        self._stall = 0
        self._last_measure = INF
        self._pivots_since_factor = 0

    # -- basis bookkeeping ------------------------------------------------

    def reset_slack_basis(self) -> None:
        n, m = self.n, self.m
        self.basic = np.arange(n, n + m)
        self.in_basis[:] = False
        self.in_basis[n:] = True
        self.at_upper[:] = False
        self._normalize_statuses()
        self.refactor()

    def _normalize_statuses(self) -> None:
        # a nonbasic column must rest at a finite bound
        for j in np.flatnonzero(~self.in_basis):
            if self.lower[j] == -INF:
                self.at_upper[j] = True

    def load_basis(self, basis: Basis) -> bool:
        n, m = self.n, self.m
        cols: list[int] = []
        for kind, idx in basis.basic:
            col = idx if kind == "x" else n + idx
            if not (0 <= col < n + m):
                return False
            cols.append(col)
        if len(cols) > m:
            return False
        have = set(cols)
        # rows appended after the token was made contribute their slacks
        for i in range(m):
            if len(cols) == m:
                break
            if (n + i) not in have:
                cols.append(n + i)
                have.add(n + i)
        if len(cols) != m or len(set(cols)) != m:
            return False
        self.basic = np.array(cols, dtype=int)
        self.in_basis[:] = False
        self.in_basis[self.basic] = True
        self.at_upper[:] = False
        for kind, idx in basis.at_upper:
            col = idx if kind == "x" else n + idx
            if 0 <= col < n + m and not self.in_basis[col]:
                self.at_upper[col] = True
        self._normalize_statuses()
        return self.refactor()

    def export_basis(self) -> Basis:
        n = self.n
        basic = tuple(("x", int(c)) if c < n else ("s", int(c - n)) for c in self.basic)
        ups = frozenset(
            ("x", int(j)) if j < n else ("s", int(j - n))
            for j in np.flatnonzero(self.at_upper & ~self.in_basis)
        )
        return Basis(basic, ups)

    def refactor(self) -> bool:
        try:
            self.Binv = np.linalg.inv(self.A[:, self.basic])
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(self.Binv)):
            return False
        if self.m and np.max(np.abs(self.Binv)) > self.tol.basis_blowup:
            return False
        self._pivots_since_factor = 0
        self.recompute_xb()
        return True

    def nonbasic_value(self, j: int) -> float:
        if self.at_upper[j]:
            return self.upper[j]
        return self.lower[j]

    def recompute_xb(self) -> None:
        rhs = self.b.copy()
        nb = np.flatnonzero(~self.in_basis)
        if len(nb):
            vals = np.array([self.nonbasic_value(int(j)) for j in nb])
            nz = vals != 0.0
            if np.any(nz):
                rhs -= self.A[:, nb[nz]] @ vals[nz]
        self.xB = self.Binv @ rhs

    # -- shared pivot machinery -------------------------------------------

    def _apply_pivot(self, q: int, t: float, theta: float, w: np.ndarray,
                     leave_pos: int, leave_to_upper: bool) -> None:
        enter_val = self.nonbasic_value(q) + t * theta
        self.xB = self.xB - (t * theta) * w
        out = int(self.basic[leave_pos])
        self.in_basis[out] = False
        self.at_upper[out] = leave_to_upper
        self.in_basis[q] = True
        self.at_upper[q] = False
        self.basic[leave_pos] = q
        piv = w[leave_pos]
        brow = self.Binv[leave_pos] / piv
        wc = w.copy()
        wc[leave_pos] = 0.0
        self.Binv -= np.outer(wc, brow)
        self.Binv[leave_pos] = brow
        self.xB[leave_pos] = enter_val
        self._pivots_since_factor += 1
        if self._pivots_since_factor >= self.tol.refactor_every:
            self.refactor()

    def _apply_flip(self, q: int, t: float, theta: float, w: np.ndarray) -> None:
        self.xB = self.xB - (t * theta) * w
        self.at_upper[q] = not self.at_upper[q]

    def _note_progress(self, measure: float) -> None:
        if measure < self._last_measure - 1e-12:
            self._stall = 0
            self._last_measure = measure
        else:
            self._stall += 1
            if self._stall > self.tol.stall_limit:
                self.bland = True

    def _choose_entering(self, r: np.ndarray) -> int:
        tol = self.tol.optimality
        score = np.where(self.at_upper, r, -r)
        score[self.in_basis] = -INF
        score[self.upper - self.lower <= 0] = -INF
        eligible = np.flatnonzero(score > tol)
        if len(eligible) == 0:
            return -1
        if self.bland:
            return int(eligible[0])
        return int(eligible[np.argmax(score[eligible])])

    def _pick_blocking(self, theta: np.ndarray, rate: np.ndarray) -> int:
        """Smallest ratio; ties by largest |rate|, then lowest basic id
        (Bland mode: lowest basic id outright)."""
        theta_min = float(np.min(theta))
        cand = np.flatnonzero(theta <= theta_min + 1e-12)
        if self.bland:
            return int(cand[np.argmin(self.basic[cand])])
        mags = np.abs(rate[cand])
        best_mag = np.max(mags)
        cand = cand[mags >= best_mag - 1e-12]
        return int(cand[np.argmin(self.basic[cand])])

    # -- phase 1 ------------------------------------------------------------

    def infeasibility(self) -> float:
        lo = self.lower[self.basic]
        up = self.upper[self.basic]
        below = np.clip(lo - self.xB, 0.0, None)
        above = np.clip(self.xB - up, 0.0, None)
        below[~np.isfinite(below)] = 0.0
        above[~np.isfinite(above)] = 0.0
        return float(np.sum(below) + np.sum(above))

    def phase1(self) -> LpStatus:
        tol = self.tol
        self._stall, self._last_measure = 0, INF
        while True:
            if self.iterations > tol.max_iterations:
                return LpStatus.ITERATION_LIMIT
            lo = self.lower[self.basic]
            up = self.upper[self.basic]
            below = self.xB < lo - tol.feasibility
            above = self.xB > up + tol.feasibility
            if not (np.any(below) or np.any(above)):
                return LpStatus.OPTIMAL
            self._note_progress(self.infeasibility())
            d = np.where(below, -1.0, 0.0) + np.where(above, 1.0, 0.0)
            y = d @ self.Binv
            r = -(y @ self.A)
            q = self._choose_entering(r)
            if q < 0:
                return LpStatus.INFEASIBLE
            t = -1.0 if self.at_upper[q] else 1.0
            w = self.Binv @ self.A[:, q]
            # ratio test: infeasible basics block at the violated bound they
            # approach, feasible ones at the bound ahead of them
            rate = -t * w
            feas = ~(below | above)
            theta = np.full(self.m, INF)
            mask = below & (rate > tol.pivot)
            theta[mask] = (lo[mask] - self.xB[mask]) / rate[mask]
            hit_up = np.zeros(self.m, dtype=bool)
            mask = above & (rate < -tol.pivot)
            theta[mask] = (up[mask] - self.xB[mask]) / rate[mask]
            hit_up[mask] = True
            mask = feas & (rate > tol.pivot) & (up < INF)
            theta[mask] = (up[mask] - self.xB[mask]) / rate[mask]
            hit_up[mask] = True
            mask = feas & (rate < -tol.pivot) & (lo > -INF)
            theta[mask] = (lo[mask] - self.xB[mask]) / rate[mask]
            np.clip(theta, 0.0, None, out=theta)
            flip_theta = self.upper[q] - self.lower[q]
            basic_min = float(np.min(theta)) if self.m else INF
            self.iterations += 1
            if flip_theta < basic_min - 1e-12:
                if not np.isfinite(flip_theta):
                    return LpStatus.NUMERICAL
                self._apply_flip(q, t, flip_theta, w)
            else:
                if not np.isfinite(basic_min):
                    return LpStatus.NUMERICAL
                pos = self._pick_blocking(theta, rate)
                self._apply_pivot(q, t, theta[pos], w, pos, bool(hit_up[pos]))

    # -- phase 2 ------------------------------------------------------------

    def phase2(self) -> LpStatus:
        tol = self.tol
        self._stall, self._last_measure = 0, INF
        while True:
            if self.iterations > tol.max_iterations:
                return LpStatus.ITERATION_LIMIT
            y = self.c[self.basic] @ self.Binv
            r = self.c - y @ self.A
            q = self._choose_entering(r)
            if q < 0:
                return LpStatus.OPTIMAL
            self._note_progress(float(self.c[self.basic] @ self.xB))
            t = -1.0 if self.at_upper[q] else 1.0
            w = self.Binv @ self.A[:, q]
            lo = self.lower[self.basic]
            up = self.upper[self.basic]
            rate = -t * w
            theta = np.full(self.m, INF)
            hit_up = np.zeros(self.m, dtype=bool)
            mask = (rate > tol.pivot) & (up < INF)
            theta[mask] = (up[mask] - self.xB[mask]) / rate[mask]
            hit_up[mask] = True
            mask = (rate < -tol.pivot) & (lo > -INF)
            theta[mask] = (lo[mask] - self.xB[mask]) / rate[mask]
            np.clip(theta, 0.0, None, out=theta)
            flip_theta = self.upper[q] - self.lower[q]
            basic_min = float(np.min(theta)) if self.m else INF
            if not np.isfinite(flip_theta) and not np.isfinite(basic_min):
                return LpStatus.UNBOUNDED
            self.iterations += 1
            if flip_theta < basic_min - 1e-12:
                self._apply_flip(q, t, flip_theta, w)
            else:
                pos = self._pick_blocking(theta, rate)
                self._apply_pivot(q, t, theta[pos], w, pos, bool(hit_up[pos]))


def solve(problem: LpProblem, warm: Basis | None = None,
          bounds_override: Mapping[int, tuple[float, float]] | None = None,
          tolerances: Tolerances = DEFAULT_TOL) -> LpSolution:
    """Solve the problem, optionally warm-starting from an earlier basis.

    Deterministic for identical inputs.  Numerical breakdown is reported via
    the status, never silently.
    """
    sx = _Simplex(problem, tolerances, bounds_override)
    rhs = np.array([row.rhs for row in problem.rows])
    if sx.trivially_infeasible:
        return LpSolution(LpStatus.INFEASIBLE, np.zeros(problem.num_vars), INF,
                          np.zeros(problem.num_rows), np.zeros(problem.num_vars),
                          None, 0, rhs)
    if warm is None or not sx.load_basis(warm):
        sx.reset_slack_basis()
    status = sx.phase1()
    if status == LpStatus.OPTIMAL:
        status = sx.phase2()
        if status == LpStatus.OPTIMAL and sx.infeasibility() > 10 * tolerances.feasibility:
            sx.refactor()
            if sx.phase1() == LpStatus.OPTIMAL:
                status = sx.phase2()
            else:
                status = LpStatus.NUMERICAL
    n, m = problem.num_vars, problem.num_rows
    x_full = np.empty(n + m)
    for j in range(n + m):
        if not sx.in_basis[j]:
            x_full[j] = sx.nonbasic_value(j)
    x_full[sx.basic] = sx.xB
    y = sx.c[sx.basic] @ sx.Binv if m else np.zeros(0)
    rc = sx.c[:n] - (y @ sx.A[:, :n] if m else np.zeros(n))
    obj = INF if status == LpStatus.INFEASIBLE else float(sx.c @ x_full)
    return LpSolution(
        status=status,
        x=x_full[:n].copy(),
        objective=obj,
        duals=np.asarray(y),
        reduced_costs=np.asarray(rc),
        basis=sx.export_basis(),
        iterations=sx.iterations,
        rhs=rhs,
    )


# -- MPS export --------------------------------------------------------------
#
# Classic fixed columns: field 1 starts at column 2, field 2 at 5, field 3 at
# 15, field 4 at 25, field 5 at 40, field 6 at 50.  Values are rendered with
# %.6E.  Output depends only on the problem, so repeated exports are
# byte-identical.

def _mps_fields(f1: str = "", f2: str = "", f3: str = "", f4: str = "",
                f5: str = "", f6: str = "") -> str:
    line = " " + f1.ljust(3) + f2.ljust(10) + f3.ljust(10) + f4.ljust(15)
    if f5 or f6:
        line += f5.ljust(10) + f6
    return line.rstrip()


def _num(v: float) -> str:
    return f"{v:.6E}"


def to_mps(problem: LpProblem, name: str = "CVSAP") -> str:
    out = [f"NAME          {name}"]
    out.append("ROWS")
    out.append(_mps_fields("N", "COST"))
    for row in problem.rows:
        out.append(_mps_fields(row.sense, row.name))
    out.append("COLUMNS")
    by_col: dict[int, list[tuple[str, float]]] = {j: [] for j in range(problem.num_vars)}
    for row in problem.rows:
        for j, v in row.coeffs:
            by_col[j].append((row.name, v))
    for j in range(problem.num_vars):
        entries = [("COST", problem.obj[j])] if problem.obj[j] != 0.0 else []
        entries.extend(by_col[j])
        for k in range(0, len(entries), 2):
            pair = entries[k:k + 2]
            if len(pair) == 2:
                out.append(_mps_fields("", problem.names[j], pair[0][0], _num(pair[0][1]),
                                       pair[1][0], _num(pair[1][1])))
            else:
                out.append(_mps_fields("", problem.names[j], pair[0][0], _num(pair[0][1])))
    out.append("RHS")
    for row in problem.rows:
        if row.rhs != 0.0:
            out.append(_mps_fields("", "RHS", row.name, _num(row.rhs)))
    out.append("BOUNDS")
    for j in range(problem.num_vars):
        lo, hi = problem.lower[j], problem.upper[j]
        if lo == hi:
            out.append(_mps_fields("FX", "BND", problem.names[j], _num(lo)))
            continue
        if lo != 0.0:
            out.append(_mps_fields("LO", "BND", problem.names[j], _num(lo)))
        if hi != INF:
            out.append(_mps_fields("UP", "BND", problem.names[j], _num(hi)))
    out.append("ENDATA")
    return "\n".join(out) + "\n"
