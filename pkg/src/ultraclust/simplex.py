"""Bounded-variable revised simplex with incremental row addition.

The program ``min c.x  s.t.  rows, lo <= x <= hi`` is put in computational
form by giving every row a logical variable ``s_r = a_r . x`` bounded by the
row's sense, so the constraint matrix is ``[A | -I]`` and the slack basis is
always available. The basis inverse is held explicitly (dense) and updated
by rank-one pivots, refactorised every ``refactor_every`` pivots.

Cold starts run a dual simplex on the zero objective to reach a feasible
basis, then primal simplex. Row additions keep the basis dual feasible, so
``resolve_with_rows`` continues with the dual simplex from the previous basis.
"""

from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

INF = math.inf

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
DUAL_TOL = 1e-9
BLAND_AFTER = 50
REFACTOR_EVERY = 100

BASIC, AT_LOWER, AT_UPPER, AT_ZERO = 0, 1, 2, 3


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass
class Row:
    idx: np.ndarray
    val: np.ndarray
    sense: str
    rhs: float
    tag: Hashable = None

    def __post_init__(self):
        self.idx = np.asarray(self.idx, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=float)
        if self.sense not in ("<=", ">=", "="):
            raise ValueError(f"row sense must be <=, >= or =, not {self.sense!r}")
        if self.idx.shape != self.val.shape:
            raise ValueError("row index and value arrays differ in length")
        if not (np.all(np.isfinite(self.val)) and math.isfinite(self.rhs)):
            raise ValueError("row coefficients must be finite")

    def bounds(self) -> tuple[float, float]:
        if self.sense == ">=":
            return self.rhs, INF
        if self.sense == "<=":
            return -INF, self.rhs
        return self.rhs, self.rhs

    def activity(self, x: np.ndarray) -> float:
        return float(np.dot(self.val, x[self.idx]))

    def violation(self, x: np.ndarray) -> float:
        lo, hi = self.bounds()
        act = self.activity(x)
        return max(lo - act, act - hi, 0.0)


class LinearProgram:
    """``min objective . x`` over sparse rows and per-variable bounds."""

    def __init__(self, objective, lo=None, hi=None, rows: Iterable[Row] = ()):
        self.objective = np.asarray(objective, dtype=float).copy()
        n = self.objective.size
        self.lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=float).copy()
        self.hi = np.full(n, INF) if hi is None else np.asarray(hi, dtype=float).copy()
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("bounds must match the objective length")
        if np.any(self.lo > self.hi):
            raise ValueError("lower bound exceeds upper bound")
        if not np.all(np.isfinite(self.objective)):
            raise ValueError("objective coefficients must be finite")
        self.rows: list[Row] = []
        for row in rows:
            self.add_row(row)

    @property
    def ncols(self) -> int:
        return self.objective.size

    @property
    def nrows(self) -> int:
        return len(self.rows)

    def add_row(self, row: Row | None = None, *, idx=None, val=None, sense=">=", rhs=0.0, tag=None) -> Row:
        if row is None:
            row = Row(idx, val, sense, float(rhs), tag)
        if row.idx.size and (row.idx.min() < 0 or row.idx.max() >= self.ncols):
            raise ValueError("row references a column outside the program")
        self.rows.append(row)
        return row

    def matrix(self, start: int = 0) -> sp.csr_matrix:
        rows = self.rows[start:]
        if not rows:
            return sp.csr_matrix((0, self.ncols))
        indptr = np.concatenate([[0], np.cumsum([r.idx.size for r in rows])])
        indices = np.concatenate([r.idx for r in rows])
        data = np.concatenate([r.val for r in rows])
        return sp.csr_matrix((data, indices, indptr), shape=(len(rows), self.ncols))

    def row_bounds(self, start: int = 0) -> tuple[np.ndarray, np.ndarray]:
        b = np.array([r.bounds() for r in self.rows[start:]], dtype=float).reshape(-1, 2)
        return b[:, 0], b[:, 1]

    def max_violation(self, x: np.ndarray) -> float:
        worst = float(np.max(np.maximum(self.lo - x, x - self.hi), initial=0.0))
        for row in self.rows:
            worst = max(worst, row.violation(x))
        return worst

    def copy(self) -> "LinearProgram":
        return copy.deepcopy(self)

    # -- text format --------------------------------------------------------

    def to_text(self) -> str:
        """Plain-text dump: ``min`` line, one line per row, one per bound."""
        lines = [f"ncols {self.ncols}", "min " + " ".join(f"{j}:{v!r}" for j, v in enumerate(self.objective.tolist()) if v)]
        for row in self.rows:
            terms = " ".join(f"{j}:{v!r}" for j, v in zip(row.idx.tolist(), row.val.tolist()))
            lines.append(f"row {terms} {row.sense} {float(row.rhs)!r}")
        for j, (lo, hi) in enumerate(zip(self.lo.tolist(), self.hi.tolist())):
            lines.append(f"bound {j} {lo!r} {hi!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LinearProgram":
        ncols = None
        objective = None
        rows = []
        bounds = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "ncols":
                    ncols = int(parts[1])
                    objective = np.zeros(ncols)
                elif parts[0] == "min":
                    for term in parts[1:]:
                        j, v = term.split(":")
                        objective[int(j)] = float(v)
                elif parts[0] == "row":
                    terms, sense, rhs = parts[1:-2], parts[-2], float(parts[-1])
                    idx = [int(t.split(":")[0]) for t in terms]
                    val = [float(t.split(":")[1]) for t in terms]
                    rows.append(Row(idx, val, sense, rhs))
                elif parts[0] == "bound":
                    bounds[int(parts[1])] = (float(parts[2]), float(parts[3]))
                else:
                    raise ValueError(f"unknown keyword {parts[0]!r}")
            except (IndexError, ValueError, TypeError) as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
        if ncols is None:
            raise ValueError("missing 'ncols' line")
        lo = np.zeros(ncols)
        hi = np.full(ncols, INF)
        for j, (a, b) in bounds.items():
            lo[j], hi[j] = a, b
        return cls(objective, lo, hi, rows)


@dataclass
class LpOutcome:
    status: Status
    x: np.ndarray
    obj: float
    duals: np.ndarray
    iterations: int = 0
    _state: "_Simplex | None" = field(default=None, repr=False, compare=False)

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


@dataclass
class Limits:
    max_pivots: int = 100_000
    tol: float = FEAS_TOL
    pivot_tol: float = PIVOT_TOL
    refactor_every: int = REFACTOR_EVERY
    bland_after: int = BLAND_AFTER


class _Simplex:
    """Solver state over columns ``[structural | logical]``."""

    def __init__(self, lp: LinearProgram, limits: Limits):
        self.limits = limits
        self.n = lp.ncols
        self.m = lp.nrows
        self.A = lp.matrix().tocsc()
        self.AT = self.A.T.tocsr()
        rlo, rhi = lp.row_bounds()
        self.lo = np.concatenate([lp.lo, rlo])
        self.hi = np.concatenate([lp.hi, rhi])
        self.c = np.concatenate([lp.objective, np.zeros(self.m)])
        self.iterations = 0
        self._slack_basis()

    # -- basis bookkeeping --------------------------------------------------

    def _slack_basis(self):
        n, m = self.n, self.m
        self.head = np.arange(n, n + m)
        self.status = np.full(n + m, AT_ZERO, dtype=np.int8)
        self.status[n:] = BASIC
        self.x = np.zeros(n + m)
        for j in range(n):
            self._park(j)
        self.Binv = -np.eye(m)
        self.since_refactor = 0
        self._recompute_basics()

    def _park(self, j: int, prefer_upper: bool = False):
        lo, hi = self.lo[j], self.hi[j]
        if prefer_upper and math.isfinite(hi):
            self.status[j], self.x[j] = AT_UPPER, hi
        elif math.isfinite(lo):
            self.status[j], self.x[j] = AT_LOWER, lo
        elif math.isfinite(hi):
            self.status[j], self.x[j] = AT_UPPER, hi
        else:
            self.status[j], self.x[j] = AT_ZERO, 0.0

    def _column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        if j < self.n:
            start, end = self.A.indptr[j], self.A.indptr[j + 1]
            return self.A.indices[start:end], self.A.data[start:end]
        return np.array([j - self.n]), np.array([-1.0])

    def _ftran(self, j: int) -> np.ndarray:
        idx, val = self._column(j)
        return self.Binv[:, idx] @ val

    def _row_alpha(self, r: int) -> np.ndarray:
        rho = self.Binv[r]
        return np.concatenate([self.AT @ rho if self.m else np.zeros(self.n), -rho])

    def _recompute_basics(self):
        xs = self.x.copy()
        xs[self.head] = 0.0
        resid = (self.A @ xs[: self.n]) - xs[self.n :]
        self.x[self.head] = -(self.Binv @ resid)

    def refactor(self):
        m = self.m
        if m == 0:
            return
        B = np.zeros((m, m))
        for pos, j in enumerate(self.head):
            idx, val = self._column(j)
            B[idx, pos] = val
        self.Binv = np.linalg.inv(B)
        self.since_refactor = 0
        self._recompute_basics()

    def _pivot(self, r: int, q: int, alpha_q: np.ndarray):
        piv = alpha_q[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(alpha_q, row)
        self.Binv[r] = row
        self.head[r] = q
        self.status[q] = BASIC
        self.since_refactor += 1
        if self.since_refactor >= self.limits.refactor_every:
            self.refactor()

    def duals(self) -> np.ndarray:
        return self.c[self.head] @ self.Binv if self.m else np.zeros(0)

    def reduced_costs(self, c: np.ndarray | None = None) -> np.ndarray:
        c = self.c if c is None else c
        y = c[self.head] @ self.Binv if self.m else np.zeros(0)
        d = c.copy()
        if self.m:
            d[: self.n] -= self.AT @ y
            d[self.n :] += y
        d[self.head] = 0.0
        return d

    def objective(self) -> float:
        return float(self.c[: self.n] @ self.x[: self.n])

    def primal_infeasibility(self) -> np.ndarray:
        xb = self.x[self.head]
        return np.maximum(self.lo[self.head] - xb, xb - self.hi[self.head]).clip(min=0.0)

    # -- dual simplex ---------------------------------------------------------

    def dual(self, c: np.ndarray) -> Status:
        lim = self.limits
        while True:
            if self.m == 0:
                return Status.OPTIMAL
            infeas = self.primal_infeasibility()
            r = int(np.argmax(infeas))
            if infeas[r] <= lim.tol:
                return Status.OPTIMAL
            if self.iterations >= lim.max_pivots:
                return Status.ITERATION_LIMIT
            p = self.head[r]
            below = self.x[p] < self.lo[p]
            target = self.lo[p] if below else self.hi[p]
            alpha_r = self._row_alpha(r)
            d = self.reduced_costs(c)
            st = self.status
            # moving x_j by delta moves x_p by -alpha_rj * delta
            a = alpha_r if below else -alpha_r
            up_ok = ((st == AT_LOWER) | (st == AT_ZERO)) & (a < -lim.pivot_tol)
            down_ok = ((st == AT_UPPER) | (st == AT_ZERO)) & (a > lim.pivot_tol)
            elig = np.flatnonzero(up_ok | down_ok)
            if elig.size == 0:
                return Status.INFEASIBLE
            absd = np.abs(d[elig])
            absa = np.abs(a[elig])
            bound = np.min((absd + DUAL_TOL) / absa)
            cand = np.flatnonzero(absd / absa <= bound)
            k = cand[np.argmax(absa[cand])]
            q = int(elig[k])
            alpha_q = self._ftran(q)
            if abs(alpha_q[r]) < lim.pivot_tol:
                self.refactor()
                self.iterations += 1
                continue
            delta = (self.x[p] - target) / alpha_q[r]
            self.x[self.head] -= alpha_q * delta
            self.x[q] += delta
            self.x[p] = target
            self.status[p] = AT_LOWER if below else AT_UPPER
            self.iterations += 1
            self._pivot(r, q, alpha_q)

    # -- primal simplex ------------------------------------------------------

    def primal(self) -> Status:
        lim = self.limits
        stall = 0
        bland = False
        last_obj = self.objective()
        while True:
            d = self.reduced_costs()
            st = self.status
            dtol = DUAL_TOL * max(1.0, float(np.max(np.abs(self.c), initial=0.0)))
            elig_mask = (((st == AT_LOWER) | (st == AT_ZERO)) & (d < -dtol)) | (
                ((st == AT_UPPER) | (st == AT_ZERO)) & (d > dtol)
            )
            elig = np.flatnonzero(elig_mask)
            if elig.size == 0:
                return Status.OPTIMAL
            if self.iterations >= lim.max_pivots:
                return Status.ITERATION_LIMIT
            q = int(elig[0]) if bland else int(elig[np.argmax(np.abs(d[elig]))])
            s = 1.0 if d[q] < 0 else -1.0
            alpha_q = self._ftran(q) if self.m else np.zeros(0)
            rate = -alpha_q * s  # d x_B / d theta
            xb = self.x[self.head]
            lob, hib = self.lo[self.head], self.hi[self.head]
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = rate < -lim.pivot_tol
                inc = rate > lim.pivot_tol
                ratio = np.full(self.m, INF)
                ratio[dec] = (xb[dec] - lob[dec]) / -rate[dec]
                ratio[inc] = (hib[inc] - xb[inc]) / rate[inc]
                if bland:
                    theta_b = ratio.min() if self.m else INF
                    r = -1
                    if math.isfinite(theta_b):
                        ties = np.flatnonzero(ratio <= theta_b + 1e-12)
                        r = int(ties[np.argmin(self.head[ties])])
                else:
                    relaxed = np.full(self.m, INF)
                    relaxed[dec] = (xb[dec] - lob[dec] + lim.tol) / -rate[dec]
                    relaxed[inc] = (hib[inc] - xb[inc] + lim.tol) / rate[inc]
                    bound = relaxed.min() if self.m else INF
                    r = -1
                    theta_b = INF
                    if math.isfinite(bound):
                        cand = np.flatnonzero(ratio <= bound)
                        r = int(cand[np.argmax(np.abs(rate[cand]))])
                        theta_b = max(ratio[r], 0.0)
            span = self.hi[q] - self.lo[q]
            if not math.isfinite(theta_b) and not math.isfinite(span):
                return Status.UNBOUNDED
            self.iterations += 1
            if span <= theta_b:
                # bound flip, basis unchanged
                self.x[self.head] += rate * span
                self.x[q] += s * span
                self.status[q] = AT_UPPER if s > 0 else AT_LOWER
            else:
                theta = theta_b
                self.x[self.head] += rate * theta
                self.x[q] += s * theta
                p = self.head[r]
                # snap leaving variable onto the bound it hit
                if rate[r] < 0:
                    self.x[p], self.status[p] = self.lo[p], AT_LOWER
                else:
                    self.x[p], self.status[p] = self.hi[p], AT_UPPER
                self._pivot(r, q, alpha_q)
            obj = self.objective()
            if obj < last_obj - 1e-12 * max(1.0, abs(last_obj)):
                stall = 0
                bland = False
            else:
                stall += 1
                if stall >= lim.bland_after:
                    bland = True
            last_obj = obj

    # -- drivers ---------------------------------------------------------------

    def run_cold(self) -> Status:
        status = self.dual(np.zeros_like(self.c))
        if status != Status.OPTIMAL:
            return status
        return self._finish()

    def _finish(self) -> Status:
        for _ in range(3):
            status = self.primal()
            if status != Status.OPTIMAL:
                return status
            self.refactor()
            if self.primal_infeasibility().max(initial=0.0) > self.limits.tol:
                status = self.dual(self.c)
                if status != Status.OPTIMAL:
                    return status
                continue
            d = self.reduced_costs()
            st = self.status
            dtol = DUAL_TOL * max(1.0, float(np.max(np.abs(self.c), initial=0.0)))
            bad = ((st == AT_LOWER) & (d < -dtol)) | ((st == AT_UPPER) & (d > dtol)) | ((st == AT_ZERO) & (np.abs(d) > dtol))
            if not bad.any():
                return Status.OPTIMAL
        return Status.OPTIMAL

    def add_rows(self, rows: Sequence[Row]):
        k = len(rows)
        if k == 0:
            return
        R = LinearProgram(np.zeros(self.n), rows=rows).matrix().tocsc()
        rlo = np.array([r.bounds()[0] for r in rows])
        rhi = np.array([r.bounds()[1] for r in rows])
        m, n = self.m, self.n
        # basic structural columns restricted to the new rows
        Rb = np.zeros((k, m))
        for pos, j in enumerate(self.head):
            if j < n:
                start, end = R.indptr[j], R.indptr[j + 1]
                Rb[R.indices[start:end], pos] = R.data[start:end]
        Binv = np.zeros((m + k, m + k))
        Binv[:m, :m] = self.Binv
        Binv[m:, :m] = Rb @ self.Binv
        Binv[m:, m:] = -np.eye(k)
        self.Binv = Binv
        # logical columns shift: old logicals keep indices n..n+m-1, new ones follow
        self.A = sp.vstack([self.A, R.tocsr()]).tocsc()
        self.AT = self.A.T.tocsr()
        self.lo = np.concatenate([self.lo, rlo])
        self.hi = np.concatenate([self.hi, rhi])
        self.c = np.concatenate([self.c, np.zeros(k)])
        self.status = np.concatenate([self.status, np.full(k, BASIC, dtype=np.int8)])
        self.x = np.concatenate([self.x, R @ self.x[:n]])
        self.head = np.concatenate([self.head, np.arange(n + m, n + m + k)])
        self.m = m + k

    def outcome(self, status: Status) -> LpOutcome:
        x = self.x[: self.n].copy()
        return LpOutcome(status, x, float(self.c[: self.n] @ x), self.duals(), self.iterations, self)


def solve(lp: LinearProgram, limits: Limits | None = None) -> LpOutcome:
    """Cold solve from the slack basis."""
    limits = limits or Limits()
    state = _Simplex(lp, limits)
    return state.outcome(state.run_cold())


def resolve_with_rows(prev: LpOutcome, lp: LinearProgram, new_rows: Sequence[Row], limits: Limits | None = None) -> LpOutcome:
    """Append ``new_rows`` to ``lp`` and re-optimise from ``prev``'s basis.

    ``prev`` must be the optimal outcome for ``lp`` as it was before the
    rows were added. Falls back to a cold solve if the warm path runs into
    numerical trouble.
    """
    for row in new_rows:
        lp.add_row(row)
    if prev._state is None or prev.status != Status.OPTIMAL or prev._state.m + len(new_rows) != lp.nrows:
        return solve(lp, limits)
    state = copy.deepcopy(prev._state)
    if limits is not None:
        state.limits = limits
    state.iterations = 0
    try:
        state.add_rows(list(new_rows))
        status = state.dual(state.c)
        if status == Status.OPTIMAL:
            status = state._finish()
    except np.linalg.LinAlgError:
        return solve(lp, limits)
    if status == Status.OPTIMAL and lp.max_violation(state.x[: state.n]) > 10 * state.limits.tol:
        return solve(lp, limits)
    return state.outcome(status)
