"""Layered LP relaxation of the ultrametric-fitting problem and its cutting-plane solve.

Variables are ``x[t, i, j]`` for layers ``t = 1..n-1`` and unordered pairs
``i < j``; ``x[t, i, j] = 1`` reads "``i`` and ``j`` are at distance at least
``t``". Symmetry and the zero diagonal are structural. Triangle and
spreading rows are generated lazily by the separators below; monotonicity
across layers is either present from the start (built-in simplex) or
separated like the others (HiGHS).
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .core import CostScaler, InvalidInput, SimilarityMatrix, scaler
from .simplex import LinearProgram, Limits, LpOutcome, Row, Status, resolve_with_rows, solve

log = logging.getLogger(__name__)

VIOLATION_TOL = 1e-7
BATCH = 500
# HiGHS re-solves are cheap relative to a round, so it takes far larger batches
HIGHS_BATCH = 20000
SWEEP_BATCH = 5000
MAX_ROUNDS = 500
# above this many columns the native dense-inverse simplex gets slow; "auto" hands over to HiGHS
NATIVE_MAX_COLS = 300


class RelaxationError(RuntimeError):
    pass


@dataclass
class LayeredSolution:
    """Per-layer distance matrices ``x[t-1]`` for ``t = 1..n-1`` (symmetric, zero diagonal)."""

    x: np.ndarray
    mode: str = "fractional"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 3 or self.x.shape[1] != self.x.shape[2]:
            raise InvalidInput("layered solution must have shape (layers, n, n)")
        if self.mode not in ("fractional", "binary"):
            raise InvalidInput(f"unknown mode {self.mode!r}")
        if self.mode == "binary" and not np.all((self.x == 0) | (self.x == 1)):
            raise InvalidInput("binary solution has non 0/1 entries")

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def layers(self) -> int:
        return self.x.shape[0]

    def layer(self, t: int) -> np.ndarray:
        """Distance matrix of layer ``t`` (1-based)."""
        return self.x[t - 1]

    @classmethod
    def from_vector(cls, vec: np.ndarray, n: int, mode: str = "fractional") -> "LayeredSolution":
        P = n * (n - 1) // 2
        layers = vec.reshape(n - 1, P) if n > 1 else np.zeros((0, 0))
        iu = np.triu_indices(n, 1)
        x = np.zeros((n - 1, n, n))
        for t in range(n - 1):
            x[t][iu] = layers[t]
            x[t] = x[t] + x[t].T
        return cls(x, mode)

    def to_vector(self) -> np.ndarray:
        iu = np.triu_indices(self.n, 1)
        return np.concatenate([self.x[t][iu] for t in range(self.layers)]) if self.layers else np.zeros(0)

    def is_monotone(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.x[:-1] >= self.x[1:] - tol)) if self.layers > 1 else True

    def to_csv(self) -> str:
        lines = ["t,i,j,value"]
        iu = zip(*np.triu_indices(self.n, 1))
        pairs = list(iu)
        for t in range(self.layers):
            for i, j in pairs:
                lines.append(f"{t + 1},{i},{j},{float(self.x[t, i, j])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, n: int | None = None) -> "LayeredSolution":
        rows = []
        for lineno, line in enumerate(text.strip().splitlines(), 1):
            if lineno == 1:
                if line.strip().replace(" ", "") != "t,i,j,value":
                    raise ValueError("line 1: expected header 't,i,j,value'")
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 4 columns, got {len(parts)}")
            try:
                rows.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
        if n is None:
            n = 1 + max((max(i, j) for _, i, j, _ in rows), default=0)
        x = np.zeros((n - 1, n, n))
        for t, i, j, v in rows:
            x[t - 1, i, j] = x[t - 1, j, i] = v
        binary = bool(np.all((x == 0) | (x == 1)))
        return cls(x, "binary" if binary and rows else "fractional")


@dataclass(frozen=True)
class Cut:
    tag: tuple
    row: Row
    violation: float


class CutPool:
    """Constraint rows keyed by provenance tag; re-adding a known tag is a no-op."""

    def __init__(self):
        self.rows: dict[Hashable, Row] = {}

    def add(self, cuts: Iterable[Cut]) -> list[Row]:
        fresh = []
        for cut in cuts:
            if cut.tag not in self.rows:
                self.rows[cut.tag] = cut.row
                fresh.append(cut.row)
        return fresh

    def __len__(self):
        return len(self.rows)

    def count(self, kind: str) -> int:
        return sum(1 for tag in self.rows if tag[0] == kind)


class Indexer:
    """Column index of ``x[t, i, j]``."""

    def __init__(self, n: int):
        self.n = n
        self.P = n * (n - 1) // 2
        self.pair = -np.ones((n, n), dtype=np.int64)
        iu = np.triu_indices(n, 1)
        self.pair[iu] = np.arange(self.P)
        self.pair[(iu[1], iu[0])] = np.arange(self.P)

    def __call__(self, t, i, j):
        return (np.asarray(t) - 1) * self.P + self.pair[i, j]

    @property
    def ncols(self) -> int:
        return (self.n - 1) * self.P


def layer_weights(n: int, f: CostScaler) -> np.ndarray:
    """``f(t) - f(t-1)`` for ``t = 1..n-1``."""
    return f.increments(n)


def build_relaxation(sim: SimilarityMatrix, f: CostScaler | str = "linear", monotone: bool = True) -> LinearProgram:
    """Objective and monotonicity rows; triangle and spreading rows are left to separation.

    With ``monotone=False`` the layer-coupling rows are left out as well, for
    solvers that prefer to separate them.
    """
    f = scaler(f)
    n = sim.n
    idx = Indexer(n)
    weights = layer_weights(n, f)
    kappa = sim.pair_values()
    objective = np.concatenate([w * kappa for w in weights]) if n > 1 else np.zeros(0)
    lp = LinearProgram(objective, np.zeros(idx.ncols), np.ones(idx.ncols))
    if not monotone:
        return lp
    for t in range(1, n - 1):
        for p in range(idx.P):
            a = (t - 1) * idx.P + p
            lp.add_row(idx=[a, a + idx.P], val=[1.0, -1.0], sense=">=", rhs=0.0, tag=("monotone", t, p))
    return lp


def _cap(cuts: list[Cut], batch: int | None) -> list[Cut]:
    cuts.sort(key=lambda c: (-c.violation, c.tag))
    return cuts if batch is None else cuts[:batch]


def separate_triangle(sol: LayeredSolution, tol: float = VIOLATION_TOL, batch: int | None = BATCH) -> list[Cut]:
    """Rows ``x_ij + x_jk >= x_ik`` violated by more than ``tol``, most violated first."""
    n = sol.n
    if sol.layers == 0 or n < 3:
        return []
    idx = Indexer(n)
    X = sol.x
    # slack[t, i, j, k] = x_ij + x_jk - x_ik, layer index t is 0-based here
    slack = X[:, :, :, None] + X[:, None, :, :] - X[:, :, None, :]
    ar = np.arange(n)
    slack[:, ar, ar, :] = np.inf
    slack[:, :, ar, ar] = np.inf
    upper = np.triu(np.ones((n, n), dtype=bool), 1)  # keep i < k only
    slack[:, ~upper[:, None, :].repeat(n, axis=1)] = np.inf
    flat = np.flatnonzero(slack.ravel() < -tol)
    if flat.size == 0:
        return []
    viol = -slack.ravel()[flat]
    if batch is not None and flat.size > batch:
        # most violated first, ties broken by position which matches the tag order
        keep = np.lexsort((flat, -viol))[:batch]
        flat, viol = flat[keep], viol[keep]
    tt, ii, jj, kk = np.unravel_index(flat, slack.shape)
    cuts = []
    for t, i, j, k, v in zip(tt.tolist(), ii.tolist(), jj.tolist(), kk.tolist(), viol.tolist()):
        t += 1
        row = Row(idx([t, t, t], [i, j, i], [j, k, k]), [1.0, 1.0, -1.0], ">=", 0.0, ("triangle", t, i, j, k))
        cuts.append(Cut(row.tag, row, v))
    return _cap(cuts, batch)


def separate_monotone(sol: LayeredSolution, tol: float = VIOLATION_TOL, batch: int | None = BATCH) -> list[Cut]:
    """Rows ``x^t_ij >= x^{t+1}_ij`` violated by more than ``tol``."""
    n = sol.n
    if sol.layers < 2:
        return []
    iu = np.triu_indices(n, 1)
    P = iu[0].size
    V = np.stack([sol.x[t][iu] for t in range(sol.layers)])
    gap = V[1:] - V[:-1]  # gap[t-1, p] = x^{t+1}_p - x^t_p
    tt, pp = np.nonzero(gap > tol)
    cuts = []
    for t, p in zip(tt.tolist(), pp.tolist()):
        a = t * P + p
        row = Row([a, a + P], [1.0, -1.0], ">=", 0.0, ("monotone", t + 1, p))
        cuts.append(Cut(row.tag, row, float(gap[t, p])))
    return _cap(cuts, batch)


def _spreading_layer(X: np.ndarray, t: int, tol: float) -> list[tuple[int, np.ndarray, int, float]]:
    """Most violated prefix set per centre of one layer: ``(i, others, m, deficit)``."""
    n = X.shape[0]
    sizes = np.arange(1, n + 1)
    order = np.argsort(X, axis=1, kind="stable")
    prefix = np.cumsum(np.take_along_axis(X, order, axis=1), axis=1)
    deficit = (sizes - t)[None, :] - prefix  # deficit[i, m-1] for set size m
    out = []
    for i in range(n):
        m = int(np.argmax(deficit[i])) + 1
        if deficit[i, m - 1] <= tol:
            continue
        members = order[i, :m]
        if i not in members:  # ties with the zero diagonal
            members = np.concatenate([[i], members[members != i][: m - 1]])
        others = np.array(sorted(int(j) for j in members if j != i), dtype=np.int64)
        out.append((i, others, m, float(deficit[i, m - 1])))
    return out


def _spreading_tag(t: int, i: int, others: np.ndarray) -> tuple:
    return ("spreading", t, i, frozenset([i, *others.tolist()]))


def separate_spreading(sol: LayeredSolution, tol: float = VIOLATION_TOL, batch: int | None = BATCH) -> list[Cut]:
    """Rows ``sum_{j in S} x_ij >= |S| - t`` violated by more than ``tol``.

    For fixed layer, centre and set size, the cheapest set is the centre plus
    its nearest neighbours, so only those prefix sets are tested. One row is
    emitted per (layer, centre): the most violated prefix.
    """
    n = sol.n
    idx = Indexer(n)
    cuts = []
    for t in range(1, sol.layers + 1):
        for i, others, m, deficit in _spreading_layer(sol.layer(t), t, tol):
            tag = _spreading_tag(t, i, others)
            row = Row(idx(np.full(others.size, t), np.full(others.size, i), others), np.ones(others.size), ">=", float(m - t), tag)
            cuts.append(Cut(tag, row, deficit))
    return _cap(cuts, batch)


# ---------------------------------------------------------------------------
# LP backends
# ---------------------------------------------------------------------------


class _Native:
    name = "native"

    def __init__(self, lp: LinearProgram, limits: Limits):
        self.lp = lp
        self.limits = limits
        self.last: LpOutcome | None = None
        self.tags = {row.tag for row in lp.rows}

    def has(self, tag) -> bool:
        return tag in self.tags

    def purge(self) -> int:
        return 0  # rows are kept so every resolve is a pure warm start

    def solve(self, new_rows: Sequence[Row] = ()) -> tuple[Status, np.ndarray, float]:
        self.tags.update(row.tag for row in new_rows)
        if self.last is None:
            for row in new_rows:
                self.lp.add_row(row)
            self.last = solve(self.lp, self.limits)
        else:
            self.last = resolve_with_rows(self.last, self.lp, new_rows, self.limits)
        return self.last.status, self.last.x, self.last.obj


def _highs(ncols: int, cost: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float):
    import highspy

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("solver", "simplex")
    h.setOptionValue("simplex_strategy", 1)  # dual
    h.setOptionValue("primal_feasibility_tolerance", tol)
    h.setOptionValue("dual_feasibility_tolerance", 1e-9)
    h.setOptionValue("random_seed", 0)
    h.setOptionValue("threads", 1)
    h.setOptionValue("presolve", "off")
    h.addVars(ncols, lo, np.minimum(hi, highspy.kHighsInf))
    h.changeColsCost(ncols, np.arange(ncols, dtype=np.int32), cost)
    return h


def _add_rows(h, rows: Sequence[Row]):
    if not rows:
        return
    import highspy

    inf = highspy.kHighsInf
    lo = np.array([max(r.bounds()[0], -inf) for r in rows])
    hi = np.array([min(r.bounds()[1], inf) for r in rows])
    starts = np.concatenate([[0], np.cumsum([r.idx.size for r in rows])[:-1]]).astype(np.int32)
    indices = np.concatenate([r.idx for r in rows]).astype(np.int32)
    values = np.concatenate([r.val for r in rows])
    h.addRows(len(rows), lo, hi, indices.size, starts, indices, values)


def _basic_rows(h, start: int) -> list[int]:
    import highspy

    status = h.getBasis().row_status
    basic = highspy.HighsBasisStatus.kBasic
    return [k for k in range(start, len(status)) if status[k] == basic]


def _status(h) -> Status:
    import highspy

    ms = h.getModelStatus()
    if ms == highspy.HighsModelStatus.kOptimal:
        return Status.OPTIMAL
    if ms == highspy.HighsModelStatus.kInfeasible:
        return Status.INFEASIBLE
    if ms in (highspy.HighsModelStatus.kUnbounded, highspy.HighsModelStatus.kUnboundedOrInfeasible):
        return Status.UNBOUNDED
    return Status.ITERATION_LIMIT


class _Highs:
    """HiGHS dual simplex with row purging.

    Cut rows whose slack is basic (not binding) are deleted after each
    round; deleting basic rows keeps the basis valid, so the next solve is
    still warm. A purged row that becomes violated again is simply re-added.
    """

    name = "highs"

    def __init__(self, lp: LinearProgram, limits: Limits):
        self.lp = lp
        self.h = _highs(lp.ncols, lp.objective, lp.lo, lp.hi, limits.tol)
        _add_rows(self.h, lp.rows)
        self.base = len(lp.rows)  # rows of the initial program are never purged
        self.tags: list = []
        self.live: set = {row.tag for row in lp.rows}

    def has(self, tag) -> bool:
        return tag in self.live

    def purge(self) -> int:
        drop = _basic_rows(self.h, self.base)
        if drop:
            self.h.deleteRows(len(drop), np.array(drop, dtype=np.int32))
            gone = {k - self.base for k in drop}
            self.tags = [tag for k, tag in enumerate(self.tags) if k not in gone]
            self.live = {row.tag for row in self.lp.rows} | set(self.tags)
        return len(drop)

    def solve(self, new_rows: Sequence[Row] = ()) -> tuple[Status, np.ndarray, float]:
        _add_rows(self.h, new_rows)
        self.tags += [row.tag for row in new_rows]
        self.live.update(row.tag for row in new_rows)
        self.h.run()
        x = np.asarray(self.h.getSolution().col_value, dtype=float)
        x = np.clip(x, self.lp.lo, self.lp.hi)
        return _status(self.h), x, float(self.lp.objective @ x)


def _backend(name: str, lp: LinearProgram, limits: Limits):
    if name == "auto":
        name = "native" if lp.ncols <= NATIVE_MAX_COLS else "highs"
    if name == "native":
        return _Native(lp, limits)
    if name == "highs":
        return _Highs(lp, limits)
    raise ValueError(f"unknown LP backend {name!r}")


def layer_sweep(sim: SimilarityMatrix, tol: float = VIOLATION_TOL, batch: int = SWEEP_BATCH) -> tuple[list[Row], int]:
    """Binding rows of every single-layer problem, to seed the coupled program.

    Each layer alone is the coupled program without monotonicity. One small
    model over the pairs is swept from the top layer down: triangle rows are
    the same in every layer, and a spreading row only tightens its right-hand
    side as ``t`` drops, so each layer starts from the previous basis. The
    rows binding at each layer's optimum are returned, lifted to that layer's
    columns with the tags the separators would give them. Returns the rows
    and the number of LP solves.
    """
    import highspy

    n = sim.n
    idx = Indexer(n)
    P = idx.P
    h = _highs(P, sim.pair_values(), np.zeros(P), np.ones(P), min(tol, 1e-7))
    # live rows in model order: ("triangle", i, j, k) or ("spreading", i, others, m)
    live: list[tuple] = []
    where: set = set()
    seeds: list[Row] = []
    solves = 0
    iu = np.triu_indices(n, 1)
    for t in range(n - 1, 0, -1):
        spread = [k for k, key in enumerate(live) if key[0] == "spreading"]
        if spread:
            lo = np.array([float(live[k][3] - t) for k in spread])
            h.changeRowsBounds(len(spread), np.array(spread, dtype=np.int32), lo, np.full(len(spread), highspy.kHighsInf))
        for _ in range(MAX_ROUNDS):
            h.run()
            solves += 1
            if _status(h) != Status.OPTIMAL:
                raise RelaxationError(f"single-layer problem at t={t} returned {_status(h).value}")
            X = np.zeros((n, n))
            X[iu] = np.clip(np.asarray(h.getSolution().col_value), 0.0, 1.0)
            X = X + X.T
            fresh: list[tuple[tuple, Row]] = []
            for cut in separate_triangle(LayeredSolution(X[None]), tol, batch):
                key = ("triangle",) + cut.tag[2:]
                if key not in where:
                    fresh.append((key, cut.row))
            for i, others, m, _ in _spreading_layer(X, t, tol):
                key = ("spreading", i, tuple(others.tolist()), m)
                if key not in where:
                    fresh.append((key, Row(idx.pair[i, others], np.ones(others.size), ">=", float(m - t))))
            if not fresh:
                break
            drop = _basic_rows(h, 0)
            if drop:
                h.deleteRows(len(drop), np.array(drop, dtype=np.int32))
                gone = set(drop)
                live = [key for k, key in enumerate(live) if k not in gone]
            _add_rows(h, [row for _, row in fresh])
            live += [key for key, _ in fresh]
            where = set(live)
        else:
            raise RelaxationError(f"single-layer problem at t={t} exceeded {MAX_ROUNDS} rounds")
        status = h.getBasis().row_status
        binding = [key for key, st in zip(live, status) if st != highspy.HighsBasisStatus.kBasic]
        for key in binding:
            if key[0] == "triangle":
                i, j, k = key[1:]
                seeds.append(Row(idx([t, t, t], [i, j, i], [j, k, k]), [1.0, 1.0, -1.0], ">=", 0.0, ("triangle", t, i, j, k)))
            else:
                i, others, m = key[1], np.array(key[2], dtype=np.int64), key[3]
                if m - t <= 0:
                    continue
                seeds.append(
                    Row(idx(np.full(others.size, t), np.full(others.size, i), others), np.ones(others.size), ">=", float(m - t), _spreading_tag(t, i, others))
                )
    return seeds, solves


@dataclass
class RelaxationResult:
    solution: LayeredSolution
    gamma: np.ndarray  # gamma[t-1] = f-weighted layer-t objective
    opt_value: float
    rounds: int
    cuts: dict[str, int]
    max_violation: float
    backend: str
    seconds: float
    trace: list[dict] = field(default_factory=list)


def layer_objectives(sol: LayeredSolution, sim: SimilarityMatrix, f: CostScaler | str = "linear") -> np.ndarray:
    f = scaler(f)
    iu = np.triu_indices(sim.n, 1)
    kappa = sim.w[iu]
    weights = layer_weights(sim.n, f)
    return np.array([weights[t] * float(kappa @ sol.x[t][iu]) for t in range(sol.layers)])


def solve_relaxation(
    sim: SimilarityMatrix,
    f: CostScaler | str = "linear",
    tol: float = VIOLATION_TOL,
    *,
    backend: str = "auto",
    batch: int | None = None,
    max_rounds: int = MAX_ROUNDS,
    lazy_monotone: bool | None = None,
    sweep: bool | None = None,
    on_round: Callable[[dict], None] | None = None,
) -> RelaxationResult:
    """Cutting-plane solve: optimise, separate all families, add violated rows, repeat.

    The loop stops when no triangle, spreading or monotonicity row is
    violated by more than ``tol``, so the solution is optimal for the full
    program. With HiGHS the program starts from the rows binding in the
    single-layer problems (:func:`layer_sweep`), monotonicity is separated
    lazily and non-binding rows are purged between rounds; the built-in
    simplex keeps everything and starts from the monotonicity rows alone.
    """
    f = scaler(f)
    n = sim.n
    start = time.perf_counter()
    P = n * (n - 1) // 2
    name = backend if backend != "auto" else ("native" if (n - 1) * P <= NATIVE_MAX_COLS else "highs")
    if lazy_monotone is None:
        lazy_monotone = name == "highs"
    if sweep is None:
        sweep = name == "highs"
    if batch is None:
        batch = BATCH if name == "native" else HIGHS_BATCH
    lp = build_relaxation(sim, f, monotone=not lazy_monotone)
    limits = Limits(tol=min(tol, 1e-7))
    pool = CutPool()
    trace: list[dict] = []
    new_rows: list[Row] = []
    if sweep and n > 2:
        seeds, solves = layer_sweep(sim, tol)
        pool.add(Cut(row.tag, row, 0.0) for row in seeds)
        for row in seeds:
            lp.add_row(row)
        trace.append({"round": 0, "rows_added": len(seeds), "single_layer_solves": solves})
    engine = _backend(name, lp, limits)
    worst = math.inf
    for rnd in range(1, max_rounds + 1):
        status, vec, obj = engine.solve(new_rows)
        if status != Status.OPTIMAL:
            raise RelaxationError(f"restricted LP returned {status.value} in round {rnd}; the relaxation is always feasible")
        sol = LayeredSolution.from_vector(vec, n)
        cuts = separate_triangle(sol, tol, batch) + separate_spreading(sol, tol, batch)
        if lazy_monotone:
            cuts += separate_monotone(sol, tol, batch)
        worst = max((c.violation for c in cuts), default=0.0)
        if cuts:
            engine.purge()
        new_rows = [c.row for c in cuts if not engine.has(c.tag)]
        pool.add(cuts)
        entry = {"round": rnd, "rows_added": len(new_rows), "objective": obj, "max_violation": worst}
        trace.append(entry)
        if on_round is not None:
            on_round(entry)
        log.debug("round %d: obj=%.10g added=%d worst=%.3g", rnd, obj, len(new_rows), worst)
        if not cuts:
            gamma = layer_objectives(sol, sim, f)
            return RelaxationResult(
                sol,
                gamma,
                float(gamma.sum()),
                rnd,
                {k: pool.count(k) for k in ("triangle", "spreading", "monotone")},
                0.0,
                engine.name,
                time.perf_counter() - start,
                trace,
            )
        if not new_rows:
            # every violated row is already in the LP: the solver's own tolerance is the limit
            raise RelaxationError(f"round {rnd}: separated rows already present yet violated by {worst:.3g}")
    raise RelaxationError(f"iteration cap of {max_rounds} rounds exceeded; max remaining violation {worst:.3g}")


def trace_lines(result: RelaxationResult) -> str:
    """Line-oriented JSON log of the cutting-plane rounds."""
    return "".join(json.dumps(entry) + "\n" for entry in result.trace)
