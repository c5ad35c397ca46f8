"""Sphere-growing rounding of the layered relaxation, layer assembly and ILP feasibility checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import (
    LINEAR,
    CostScaler,
    HierTree,
    InvalidInput,
    SimilarityMatrix,
    Ultrametric,
    Violation,
    apply_scaler,
    build_tree,
    check_nontrivial,
    induced_ultrametric,
    scaler,
)
from .lp import LayeredSolution

EXPANSION_TOL = 1e-12
EPSILON_FLOOR = 1e-4


class DegeneracyError(RuntimeError):
    pass


def _frac(eps: float) -> Fraction:
    # decimal reading, so that e.g. floor((1 + 0.1) * 10) is 11 and not 11.000000000000002
    return Fraction(repr(float(eps)))


def check_epsilon(eps: float) -> float:
    eps = float(eps)
    if not 0 < eps < 1:
        raise InvalidInput(f"epsilon must lie in (0, 1), got {eps!r}")
    return eps


def top_layer(n: int, eps: float) -> int:
    """Number of rounded layers, ``floor((n - 1) / (1 + eps))``."""
    return math.floor(Fraction(n - 1) / (1 + _frac(eps)))


def size_limit(t: int, eps: float) -> int:
    """``floor((1 + eps) t)``: the clique-size limit met by rounded layer ``t``."""
    return math.floor((1 + _frac(eps)) * t)


def layer_bound(n: int, eps: float) -> float:
    """Per-layer ratio bound ``((1+eps)/(2 eps)) ln(n ln n + 1) (2 + 1/ln n)``."""
    ln = math.log(n)
    return (1 + eps) / (2 * eps) * math.log(n * ln + 1) * (2 + 1 / ln)


def total_bound(n: int, eps: float, opt_value: float) -> float:
    return 2 * layer_bound(n, eps) * opt_value


@dataclass(frozen=True)
class Ball:
    center: int
    radius: float
    members: frozenset
    t: int
    ambient: frozenset


@dataclass(frozen=True)
class LayerPartition:
    t: int
    parts: tuple  # tuple of frozensets, ordered by smallest member

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(sorted((frozenset(p) for p in self.parts), key=min)))

    def labels(self, n: int) -> np.ndarray:
        lab = -np.ones(n, dtype=np.int64)
        for k, part in enumerate(self.parts):
            lab[list(part)] = k
        if np.any(lab < 0):
            raise InvalidInput(f"layer {self.t} partition does not cover all points")
        return lab

    def separation(self, n: int) -> np.ndarray:
        lab = self.labels(n)
        return (lab[:, None] != lab[None, :]).astype(float)


@dataclass(frozen=True)
class Geometry:
    volume: float
    boundary: float
    expansion: float  # 0 without boundary, nan for a zero volume with boundary
    members: frozenset

    @property
    def degenerate(self) -> bool:
        return not self.volume > 0


class _Local:
    """Restriction of layer ``t`` to an ambient set ``U``."""

    def __init__(self, U: Sequence[int], t: int, sol: LayeredSolution, sim: SimilarityMatrix, f: CostScaler, n: int):
        self.U = np.array(sorted(int(u) for u in U), dtype=np.int64)
        ix = np.ix_(self.U, self.U)
        self.D = sol.layer(t)[ix]
        self.K = sim.w[ix]
        self.fac = float(f.increments(t + 1)[t - 1])
        iu = np.triu_indices(len(self.U), 1)
        self.gamma = self.fac * float(self.K[iu] @ self.D[iu])
        self.seed = self.gamma / (n * math.log(n))

    def geometry(self, c: int, r: float) -> Geometry:
        inside = self.D[c] < r
        Kin = self.K[np.ix_(inside, inside)]
        Din = self.D[np.ix_(inside, inside)]
        internal = float(np.triu(Kin * Din, 1).sum())
        cross = self.K[np.ix_(inside, ~inside)]
        reach = r - self.D[c, inside]
        crossing = float(reach @ cross.sum(axis=1))
        boundary = self.fac * float(cross.sum())
        volume = self.seed + self.fac * (internal + crossing)
        if boundary == 0:
            expansion = 0.0
        else:
            expansion = boundary / volume if volume > 0 else math.nan
        return Geometry(volume, boundary, expansion, frozenset(int(u) for u in self.U[inside]))


def ball_geometry(
    center: int,
    r: float,
    t: int,
    U: Sequence[int],
    sol: LayeredSolution,
    sim: SimilarityMatrix,
    f: CostScaler | str = LINEAR,
) -> Geometry:
    """Volume, boundary and expansion of the open ball of radius ``r`` around ``center`` inside ``U``."""
    n = sim.n
    if n < 2:
        raise InvalidInput("ball geometry needs at least two points")
    if center not in set(int(u) for u in U):
        raise InvalidInput("center must lie in U")
    loc = _Local(U, t, sol, sim, scaler(f), n)
    return loc.geometry(int(np.searchsorted(loc.U, center)), r)


@dataclass(frozen=True)
class RadiusChoice:
    radius: float
    geometry: Geometry
    threshold: float
    flag: str | None  # None, "zero_volume", "no_candidate" or "oversize"


def _choose(loc: _Local, c: int, delta: float, cap: int) -> RadiusChoice:
    dist = loc.D[c]
    cands = sorted(set(float(v) for v in dist if 0 < v <= delta) | {delta})
    geos = [loc.geometry(c, r) for r in cands]
    if not loc.seed > 0:
        if len(loc.U) == 1:
            return RadiusChoice(delta, geos[-1], 0.0, None)
        # no similarity mass inside U: every crossing edge has zero weight, any split is free
        return RadiusChoice(cands[0], geos[0], math.nan, "zero_volume")
    threshold = math.log(geos[-1].volume / loc.seed) / delta
    fits = [k for k, g in enumerate(geos) if len(g.members) <= cap]
    for k in fits:
        if geos[k].expansion <= threshold * (1 + EXPANSION_TOL) + EXPANSION_TOL:
            return RadiusChoice(cands[k], geos[k], threshold, None)
    if fits:
        k = min(fits, key=lambda k: (geos[k].expansion, k))
        return RadiusChoice(cands[k], geos[k], threshold, "no_candidate")
    return RadiusChoice(cands[0], geos[0], threshold, "oversize")


def find_radius(
    center: int,
    t: int,
    U: Sequence[int],
    sol: LayeredSolution,
    sim: SimilarityMatrix,
    eps: float,
    f: CostScaler | str = LINEAR,
) -> RadiusChoice:
    """Smallest candidate radius in ``(0, delta]`` whose ball meets the expansion threshold.

    Membership is constant between consecutive distances from the centre and
    the volume grows inside each interval, so each interval's right end is the
    only point worth testing.
    """
    eps = check_epsilon(eps)
    loc = _Local(U, t, sol, sim, scaler(f), sim.n)
    delta = eps / (1 + eps)
    return _choose(loc, int(np.searchsorted(loc.U, center)), delta, size_limit(t, eps))


@dataclass
class Rounding:
    eps: float
    partitions: list[LayerPartition]  # partitions[t-1] for t = 1..m
    layers: LayeredSolution  # binary, one layer per partition
    balls: list[Ball]
    flags: list[dict]
    audit: list[dict]

    @property
    def m(self) -> int:
        return len(self.partitions)

    @property
    def flagged(self) -> bool:
        return bool(self.flags)


def round_layers(
    sol: LayeredSolution,
    eps: float,
    sim: SimilarityMatrix,
    f: CostScaler | str = LINEAR,
    *,
    rng: np.random.Generator | None = None,
) -> Rounding:
    """Carve each layer's oversized parts into low-expansion balls, from the top layer down.

    The centre of each ball is the lowest-index point left in ``U``, or a
    random one when ``rng`` is given.
    """
    eps = check_epsilon(eps)
    f = scaler(f)
    n = sim.n
    if sol.n != n:
        raise InvalidInput("solution and similarity sizes differ")
    m = top_layer(n, eps)
    delta = eps / (1 + eps)
    bound = layer_bound(n, eps)
    weights = f.increments(n)
    iu = np.triu_indices(n, 1)
    kappa = sim.w[iu]
    current = [frozenset(range(n))]
    parts_by_t: dict[int, LayerPartition] = {}
    balls: list[Ball] = []
    flags: list[dict] = []
    audit: list[dict] = []
    for t in range(m, 0, -1):
        cap = size_limit(t, eps)
        nxt = []
        for U in current:
            if len(U) <= cap:
                nxt.append(U)
                continue
            rest = set(U)
            while rest:
                loc = _Local(sorted(rest), t, sol, sim, f, n)
                if not loc.seed > 0 and len(rest) <= cap:
                    nxt.append(frozenset(rest))
                    break
                c = int(rng.integers(len(loc.U))) if rng is not None else 0
                choice = _choose(loc, c, delta, cap)
                members = choice.geometry.members
                if choice.flag is not None:
                    flags.append({"t": t, "center": int(loc.U[c]), "size": len(rest), "kind": choice.flag})
                balls.append(Ball(int(loc.U[c]), choice.radius, members, t, frozenset(rest)))
                nxt.append(members)
                rest -= members
        current = nxt
        part = LayerPartition(t, tuple(current))
        parts_by_t[t] = part
        x = part.separation(n)
        cost = float(weights[t - 1] * (kappa @ x[iu]))
        gamma = float(weights[t - 1] * (kappa @ sol.layer(t)[iu]))
        audit.append(
            {
                "t": t,
                "parts": [sorted(p) for p in part.parts],
                "cost": cost,
                "gamma": gamma,
                "bound": bound,
                "ratio": cost / gamma if gamma > 0 else None,
            }
        )
    partitions = [parts_by_t[t] for t in range(1, m + 1)]
    stack = np.stack([p.separation(n) for p in partitions]) if m else np.zeros((0, n, n))
    audit.reverse()
    return Rounding(eps, partitions, LayeredSolution(stack, "binary"), balls, flags, audit)


@dataclass
class Assembly:
    y: LayeredSolution  # binary, layers 1..n-1
    raw: Ultrametric  # f-weighted sum of the y layers, before any repair
    d: Ultrametric  # f-image of a non-trivial ultrametric
    tree: HierTree
    repaired: bool


def assemble_layers(rounded: LayeredSolution, eps: float, f: CostScaler | str = LINEAR) -> Assembly:
    """Stretch rounded layer ``s`` over layers ``t`` with ``floor(t/(1+eps)) = s`` and sum them.

    The stretched stack is always nested, but a part of size ``s`` may show up
    first above layer ``s``, which makes the summed ultrametric fail the
    hereditary condition. In that case the hierarchy recursion is run on it
    anyway; its tree ultrametric is pointwise no larger, so every cost bound
    carries over. ``repaired`` records when this happened.
    """
    eps = check_epsilon(eps)
    f = scaler(f)
    n = rounded.n
    m = top_layer(n, eps)
    if rounded.layers != m:
        raise InvalidInput(f"expected {m} rounded layers for n={n}, eps={eps}, got {rounded.layers}")
    off = 1.0 - np.eye(n)
    y = np.empty((n - 1, n, n))
    one_eps = 1 + _frac(eps)
    for t in range(1, n):
        if t > one_eps:
            y[t - 1] = rounded.layer(math.floor(t / one_eps))
        else:
            y[t - 1] = off
    counts = y.sum(axis=0)
    raw_lin = Ultrametric(counts)
    raw = apply_scaler(raw_lin, f) if f.name != "linear" else raw_lin
    repaired = check_nontrivial(raw_lin) is not None
    tree = build_tree(raw_lin, check=not repaired)
    d_lin = induced_ultrametric(tree)
    d = apply_scaler(d_lin, f) if f.name != "linear" else d_lin
    return Assembly(LayeredSolution(y, "binary"), raw, d, tree, repaired)


def _zero_graph_parts(x: np.ndarray) -> list[frozenset]:
    n = x.shape[0]
    seen = np.zeros(n, dtype=bool)
    out = []
    for i in range(n):
        if seen[i]:
            continue
        comp, stack = {i}, [i]
        seen[i] = True
        while stack:
            u = stack.pop()
            for v in np.flatnonzero((x[u] == 0) & ~seen):
                seen[v] = True
                comp.add(int(v))
                stack.append(int(v))
        out.append(frozenset(comp))
    return out


def check_layer_feasibility(x: np.ndarray, limit: int) -> Violation | None:
    """``None`` iff the zero graph of ``x`` is a disjoint union of cliques of size at most ``limit``."""
    x = np.asarray(x)
    if not np.all((x == 0) | (x == 1)):
        raise InvalidInput("layer is not binary")
    for comp in _zero_graph_parts(x):
        members = sorted(comp)
        sub = x[np.ix_(members, members)]
        ones = np.argwhere(np.triu(sub, 1) == 1)
        if len(ones):
            a, c = (members[k] for k in ones[0])
            # a and c are joined through the component; find a midpoint or report the pair
            mids = [b for b in members if x[a, b] == 0 and x[b, c] == 0 and b not in (a, c)]
            witness = (a, mids[0], c) if mids else (a, c)
            return Violation("clique", witness, f"zero graph is not transitive on {list(witness)}")
        if len(members) > limit:
            return Violation("size", tuple(members), f"clique of size {len(members)} exceeds {limit}")
    return None


def check_interlayer(sol: LayeredSolution) -> Violation | None:
    """Nested cliques across layers and realisation of small cliques at their own size."""
    L = sol.layers
    parts = [_zero_graph_parts(sol.layer(t)) for t in range(1, L + 1)]
    for t in range(1, L):
        upper = parts[t]
        for clique in parts[t - 1]:
            if not any(clique <= big for big in upper):
                return Violation("nested", tuple(sorted(clique)), f"clique of layer {t} is split in layer {t + 1}")
    for t in range(1, L + 1):
        for clique in parts[t - 1]:
            s = len(clique)
            if s <= t and clique not in parts[s - 1]:
                return Violation(
                    "realization", tuple(sorted(clique)), f"clique of size {s} in layer {t} is not a clique of layer {s}"
                )
    return None


@dataclass
class EpsilonChoice:
    eps: float
    tried: list[float] = field(default_factory=list)
    rounding: Rounding | None = None


def epsilon_schedule(
    sol: LayeredSolution,
    sim: SimilarityMatrix,
    f: CostScaler | str = LINEAR,
    start: float = 0.5,
    floor: float = EPSILON_FLOOR,
    seed: int | None = None,
) -> EpsilonChoice:
    """First of ``start, start/2, ...`` whose dry-run rounding raises no flag.

    With ``seed`` each dry run picks ball centres from a fresh generator with that seed.
    """
    eps = check_epsilon(start)
    tried = []
    while eps >= floor:
        tried.append(eps)
        rng = np.random.default_rng(seed) if seed is not None else None
        rounding = round_layers(sol, eps, sim, f, rng=rng)
        if not rounding.flagged:
            return EpsilonChoice(eps, tried, rounding)
        eps /= 2
    raise DegeneracyError(
        f"every epsilon from {start} down to {tried[-1]} met a zero or unusable volume; tried {len(tried)} values"
    )
