"""Exhaustive ground truth for small instances: tree enumeration, exact optimum, literal checks."""

from __future__ import annotations

from math import comb
from typing import Iterator

import numpy as np

from .core import LINEAR, CostScaler, HierTree, InvalidInput, SimilarityMatrix, Ultrametric, Violation, scaler
from .lp import LayeredSolution

EXACT_CAP = 8
BRUTE_CAP = 10


def _check_cap(n: int, cap: int, what: str):
    if n > cap:
        raise InvalidInput(f"{what} is exhaustive and limited to n <= {cap}, got n={n}")


def _rgs_partitions(items: list) -> Iterator[list[list]]:
    """Set partitions of ``items`` as restricted growth strings, in lexicographic order."""
    n = len(items)
    code = [0] * n

    def rec(pos: int, top: int):
        if pos == n:
            blocks: list[list] = [[] for _ in range(top + 1)]
            for item, b in zip(items, code):
                blocks[b].append(item)
            yield blocks
            return
        for b in range(top + 2):
            code[pos] = b
            yield from rec(pos + 1, max(top, b))

    if n == 0:
        yield []
        return
    yield from rec(1, 0)


def _nested_trees(items: tuple) -> Iterator:
    if len(items) == 1:
        yield items[0]
        return
    for blocks in _rgs_partitions(list(items)):
        if len(blocks) < 2:
            continue
        yield from _products([tuple(b) for b in blocks])


def _products(blocks: list[tuple]) -> Iterator[tuple]:
    if not blocks:
        yield ()
        return
    for head in _nested_trees(blocks[0]):
        for tail in _products(blocks[1:]):
            yield (head,) + tail


def enumerate_trees(n: int, n_cap: int = EXACT_CAP) -> Iterator[HierTree]:
    """Every hierarchy on leaves ``0..n-1`` exactly once, in a fixed canonical order."""
    if n < 1:
        raise InvalidInput("need at least one leaf")
    _check_cap(n, n_cap, "tree enumeration")
    for nested in _nested_trees(tuple(range(n))):
        yield HierTree.from_nested(nested)


def count_trees(n: int) -> int:
    """Number of hierarchies on ``n`` labelled leaves (no unary nodes)."""
    if n < 1:
        raise InvalidInput("need at least one leaf")
    a = [0, 1]
    # forests[m][k]: ways to split m labelled leaves into k blocks, each carrying a tree
    forests = {(0, 0): 1}
    for m in range(1, n + 1):
        for k in range(1, m + 1):
            # the block holding the smallest leaf has j leaves
            forests[(m, k)] = sum(
                comb(m - 1, j - 1) * a[j] * forests.get((m - j, k - 1), 0) for j in range(1, m - k + 2) if j < len(a)
            )
        if m >= 2:
            a.append(sum(forests[(m, k)] for k in range(2, m + 1)))
            forests[(m, 1)] = a[m]
    return a[n]


def _bits(mask: int) -> list[int]:
    out, i = [], 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def exact_optimum(
    sim: SimilarityMatrix, f: CostScaler | str = LINEAR, n_cap: int = EXACT_CAP
) -> tuple[HierTree, float]:
    """Minimum f-cost hierarchy by dynamic programming over leaf subsets.

    The cost splits over internal nodes: a node with leaf set ``S`` and child
    blocks pays ``f(|S|)`` times the similarity crossing between blocks.
    Partitions are scanned in the tree enumeration's order with a strict
    improvement test, so ties resolve to the first tree that enumeration
    yields.
    """
    f = scaler(f)
    n = sim.n
    _check_cap(n, n_cap, "exact optimum")
    w = sim.w
    fv = f.values(n + 1)
    full = (1 << n) - 1
    # within[S]: similarity mass on pairs inside S
    within = np.zeros(1 << n)
    for S in range(1, 1 << n):
        hi = S.bit_length() - 1
        rest = S & ~(1 << hi)
        within[S] = within[rest] + sum(w[hi, j] for j in _bits(rest))
    best: dict[int, tuple[float, object]] = {}
    for i in range(n):
        best[1 << i] = (0.0, i)

    def solve(S: int):
        if S in best:
            return best[S]
        members = _bits(S)
        size = len(members)
        top = None
        for blocks in _rgs_partitions(members):
            if len(blocks) < 2:
                continue
            masks = [sum(1 << b for b in block) for block in blocks]
            cross = within[S] - sum(within[m] for m in masks)
            subs = [solve(m) for m in masks]
            cost = float(fv[size]) * cross + sum(c for c, _ in subs)
            if top is None or cost < top[0] - 1e-12 * max(1.0, abs(top[0])):
                top = (cost, tuple(t for _, t in subs))
        best[S] = top
        return top

    if n == 1:
        return HierTree.from_nested(0), 0.0
    cost, nested = solve(full)
    return HierTree.from_nested(nested), float(cost)


def _subset_max(d: np.ndarray) -> np.ndarray:
    """``out[S]`` = largest pairwise value of ``d`` inside bitmask ``S`` (0 for |S| < 2)."""
    n = d.shape[0]
    out = np.zeros(1 << n)
    for b in range(n):
        lo = 1 << b
        row = np.zeros(lo)
        for j in range(b):
            row[1 << j : 1 << (j + 1)] = np.maximum(row[: 1 << j], d[b, j])
        out[lo : lo << 1] = np.maximum(out[:lo], row)
    return out


def _popcounts(n: int) -> np.ndarray:
    pc = np.zeros(1 << n, dtype=np.int64)
    for b in range(n):
        pc[1 << b : 1 << (b + 1)] = pc[: 1 << b] + 1
    return pc


def brute_nontrivial(d: Ultrametric, n_cap: int = BRUTE_CAP, tol: float = 1e-9) -> Violation | None:
    """Literal subset check: every set has a pair at distance at least its size minus one,
    and every threshold class has diameter at most its size minus one."""
    n = d.n
    _check_cap(n, n_cap, "brute-force non-triviality")
    dm = d.d
    smax = _subset_max(dm)
    sizes = _popcounts(n)
    bad = np.flatnonzero((sizes >= 2) & (smax < sizes - 1 - tol))
    if bad.size:
        S = int(bad[0])
        return Violation("spreading", tuple(_bits(S)), f"all distances <= {smax[S]:g} < {sizes[S] - 1}")
    for v in np.unique(dm[np.triu_indices(n, 1)]):
        for i in range(n):
            members = np.flatnonzero(dm[i] <= v + tol)
            diam = dm[np.ix_(members, members)].max()
            if diam > len(members) - 1 + tol:
                return Violation(
                    "hereditary", tuple(int(m) for m in members), f"diameter {diam:g} > {len(members) - 1}"
                )
    return None


def brute_spreading(sol: LayeredSolution, t: int, n_cap: int = BRUTE_CAP, tol: float = 1e-7) -> list[tuple]:
    """All ``(i, S, deficit)`` with ``i in S`` and ``sum_{j in S} x_ij < |S| - t - tol``."""
    n = sol.n
    _check_cap(n, n_cap, "brute-force spreading")
    X = sol.layer(t)
    sizes = _popcounts(n)
    out = []
    for i in range(n):
        # sums[S] = sum_{j in S} X[i, j] over all bitmasks S
        sums = np.zeros(1 << n)
        for b in range(n):
            sums[1 << b : 1 << (b + 1)] = sums[: 1 << b] + X[i, b]
        deficit = (sizes - t) - sums
        hits = np.flatnonzero(((np.arange(1 << n) >> i) & 1).astype(bool) & (deficit > tol))
        for S in hits:
            out.append((i, frozenset(_bits(int(S))), float(deficit[S])))
    return out
