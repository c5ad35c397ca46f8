from __future__ import annotations

import numpy as np
import pytest

from ultraclust.core import HierTree, SimilarityMatrix, Ultrametric
from ultraclust.kernels import KernelSpec, build_similarity
from ultraclust.baselines import PointSet
from ultraclust.simplex import LinearProgram, Row


def random_tree(n: int, rng: np.random.Generator) -> HierTree:
    """Random agglomeration: merge 2 or 3 random clusters until one is left."""
    items: list = list(range(n))
    while len(items) > 1:
        k = 2 if len(items) == 2 or rng.random() < 0.7 else 3
        pick = sorted(rng.choice(len(items), size=k, replace=False).tolist(), reverse=True)
        merged = tuple(items.pop(p) for p in pick)
        items.append(merged)
    return HierTree.from_nested(items[0])


def random_sim(n: int, rng: np.random.Generator, density: float = 1.0) -> SimilarityMatrix:
    w = rng.random((n, n))
    if density < 1:
        w = w * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    return SimilarityMatrix(w + w.T)


def kernel_sim(n: int, rng: np.random.Generator, kind: str = "gaussian") -> SimilarityMatrix:
    pts = PointSet(rng.normal(size=(n, 2)) + rng.integers(0, 2, size=(n, 1)) * 2.5)
    return build_similarity(pts, KernelSpec(kind))


def fuzz_ultrametric(n: int, rng: np.random.Generator) -> Ultrametric:
    """Integer ultrametric with heights in 1..n on a random hierarchy.

    Heights grow towards the root but are otherwise random, so roughly half of
    the draws are induced by some hierarchy and half are not.
    """
    tree = random_tree(n, rng)
    d = np.zeros((n, n))

    def walk(nested, cap):
        if isinstance(nested, int):
            return [nested]
        size = _size(nested)
        exact = size - 1
        if rng.random() < 0.6:
            h = exact
        else:
            h = int(rng.integers(1, n + 1))
        h = max(1, min(h, cap))
        groups = [walk(c, h) for c in nested]
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                for i in groups[a]:
                    for j in groups[b]:
                        d[i, j] = d[j, i] = h
        return [i for g in groups for i in g]

    walk(tree.canonical(), n)
    return Ultrametric(d)


def _size(nested) -> int:
    return 1 if isinstance(nested, int) else sum(_size(c) for c in nested)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def random_lp(rng: np.random.Generator, m: int, n: int) -> tuple[LinearProgram, list[Row]]:
    """Feasible box-bounded program; rows are split into a base part and a later batch."""
    x0 = rng.random(n)
    lp = LinearProgram(rng.normal(size=n), np.zeros(n), np.ones(n))
    rows = []
    for r in range(m):
        nnz = int(rng.integers(1, n + 1))
        idx = rng.choice(n, size=nnz, replace=False)
        val = rng.normal(size=nnz)
        act = float(val @ x0[idx])
        sense = rng.choice([">=", "<=", "="], p=[0.45, 0.45, 0.1])
        slack = float(rng.exponential(0.2))
        rhs = act - slack if sense == ">=" else act + slack if sense == "<=" else act
        rows.append(Row(idx, val, str(sense), rhs, ("r", r)))
    k = int(rng.integers(0, m + 1))
    for row in rows[:k]:
        lp.add_row(row)
    return lp, rows[k:]
