"""Comparison algorithms and flat-clustering evaluation: linkage, Ward, k-means, pruning, error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import HierTree, InvalidInput, SimilarityMatrix

LINKAGES = ("single", "average", "complete")


@dataclass(frozen=True, eq=False)
class FlatClustering:
    """Labels ``1..k`` for points ``0..n-1``; every label is used."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 1 or lab.size == 0:
            raise InvalidInput("labels must be a non-empty 1-d sequence")
        if not np.issubdtype(lab.dtype, np.integer):
            if not np.all(lab == np.rint(lab)):
                raise InvalidInput("labels must be integers")
            lab = lab.astype(np.int64)
        used = np.unique(lab)
        if used[0] != 1 or not np.array_equal(used, np.arange(1, used.size + 1)):
            raise InvalidInput("labels must be exactly 1..k, each used")
        lab = lab.astype(np.int64).copy()
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def from_any(cls, labels) -> "FlatClustering":
        """Relabel arbitrary hashable labels to ``1..k`` in order of first appearance."""
        ids: dict = {}
        return cls(np.array([ids.setdefault(x, len(ids) + 1) for x in labels], dtype=np.int64))

    @classmethod
    def from_parts(cls, parts, n: int) -> "FlatClustering":
        lab = np.zeros(n, dtype=np.int64)
        for k, part in enumerate(sorted((sorted(p) for p in parts), key=lambda p: p[0]), 1):
            lab[part] = k
        return cls(lab)

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def k(self) -> int:
        return int(self.labels.max())

    def parts(self) -> list[frozenset]:
        return [frozenset(np.flatnonzero(self.labels == c).tolist()) for c in range(1, self.k + 1)]

    def __eq__(self, other):
        return isinstance(other, FlatClustering) and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class PointSet:
    X: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0:
            raise InvalidInput("points must form a non-empty 2-d array")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("point coordinates must be finite")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dims(self) -> int:
        return self.X.shape[1]

    def __eq__(self, other):
        return isinstance(other, PointSet) and np.array_equal(self.X, other.X)


def _agglomerate(score: np.ndarray, update, sizes0=None) -> HierTree:
    """Merge the highest-scoring pair of active clusters until one remains.

    ``update(s_ac, s_bc, s_ab, na, nb, nc)`` gives the score of the merged
    cluster against ``c``. Ties go to the pair with the smallest cluster ids,
    where merged clusters get ids ``n, n+1, ...``.
    """
    n = score.shape[0]
    if n < 2:
        raise InvalidInput("agglomeration needs at least two points")
    total = 2 * n - 1
    S = np.full((total, total), -np.inf)
    S[:n, :n] = score
    np.fill_diagonal(S, -np.inf)
    size = np.zeros(total, dtype=np.int64)
    size[:n] = 1 if sizes0 is None else sizes0
    nested: dict[int, object] = {i: i for i in range(n)}
    active = list(range(n))
    for new in range(n, total):
        ids = np.array(active)
        block = S[np.ix_(ids, ids)]
        iu = np.triu_indices(len(ids), 1)
        vals = block[iu]
        best = vals.max()
        # candidates in (id_a, id_b) lexicographic order, since ids ascend
        k = int(np.flatnonzero(vals == best)[0])
        a, b = int(ids[iu[0][k]]), int(ids[iu[1][k]])
        others = ids[(ids != a) & (ids != b)]
        if others.size:
            row = update(S[a, others], S[b, others], S[a, b], size[a], size[b], size[others])
            S[new, others] = row
            S[others, new] = row
        size[new] = size[a] + size[b]
        nested[new] = (nested.pop(a), nested.pop(b))
        active = [c for c in active if c not in (a, b)] + [new]
    return HierTree.from_nested(nested[total - 1])


def linkage(sim: SimilarityMatrix, method: str = "average") -> HierTree:
    """Agglomerative clustering on similarities: merge the most similar pair of clusters.

    Cluster similarity is the max (single), mean (average) or min (complete)
    of the pairwise similarities between the two clusters.
    """
    if method == "single":
        update = lambda sac, sbc, sab, na, nb, nc: np.maximum(sac, sbc)  # noqa: E731
    elif method == "complete":
        update = lambda sac, sbc, sab, na, nb, nc: np.minimum(sac, sbc)  # noqa: E731
    elif method == "average":
        update = lambda sac, sbc, sab, na, nb, nc: (na * sac + nb * sbc) / (na + nb)  # noqa: E731
    else:
        raise ValueError(f"unknown linkage {method!r}; expected one of {LINKAGES}")
    return _agglomerate(np.array(sim.w, dtype=float), update)


def ward(points: PointSet) -> HierTree:
    """Ward's minimum-variance agglomeration via the Lance-Williams recurrence."""
    X = points.X
    sq = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)

    # scores are negated merge costs so the shared driver can maximise
    def update(sac, sbc, sab, na, nb, nc):
        dac, dbc, dab = -sac, -sbc, -sab
        return -((na + nc) * dac + (nb + nc) * dbc - nc * dab) / (na + nb + nc)

    return _agglomerate(-sq, update)


@dataclass
class KMeansResult:
    clustering: FlatClustering
    inertia: float
    iterations: int
    centers: np.ndarray


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers)


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int):
    assign = None
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new = d2.argmin(1)
        for c in range(centers.shape[0]):
            if not np.any(new == c):
                # re-seed an empty cluster at the point worst served by its centre
                far = int(np.argmax(d2[np.arange(len(X)), new]))
                new[far] = c
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        centers = np.array([X[assign == c].mean(0) for c in range(centers.shape[0])])
    inertia = float(((X - centers[assign]) ** 2).sum())
    return assign, centers, inertia, it


def kmeans(points: PointSet, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; best of ``restarts`` runs by within-cluster sum of squares."""
    n = points.n
    if not 1 <= k <= n:
        raise InvalidInput(f"k must lie in 1..{n}, got {k}")
    rng = np.random.default_rng(seed)
    X = points.X
    best = None
    for _ in range(max(1, restarts)):
        assign, centers, inertia, it = _lloyd(X, _kmeans_pp(X, k, rng), max_iter)
        if best is None or inertia < best[2]:
            best = (assign, centers, inertia, it)
    assign, centers, inertia, it = best
    flat = FlatClustering.from_any(assign.tolist())
    order = [int(assign[np.flatnonzero(flat.labels == c)[0]]) for c in range(1, flat.k + 1)]
    return KMeansResult(flat, inertia, it, centers[order])


def confusion(h: FlatClustering, g: FlatClustering) -> np.ndarray:
    if h.n != g.n:
        raise InvalidInput(f"clusterings cover different point counts ({h.n} vs {g.n})")
    M = np.zeros((h.k, g.k), dtype=np.int64)
    np.add.at(M, (h.labels - 1, g.labels - 1), 1)
    return M


def classification_error(h: FlatClustering, g: FlatClustering) -> float:
    """Smallest fraction of points whose labels disagree under some matching of label sets."""
    M = confusion(h, g)
    rows, cols = linear_sum_assignment(M, maximize=True)
    return 1.0 - float(M[rows, cols].sum()) / h.n


@dataclass
class Pruning:
    clustering: FlatClustering
    err: float
    approximate: bool = False


def _children_nested(nested):
    return nested if isinstance(nested, tuple) else None


def best_pruning(tree: HierTree, k: int, target: FlatClustering) -> Pruning:
    """Best ``k`` flat clusters read off the tree, scored by classification error.

    A cluster is a node or the union of several children of one node, which
    is exactly what some binary refinement of the tree can offer; a plain
    antichain of nodes would leave wide nodes (stars) with no ``k``-pruning
    at all. The search is an exact dynamic program over the tree whose state
    is the number of clusters used and the set of target labels already
    claimed, so it is exponential only in the number of target classes.
    """
    n = tree.n
    if target.n != n:
        raise InvalidInput(f"target labels {target.n} points, tree has {n}")
    if not 1 <= k <= n:
        raise InvalidInput(f"k must lie in 1..{n}, got {k}")
    K = target.k
    if K > 16:
        raise InvalidInput("best pruning supports at most 16 target classes")
    g = target.labels - 1

    def count(leaves: list[int]) -> np.ndarray:
        return np.bincount(g[leaves], minlength=K)

    # tables map (clusters, claimed-label mask) -> (agreement, clusters as tuple of (leaves, label))
    def table(nested) -> tuple[dict, list[int]]:
        kids = _children_nested(nested)
        if kids is None:
            leaf = int(nested)
            return {(1, 0): (0, ((leaf,),)), (1, 1 << int(g[leaf])): (1, ((leaf,),))}, [leaf]
        subs = [table(c) for c in kids]
        # state: (j, claimed, open_mask, unlabeled_open) -> (value, closed clusters, open groups dict)
        states: dict = {(0, 0, 0, False): (0, (), {})}
        for sub, leaves in subs:
            cnt = count(leaves)
            nxt: dict = {}

            def offer(key, val, closed, groups):
                if key[0] > k:
                    return
                cur = nxt.get(key)
                if cur is None or val > cur[0]:
                    nxt[key] = (val, closed, groups)

            for (j, claimed, open_, unl), (val, closed, groups) in states.items():
                # the child is refined by its own table
                for (jc, mc), (vc, cc) in sub.items():
                    if mc & claimed:
                        continue
                    offer((j + jc, claimed | mc, open_, unl), val + vc, closed + cc, groups)
                # the child joins a group that becomes one cluster at this node
                for lab in range(K):
                    bit = 1 << lab
                    if cnt[lab] == 0:
                        continue
                    gr = dict(groups)
                    gr[lab] = gr.get(lab, ()) + tuple(leaves)
                    if open_ & bit:
                        offer((j, claimed, open_, unl), val + int(cnt[lab]), closed, gr)
                    elif not claimed & bit:
                        offer((j + 1, claimed | bit, open_ | bit, unl), val + int(cnt[lab]), closed, gr)
                gr = dict(groups)
                gr[-1] = gr.get(-1, ()) + tuple(leaves)
                offer((j + (0 if unl else 1), claimed, open_, True), val, closed, gr)
            states = nxt
        out: dict = {}
        for (j, claimed, _, _), (val, closed, groups) in states.items():
            clusters = closed + tuple(tuple(sorted(v)) for _, v in sorted(groups.items()))
            cur = out.get((j, claimed))
            if cur is None or val > cur[0]:
                out[(j, claimed)] = (val, clusters)
        return out, [leaf for _, lv in subs for leaf in lv]

    final, _ = table(tree.to_nested())
    options = [(val, clusters) for (j, _), (val, clusters) in final.items() if j == k]
    if not options:
        raise InvalidInput(f"tree admits no {k}-cluster pruning")
    best = max(options, key=lambda o: o[0])
    flat = FlatClustering.from_parts(best[1], n)
    err = classification_error(flat, target)
    return Pruning(flat, err)
