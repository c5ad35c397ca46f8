"""Similarity matrices, ultrametrics, hierarchy trees and the cost functions on them.

Points are indexed ``0..n-1`` throughout. Matrices are stored dense and
symmetric with a zero diagonal; every unordered pair is represented by the
upper triangle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

TOL = 1e-9


class InvalidInput(ValueError):
    """An argument violates the invariants of the type it claims to be."""


class NontrivialityError(ValueError):
    def __init__(self, violation: "Violation"):
        super().__init__(str(violation))
        self.violation = violation


# ---------------------------------------------------------------------------
# similarity / ultrametric containers
# ---------------------------------------------------------------------------


def _as_square(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidInput(f"{name} must be a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Symmetric nonnegative pairwise similarities over ``n >= 2`` points."""

    w: np.ndarray

    def __post_init__(self):
        w = _as_square(self.w, "similarity")
        n = w.shape[0]
        if n < 2:
            raise InvalidInput("a similarity matrix needs at least 2 points")
        np.fill_diagonal(w, 0.0)
        if not np.allclose(w, w.T, rtol=0, atol=1e-12):
            raise InvalidInput("similarity matrix is not symmetric")
        if np.any(w < 0):
            i, j = np.argwhere(w < 0)[0]
            raise InvalidInput(f"negative similarity at ({i}, {j}): {w[i, j]}")
        w = (w + w.T) / 2
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @classmethod
    def from_pairs(cls, n: int, pairs: dict[tuple[int, int], float]) -> "SimilarityMatrix":
        w = np.zeros((n, n))
        for (i, j), v in pairs.items():
            w[i, j] = w[j, i] = v
        return cls(w)

    def pair_values(self) -> np.ndarray:
        """Upper-triangle values in row-major pair order."""
        iu = np.triu_indices(self.n, 1)
        return self.w[iu]

    def total(self) -> float:
        return float(self.pair_values().sum())

    def __eq__(self, other):
        return isinstance(other, SimilarityMatrix) and np.array_equal(self.w, other.w)

    __hash__ = None


def is_ultrametric(d: np.ndarray, tol: float = TOL) -> bool:
    """Strong triangle inequality check, O(n^3) but vectorised per pivot."""
    n = d.shape[0]
    for k in range(n):
        bound = np.maximum(d[:, k][:, None], d[k, :][None, :])
        if np.any(d > bound + tol):
            return False
    return True


@dataclass(frozen=True, eq=False)
class Ultrametric:
    d: np.ndarray

    def __post_init__(self):
        d = _as_square(self.d, "ultrametric")
        n = d.shape[0]
        if n < 1:
            raise InvalidInput("empty ultrametric")
        if np.any(np.abs(np.diag(d)) > TOL):
            raise InvalidInput("ultrametric must have a zero diagonal")
        np.fill_diagonal(d, 0.0)
        if not np.allclose(d, d.T, rtol=0, atol=TOL):
            raise InvalidInput("ultrametric is not symmetric")
        off = d[~np.eye(n, dtype=bool)]
        if np.any(off <= 0):
            raise InvalidInput("ultrametric distances between distinct points must be positive")
        if not is_ultrametric(d):
            raise InvalidInput("strong triangle inequality violated")
        d = (d + d.T) / 2
        # integer-valued inputs (the tree image) are snapped to exact integers
        rounded = np.rint(d)
        if np.all(np.abs(d - rounded) <= TOL):
            d = rounded
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def pair_values(self) -> np.ndarray:
        iu = np.triu_indices(self.n, 1)
        return self.d[iu]

    def __eq__(self, other):
        return isinstance(other, Ultrametric) and np.array_equal(self.d, other.d)

    __hash__ = None


# ---------------------------------------------------------------------------
# cost scalers
# ---------------------------------------------------------------------------

_BUILTIN: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": lambda x: x,
    "quadratic": lambda x: x * x,
    "log1p": np.log1p,
    "expm1": np.expm1,
}


@dataclass(frozen=True, eq=False)
class CostScaler:
    """A strictly increasing ``f`` with ``f(0) = 0`` applied to cluster sizes.

    Built-in kinds are evaluated in closed form; ``tabulated`` scalers carry
    their values ``f(0), f(1), ...`` explicitly and only accept integer
    arguments inside the table.
    """

    kind: str = "linear"
    table: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "tabulated":
            if self.table is None or len(self.table) < 2:
                raise InvalidInput("tabulated scaler needs at least f(0), f(1)")
            tab = np.asarray(self.table, dtype=float)
            if tab[0] != 0:
                raise InvalidInput("scaler must satisfy f(0) = 0")
            if np.any(np.diff(tab) <= 0):
                raise InvalidInput("scaler must be strictly increasing")
            object.__setattr__(self, "table", tuple(float(v) for v in tab))
        elif self.kind not in _BUILTIN:
            raise InvalidInput(f"unknown scaler kind {self.kind!r}")

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        if self.kind == "tabulated":
            idx = np.rint(arr).astype(int)
            if np.any(np.abs(arr - idx) > TOL) or np.any(idx < 0) or np.any(idx >= len(self.table)):
                raise InvalidInput("tabulated scaler evaluated outside its integer table")
            out = np.asarray(self.table)[idx]
        else:
            out = _BUILTIN[self.kind](arr)
        return float(out) if out.ndim == 0 else out

    def values(self, upto: int) -> np.ndarray:
        """``[f(0), f(1), ..., f(upto)]``."""
        return np.asarray(self(np.arange(upto + 1, dtype=float)), dtype=float)

    def increments(self, n: int) -> np.ndarray:
        """Layer weights ``f(t) - f(t-1)`` for ``t = 1..n-1``."""
        return np.diff(self.values(n - 1))

    def max_increment(self, n: int) -> float:
        """``max_{1<=n'<=n} f(n') - f(n'-1)``, the additive term in the f-cost guarantee."""
        return float(np.max(np.diff(self.values(n))))

    def inverse(self, values, n: int, tol: float = 1e-7) -> np.ndarray:
        """Map each value back to the integer ``t`` in ``0..n-1`` with ``f(t)`` equal to it."""
        table = self.values(n - 1)
        arr = np.asarray(values, dtype=float)
        flat = arr.ravel()
        pos = np.clip(np.searchsorted(table, flat), 0, len(table) - 1)
        lower = np.clip(pos - 1, 0, len(table) - 1)
        pick = np.where(np.abs(table[pos] - flat) <= np.abs(table[lower] - flat), pos, lower)
        err = np.abs(table[pick] - flat) / np.maximum(1.0, np.abs(flat))
        if np.any(err > tol):
            bad = flat[np.argmax(err)]
            raise InvalidInput(f"value {bad!r} is not an image f(t) for t in 0..{n - 1}")
        return pick.reshape(arr.shape).astype(float)

    @property
    def name(self) -> str:
        return self.kind


LINEAR = CostScaler("linear")


def scaler(kind: str | CostScaler) -> CostScaler:
    return kind if isinstance(kind, CostScaler) else CostScaler(kind)


# ---------------------------------------------------------------------------
# trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeNode:
    id: int
    children: tuple[int, ...] = ()
    leaf: int | None = None


@dataclass(frozen=True, eq=False)
class HierTree:
    """Rooted tree whose leaves are the points ``0..n-1``.

    Internal nodes always have at least two children. Build instances with
    :meth:`from_nested`; equality compares canonical forms.
    """

    nodes: tuple[TreeNode, ...]
    root: int
    _sizes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        by_id = {node.id: node for node in self.nodes}
        if len(by_id) != len(self.nodes):
            raise InvalidInput("duplicate node ids")
        if self.root not in by_id:
            raise InvalidInput("root id not among the nodes")
        seen: set[int] = set()
        leaves: list[int] = []
        stack = [self.root]
        while stack:
            nid = stack.pop()
            if nid in seen:
                raise InvalidInput("tree contains a cycle or a shared child")
            seen.add(nid)
            node = by_id.get(nid)
            if node is None:
                raise InvalidInput(f"dangling child id {nid}")
            if node.leaf is not None:
                if node.children:
                    raise InvalidInput("a leaf node cannot have children")
                leaves.append(node.leaf)
            else:
                if len(node.children) < 2:
                    raise InvalidInput(f"internal node {nid} has fewer than 2 children")
                stack.extend(node.children)
        if len(seen) != len(self.nodes):
            raise InvalidInput("some nodes are unreachable from the root")
        if sorted(leaves) != list(range(len(leaves))):
            raise InvalidInput("leaves must be exactly the points 0..n-1, each once")
        object.__setattr__(self, "_by_id", by_id)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_nested(cls, nested) -> "HierTree":
        """Build from nested sequences, e.g. ``((0, 1), 2)``; unary wrappers are contracted."""
        nodes: list[TreeNode] = []

        def add(item) -> int:
            if isinstance(item, (int, np.integer)):
                nodes.append(TreeNode(len(nodes), (), int(item)))
                return nodes[-1].id
            items = list(item)
            if len(items) == 1:
                return add(items[0])
            if not items:
                raise InvalidInput("empty subtree")
            kids = tuple(add(child) for child in items)
            nodes.append(TreeNode(len(nodes), kids, None))
            return nodes[-1].id

        root = add(nested)
        return cls(tuple(nodes), root)

    @classmethod
    def star(cls, n: int) -> "HierTree":
        if n == 1:
            return cls.from_nested(0)
        return cls.from_nested(tuple(range(n)))

    # -- accessors --------------------------------------------------------

    def node(self, nid: int) -> TreeNode:
        return self._by_id[nid]

    @property
    def n(self) -> int:
        return sum(1 for node in self.nodes if node.leaf is not None)

    def leaves_under(self, nid: int) -> list[int]:
        out = []
        stack = [nid]
        while stack:
            node = self._by_id[stack.pop()]
            if node.leaf is not None:
                out.append(node.leaf)
            else:
                stack.extend(node.children)
        return sorted(out)

    def internal_nodes(self) -> Iterator[TreeNode]:
        return (node for node in self.nodes if node.leaf is None)

    def clusters(self) -> list[frozenset[int]]:
        """Leaf sets of all internal nodes."""
        return [frozenset(self.leaves_under(node.id)) for node in self.internal_nodes()]

    def to_nested(self, nid: int | None = None):
        """Canonical nested-tuple form: children ordered by their minimum leaf."""
        node = self._by_id[self.root if nid is None else nid]
        if node.leaf is not None:
            return node.leaf
        kids = [self.to_nested(c) for c in node.children]
        kids.sort(key=_min_leaf)
        return tuple(kids)

    def canonical(self):
        return self.to_nested()

    def __eq__(self, other):
        return isinstance(other, HierTree) and self.canonical() == other.canonical()

    def __hash__(self):
        return hash(self.canonical())

    def __repr__(self):
        return f"HierTree({self.canonical()!r})"


def _min_leaf(nested) -> int:
    if isinstance(nested, int):
        return nested
    return min(_min_leaf(c) for c in nested)


# ---------------------------------------------------------------------------
# costs and the tree <-> ultrametric bijection
# ---------------------------------------------------------------------------


def lca_sizes(tree: HierTree) -> np.ndarray:
    """Matrix of ``|leaves(T[lca(i, j)])|`` with ones on the diagonal."""
    n = tree.n
    out = np.ones((n, n))

    def walk(nid: int) -> list[int]:
        node = tree.node(nid)
        if node.leaf is not None:
            return [node.leaf]
        groups = [walk(c) for c in node.children]
        size = sum(len(g) for g in groups)
        for a in range(len(groups)):
            ia = np.asarray(groups[a])
            for b in range(a + 1, len(groups)):
                ib = np.asarray(groups[b])
                out[np.ix_(ia, ib)] = size
                out[np.ix_(ib, ia)] = size
        return [leaf for g in groups for leaf in g]

    walk(tree.root)
    return out


def _check_leaves(tree: HierTree, sim: SimilarityMatrix):
    if tree.n != sim.n:
        raise InvalidInput(f"tree has {tree.n} leaves but the similarity covers {sim.n} points")


def tree_cost(tree: HierTree, sim: SimilarityMatrix) -> float:
    """Sum over pairs of similarity times the leaf count below their lca."""
    _check_leaves(tree, sim)
    iu = np.triu_indices(sim.n, 1)
    return float(np.dot(sim.w[iu], lca_sizes(tree)[iu]))


def tree_cost_f(tree: HierTree, sim: SimilarityMatrix, f: CostScaler | str = LINEAR) -> float:
    f = scaler(f)
    _check_leaves(tree, sim)
    iu = np.triu_indices(sim.n, 1)
    return float(np.dot(sim.w[iu], f(lca_sizes(tree)[iu])))


def induced_ultrametric(tree: HierTree) -> Ultrametric:
    """``d_T(i, j) = |leaves(T[lca(i, j)])| - 1``."""
    d = lca_sizes(tree) - 1.0
    np.fill_diagonal(d, 0.0)
    return Ultrametric(d)


def ultrametric_cost(d: Ultrametric, sim: SimilarityMatrix) -> float:
    """Inner product ``<kappa, d>`` over unordered pairs."""
    return float(np.dot(sim.pair_values(), d.pair_values()))


def normalized_cost(tree: HierTree, sim: SimilarityMatrix, f: CostScaler | str = LINEAR) -> float:
    """Cost relative to the star tree, a value in ``(0, 1]``."""
    if sim.total() <= 0:
        raise InvalidInput("normalized cost is undefined for an all-zero similarity")
    f = scaler(f)
    star = sim.total() * f(float(sim.n))
    return tree_cost_f(tree, sim, f) / star


@dataclass(frozen=True)
class Violation:
    """Why an ultrametric fails to be induced by a hierarchy."""

    condition: str  # "spreading", "hereditary" or "range"
    witness: tuple[int, ...]
    detail: str

    def __str__(self):
        return f"{self.condition} violation on {list(self.witness)}: {self.detail}"


def _classes_at(d: np.ndarray, level: float, tol: float) -> list[np.ndarray]:
    """Equivalence classes of ``d <= level`` (an equivalence relation for ultrametrics)."""
    close = d <= level + tol
    n = d.shape[0]
    assigned = np.zeros(n, dtype=bool)
    out = []
    for i in range(n):
        if not assigned[i]:
            members = np.flatnonzero(close[i] & ~assigned)
            assigned[members] = True
            out.append(members)
    return out


def check_nontrivial(d: Ultrametric, f: CostScaler | str | None = None, tol: float = TOL) -> Violation | None:
    """Return ``None`` when ``d`` is non-trivial, else the first violation found.

    Subsets with pairwise distance at most ``v`` lie inside a single class of
    the relation ``d <= v``, so both conditions only need checking on those
    classes at each distinct value ``v``. With ``f`` given, ``d`` is tested as
    an f-image: sizes ``s`` are compared against ``f(s)`` instead of ``s``.
    """
    dm = d.d
    n = dm.shape[0]
    fs = scaler(f) if f is not None else LINEAR
    bound = fs.values(n)  # bound[s - 1] is the largest admissible in-class distance for class size s
    for v in np.unique(dm[np.triu_indices(n, 1)]):
        for members in _classes_at(dm, v, tol):
            size = len(members)
            if size < 2:
                continue
            sub = dm[np.ix_(members, members)]
            diam = sub.max()
            if diam < bound[size - 1] - tol * max(1.0, bound[size - 1]):
                return Violation(
                    "spreading",
                    tuple(int(m) for m in members),
                    f"{size} points with all distances <= {diam:g} < {bound[size - 1]:g}",
                )
            if diam > bound[size - 1] + tol * max(1.0, bound[size - 1]):
                return Violation(
                    "hereditary",
                    tuple(int(m) for m in members),
                    f"class of size {size} at level {v:g} has diameter {diam:g} > {bound[size - 1]:g}",
                )
    values = d.pair_values() if f is None else fs.inverse(d.pair_values(), n, tol=1e-6)
    if len(values) and np.any(np.abs(values - np.rint(values)) > tol):
        k = int(np.argmax(np.abs(values - np.rint(values))))
        return Violation("range", (), f"non-integer distance {values[k]!r}")
    return None


def is_nontrivial(d: Ultrametric, f: CostScaler | str | None = None) -> bool:
    return check_nontrivial(d, f) is None


def build_tree(d: Ultrametric, *, check: bool = True) -> HierTree:
    """Recover the hierarchy inducing a non-trivial ultrametric.

    A subproblem of size ``m`` splits into the classes of ``d < m - 1``. With
    ``check=False`` the recursion is run on any ultrametric whose every
    subproblem separates; the result then satisfies ``d_T <= d`` pointwise
    for integer-valued inputs.
    """
    if check:
        bad = check_nontrivial(d)
        if bad is not None:
            raise NontrivialityError(bad)
    dm = d.d

    def split(members: np.ndarray):
        m = len(members)
        if m == 1:
            return int(members[0])
        sub = dm[np.ix_(members, members)]
        parts = _classes_at(sub, m - 1 - 0.5, 0.0) if _integral(sub) else _classes_strict(sub, m - 1)
        if len(parts) < 2:
            raise NontrivialityError(
                Violation("spreading", tuple(int(x) for x in members), "subproblem does not separate")
            )
        return tuple(split(members[p]) for p in parts)

    return HierTree.from_nested(split(np.arange(d.n)))


def _integral(a: np.ndarray) -> bool:
    return bool(np.all(a == np.rint(a)))


def _classes_strict(d: np.ndarray, level: float) -> list[np.ndarray]:
    close = d < level - TOL
    np.fill_diagonal(close, True)
    n = d.shape[0]
    assigned = np.zeros(n, dtype=bool)
    out = []
    for i in range(n):
        if not assigned[i]:
            members = np.flatnonzero(close[i] & ~assigned)
            assigned[members] = True
            out.append(members)
    return out


def apply_scaler(d: Ultrametric, f: CostScaler | str, direction: str = "forward") -> Ultrametric:
    """Entrywise ``f(d)`` or ``f^{-1}(d)``; both preserve the ultrametric property."""
    f = scaler(f)
    if direction == "forward":
        out = np.asarray(f(d.d), dtype=float)
    elif direction == "inverse":
        out = f.inverse(d.d, d.n)
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")
    out = np.array(out, dtype=float)
    np.fill_diagonal(out, 0.0)
    return Ultrametric(out)


def nested_partitions(tree: HierTree) -> list[list[frozenset[int]]]:
    """Thresholded view of ``d_T``: for each ``t`` in ``1..n-1`` the classes of ``d_T <= t - 1``."""
    d = induced_ultrametric(tree).d
    return [[frozenset(int(i) for i in c) for c in _classes_at(d, t - 1, 0.0)] for t in range(1, tree.n)]


def pairs(n: int) -> Sequence[tuple[int, int]]:
    return list(zip(*np.triu_indices(n, 1)))

