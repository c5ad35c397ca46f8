"""Readers and writers for matrices, points, trees, layered solutions, labels and tables."""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path
from typing import Iterable

import numpy as np

from .baselines import FlatClustering, PointSet
from .core import HierTree, InvalidInput, SimilarityMatrix, Ultrametric
from .kernels import subsample
from .lp import LayeredSolution

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("dataset", "algorithm", "kernel", "f", "err")


class ParseError(InvalidInput):
    def __init__(self, source: str, line: int, message: str, column: int | None = None):
        where = f"{source}:{line}" + (f":{column}" if column is not None else "")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.column = column


def fmt(v: float) -> str:
    """17 significant digits: enough for an exact float round trip."""
    return format(float(v), ".17g")


def _read(path) -> tuple[str, str]:
    p = Path(path)
    try:
        return p.read_text(), str(p)
    except OSError as exc:
        raise InvalidInput(f"cannot read {p}: {exc.strerror or exc}") from exc


def _write(path, text: str):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


# -- dense matrices ---------------------------------------------------------


def matrix_to_csv(M: np.ndarray) -> str:
    n = M.shape[0]
    lines = [f"n={n}"] + [",".join(fmt(v) for v in row) for row in M]
    return "\n".join(lines) + "\n"


def matrix_from_csv(text: str, source: str = "<text>") -> np.ndarray:
    lines = text.splitlines()
    if not lines or not lines[0].strip().startswith("n="):
        raise ParseError(source, 1, "expected header 'n=<count>'", 1)
    try:
        n = int(lines[0].strip()[2:])
    except ValueError:
        raise ParseError(source, 1, f"bad point count {lines[0].strip()[2:]!r}", 3) from None
    rows = [(k, ln) for k, ln in enumerate(lines[1:], 2) if ln.strip()]
    if len(rows) != n:
        raise ParseError(source, len(lines), f"header promises {n} rows, found {len(rows)}")
    M = np.empty((n, n))
    for r, (lineno, line) in enumerate(rows):
        cells = line.split(",")
        if len(cells) != n:
            raise ParseError(source, lineno, f"expected {n} values, found {len(cells)}")
        col = 1
        for c, cell in enumerate(cells):
            try:
                M[r, c] = float(cell)
            except ValueError:
                raise ParseError(source, lineno, f"not a number: {cell.strip()!r}", col) from None
            col += len(cell) + 1
    return M


def write_similarity(sim: SimilarityMatrix, path):
    _write(path, matrix_to_csv(sim.w))


def read_similarity(path) -> SimilarityMatrix:
    text, src = _read(path)
    return SimilarityMatrix(matrix_from_csv(text, src))


def write_ultrametric(d: Ultrametric, path):
    _write(path, matrix_to_csv(d.d))


def read_ultrametric(path) -> Ultrametric:
    text, src = _read(path)
    return Ultrametric(matrix_from_csv(text, src))


# -- points -------------------------------------------------------------------


def points_to_csv(points: PointSet) -> str:
    lines = [f"dims={points.dims}"] + [",".join(fmt(v) for v in row) for row in points.X]
    return "\n".join(lines) + "\n"


def points_from_csv(text: str, source: str = "<text>") -> PointSet:
    lines = text.splitlines()
    if not lines or not lines[0].strip().startswith("dims="):
        raise ParseError(source, 1, "expected header 'dims=<d>'", 1)
    try:
        dims = int(lines[0].strip()[5:])
    except ValueError:
        raise ParseError(source, 1, "bad dimension", 6) from None
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != dims:
            raise ParseError(source, lineno, f"expected {dims} coordinates, found {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ParseError(source, lineno, str(exc)) from None
    return PointSet(np.array(rows).reshape(len(rows), dims))


def write_points(points: PointSet, path):
    _write(path, points_to_csv(points))


def read_points(path) -> PointSet:
    text, src = _read(path)
    return points_from_csv(text, src)


def load_table(path, label_column: int | None = -1, size: int | None = None, seed: int = 0):
    """Feature table in the common repository layout: numeric columns plus an optional label column.

    A non-numeric first row is taken as a header. Returns the points, the
    ground-truth clustering (or None) and the selected row indices.
    """
    text, src = _read(path)
    reader = list(csv.reader(io.StringIO(text)))
    rows = [(k, r) for k, r in enumerate(reader, 1) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(src, 1, "no data rows")

    def numeric(cells):
        try:
            [float(c) for c in cells]
            return True
        except ValueError:
            return False

    width = len(rows[0][1])
    lab = None if label_column is None else label_column % width
    feat_idx = [c for c in range(width) if c != lab]
    if not numeric([rows[0][1][c] for c in feat_idx]):
        rows = rows[1:]
    X, labels = [], []
    for lineno, r in rows:
        if len(r) != width:
            raise ParseError(src, lineno, f"expected {width} columns, found {len(r)}")
        try:
            X.append([float(r[c]) for c in feat_idx])
        except ValueError as exc:
            raise ParseError(src, lineno, str(exc)) from None
        if lab is not None:
            labels.append(r[lab].strip())
    X = np.array(X)
    keep = subsample(len(X), size, seed)
    if len(keep) < len(X):
        log.info("subsampled %d of %d rows from %s with seed %d", len(keep), len(X), src, seed)
    truth = FlatClustering.from_any([labels[i] for i in keep]) if lab is not None else None
    return PointSet(X[keep]), truth, keep


# -- trees ----------------------------------------------------------------------


def _to_json_obj(nested):
    if isinstance(nested, tuple):
        return {"children": [_to_json_obj(c) for c in nested]}
    return {"leaf": int(nested)}


def _from_json_obj(obj, path="$"):
    if not isinstance(obj, dict):
        raise InvalidInput(f"{path}: expected an object")
    if "leaf" in obj:
        if not isinstance(obj["leaf"], int) or isinstance(obj["leaf"], bool):
            raise InvalidInput(f"{path}.leaf: expected an integer")
        return obj["leaf"]
    if "children" in obj and isinstance(obj["children"], list):
        return tuple(_from_json_obj(c, f"{path}.children[{k}]") for k, c in enumerate(obj["children"]))
    raise InvalidInput(f"{path}: expected 'leaf' or 'children'")


def tree_to_json(tree: HierTree) -> str:
    return json.dumps(_to_json_obj(tree.to_nested()), sort_keys=True) + "\n"


def tree_from_json(text: str, source: str = "<text>") -> HierTree:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(source, exc.lineno, exc.msg, exc.colno) from None
    return HierTree.from_nested(_from_json_obj(obj))


def tree_to_newick(tree: HierTree) -> str:
    def rec(x):
        return "(" + ",".join(rec(c) for c in x) + ")" if isinstance(x, tuple) else str(x)

    return rec(tree.to_nested()) + ";\n"


def tree_from_newick(text: str, source: str = "<text>") -> HierTree:
    s = text.strip()
    pos = 0

    def where(p):
        line = s.count("\n", 0, p) + 1
        col = p - (s.rfind("\n", 0, p) + 1) + 1
        return line, col

    def fail(msg):
        line, col = where(pos)
        raise ParseError(source, line, msg, col)

    def skip_ws():
        nonlocal pos
        while pos < len(s) and s[pos].isspace():
            pos += 1

    def label():
        nonlocal pos
        start = pos
        while pos < len(s) and s[pos] not in "(),:;" and not s[pos].isspace():
            pos += 1
        return s[start:pos]

    def length():
        nonlocal pos
        skip_ws()
        if pos < len(s) and s[pos] == ":":
            pos += 1
            skip_ws()
            label()

    def node():
        nonlocal pos
        skip_ws()
        if pos < len(s) and s[pos] == "(":
            pos += 1
            kids = [node()]
            skip_ws()
            while pos < len(s) and s[pos] == ",":
                pos += 1
                kids.append(node())
                skip_ws()
            if pos >= len(s) or s[pos] != ")":
                fail("expected ')'")
            pos += 1
            skip_ws()
            label()  # internal labels are ignored
            length()
            return tuple(kids)
        start = pos
        name = label()
        if not name:
            fail("expected a leaf index")
        try:
            leaf = int(name)
        except ValueError:
            pos = start
            fail(f"leaf label {name!r} is not an integer index")
        length()
        return leaf

    nested = node()
    skip_ws()
    if pos >= len(s) or s[pos] != ";":
        fail("expected ';'")
    return HierTree.from_nested(nested)


def write_tree(tree: HierTree, path):
    p = Path(path)
    _write(p, tree_to_newick(tree) if p.suffix in (".nwk", ".newick") else tree_to_json(tree))


def read_tree(path) -> HierTree:
    text, src = _read(path)
    p = Path(path)
    if p.suffix in (".nwk", ".newick"):
        return tree_from_newick(text, src)
    return tree_from_json(text, src)


# -- layered solutions, labels, tables --------------------------------------


def write_solution(sol: LayeredSolution, path):
    _write(path, sol.to_csv())


def read_solution(path, n: int | None = None) -> LayeredSolution:
    text, src = _read(path)
    try:
        return LayeredSolution.from_csv(text, n)
    except ValueError as exc:
        raise InvalidInput(f"{src}: {exc}") from None


def labels_to_csv(flat: FlatClustering) -> str:
    return "point,label\n" + "".join(f"{i},{int(c)}\n" for i, c in enumerate(flat.labels))


def labels_from_csv(text: str, source: str = "<text>") -> FlatClustering:
    lines = text.splitlines()
    if not lines or lines[0].replace(" ", "") != "point,label":
        raise ParseError(source, 1, "expected header 'point,label'", 1)
    pairs = {}
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            i, c = (int(x) for x in line.split(","))
        except ValueError:
            raise ParseError(source, lineno, "expected two integers") from None
        pairs[i] = c
    if sorted(pairs) != list(range(len(pairs))):
        raise ParseError(source, len(lines), "points must be numbered 0..n-1")
    return FlatClustering(np.array([pairs[i] for i in range(len(pairs))]))


def write_labels(flat: FlatClustering, path):
    _write(path, labels_to_csv(flat))


def read_labels(path) -> FlatClustering:
    text, src = _read(path)
    return labels_from_csv(text, src)


def table_to_csv(rows: Iterable[dict], columns: tuple = TABLE_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: fmt(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def write_table(rows: Iterable[dict], path, columns: tuple = TABLE_COLUMNS):
    _write(path, table_to_csv(rows, columns))


def sniff(path) -> str:
    """Guess the artifact kind of a file: tree, matrix, points, solution or labels."""
    p = Path(path)
    if p.suffix in (".json", ".nwk", ".newick"):
        return "tree"
    text, _ = _read(p)
    head = text.lstrip().split("\n", 1)[0].strip().replace(" ", "")
    if head.startswith("n="):
        return "matrix"
    if head.startswith("dims="):
        return "points"
    if head == "t,i,j,value":
        return "solution"
    if head == "point,label":
        return "labels"
    if head.startswith("(") or head.endswith(";"):
        return "tree"
    raise InvalidInput(f"{p}: cannot tell what kind of file this is from its first line {head[:40]!r}")
