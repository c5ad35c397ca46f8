from __future__ import annotations

import math

import numpy as np
import pytest

from ultraclust.baselines import FlatClustering, PointSet, classification_error, kmeans
from ultraclust.core import HierTree, InvalidInput, SimilarityMatrix, induced_ultrametric
from ultraclust.io import (
    ParseError,
    labels_from_csv,
    labels_to_csv,
    load_table,
    matrix_from_csv,
    matrix_to_csv,
    points_from_csv,
    points_to_csv,
    read_labels,
    read_points,
    read_similarity,
    read_solution,
    read_tree,
    read_ultrametric,
    sniff,
    table_to_csv,
    tree_from_json,
    tree_from_newick,
    tree_to_json,
    tree_to_newick,
    write_labels,
    write_points,
    write_similarity,
    write_solution,
    write_tree,
    write_ultrametric,
)
from ultraclust.kernels import Component, KernelSpec, build_similarity, subsample, synth_mixture, two_blobs
from ultraclust.lp import LayeredSolution

from conftest import random_sim, random_tree


def test_kernel_examples():
    pts = PointSet(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))
    g = build_similarity(pts, KernelSpec("gaussian")).w
    assert g[0, 1] == 1.0
    assert g[0, 2] == pytest.approx(math.exp(-1.0), abs=1e-6)
    assert g[0, 2] == pytest.approx(0.367879, abs=1e-6)
    c = build_similarity(PointSet(pts.X[:3]), KernelSpec("cosine")).w
    assert c[0, 2] == pytest.approx(1.0) and c[0, 1] == pytest.approx(2.0)
    with pytest.raises(InvalidInput):
        build_similarity(pts, KernelSpec("cosine"))
    with pytest.raises(InvalidInput):
        KernelSpec("gaussian", sigma=0)
    with pytest.raises(InvalidInput):
        KernelSpec("laplace")


def test_kernel_ranges(rng):
    for _ in range(30):
        X = rng.normal(size=(int(rng.integers(2, 12)), int(rng.integers(1, 5)))) * rng.uniform(0.01, 100)
        for kind, lo, hi in (("cosine", 0.0, 2.0), ("gaussian", 0.0, 1.0)):
            w = build_similarity(PointSet(X), KernelSpec(kind, sigma=float(rng.uniform(0.1, 3)))).w
            off = w[~np.eye(len(X), dtype=bool)]
            assert np.all(off >= lo) and np.all(off <= hi + 1e-15)
            assert np.array_equal(w, w.T)


def test_synth_determinism_and_labels():
    a, la = synth_mixture(3, [((0, 0, 0), 1.0, 5)], seed=4)
    assert la.k == 1
    b, lb = synth_mixture(3, [((0, 0, 0), 1.0, 5)], seed=4)
    assert np.array_equal(a.X, b.X) and la == lb
    with pytest.raises(InvalidInput):
        synth_mixture(2, [Component((0, 0, 0), 1.0, 3)])


def test_separated_mixture_recovered_by_kmeans():
    for seed in range(10):
        pts, truth = two_blobs(40, 6.0, seed=seed)
        assert classification_error(kmeans(pts, 2, seed=seed).clustering, truth) < 0.05


def test_subsample():
    assert np.array_equal(subsample(5, None), np.arange(5))
    s = subsample(100, 10, seed=3)
    assert len(s) == 10 and np.all(np.diff(s) > 0)
    assert np.array_equal(s, subsample(100, 10, seed=3))


def test_tree_json_and_newick_round_trip(rng, tmp_path):
    for k in range(30):
        tree = random_tree(int(rng.integers(1, 15)), rng)
        assert tree_from_json(tree_to_json(tree)) == tree
        back = tree_from_newick(tree_to_newick(tree))
        assert sorted(map(sorted, back.clusters())) == sorted(map(sorted, tree.clusters()))
        for suffix in (".json", ".nwk"):
            p = tmp_path / f"t{k}{suffix}"
            write_tree(tree, p)
            assert read_tree(p) == tree
            assert sniff(p) == "tree"


def test_newick_with_lengths_and_whitespace():
    t = tree_from_newick(" ((0:1.5, 1:2)x:0.1,\n 2);")
    assert t.canonical() == ((0, 1), 2)


@pytest.mark.parametrize(
    "text, line, column",
    [("((0,1),2", 1, 9), ("((0,1),a);", 1, 8), ("((0,1),\n2));", 2, 3)],
)
def test_newick_errors_name_position(text, line, column):
    with pytest.raises(ParseError) as info:
        tree_from_newick(text)
    assert info.value.line == line and info.value.column == column


def test_json_errors():
    with pytest.raises(ParseError) as info:
        tree_from_json('{"children": [\n {"leaf": 0},,\n]}')
    assert info.value.line == 2
    with pytest.raises(InvalidInput):
        tree_from_json('{"children": [{"leaf": 0}, {"leaf": "b"}]}')


def test_matrix_round_trip_exact(rng, tmp_path):
    for k in range(100):
        n = int(rng.integers(2, 10))
        if k % 2:
            sim = random_sim(n, rng)
        else:
            w = np.triu(rng.exponential(1e-5, (n, n)), 1) * 7
            sim = SimilarityMatrix(w + w.T)
        assert np.array_equal(matrix_from_csv(matrix_to_csv(sim.w)), sim.w)
    p = tmp_path / "w.csv"
    write_similarity(sim, p)
    assert np.array_equal(read_similarity(p).w, sim.w) and sniff(p) == "matrix"
    d = induced_ultrametric(random_tree(6, rng))
    write_ultrametric(d, tmp_path / "d.csv")
    assert np.array_equal(read_ultrametric(tmp_path / "d.csv").d, d.d)


def test_matrix_errors():
    with pytest.raises(ParseError) as info:
        matrix_from_csv("n=2\n0,1\n1,x\n")
    assert info.value.line == 3 and info.value.column == 3  # character position of the bad cell
    with pytest.raises(ParseError) as info:
        matrix_from_csv("n=3\n0,1\n1,0\n")
    assert info.value.line is not None
    with pytest.raises(ParseError):
        matrix_from_csv("size 2\n0,1\n1,0\n")


def test_points_labels_solution_round_trip(rng, tmp_path):
    pts = PointSet(rng.normal(size=(7, 3)))
    assert points_from_csv(points_to_csv(pts)) == pts
    write_points(pts, tmp_path / "p.csv")
    assert read_points(tmp_path / "p.csv") == pts and sniff(tmp_path / "p.csv") == "points"
    lab = FlatClustering(np.array([1, 2, 2, 3, 1]))
    assert labels_from_csv(labels_to_csv(lab)) == lab
    write_labels(lab, tmp_path / "l.csv")
    assert read_labels(tmp_path / "l.csv") == lab and sniff(tmp_path / "l.csv") == "labels"
    x = rng.random((4, 5, 5))
    x = np.triu(x, 1) + np.transpose(np.triu(x, 1), (0, 2, 1))
    sol = LayeredSolution(x)
    write_solution(sol, tmp_path / "s.csv")
    assert np.array_equal(read_solution(tmp_path / "s.csv").x, sol.x) and sniff(tmp_path / "s.csv") == "solution"


def test_labels_errors():
    with pytest.raises(ParseError) as info:
        labels_from_csv("point,label\n0,1\n1,z\n")
    assert info.value.line == 3
    with pytest.raises(ParseError):
        labels_from_csv("p,l\n0,1\n")


def test_load_table(tmp_path):
    p = tmp_path / "data.csv"
    p.write_text("a,b,class\n1,2,x\n3,4,y\n5,6,x\n7,8,z\n")
    pts, truth, keep = load_table(p)
    assert pts.X.shape == (4, 2) and truth.k == 3 and list(keep) == [0, 1, 2, 3]
    pts, truth, keep = load_table(p, size=2, seed=1)
    assert pts.n == 2 and truth.n == 2
    q = tmp_path / "bad.csv"
    q.write_text("1,2,x\n3,oops,y\n")
    with pytest.raises(ParseError) as info:
        load_table(q)
    assert info.value.line == 2


def test_table_csv():
    text = table_to_csv([{"dataset": "d", "algorithm": "single", "kernel": "gaussian", "f": "linear", "err": 0.125}])
    assert text.splitlines() == ["dataset,algorithm,kernel,f,err", "d,single,gaussian,linear,0.125"]


def test_unreadable_and_unknown_files(tmp_path):
    with pytest.raises(InvalidInput):
        read_tree(tmp_path / "missing.json")
    p = tmp_path / "mystery.txt"
    p.write_text("hello\n")
    with pytest.raises(InvalidInput):
        sniff(p)
