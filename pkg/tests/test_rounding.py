from __future__ import annotations

import math

import numpy as np
import pytest

from ultraclust.core import HierTree, InvalidInput, SimilarityMatrix, check_nontrivial, induced_ultrametric, ultrametric_cost
from ultraclust.lp import LayeredSolution, solve_relaxation
from ultraclust.rounding import (
    DegeneracyError,
    check_epsilon,
    assemble_layers,
    ball_geometry,
    check_interlayer,
    check_layer_feasibility,
    epsilon_schedule,
    find_radius,
    layer_bound,
    round_layers,
    size_limit,
    top_layer,
    total_bound,
)

from conftest import kernel_sim, random_sim, random_tree


def one_layer(n: int, t: int, entries: dict) -> LayeredSolution:
    x = np.ones((max(t, 1), n, n))
    for t0 in range(x.shape[0]):
        np.fill_diagonal(x[t0], 0)
    for (i, j), v in entries.items():
        x[t - 1, i, j] = x[t - 1, j, i] = v
    return LayeredSolution(x)


def tree_layers(tree: HierTree) -> LayeredSolution:
    d = induced_ultrametric(tree).d
    return LayeredSolution(np.stack([(d >= t).astype(float) for t in range(1, tree.n)]), "binary")


def test_floors_are_exact():
    assert size_limit(4, 0.25) == 5
    assert size_limit(10, 0.1) == 11
    assert top_layer(2, 0.5) == 0
    assert top_layer(11, 0.25) == 8
    for bad in (0.0, 1.0, -0.5):
        with pytest.raises(InvalidInput):
            check_epsilon(bad)


def test_geometry_two_points():
    sim = SimilarityMatrix(np.array([[0, 1.0], [1.0, 0]]))
    sol = one_layer(2, 1, {(0, 1): 0.5})
    g = ball_geometry(0, 0.2, 1, [0, 1], sol, sim)
    seed = 0.5 / (2 * math.log(2))
    assert g.members == frozenset({0})
    assert g.volume == pytest.approx(seed + 0.2)
    assert g.boundary == 1.0
    assert g.expansion == pytest.approx(1 / (seed + 0.2))


def test_geometry_zero_similarity():
    sim = SimilarityMatrix(np.zeros((3, 3)))
    sol = one_layer(3, 1, {(0, 1): 0.3})
    g = ball_geometry(0, 0.2, 1, [0, 1, 2], sol, sim)
    assert g.volume == 0 and g.degenerate


def test_volume_monotone_within_membership_intervals(rng):
    for _ in range(20):
        n = int(rng.integers(3, 9))
        sim = random_sim(n, rng)
        sol = solve_relaxation(sim).solution
        t = int(rng.integers(1, n))
        U = sorted(rng.choice(n, size=int(rng.integers(2, n + 1)), replace=False).tolist())
        c = U[0]
        prev = None
        for r in np.linspace(1e-4, 0.5, 400):
            g = ball_geometry(c, float(r), t, U, sol, sim)
            if prev is not None and prev.members == g.members:
                assert g.volume >= prev.volume - 1e-12
                assert g.boundary == pytest.approx(prev.boundary)
            prev = g


def test_expansion_is_f_free(rng):
    for _ in range(10):
        n = int(rng.integers(3, 8))
        sim = random_sim(n, rng)
        sol = solve_relaxation(sim).solution
        t = int(rng.integers(1, n))
        for r in (0.05, 0.2, 1 / 3):
            a = ball_geometry(0, r, t, range(n), sol, sim, "linear")
            b = ball_geometry(0, r, t, range(n), sol, sim, "quadratic")
            assert a.expansion == pytest.approx(b.expansion, rel=1e-12)


def test_radius_singleton():
    sim = SimilarityMatrix(np.ones((3, 3)))
    sol = one_layer(3, 1, {})
    choice = find_radius(1, 1, [1], sol, sim, 0.5)
    assert choice.radius == pytest.approx(1 / 3)
    assert choice.geometry.members == frozenset({1}) and choice.geometry.expansion == 0
    assert choice.flag is None


def grid_oracle(center, t, U, sol, sim, eps, choice):
    """No radius below the chosen ball's interval meets the threshold; the chosen one does.

    When no candidate meets it (flag ``no_candidate``), no radius on a dense grid does either.
    """
    delta = eps / (1 + eps)
    if choice.flag == "no_candidate":
        for r in np.linspace(1e-6, delta, 2000):
            g = ball_geometry(center, float(r), t, U, sol, sim)
            if len(g.members) <= size_limit(t, eps):
                assert g.expansion > choice.threshold - 1e-9
                assert g.expansion >= choice.geometry.expansion - 1e-9
        return
    assert choice.geometry.expansion <= choice.threshold * (1 + 1e-9) + 1e-9
    lower = [float(v) for v in sol.layer(t)[center, U] if 0 < v < choice.radius]
    if not lower:
        return
    below = max(lower)
    for r in np.linspace(1e-6, below, 300):
        g = ball_geometry(center, float(r), t, U, sol, sim)
        if len(g.members) <= size_limit(t, eps):
            assert g.expansion > choice.threshold - 1e-9
    assert choice.radius <= delta


def test_radius_three_points():
    sim = SimilarityMatrix(np.ones((3, 3)))
    sol = one_layer(3, 1, {(0, 1): 0.1, (0, 2): 0.4, (1, 2): 0.4})
    # this layer is far from LP-feasible, so nothing meets the threshold and the least expanding ball is used
    choice = find_radius(0, 1, [0, 1, 2], sol, sim, 0.5)
    assert choice.flag == "no_candidate"
    assert choice.radius in (pytest.approx(0.1), pytest.approx(1 / 3))
    assert choice.geometry.members < frozenset({0, 1, 2})
    grid_oracle(0, 1, [0, 1, 2], sol, sim, 0.5, choice)


def test_radius_grid_oracle_on_solved_instances(rng):
    for _ in range(15):
        n = int(rng.integers(4, 9))
        sim = random_sim(n, rng)
        sol = solve_relaxation(sim).solution
        for eps in (0.25, 0.5):
            t = int(rng.integers(1, top_layer(n, eps) + 1))
            U = list(range(n))
            choice = find_radius(0, t, U, sol, sim, eps)
            assert choice.flag is None
            grid_oracle(0, t, U, sol, sim, eps, choice)


def test_round_two_points():
    sim = SimilarityMatrix(np.array([[0, 1.0], [1.0, 0]]))
    sol = solve_relaxation(sim).solution
    r = round_layers(sol, 0.5, sim)
    assert r.m == 0
    a = assemble_layers(r.layers, 0.5)
    assert np.array_equal(a.y.x, np.ones((1, 2, 2)) - np.eye(2))
    assert a.tree == HierTree.star(2)


def test_round_zero_similarity():
    sim = SimilarityMatrix(np.zeros((5, 5)))
    sol = solve_relaxation(sim).solution
    r = round_layers(sol, 0.5, sim)
    for a in r.audit:
        assert a["cost"] == 0
    with pytest.raises(DegeneracyError):
        epsilon_schedule(sol, sim)


def test_epsilon_schedule_keeps_start(rng):
    sim = random_sim(7, rng)
    sol = solve_relaxation(sim).solution
    choice = epsilon_schedule(sol, sim)
    assert choice.eps == 0.5 and choice.tried == [0.5]
    assert not choice.rounding.flagged


@pytest.mark.parametrize("eps", [0.25, 0.5])
def test_rounded_layers_feasible_and_bounded(eps, rng):
    for k in range(6):
        n = int(rng.integers(6, 12))
        sim = random_sim(n, rng) if k % 2 else kernel_sim(n, rng)
        relax = solve_relaxation(sim)
        r = round_layers(relax.solution, eps, sim)
        assert not r.flagged
        C = layer_bound(n, eps)
        for t in range(1, r.m + 1):
            assert check_layer_feasibility(r.layers.layer(t), size_limit(t, eps)) is None
        assert check_interlayer(r.layers) is None
        for a in r.audit:
            if a["ratio"] is not None:
                assert a["ratio"] <= C * (1 + 1e-6)
        # parts of layer t refine those of layer t + 1
        for lo, hi in zip(r.partitions, r.partitions[1:]):
            for p in lo.parts:
                assert any(p <= q for q in hi.parts)
        asm = assemble_layers(r.layers, eps)
        assert ultrametric_cost(asm.raw, sim) <= total_bound(n, eps, relax.opt_value) * (1 + 1e-6) + 1e-12
        assert check_nontrivial(asm.d) is None
        assert np.all(asm.d.d <= asm.raw.d + 1e-12)


def test_assembly_linear_is_layer_count(rng):
    n = 8
    sim = random_sim(n, rng)
    r = round_layers(solve_relaxation(sim).solution, 0.5, sim)
    asm = assemble_layers(r.layers, 0.5)
    assert np.array_equal(asm.raw.d, asm.y.x.sum(axis=0))
    vals = asm.raw.pair_values()
    assert np.all(vals == np.rint(vals)) and vals.min() >= 1 and vals.max() <= n - 1


def test_assembly_all_ones_gives_star():
    n, eps = 7, 0.5
    m = top_layer(n, eps)
    x = np.ones((m, n, n)) - np.eye(n)
    asm = assemble_layers(LayeredSolution(x, "binary"), eps)
    assert np.all(asm.raw.pair_values() == n - 1)
    assert asm.tree == HierTree.star(n)


@pytest.mark.parametrize("f", ["quadratic", "log1p", "expm1"])
def test_assembly_f_image(f, rng):
    n = 7
    sim = random_sim(n, rng)
    relax = solve_relaxation(sim, f)
    r = round_layers(relax.solution, 0.5, sim, f)
    asm = assemble_layers(r.layers, 0.5, f)
    assert check_nontrivial(asm.d, f) is None


def test_assembly_rejects_wrong_layer_count():
    with pytest.raises(InvalidInput):
        assemble_layers(LayeredSolution(np.ones((1, 5, 5)) - np.eye(5), "binary"), 0.5)


def test_layer_feasibility_examples():
    x = np.ones((3, 3)) - np.eye(3)
    x[0, 1] = x[1, 0] = 0
    assert check_layer_feasibility(x, 2) is None
    x[1, 2] = x[2, 1] = 0
    bad = check_layer_feasibility(x, 2)
    assert bad.condition == "clique" and bad.witness == (0, 1, 2)
    bad = check_layer_feasibility(np.zeros((4, 4)), 3)
    assert bad.condition == "size"


def test_interlayer_tree_layers_ok(rng):
    for _ in range(20):
        n = int(rng.integers(2, 7))
        assert check_interlayer(tree_layers(random_tree(n, rng))) is None


def test_interlayer_nested_violation():
    n = 4
    x = np.ones((3, n, n)) - np.eye(n)
    x[1, 0, 1] = x[1, 1, 0] = 0  # {a, b} is a clique of layer 2 and layer 3 splits it
    bad = check_interlayer(LayeredSolution(x, "binary"))
    assert bad is not None and bad.condition == "nested"


def test_interlayer_realization_violation():
    n = 4
    x = np.ones((3, n, n)) - np.eye(n)
    x[2, 0, 1] = x[2, 1, 0] = 0  # {a, b} is a clique of layer 3 but not of layer 2
    bad = check_interlayer(LayeredSolution(x, "binary"))
    assert bad is not None and bad.condition == "realization"
