from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import linprog

from ultraclust.simplex import LinearProgram, Limits, Row, Status, resolve_with_rows, solve

from conftest import random_lp


def scipy_value(lp: LinearProgram) -> float:
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for row in lp.rows:
        a = np.zeros(lp.ncols)
        a[row.idx] = row.val
        if row.sense == "<=":
            A_ub.append(a), b_ub.append(row.rhs)
        elif row.sense == ">=":
            A_ub.append(-a), b_ub.append(-row.rhs)
        else:
            A_eq.append(a), b_eq.append(row.rhs)
    res = linprog(
        lp.objective,
        A_ub=np.array(A_ub) if A_ub else None,
        b_ub=b_ub or None,
        A_eq=np.array(A_eq) if A_eq else None,
        b_eq=b_eq or None,
        bounds=list(zip(lp.lo, lp.hi)),
        method="highs",
    )
    assert res.status == 0
    return float(res.fun)


def test_small_examples():
    lp = LinearProgram([-1.0], [0.0], [1.0])
    lp.add_row(idx=[0], val=[1.0], sense="<=", rhs=0.5)
    out = solve(lp)
    assert out.status == Status.OPTIMAL
    assert out.x[0] == pytest.approx(0.5) and out.obj == pytest.approx(-0.5)

    lp = LinearProgram([1.0, 1.0], [0, 0], [1, 1])
    lp.add_row(idx=[0, 1], val=[1.0, 1.0], sense=">=", rhs=1.0)
    assert solve(lp).obj == pytest.approx(1.0)

    lp = LinearProgram([1.0], [0.0], [1.0])
    lp.add_row(idx=[0], val=[1.0], sense=">=", rhs=2.0)
    assert solve(lp).status == Status.INFEASIBLE


def test_unbounded():
    lp = LinearProgram([-1.0, 0.0], [0, 0], [np.inf, 1])
    lp.add_row(idx=[0, 1], val=[1.0, -1.0], sense=">=", rhs=0.0)
    assert solve(lp).status == Status.UNBOUNDED


def test_satisfied_row_leaves_solution_unchanged():
    lp = LinearProgram([1.0, 1.0], [0, 0], [1, 1])
    lp.add_row(idx=[0, 1], val=[1.0, 1.0], sense=">=", rhs=1.0)
    prev = solve(lp)
    out = resolve_with_rows(prev, lp, [Row([0, 1], [1.0, 1.0], ">=", 0.5)])
    assert out.obj == pytest.approx(prev.obj, abs=1e-12)
    assert np.allclose(out.x, prev.x)


def test_violated_row_worsens_objective():
    lp = LinearProgram([1.0, 2.0], [0, 0], [1, 1])
    lp.add_row(idx=[0, 1], val=[1.0, 1.0], sense=">=", rhs=1.0)
    prev = solve(lp)
    out = resolve_with_rows(prev, lp, [Row([1], [1.0], ">=", 0.5)])
    assert out.obj >= prev.obj - 1e-12
    assert out.obj == pytest.approx(1.5, abs=1e-9)


def test_warm_equals_cold_and_reference(rng):
    for _ in range(300):
        m, n = int(rng.integers(1, 31)), int(rng.integers(1, 31))
        lp, later = random_lp(rng, m, n)
        prev = solve(lp)
        assert prev.status == Status.OPTIMAL
        warm = resolve_with_rows(prev, lp, later)
        cold = solve(lp)
        assert warm.status == cold.status == Status.OPTIMAL
        assert warm.obj == pytest.approx(cold.obj, abs=1e-7)
        assert cold.obj == pytest.approx(scipy_value(lp), abs=1e-7)
        assert lp.max_violation(warm.x) <= 1e-7
        assert warm.obj == pytest.approx(float(lp.objective @ warm.x), abs=1e-9)


def test_degenerate_programs_terminate(rng):
    # many parallel, tied rows provoke degenerate pivots
    for _ in range(50):
        n = 8
        lp = LinearProgram(-np.ones(n), np.zeros(n), np.ones(n))
        for r in range(20):
            idx = rng.choice(n, size=3, replace=False)
            lp.add_row(idx=idx, val=np.ones(3), sense="<=", rhs=1.0)
        out = solve(lp, Limits(bland_after=2))
        assert out.status == Status.OPTIMAL
        assert out.obj == pytest.approx(scipy_value(lp), abs=1e-7)


def test_text_round_trip(rng):
    lp, later = random_lp(rng, 6, 5)
    for row in later:
        lp.add_row(row)
    back = LinearProgram.from_text(lp.to_text())
    assert np.array_equal(back.objective, lp.objective)
    assert back.nrows == lp.nrows
    assert solve(back).obj == pytest.approx(solve(lp).obj, abs=1e-12)


def test_row_validation():
    with pytest.raises(ValueError):
        Row([0], [1.0], "<", 1.0)
    with pytest.raises(ValueError):
        Row([0], [np.nan], "<=", 1.0)
    lp = LinearProgram([1.0])
    with pytest.raises(ValueError):
        lp.add_row(idx=[3], val=[1.0])
