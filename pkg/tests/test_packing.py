import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feemarket.core import BlockInstance, InvalidInstanceError
from feemarket.packing import (
    PackingTable,
    PackingTooLargeError,
    TableStack,
    feasible_subsets,
    make_packer,
    solve_exact,
    solve_greedy,
    subset_matrix,
)
from helpers import brute_force_packing, random_instance


def two_tx():
    return BlockInstance(welfare=[3.0, 2.0], consumption=[[2.0, 1.0]], limit=[2.0])


def test_exact_examples():
    sol = solve_exact(two_tx(), [0.5])
    assert sol.chosen.tolist() == [1, 0] and sol.objective == 2.0
    sol = solve_exact(two_tx(), [10.0])
    assert sol.chosen.tolist() == [0, 0] and sol.objective == 0.0
    tie = BlockInstance(welfare=[5.0, 5.0], consumption=[[1.0, 1.0]], limit=[2.0], exclusions=[(0, 1)])
    sol = solve_exact(tie, [0.0])
    assert sol.chosen.tolist() == [1, 0] and sol.objective == 5.0


def test_zero_profit_transaction_included():
    inst = BlockInstance(welfare=[0.0], consumption=[[1.0]], limit=[2.0])
    assert solve_exact(inst, [0.0]).chosen.tolist() == [1]


def test_exact_errors():
    big = BlockInstance(welfare=np.ones(30), consumption=np.zeros((1, 30)), limit=[1.0])
    with pytest.raises(PackingTooLargeError):
        solve_exact(big, [0.0])
    bad = BlockInstance(welfare=[1.0], consumption=[[3.0]], limit=[2.0])
    with pytest.raises(InvalidInstanceError):
        solve_exact(bad, [0.0], validate=True)


def test_greedy_examples():
    one = BlockInstance(welfare=[2.0], consumption=[[1.0]], limit=[2.0])
    assert solve_greedy(one, [1.0]).chosen.tolist() == [1]
    assert solve_greedy(two_tx(), [0.5]).chosen.tolist() == [1, 0]
    assert solve_greedy(two_tx(), [10.0]).objective == 0.0


def test_subset_matrix_order():
    X = subset_matrix(3)
    assert X[0].tolist() == [1, 1, 1] and X[-1].tolist() == [0, 0, 0]
    codes = [int("".join(str(int(v)) for v in row), 2) for row in X]
    assert codes == sorted(codes, reverse=True)


def test_empty_block():
    inst = BlockInstance(welfare=[], consumption=[[]], limit=[1.0])
    assert solve_exact(inst, [1.0]).objective == 0.0
    assert make_packer(inst)([1.0]).objective == 0.0


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, zero_prob=0.2)
    p = rng.uniform(0.0, 2.0, inst.m) * rng.integers(0, 2)
    x_ref, v_ref = brute_force_packing(inst, p)
    sol = solve_exact(inst, p)
    assert sol.objective == v_ref
    assert np.array_equal(sol.chosen, x_ref)
    tab = PackingTable.from_instance(inst).solve(p)
    assert tab.objective == pytest.approx(v_ref, abs=1e-12)
    assert np.array_equal(tab.chosen, x_ref)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solution_invariants_and_greedy_dominated(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    p = rng.uniform(0.0, 2.0, inst.m)
    for sol in (solve_exact(inst, p), solve_greedy(inst, p)):
        x = sol.chosen.astype(float)
        assert np.all(sol.usage <= inst.limit * (1 + 1e-12) + 1e-12) and np.all(sol.usage >= 0)
        assert np.allclose(sol.usage, inst.consumption @ x)
        assert sol.objective == pytest.approx((inst.welfare - inst.consumption.T @ p) @ x, abs=1e-12)
        assert not any(x[j] and x[k] for j, k in inst.exclusions)
    assert solve_greedy(inst, p).objective <= solve_exact(inst, p).objective + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_objective_convex_in_price(seed, lam):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    p, q = rng.uniform(0.0, 3.0, (2, inst.m))
    h = lambda v: solve_exact(inst, v).objective
    assert h(lam * p + (1 - lam) * q) <= lam * h(p) + (1 - lam) * h(q) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_objective_monotone_in_price(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    p = rng.uniform(0.0, 2.0, inst.m)
    bumped = p.copy()
    bumped[int(rng.integers(inst.m))] += rng.uniform(0.0, 1.0)
    assert solve_exact(inst, bumped).objective <= solve_exact(inst, p).objective + 1e-12


def test_large_instance_branch_and_bound():
    rng = np.random.default_rng(5)
    inst = random_instance(rng, m=2, n=16, excl_prob=0.5)
    p = np.array([0.3, 0.2])
    sol = solve_exact(inst, p)
    X = feasible_subsets(inst)
    vals = X @ (inst.welfare - inst.consumption.T @ p)
    assert sol.objective == pytest.approx(vals.max(), abs=1e-12)
    assert make_packer(inst)(p).objective == sol.objective


def test_table_stack_agrees_with_blocks():
    rng = np.random.default_rng(9)
    blocks = [random_instance(rng, m=2) for _ in range(40)]
    stack = TableStack.from_blocks(blocks)
    p = np.array([0.4, 0.7])
    total, grad = stack.evaluate(p)
    sols = [solve_exact(b, p) for b in blocks]
    assert total == pytest.approx(sum(s.objective for s in sols), abs=1e-9)
    assert np.allclose(grad, -sum(s.usage for s in sols))
    h, used = stack.solve_rows(np.tile(p, (40, 1)))
    assert np.allclose(used, [s.usage for s in sols])
