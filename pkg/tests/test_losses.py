import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feemarket.core import DimensionError
from feemarket.losses import LossSpec, conjugate_argmax, conjugate_eval, interior_price_cap, loss_eval
from helpers import grid_sup_1d


def box(target, limit=None):
    target = np.asarray(target, dtype=float)
    return LossSpec("target_box", target, target * 2 if limit is None else limit)


def quad(target, limit):
    return LossSpec("quadratic_overage", target, limit)


def test_loss_eval_examples():
    assert loss_eval(box([1.0, 2.0]), [1.0, 2.0]) == 0.0
    assert loss_eval(box([1.0, 2.0]), [1.5, 0.0]) == np.inf
    assert loss_eval(quad([1.0], [3.0]), [2.0]) == 0.5
    assert loss_eval(quad([1.0], [3.0]), [3.5]) == np.inf


def test_conjugate_examples():
    assert conjugate_eval(box([1.0, 2.0]), [3.0, -1.0]) == 3.0
    assert conjugate_eval(box([1.0, 2.0]), [0.0, 0.0]) == 0.0
    spec = quad([1.0], [3.0])
    grid = grid_sup_1d(lambda y: 1.0 * y - 0.5 * np.maximum(y - 1.0, 0.0) ** 2, 0.0, 3.0)
    assert conjugate_eval(spec, [1.0]) == pytest.approx(1.5, abs=1e-12)
    assert grid == pytest.approx(1.5, abs=1e-6)


def test_argmax_examples():
    assert np.array_equal(conjugate_argmax(box([1.0, 2.0]), [3.0, -1.0]), [1.0, 0.0])
    assert np.array_equal(conjugate_argmax(box([1.0, 2.0]), [0.0, 0.0]), [1.0, 2.0])
    assert np.array_equal(conjugate_argmax(quad([1.0], [3.0]), [5.0]), [3.0])


def test_argmax_tie_is_optimal_on_grid():
    spec = box([1.0, 2.0])
    y = conjugate_argmax(spec, [0.0, 0.0])
    assert float(np.zeros(2) @ y) - loss_eval(spec, y) == conjugate_eval(spec, [0.0, 0.0])


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        conjugate_eval(box([1.0]), [1.0, 2.0])
    with pytest.raises(DimensionError):
        loss_eval(box([1.0]), [1.0, 2.0])
    with pytest.raises(DimensionError):
        conjugate_argmax(box([1.0]), [1.0, 2.0])


def test_spec_validation():
    with pytest.raises(ValueError):
        LossSpec("target_box", [3.0], [2.0])
    with pytest.raises(ValueError):
        LossSpec("huber", [1.0], [2.0])
    with pytest.raises(ValueError):
        interior_price_cap(box([1.0]))
    assert np.array_equal(interior_price_cap(quad([1.0], [3.0])), [2.0])


specs = st.builds(
    lambda kind, m, seed: _spec(kind, m, seed),
    st.sampled_from(["target_box", "quadratic_overage"]),
    st.integers(1, 3),
    st.integers(0, 2**32 - 1),
)


def _spec(kind, m, seed):
    rng = np.random.default_rng(seed)
    limit = rng.uniform(0.5, 3.0, m)
    return LossSpec(kind, limit * rng.uniform(0.0, 1.0, m), limit)


@settings(max_examples=200, deadline=None)
@given(specs, st.integers(0, 2**32 - 1))
def test_fenchel_young(spec, seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-3.0, 5.0, spec.m)
    top = spec.target if spec.kind == "target_box" else spec.limit
    y = rng.uniform(0.0, 1.0, spec.m) * top
    assert p @ y <= loss_eval(spec, y) + conjugate_eval(spec, p) + 1e-12
    ys = conjugate_argmax(spec, p)
    assert p @ ys - loss_eval(spec, ys) == pytest.approx(conjugate_eval(spec, p), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(specs, st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_conjugate_convex(spec, seed, lam):
    rng = np.random.default_rng(seed)
    p, q = rng.uniform(-3.0, 5.0, (2, spec.m))
    mid = conjugate_eval(spec, lam * p + (1 - lam) * q)
    assert mid <= lam * conjugate_eval(spec, p) + (1 - lam) * conjugate_eval(spec, q) + 1e-9


@settings(max_examples=200, deadline=None)
@given(specs, st.integers(0, 2**32 - 1))
def test_argmax_within_limit(spec, seed):
    p = np.random.default_rng(seed).uniform(-5.0, 10.0, spec.m)
    y = conjugate_argmax(spec, p)
    assert np.all(y >= 0) and np.all(y <= spec.limit)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["target_box", "quadratic_overage"]), st.integers(0, 2**32 - 1))
def test_closed_form_matches_grid(kind, seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 3))
    spec = _spec(kind, m, seed)
    p = rng.uniform(-2.0, 4.0, m)
    total = 0.0
    for i in range(m):
        t, b, pi = spec.target[i], spec.limit[i], p[i]
        if kind == "target_box":
            total += grid_sup_1d(lambda y: pi * y, 0.0, t) if t > 0 else 0.0
        else:
            total += grid_sup_1d(lambda y: pi * y - 0.5 * np.maximum(y - t, 0.0) ** 2, 0.0, b)
    assert abs(conjugate_eval(spec, p) - total) <= 1e-3
