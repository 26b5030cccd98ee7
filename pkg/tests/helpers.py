"""Independent reference implementations used as test oracles."""

import itertools

import numpy as np

from feemarket.core import BlockInstance


def brute_force_packing(inst: BlockInstance, p):
    """Enumerate all subsets; keep the best, preferring the lexicographically greatest x."""
    c = inst.welfare - inst.consumption.T @ np.asarray(p, dtype=float)
    best_val, best_x = -np.inf, None
    for bits in itertools.product((1, 0), repeat=inst.n):
        x = np.array(bits, dtype=float)
        # same relative feasibility margin as the solvers
        if np.any(inst.consumption @ x > inst.limit + 1e-12 * np.maximum(inst.limit, 1.0)):
            continue
        if any(bits[j] and bits[k] for j, k in inst.exclusions):
            continue
        val = 0.0
        for j in range(inst.n):
            if bits[j]:
                val += c[j]
        if val > best_val:
            best_val, best_x = val, x
    return best_x, best_val


def random_instance(rng, m=None, n=None, excl_prob=0.2, zero_prob=0.0):
    m = m or int(rng.integers(1, 4))
    n = int(rng.integers(0, 9)) if n is None else n
    limit = np.round(rng.uniform(1.0, 4.0, m), 2)
    A = np.round(rng.uniform(0.0, 1.0, (m, n)) * limit[:, None] * rng.uniform(0.2, 1.0), 2)
    q = np.round(rng.uniform(0.0, 5.0, n), 2)
    if zero_prob:
        q[rng.random(n) < zero_prob] = 0.0
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n) if rng.random() < excl_prob / max(n, 1)]
    return BlockInstance(welfare=q, consumption=A, limit=limit, exclusions=pairs)


def grid_sup_1d(fn, lo, hi, resolution=1e-4):
    y = np.linspace(lo, hi, int(np.ceil((hi - lo) / resolution)) + 1)
    return float(np.max(fn(y)))
