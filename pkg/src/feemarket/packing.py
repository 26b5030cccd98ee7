"""Block builders' packing problem: maximise ``(q - A^T p) . x`` over allowable ``x``.

The allowable set is binary ``x`` with ``A x <= limit`` and at most one
transaction of every exclusion pair. Ties between optimal packings resolve to
the lexicographically greatest ``x`` (lower transaction indices are included
first), which also means zero-profit transactions are packed when they fit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import BlockInstance, DimensionError, check_instance

EXACT_MAX_ITEMS = 24

# Loads within this relative margin of the limit count as fitting, so that
# solvers summing columns in different orders agree on feasibility.
FEAS_RTOL = 1e-12


def capacity(limit: np.ndarray) -> np.ndarray:
    """Largest load accepted per resource."""
    return limit + FEAS_RTOL * np.maximum(limit, 1.0)


class PackingTooLargeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PackingSolution:
    chosen: np.ndarray
    objective: float
    usage: np.ndarray


def transaction_profits(inst: BlockInstance, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (inst.m,):
        raise DimensionError(f"price has shape {p.shape}, block has m={inst.m}")
    return inst.welfare - inst.consumption.T @ p


def _solution(inst: BlockInstance, chosen_idx, profits) -> PackingSolution:
    x = np.zeros(inst.n, dtype=np.int8)
    value = 0.0
    usage = np.zeros(inst.m)
    for j in chosen_idx:
        x[j] = 1
        value += profits[j]
    if chosen_idx:
        usage = inst.consumption[:, list(chosen_idx)].sum(axis=1)
    return PackingSolution(chosen=x, objective=value, usage=usage)


def _partner_masks(inst: BlockInstance, n: int) -> list[int]:
    masks = [0] * n
    for j, k in inst.exclusions:
        masks[j] |= 1 << k
        masks[k] |= 1 << j
    return masks


def solve_exact(inst: BlockInstance, p, *, max_items: int = EXACT_MAX_ITEMS, validate: bool = False) -> PackingSolution:
    """Exact packing by depth-first branch and bound.

    Transactions with negative profit never appear in an optimal packing and
    are fixed to zero. The rest are branched on in index order, include-first,
    so the first optimum reached is the lexicographically greatest one and is
    only displaced by a strictly better leaf. Nodes are pruned with the
    cheaper of two upper bounds: the sum of remaining profits and, per
    resource, the fractional (Dantzig) knapsack bound.
    """
    if validate:
        check_instance(inst)
    if inst.n > max_items:
        raise PackingTooLargeError(f"n={inst.n} exceeds exact threshold {max_items}")
    c = transaction_profits(inst, p)
    cand = [j for j in range(inst.n) if c[j] >= 0.0]
    if not cand:
        return _solution(inst, (), c)

    m = inst.m
    A = inst.consumption
    prof = [float(c[j]) for j in cand]
    cols = [[float(A[i, j]) for i in range(m)] for j in cand]
    cap = [float(v) for v in capacity(inst.limit)]
    k_tot = len(cand)
    pos = {j: k for k, j in enumerate(cand)}
    partner = [0] * k_tot
    for j, jj in inst.exclusions:
        if j in pos and jj in pos:
            partner[pos[j]] |= 1 << pos[jj]
            partner[pos[jj]] |= 1 << pos[j]

    suffix = [0.0] * (k_tot + 1)
    for k in range(k_tot - 1, -1, -1):
        suffix[k] = suffix[k + 1] + prof[k]
    slack = 1e-9 * (1.0 + suffix[0])

    # per-resource ratio orders for the fractional bound
    orders = []
    for i in range(m):
        free = [k for k in range(k_tot) if cols[k][i] == 0.0]
        used = sorted((k for k in range(k_tot) if cols[k][i] > 0.0), key=lambda k: -prof[k] / cols[k][i])
        orders.append((free, used))

    def fractional_bound(k0: int, blocked: int, load: list[float]) -> float:
        best = suffix[k0]
        for i in range(m):
            free, used = orders[i]
            room = cap[i] - load[i]
            total = 0.0
            for k in free:
                if k >= k0 and not (blocked >> k) & 1:
                    total += prof[k]
            for k in used:
                if k < k0 or (blocked >> k) & 1:
                    continue
                a = cols[k][i]
                if a <= room:
                    room -= a
                    total += prof[k]
                else:
                    total += prof[k] * room / a
                    break
            if total < best:
                best = total
        return best

    best_value = -np.inf
    best_set: list[int] = []
    chosen: list[int] = []

    def dfs(k: int, value: float, load: list[float], blocked: int) -> None:
        nonlocal best_value, best_set
        if k == k_tot:
            if value > best_value:
                best_value = value
                best_set = list(chosen)
            return
        if value + suffix[k] < best_value - slack:
            return
        if best_value > -np.inf and value + fractional_bound(k, blocked, load) < best_value - slack:
            return
        if not (blocked >> k) & 1:
            col = cols[k]
            new_load = [load[i] + col[i] for i in range(m)]
            if all(new_load[i] <= cap[i] for i in range(m)):
                chosen.append(k)
                dfs(k + 1, value + prof[k], new_load, blocked | partner[k])
                chosen.pop()
        dfs(k + 1, value, load, blocked)

    dfs(0, 0.0, [0.0] * m, 0)
    return _solution(inst, [cand[k] for k in best_set], c)


def solve_greedy(inst: BlockInstance, p, *, validate: bool = False) -> PackingSolution:
    """Feasible packing for large mempools.

    Profitable transactions are tried in decreasing order of profit per unit
    of limit-normalised resource use. The result is compared with the same
    greedy pass seeded by the single most profitable transaction (the usual
    guard against one large item being crowded out) and the better is kept.
    """
    if validate:
        check_instance(inst)
    c = transaction_profits(inst, p)
    safe_limit = np.where(inst.limit > 0, inst.limit, 1.0)
    size = (inst.consumption / safe_limit[:, None]).sum(axis=0)
    cand = [j for j in range(inst.n) if c[j] > 0.0]
    ratio = {j: (c[j] / size[j] if size[j] > 0 else np.inf) for j in cand}
    order = sorted(cand, key=lambda j: (-ratio[j], j))
    partners = _partner_masks(inst, inst.n)
    cap = capacity(inst.limit)

    def fill(seed: list[int]) -> list[int]:
        load = np.zeros(inst.m)
        blocked = 0
        taken: list[int] = []
        for j in seed + order:
            if j in taken or (blocked >> j) & 1:
                continue
            new_load = load + inst.consumption[:, j]
            if np.all(new_load <= cap):
                load = new_load
                blocked |= partners[j]
                taken.append(j)
        return sorted(taken)

    best = fill([])
    if cand:
        top = max(cand, key=lambda j: (c[j], -j))
        alt = fill([top])
        if sum(c[j] for j in alt) > sum(c[j] for j in best):
            best = alt
    return _solution(inst, best, c)


@lru_cache(maxsize=32)
def subset_matrix(n: int) -> np.ndarray:
    """All binary n-vectors, lexicographically descending (row 0 is all ones)."""
    codes = np.arange(2**n - 1, -1, -1, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    X = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.float64)
    X.flags.writeable = False
    return X


def feasible_subsets(inst: BlockInstance) -> np.ndarray:
    """Enumerate the allowable packings of a small block as rows of a 0/1 matrix.

    Rows keep the lexicographically descending order of :func:`subset_matrix`.
    """
    X = subset_matrix(inst.n)
    ok = (X @ inst.consumption.T <= capacity(inst.limit)).all(axis=1)
    for j, k in inst.exclusions:
        ok &= (X[:, j] + X[:, k]) < 2
    return X[ok]


TABLE_MAX_ITEMS = 12


@dataclass(frozen=True, eq=False)
class PackingTable:
    """A small block compiled to its list of allowable packings.

    ``h(p) = max_s (welfare_s - usage_s . p)`` is then one matrix-vector
    product; rows are lexicographically descending so ``argmax`` applies the
    same tie-break as :func:`solve_exact`.
    """

    inst: BlockInstance
    subsets: np.ndarray
    welfare: np.ndarray
    usage: np.ndarray

    @classmethod
    def from_instance(cls, inst: BlockInstance, *, max_items: int = TABLE_MAX_ITEMS) -> "PackingTable":
        if inst.n > max_items:
            raise PackingTooLargeError(f"n={inst.n} exceeds table threshold {max_items}")
        X = feasible_subsets(inst)
        return cls(inst=inst, subsets=X, welfare=X @ inst.welfare, usage=X @ inst.consumption.T)

    def solve(self, p) -> PackingSolution:
        vals = self.welfare - self.usage @ p
        k = int(np.argmax(vals))
        return PackingSolution(chosen=self.subsets[k].astype(np.int8), objective=float(vals[k]), usage=self.usage[k])


def make_packer(inst: BlockInstance):
    """Exact solver for one block: a compiled table when small, else branch and bound."""
    if inst.n <= TABLE_MAX_ITEMS:
        return PackingTable.from_instance(inst).solve
    return lambda p: solve_exact(inst, p)


@dataclass(frozen=True, eq=False)
class TableStack:
    """Packing tables of many blocks padded to a common width.

    ``welfare`` is (T, S) with ``-inf`` on padding and infeasible rows,
    ``usage`` is (T, S, m). Blocks with fewer than ``n`` transactions are padded
    with zero-welfare, zero-size transactions, which changes neither the
    optimal value nor the usage of the lexicographically greatest optimum.
    """

    welfare: np.ndarray
    usage: np.ndarray

    @property
    def horizon(self) -> int:
        return self.welfare.shape[0]

    @classmethod
    def from_blocks(cls, blocks, *, max_items: int = TABLE_MAX_ITEMS) -> "TableStack":
        blocks = list(blocks)
        if not blocks:
            raise ValueError("no blocks")
        m = blocks[0].m
        tables = []
        for inst in blocks:
            if inst.m != m:
                raise DimensionError("blocks mix resource dimensions")
            tables.append(PackingTable.from_instance(inst, max_items=max_items))
        S = max(tab.welfare.shape[0] for tab in tables)
        W = np.full((len(blocks), S), -np.inf)
        U = np.zeros((len(blocks), S, m))
        for t, tab in enumerate(tables):
            k = tab.welfare.shape[0]
            W[t, :k] = tab.welfare
            U[t, :k] = tab.usage
        return cls(W, U)

    @classmethod
    def from_arrays(cls, welfare, consumption, limit, excluded=None) -> "TableStack":
        """Build from padded arrays: welfare (T, n), consumption (T, m, n), excluded (T, n, n) bool."""
        q = np.asarray(welfare, dtype=np.float64)
        A = np.asarray(consumption, dtype=np.float64)
        n = q.shape[1]
        if n > TABLE_MAX_ITEMS:
            raise PackingTooLargeError(f"n={n} exceeds table threshold {TABLE_MAX_ITEMS}")
        X = subset_matrix(n)
        W = q @ X.T
        U = np.einsum("tin,sn->tsi", A, X)
        ok = (U <= capacity(np.asarray(limit, dtype=np.float64))).all(axis=2)
        if excluded is not None:
            E = np.asarray(excluded, dtype=np.float64)
            ok &= np.einsum("sj,tjk,sk->ts", X, E, X) == 0
        W[~ok] = -np.inf
        return cls(W, U)

    def values(self, p) -> np.ndarray:
        """Per-block ``h_t(p)`` for one price, shape (T,)."""
        return (self.welfare - self.usage @ p).max(axis=1)

    def evaluate(self, p) -> tuple[float, np.ndarray]:
        """``sum_t h_t(p)`` and its subgradient ``-sum_t A_t x_t*(p)``."""
        vals = self.welfare - self.usage @ p
        k = vals.argmax(axis=1)
        rows = np.arange(vals.shape[0])
        return float(vals[rows, k].sum()), -self.usage[rows, k].sum(axis=0)

    def solve_rows(self, P) -> tuple[np.ndarray, np.ndarray]:
        """Row-wise optimum: block t at price ``P[t]``; returns (h, usage)."""
        vals = self.welfare - np.einsum("tsi,ti->ts", self.usage, P)
        k = vals.argmax(axis=1)
        rows = np.arange(vals.shape[0])
        return vals[rows, k], self.usage[rows, k]
