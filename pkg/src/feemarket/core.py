"""Shared domain types for the fee-market simulator.

Resource and price vectors are plain float64 numpy arrays; the helpers here
coerce and check them at module boundaries. Blocks, traces and records are
frozen dataclasses holding read-only arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when vectors of different resource dimension are mixed."""


class InvalidInstanceError(ValueError):
    """Raised when a block instance violates its invariants."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def as_vector(values, m: int | None = None, *, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array, optionally checking its length."""
    v = np.atleast_1d(np.array(values, dtype=np.float64))
    if v.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {v.shape}")
    if m is not None and v.shape[0] != m:
        raise DimensionError(f"{name} has dimension {v.shape[0]}, expected {m}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def as_resource_vector(values, m: int | None = None, *, name: str = "resource vector") -> np.ndarray:
    v = as_vector(values, m, name=name)
    if np.any(v < 0):
        raise ValueError(f"{name} has negative entries")
    return v


def as_price_vector(values, m: int | None = None, *, name: str = "price") -> np.ndarray:
    return as_vector(values, m, name=name)


def check_same_dim(*vectors: np.ndarray) -> int:
    dims = {np.shape(v)[0] for v in vectors}
    if len(dims) != 1:
        raise DimensionError(f"mixed resource dimensions {sorted(dims)}")
    return dims.pop()


@dataclass(frozen=True, eq=False)
class BlockInstance:
    """Market data for one block.

    ``consumption`` is m x n (column j is transaction j's resource use).
    ``exclusions`` holds unordered index pairs: at most one of each pair may
    be included, so the relation is symmetric by construction.
    """

    welfare: np.ndarray
    consumption: np.ndarray
    limit: np.ndarray
    exclusions: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        q = np.asarray(self.welfare, dtype=np.float64).reshape(-1)
        lim = np.asarray(self.limit, dtype=np.float64).reshape(-1)
        A = np.asarray(self.consumption, dtype=np.float64)
        if A.size == 0:
            A = A.reshape(lim.shape[0], q.shape[0])
        pairs = tuple((int(j), int(k)) for j, k in self.exclusions)
        object.__setattr__(self, "welfare", _frozen(q))
        object.__setattr__(self, "consumption", _frozen(A))
        object.__setattr__(self, "limit", _frozen(lim))
        object.__setattr__(self, "exclusions", pairs)

    @property
    def m(self) -> int:
        return self.limit.shape[0]

    @property
    def n(self) -> int:
        return self.welfare.shape[0]

    def to_json(self) -> dict:
        return {
            "welfare": self.welfare.tolist(),
            "consumption": self.consumption.tolist(),
            "limit": self.limit.tolist(),
            "exclusions": [list(pair) for pair in self.exclusions],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BlockInstance":
        try:
            welfare = obj["welfare"]
            consumption = obj["consumption"]
            limit = obj["limit"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"block record missing field: {exc}") from None
        excl = obj.get("exclusions", [])
        if any(len(pair) != 2 for pair in excl):
            raise ValueError("exclusions must be [j, j'] pairs")
        m = len(limit)
        A = np.array(consumption, dtype=np.float64)
        if A.size == 0:
            if len(consumption) not in (0, m):
                raise ValueError("consumption must have one row per resource")
            A = A.reshape(m, 0)
        return cls(welfare=welfare, consumption=A, limit=limit, exclusions=[tuple(p) for p in excl])

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def validate_instance(inst: BlockInstance) -> list[str]:
    """Return a list of violated invariants; an empty list means the instance is valid."""
    problems: list[str] = []
    q, A, b = inst.welfare, inst.consumption, inst.limit
    if A.ndim != 2 or A.shape != (b.shape[0], q.shape[0]):
        problems.append(f"consumption shape {A.shape} does not match (m={b.shape[0]}, n={q.shape[0]})")
        return problems
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        problems.append("non-finite entries")
        return problems
    if np.any(b < 0):
        problems.append("negative limit")
    if np.any(q < 0):
        problems.append("negative welfare")
    if np.any(A < 0):
        problems.append("negative consumption")
    over = np.nonzero(np.any(A > b[:, None], axis=0))[0]
    if over.size:
        problems.append(f"column exceeds limit (transactions {over.tolist()})")
    n = q.shape[0]
    for j, k in inst.exclusions:
        if j == k:
            problems.append(f"irreflexive violated by pair ({j}, {k})")
        if not (0 <= j < n and 0 <= k < n):
            problems.append(f"exclusion pair ({j}, {k}) out of range for n={n}")
    return problems


def check_instance(inst: BlockInstance) -> BlockInstance:
    problems = validate_instance(inst)
    if problems:
        raise InvalidInstanceError(problems)
    return inst


@dataclass(frozen=True)
class TraceRecord:
    block_height: int
    price: np.ndarray
    chosen: np.ndarray
    usage: np.ndarray
    supply_opt: np.ndarray
    gradient: np.ndarray
    dual_value: float


@dataclass(eq=False)
class Trace:
    """Per-block simulation output stored column-wise.

    Row t-1 corresponds to block height t. ``chosen`` keeps the included
    transaction vectors, which vary in length between blocks.
    """

    prices: np.ndarray
    gradients: np.ndarray
    usage: np.ndarray
    supply: np.ndarray
    dual_values: np.ndarray
    chosen: list[np.ndarray]
    controller: dict = field(default_factory=dict)
    domain_exits: int = 0

    @property
    def horizon(self) -> int:
        return self.prices.shape[0]

    @property
    def m(self) -> int:
        return self.prices.shape[1]

    def __len__(self) -> int:
        return self.horizon

    def record(self, t: int) -> TraceRecord:
        i = t - 1
        return TraceRecord(
            block_height=t,
            price=self.prices[i],
            chosen=self.chosen[i],
            usage=self.usage[i],
            supply_opt=self.supply[i],
            gradient=self.gradients[i],
            dual_value=float(self.dual_values[i]),
        )

    def records(self) -> Iterator[TraceRecord]:
        for t in range(1, self.horizon + 1):
            yield self.record(t)
