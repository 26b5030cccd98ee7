"""Block sequences fed to the price controllers.

Three sources are provided: i.i.d. stochastic demand, the random-sign
lower-bound adversary, and replay of recorded blocks from JSON lines. Each
scenario exposes ``loss``, ``limit`` and ``start(T)``; the latter returns a
``feed(t, price)`` callable that yields block ``t`` given the posted price.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .core import BlockInstance, InvalidInstanceError, as_resource_vector, validate_instance
from .losses import LossSpec
from .packing import TableStack, make_packer
from .rng import block_uniforms, block_uniforms_range, round_width

Feed = Callable[[int, np.ndarray], BlockInstance]


@dataclass(frozen=True, eq=False)
class Dist:
    """Bounded nonnegative distribution sampled by inverse transform from uniforms."""

    kind: str
    low: float = 0.0
    high: float = 0.0
    values: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "constant":
            if not self.low >= 0:
                raise ValueError("constant must be nonnegative")
        elif self.kind == "uniform":
            if not 0 <= self.low <= self.high < np.inf:
                raise ValueError("uniform needs 0 <= low <= high < inf")
        elif self.kind == "choice":
            if not self.values or len(self.values) != len(self.probs):
                raise ValueError("choice needs matching values and probs")
            if min(self.values) < 0 or min(self.probs) < 0 or abs(sum(self.probs) - 1) > 1e-9:
                raise ValueError("choice needs nonnegative values and probabilities summing to 1")
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def from_json(cls, obj: dict) -> "Dist":
        kind = obj["kind"]
        if kind == "constant":
            return cls(kind, low=float(obj["value"]), high=float(obj["value"]))
        if kind == "uniform":
            return cls(kind, low=float(obj["low"]), high=float(obj["high"]))
        if kind == "choice":
            vals = tuple(float(v) for v in obj["values"])
            probs = tuple(float(v) for v in obj.get("probs", [1.0 / len(vals)] * len(vals)))
            return cls(kind, values=vals, probs=probs)
        raise ValueError(f"unknown distribution kind {kind!r}")

    def to_json(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.low}
        if self.kind == "uniform":
            return {"kind": "uniform", "low": self.low, "high": self.high}
        return {"kind": "choice", "values": list(self.values), "probs": list(self.probs)}

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full(np.shape(u), self.low)
        if self.kind == "uniform":
            return self.low + (self.high - self.low) * u
        cdf = np.cumsum(self.probs)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(self.values) - 1)
        return np.asarray(self.values)[idx]

    @property
    def upper(self) -> float:
        return max(self.values) if self.kind == "choice" else self.high


def _dist(d) -> Dist:
    return d if isinstance(d, Dist) else Dist.from_json(d)


@dataclass(frozen=True, eq=False)
class StochasticModel:
    """I.i.d. block distribution.

    Block ``t`` draws its transaction count, welfare values, per-resource
    consumption (clipped to the limit) and optional exclusion partners from
    its own window of the ``(rng_seed, stream)`` Philox stream.
    ``welfare_scaling="per_unit"`` multiplies the welfare draw by the
    transaction's limit-normalised size.
    """

    rng_seed: int
    tx_count_range: tuple[int, int]
    welfare_dist: Dist
    consumption_dist: tuple[Dist, ...]
    limit: np.ndarray
    loss: LossSpec
    welfare_scaling: str = "absolute"
    exclusion_prob: float = 0.0
    stream: int = 0

    def __post_init__(self):
        lo, hi = (int(v) for v in self.tx_count_range)
        if not 0 <= lo <= hi:
            raise ValueError("tx_count_range must satisfy 0 <= n_min <= n_max")
        limit = as_resource_vector(self.limit, name="limit")
        limit.flags.writeable = False
        cons = self.consumption_dist
        if isinstance(cons, (Dist, dict)):
            cons = [cons] * limit.shape[0]
        cons = tuple(_dist(d) for d in cons)
        if len(cons) != limit.shape[0]:
            raise ValueError("need one consumption distribution per resource")
        if self.loss.m != limit.shape[0] or not np.array_equal(self.loss.limit, limit):
            raise ValueError("loss limit must equal the block limit")
        if self.welfare_scaling not in ("absolute", "per_unit"):
            raise ValueError("welfare_scaling must be 'absolute' or 'per_unit'")
        if not 0 <= self.exclusion_prob <= 1:
            raise ValueError("exclusion_prob must lie in [0, 1]")
        object.__setattr__(self, "tx_count_range", (lo, hi))
        object.__setattr__(self, "limit", limit)
        object.__setattr__(self, "welfare_dist", _dist(self.welfare_dist))
        object.__setattr__(self, "consumption_dist", cons)

    @property
    def m(self) -> int:
        return self.limit.shape[0]

    @property
    def width(self) -> int:
        n_max = self.tx_count_range[1]
        return round_width(1 + n_max * (self.m + 3))

    def with_stream(self, stream: int) -> "StochasticModel":
        return StochasticModel(
            rng_seed=self.rng_seed,
            tx_count_range=self.tx_count_range,
            welfare_dist=self.welfare_dist,
            consumption_dist=self.consumption_dist,
            limit=self.limit,
            loss=self.loss,
            welfare_scaling=self.welfare_scaling,
            exclusion_prob=self.exclusion_prob,
            stream=stream,
        )

    def _arrays(self, U: np.ndarray):
        """Padded block data for uniform windows ``U`` (count, width).

        Returns counts (count,), welfare (count, n_max), consumption
        (count, m, n_max) and exclusion indicators (count, n_max, n_max).
        Entries past a block's transaction count are zero.
        """
        lo, hi = self.tx_count_range
        count = U.shape[0]
        n = lo + np.minimum((U[:, 0] * (hi - lo + 1)).astype(np.int64), hi - lo)
        live = np.arange(hi)[None, :] < n[:, None]
        off = 1
        v = np.where(live, self.welfare_dist.from_uniform(U[:, off : off + hi]), 0.0)
        off += hi
        A = np.empty((count, self.m, hi))
        for i, dist in enumerate(self.consumption_dist):
            A[:, i] = np.where(live, np.minimum(dist.from_uniform(U[:, off : off + hi]), self.limit[i]), 0.0)
            off += hi
        if self.welfare_scaling == "per_unit":
            safe = np.where(self.limit > 0, self.limit, 1.0)
            v = v * (A / safe[None, :, None]).sum(axis=1)
        E = np.zeros((count, hi, hi), dtype=bool)
        if hi >= 2 and self.exclusion_prob > 0:
            flip = U[:, off : off + hi] < self.exclusion_prob
            nm1 = np.maximum(n - 1, 1)[:, None]
            k = np.minimum((U[:, off + hi : off + 2 * hi] * nm1).astype(np.int64), nm1 - 1)
            j = np.arange(hi)[None, :]
            k = np.where(k >= j, k + 1, k)
            r, jj = np.nonzero(flip & live & (n[:, None] >= 2))
            E[r, jj, k[r, jj]] = True
            E[r, k[r, jj], jj] = True
        return n, v, A, E

    def _build_rows(self, U: np.ndarray) -> list[BlockInstance]:
        n, v, A, E = self._arrays(U)
        out = []
        for r in range(U.shape[0]):
            k = int(n[r])
            jj, kk = np.nonzero(np.triu(E[r, :k, :k]))
            pairs = list(zip(jj.tolist(), kk.tolist()))
            out.append(BlockInstance(welfare=v[r, :k], consumption=A[r, :, :k], limit=self.limit, exclusions=pairs))
        return out

    def sample_range(self, t0: int, count: int) -> list[BlockInstance]:
        return self._build_rows(block_uniforms_range(self.rng_seed, self.stream, t0, count, self.width))

    def table_stack(self, t0: int, count: int) -> TableStack:
        """Packing tables of blocks ``t0 .. t0 + count - 1`` built without per-block objects."""
        _, v, A, E = self._arrays(block_uniforms_range(self.rng_seed, self.stream, t0, count, self.width))
        return TableStack.from_arrays(v, A, self.limit, E)

    def start(self, T: int) -> Feed:
        blocks = self.sample_range(1, T)
        return lambda t, price: blocks[t - 1]

    def to_json(self) -> dict:
        return {
            "kind": "stochastic",
            "seed": self.rng_seed,
            "tx_count_range": list(self.tx_count_range),
            "welfare_dist": self.welfare_dist.to_json(),
            "consumption_dist": [d.to_json() for d in self.consumption_dist],
            "limit": self.limit.tolist(),
            "loss": self.loss.to_json(),
            "welfare_scaling": self.welfare_scaling,
            "exclusion_prob": self.exclusion_prob,
        }

    @classmethod
    def from_json(cls, obj: dict, *, stream: int = 0) -> "StochasticModel":
        limit = obj["limit"]
        loss = obj.get("loss", {"kind": "target_box", "target": [0.5 * b for b in limit]})
        loss = LossSpec(kind=loss["kind"], target=loss["target"], limit=loss.get("limit", limit))
        return cls(
            rng_seed=int(obj["seed"]),
            tx_count_range=tuple(obj["tx_count_range"]),
            welfare_dist=Dist.from_json(obj["welfare_dist"]),
            consumption_dist=obj["consumption_dist"],
            limit=limit,
            loss=loss,
            welfare_scaling=obj.get("welfare_scaling", "absolute"),
            exclusion_prob=float(obj.get("exclusion_prob", 0.0)),
            stream=stream,
        )


def sample_stochastic_block(model: StochasticModel, t: int) -> BlockInstance:
    if t < 1:
        raise ValueError("block heights start at 1")
    return model._build_rows(block_uniforms(model.rng_seed, model.stream, t, model.width)[None, :])[0]


@dataclass(frozen=True, eq=False)
class LowerBoundAdversary:
    """Random-sign adversary that forces ``Omega(sqrt(T))`` regret.

    Every block holds a single transaction using ``target - eps_t * slack``
    with ``slack = min(target, limit - target)`` and ``eps_t`` uniform on
    ``{-1, +1}^m``. Its welfare is ``price . a + delta``: the adversary sees
    the posted price, so the transaction is always packed and the realised
    gradient is exactly ``eps_t * slack``.
    """

    rng_seed: int
    target: np.ndarray
    limit: np.ndarray
    price_bound: float
    delta: float = 1e-9
    stream: int = 0
    loss: LossSpec = field(init=False)

    def __post_init__(self):
        target = as_resource_vector(self.target, name="target")
        limit = as_resource_vector(self.limit, target.shape[0], name="limit")
        if not (np.all(target > 0) and np.all(target < limit)):
            raise ValueError("lower-bound adversary needs 0 < target < limit elementwise")
        if not self.price_bound > 0:
            raise ValueError("price_bound must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        target.flags.writeable = False
        limit.flags.writeable = False
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "limit", limit)
        object.__setattr__(self, "loss", LossSpec("target_box", target, limit))

    @property
    def m(self) -> int:
        return self.target.shape[0]

    @property
    def slack(self) -> np.ndarray:
        return np.minimum(self.target, self.limit - self.target)

    @property
    def width(self) -> int:
        return round_width(self.m)

    def with_stream(self, stream: int) -> "LowerBoundAdversary":
        return LowerBoundAdversary(self.rng_seed, self.target, self.limit, self.price_bound, self.delta, stream)

    def signs(self, t0: int, count: int) -> np.ndarray:
        U = block_uniforms_range(self.rng_seed, self.stream, t0, count, self.width)[:, : self.m]
        return np.where(U < 0.5, 1.0, -1.0)

    def _build(self, eps: np.ndarray, price) -> tuple[BlockInstance, np.ndarray]:
        a = np.clip(self.target - eps * self.slack, 0.0, self.limit)
        p = np.zeros(self.m) if price is None else np.asarray(price, dtype=np.float64)
        q = max(float(p @ a), 0.0) + self.delta
        inst = BlockInstance(welfare=[q], consumption=a[:, None], limit=self.limit)
        return inst, a

    def start(self, T: int) -> Feed:
        eps = self.signs(1, T)
        return lambda t, price: self._build(eps[t - 1], price)[0]

    def to_json(self) -> dict:
        return {
            "kind": "lower_bound",
            "seed": self.rng_seed,
            "target": self.target.tolist(),
            "limit": self.limit.tolist(),
            "price_bound": self.price_bound,
            "delta": self.delta,
        }

    @classmethod
    def from_json(cls, obj: dict, *, stream: int = 0) -> "LowerBoundAdversary":
        return cls(
            rng_seed=int(obj["seed"]),
            target=obj["target"],
            limit=obj["limit"],
            price_bound=float(obj["price_bound"]),
            delta=float(obj.get("delta", 1e-9)),
            stream=stream,
        )


def lower_bound_block(adv: LowerBoundAdversary, t: int, price=None) -> tuple[BlockInstance, np.ndarray]:
    """Block ``t`` of the adversary and the usage it forces (its single column)."""
    if t < 1:
        raise ValueError("block heights start at 1")
    return adv._build(adv.signs(t, 1)[0], price)


class ReplayError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def replay_blocks(path) -> Iterator[BlockInstance]:
    """Yield the blocks of a JSON-lines file in order, validating each.

    Blank lines are skipped but still counted for error reporting.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                inst = BlockInstance.from_json(json.loads(line))
            except (json.JSONDecodeError, ValueError, TypeError) as exc:
                raise ReplayError(lineno, f"cannot parse block: {exc}") from None
            problems = validate_instance(inst)
            if problems:
                raise ReplayError(lineno, "; ".join(problems))
            yield inst


def write_blocks(path, blocks: Iterable[BlockInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in blocks:
            fh.write(inst.dumps() + "\n")


@dataclass(eq=False)
class ReplayScenario:
    blocks: list[BlockInstance]
    loss: LossSpec
    path: str | None = None

    def __post_init__(self):
        for t, inst in enumerate(self.blocks, start=1):
            if inst.m != self.loss.m:
                raise InvalidInstanceError([f"block {t} has m={inst.m}, loss has m={self.loss.m}"])

    @classmethod
    def from_file(cls, path, loss: LossSpec) -> "ReplayScenario":
        return cls(list(replay_blocks(path)), loss, str(path))

    @property
    def m(self) -> int:
        return self.loss.m

    @property
    def limit(self) -> np.ndarray:
        return self.loss.limit

    def packer_for(self, t: int):
        """Exact packer of block ``t``, compiled once and reused across runs."""
        cache = self.__dict__.setdefault("_packers", {})
        if t not in cache:
            cache[t] = make_packer(self.blocks[t - 1])
        return cache[t]

    def start(self, T: int) -> Feed:
        if T > len(self.blocks):
            raise ValueError(f"replay file holds {len(self.blocks)} blocks, horizon {T} requested")
        return lambda t, price: self.blocks[t - 1]

    def to_json(self) -> dict:
        return {"kind": "replay", "path": self.path, "loss": self.loss.to_json()}


def scenario_from_json(obj: dict, *, stream: int = 0, base_dir: Path | None = None):
    kind = obj.get("kind")
    if kind == "stochastic":
        return StochasticModel.from_json(obj, stream=stream)
    if kind == "lower_bound":
        return LowerBoundAdversary.from_json(obj, stream=stream)
    if kind == "replay":
        path = Path(obj["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return ReplayScenario.from_file(path, LossSpec.from_json(obj["loss"]))
    raise ValueError(f"unknown scenario kind {kind!r}")
