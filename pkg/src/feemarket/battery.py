"""Seeded scenario batteries used by the bound checks.

Every scenario is drawn from a generator keyed by its index, so a battery is
a pure function of ``(seed, count)``. Price bounds are ``M = e * u`` with
``u`` in ``[1, 3]``; with ``p0 = eps = 1`` this keeps ``log(M / eps)`` in
``[1, 1 + log 3]`` for the multiplicative rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adversaries import Dist, LowerBoundAdversary, StochasticModel
from .losses import LossSpec
from .rng import substream


@dataclass(frozen=True, eq=False)
class BatteryCase:
    name: str
    scenario: object
    M: float

    @property
    def loss(self) -> LossSpec:
        return self.scenario.loss

    @property
    def m(self) -> int:
        return self.loss.m

    @property
    def B(self) -> float:
        b = self.loss.limit
        return math.sqrt(float(b @ b))


def _gen(seed: int, *labels: int) -> np.random.Generator:
    return np.random.default_rng(substream(seed, *labels))


def stochastic_case(seed: int, k: int) -> BatteryCase:
    rng = _gen(seed, 1, k)
    m = 1 + k % 3
    limit = np.round(rng.uniform(1.0, 4.0, m), 3)
    target = np.round(limit * rng.uniform(0.3, 0.7, m), 3)
    kind = "target_box" if k % 2 == 0 else "quadratic_overage"
    loss = LossSpec(kind, target, limit)
    frac = rng.uniform(0.3, 0.8, m)
    cons = [Dist("uniform", 0.0, float(limit[i] * frac[i])) for i in range(m)]
    n_max = int(rng.integers(3, 7))
    model = StochasticModel(
        rng_seed=substream(seed, 2, k),
        tx_count_range=(int(rng.integers(0, 2)), n_max),
        welfare_dist=Dist("uniform", 0.0, float(rng.uniform(2.0, 6.0))),
        consumption_dist=cons,
        limit=limit,
        loss=loss,
        welfare_scaling="per_unit",
        exclusion_prob=0.2 if k % 4 == 3 else 0.0,
    )
    return BatteryCase(f"stochastic-{k:02d}", model, math.e * float(rng.uniform(1.0, 3.0)))


def adversary_case(seed: int, k: int) -> BatteryCase:
    rng = _gen(seed, 3, k)
    m = 1 + k % 3
    limit = np.round(rng.uniform(1.0, 4.0, m), 3)
    target = np.round(limit * rng.uniform(0.2, 0.8, m), 3)
    M = math.e * float(rng.uniform(1.0, 3.0))
    adv = LowerBoundAdversary(substream(seed, 4, k), target, limit, M)
    return BatteryCase(f"adversary-{k:02d}", adv, M)


def stochastic_battery(seed: int = 2024, count: int = 20) -> list[BatteryCase]:
    return [stochastic_case(seed, k) for k in range(count)]


def adversary_battery(seed: int = 2024, count: int = 20) -> list[BatteryCase]:
    return [adversary_case(seed, k) for k in range(count)]


def interior_quadratic_case(seed: int, k: int) -> BatteryCase:
    """Quadratic-overage scenario whose clearing price sits inside ``[0, limit - target]``.

    ``M`` is set to the common room ``limit - target`` so that the
    projected prices never leave the strongly convex region of the conjugate.
    """
    rng = _gen(seed, 5, k)
    m = 1 + k % 2
    room = float(rng.uniform(1.0, 2.0))
    target = np.round(rng.uniform(0.5, 1.5, m), 3)
    limit = target + room
    loss = LossSpec("quadratic_overage", target, limit)
    cons = [Dist("uniform", float(0.1 * limit[i]), float(0.3 * limit[i])) for i in range(m)]
    model = StochasticModel(
        rng_seed=substream(seed, 6, k),
        tx_count_range=(3, 6),
        welfare_dist=Dist("uniform", 0.0, float(rng.uniform(4.0, 8.0))),
        consumption_dist=cons,
        limit=limit,
        loss=loss,
        welfare_scaling="per_unit",
    )
    return BatteryCase(f"interior-{k:02d}", model, room)


def two_point_model(seed: int = 7) -> StochasticModel:
    """One resource, limit 2, quadratic loss with target 1; one transaction
    of size 2 whose welfare is 4 or 1 with equal probability."""
    loss = LossSpec("quadratic_overage", [1.0], [2.0])
    return StochasticModel(
        rng_seed=seed,
        tx_count_range=(1, 1),
        welfare_dist=Dist("choice", values=(4.0, 1.0), probs=(0.5, 0.5)),
        consumption_dist=[Dist("constant", 2.0, 2.0)],
        limit=[2.0],
        loss=loss,
    )
