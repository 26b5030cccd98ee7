"""Fixed-seed verifier suites run by ``feemarket verify``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controllers import (
    ChoiceFunction,
    StepSchedule,
    ftrl_price,
    incremental_price,
    initial_state,
    omd_step,
    step,
)
from .evaluation import walk_bound_verify
from .losses import LossSpec, conjugate_argmax, conjugate_eval, loss_eval

SUITES = ("walk", "conjugates", "ftrl-equiv")


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "details": self.details}


def grid_conjugate(spec: LossSpec, p, resolution: float = 1e-4) -> float:
    """``sup_y p.y - loss(y)`` by a per-coordinate grid over the loss domain."""
    p = np.asarray(p, dtype=np.float64)
    total = 0.0
    for i in range(spec.m):
        hi = spec.target[i] if spec.kind == "target_box" else spec.limit[i]
        y = np.linspace(0.0, hi, max(2, int(math.ceil(hi / resolution)) + 1))
        if spec.kind == "target_box":
            vals = p[i] * y
        else:
            over = np.maximum(y - spec.target[i], 0.0)
            vals = p[i] * y - 0.5 * over * over
        total += float(vals.max())
    return total


def random_loss(rng: np.random.Generator, m: int) -> LossSpec:
    limit = rng.uniform(0.5, 3.0, m)
    target = limit * rng.uniform(0.05, 0.95, m)
    kind = "target_box" if rng.random() < 0.5 else "quadratic_overage"
    return LossSpec(kind, target, limit)


def suite_walk(seed: int = 11, samples: int = 100_000) -> SuiteResult:
    reports = {T: walk_bound_verify(T, samples, seed) for T in (4, 100, 10_000)}
    exact_ok = reports[4].exact_abs == 1.5
    ratio = reports[10_000].ratio_to_asymptotic
    ok = exact_ok and all(r.passed for r in reports.values()) and 0.95 <= ratio <= 1.05
    return SuiteResult("walk", ok, {str(T): r.to_json() for T, r in reports.items()})


def suite_conjugates(seed: int = 12, pairs: int = 100, triples: int = 10_000) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        spec = random_loss(rng, int(rng.integers(1, 3)))
        p = rng.uniform(-2.0, 4.0, spec.m)
        worst = max(worst, abs(conjugate_eval(spec, p) - grid_conjugate(spec, p)))
    fy_violations = 0
    fy_equality = 0.0
    for _ in range(triples):
        spec = random_loss(rng, int(rng.integers(1, 4)))
        p = rng.uniform(-2.0, 4.0, spec.m)
        top = spec.target if spec.kind == "target_box" else spec.limit
        y = rng.uniform(0.0, 1.0, spec.m) * top
        lhs = float(p @ y)
        rhs = loss_eval(spec, y) + conjugate_eval(spec, p)
        if lhs > rhs + 1e-9:
            fy_violations += 1
        ys = conjugate_argmax(spec, p)
        fy_equality = max(fy_equality, abs(float(p @ ys) - loss_eval(spec, ys) - conjugate_eval(spec, p)))
    ok = worst <= 1e-3 and fy_violations == 0 and fy_equality <= 1e-9
    return SuiteResult(
        "conjugates", ok, {"max_grid_error": worst, "fenchel_young_violations": fy_violations, "max_equality_error": fy_equality}
    )


def suite_ftrl_equiv(seed: int = 13, sequences: int = 1000, length: int = 100) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = {"norm_squared": 0.0, "exponential": 0.0}
    omd_mismatch = 0
    for k in range(sequences):
        m = int(rng.integers(1, 4))
        for kind in worst:
            if kind == "norm_squared":
                cf = ChoiceFunction(kind, rng.uniform(5.0, 10.0, m), project=False)
            else:
                cf = ChoiceFunction(kind, rng.uniform(1.0, 2.0, m), eps=1.0)
            eta = float(rng.uniform(0.001, 0.05))
            sched = StepSchedule("fixed", eta)
            G = rng.uniform(-1.0, 1.0, (length, m))
            state = initial_state(cf, sched)
            p_inc = cf.p0.copy()
            for g in G:
                state, p_step = step(cf, state, g)
                if kind == "exponential":
                    p_omd = omd_step(p_inc, g, eta)
                    p_next = incremental_price(cf, p_inc, g, eta)
                    omd_mismatch += int(not np.array_equal(p_omd, p_next))
                    p_inc = p_next
                else:
                    p_inc = incremental_price(cf, p_inc, g, eta)
            p_ftrl = ftrl_price(cf, G.sum(axis=0), eta)
            scale = np.maximum(np.abs(p_ftrl), 1e-300)
            worst[kind] = max(worst[kind], float(np.max(np.abs(p_inc - p_ftrl) / scale)), float(np.max(np.abs(p_step - p_ftrl) / scale)))
    ok = max(worst.values()) <= 1e-10 and omd_mismatch == 0
    return SuiteResult("ftrl-equiv", ok, {"max_relative_error": worst, "omd_mismatches": omd_mismatch})


def run_suite(name: str) -> list[SuiteResult]:
    runners = {"walk": suite_walk, "conjugates": suite_conjugates, "ftrl-equiv": suite_ftrl_equiv}
    if name == "all":
        return [runners[n]() for n in SUITES]
    if name not in runners:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    return [runners[name]()]
