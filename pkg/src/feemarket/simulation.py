"""The block-by-block price loop.

Each block: post the controller's price, let the scenario emit the block,
pack it exactly, form the subgradient ``y*(p) - A x*(p)`` and feed it back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controllers import (
    ChoiceFunction,
    GradientBoundError,
    StepSchedule,
    _grad_f,
    _incremental,
    _project,
    domain_exit,
    initial_state,
    step,
)
from .core import BlockInstance, DimensionError, Trace
from .losses import LossSpec, conjugate_argmax, conjugate_eval
from .packing import make_packer, solve_greedy


def simulate(
    scenario,
    cf: ChoiceFunction,
    schedule: StepSchedule,
    T: int,
    *,
    loss: LossSpec | None = None,
    packer: str = "exact",
    price_bound: float | None = None,
    check_gradient: bool = True,
) -> tuple[Trace, list[BlockInstance]]:
    """Run ``T`` blocks and return the trace with the blocks actually produced.

    ``price_bound`` (M) enables domain-exit counting for the fixed-step
    exponential rules. Gradients are checked against ``B = ||limit||_2``.
    """
    if T < 1:
        raise ValueError("horizon must be at least 1")
    if packer not in ("exact", "greedy"):
        raise ValueError("packer must be 'exact' or 'greedy'")
    loss = loss if loss is not None else scenario.loss
    m = loss.m
    if cf.m != m:
        raise DimensionError(f"controller has m={cf.m}, loss has m={m}")
    B = math.sqrt(float(loss.limit @ loss.limit))
    feed = scenario.start(T)
    cached = getattr(scenario, "packer_for", None)
    state = initial_state(cf, schedule)

    prices = np.empty((T, m))
    grads = np.empty((T, m))
    usage = np.empty((T, m))
    supply = np.empty((T, m))
    duals = np.empty(T)
    chosen = []
    blocks = []
    exits = 0
    for t in range(1, T + 1):
        p = state.price
        inst = feed(t, p)
        if inst.m != m:
            raise DimensionError(f"block {t} has m={inst.m}, loss has m={m}")
        if packer == "greedy":
            sol = solve_greedy(inst, p)
        elif cached is not None:
            sol = cached(t)(p)
        else:
            sol = make_packer(inst)(p)
        y = conjugate_argmax(loss, p)
        g = y - sol.usage
        prices[t - 1] = p
        grads[t - 1] = g
        usage[t - 1] = sol.usage
        supply[t - 1] = y
        duals[t - 1] = conjugate_eval(loss, p) + sol.objective
        chosen.append(sol.chosen)
        blocks.append(inst)
        state, _ = step(cf, state, g, schedule, gradient_bound=B if check_gradient else None)
        if price_bound is not None and domain_exit(cf, state, price_bound):
            exits += 1

    ctrl = {"choice": cf.to_json(), "schedule": schedule.to_json()}
    trace = Trace(prices, grads, usage, supply, duals, chosen, controller=ctrl, domain_exits=exits)
    return trace, blocks


@dataclass(frozen=True, eq=False)
class BatchRun:
    """Lockstep runs over ``R`` independent block sequences; arrays are (R, T, ...)."""

    prices: np.ndarray
    gradients: np.ndarray
    usage: np.ndarray
    supply: np.ndarray
    dual_values: np.ndarray

    @property
    def replications(self) -> int:
        return self.prices.shape[0]

    def trace(self, r: int, controller: dict | None = None) -> Trace:
        """Replication ``r`` as a trace (chosen vectors are not tracked in batch runs)."""
        return Trace(
            self.prices[r], self.gradients[r], self.usage[r], self.supply[r], self.dual_values[r],
            [np.zeros(0, dtype=np.int8)] * self.prices.shape[1], controller=controller or {},
        )


class _Lockstep:
    """The controller recursion of :func:`controllers.step` applied to R rows at once."""

    def __init__(self, cf: ChoiceFunction, schedule: StepSchedule, R: int, gradient_bound: float | None):
        self.cf = cf
        self.schedule = schedule
        self.bound = gradient_bound
        self.s = np.zeros((R, cf.m))
        self.c = np.zeros((R, cf.m))
        self.t = 1
        self.price = _project(cf, np.tile(cf.p0, (R, 1)))

    def advance(self, g: np.ndarray) -> None:
        if self.bound is not None:
            norms = np.sqrt((g * g).sum(axis=1))
            if np.any(norms > self.bound * (1 + 1e-12) + 1e-12):
                raise GradientBoundError(f"gradient norm {norms.max():.6g} exceeds bound {self.bound:.6g} at block {self.t}")
        s = self.s
        total = s + g
        self.c = self.c + np.where(abs(s) >= abs(g), (s - total) + g, (g - total) + s)
        self.s = total
        eta = self.schedule.eta(self.t)
        if self.schedule.kind == "fixed":
            self.price = _grad_f(self.cf, -eta * (total + self.c))
        else:
            self.price = _incremental(self.cf, self.price, g, eta)
        self.t += 1


def _supply(loss: LossSpec, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``y*(p)`` and ``l*(p)`` for prices P (R, m)."""
    pos = P >= 0
    if loss.kind == "target_box":
        y = np.where(pos, loss.target, 0.0)
        return y, (loss.target * np.maximum(P, 0.0)).sum(axis=1)
    y = np.where(pos, np.minimum(loss.target + P, loss.limit), 0.0)
    room = loss.limit - loss.target
    val = np.where(P < 0, 0.0, np.where(P <= room, P * loss.target + 0.5 * P * P, P * loss.limit - 0.5 * room * room))
    return y, val.sum(axis=1)


def run_tables(
    stacks,
    loss: LossSpec,
    cf: ChoiceFunction,
    schedule: StepSchedule,
    *,
    check_gradient: bool = True,
) -> BatchRun:
    """Run the price loop on pre-built packing tables, one stack per replication.

    Every stack must cover the same horizon. Results agree with
    :func:`simulate` on the same blocks.
    """
    stacks = list(stacks)
    R, T, m = len(stacks), stacks[0].horizon, loss.m
    if any(st.horizon != T for st in stacks):
        raise ValueError("all replications need the same horizon")
    if cf.m != m or stacks[0].usage.shape[2] != m:
        raise DimensionError("controller, loss and blocks disagree on m")
    S = max(st.welfare.shape[1] for st in stacks)
    W = np.full((R, T, S), -np.inf)
    U = np.zeros((R, T, S, m))
    for r, st in enumerate(stacks):
        k = st.welfare.shape[1]
        W[r, :, :k] = st.welfare
        U[r, :, :k] = st.usage
    B = math.sqrt(float(loss.limit @ loss.limit))
    ctl = _Lockstep(cf, schedule, R, B if check_gradient else None)
    prices = np.empty((R, T, m))
    grads = np.empty((R, T, m))
    usage = np.empty((R, T, m))
    supply = np.empty((R, T, m))
    duals = np.empty((R, T))
    rows = np.arange(R)
    for t in range(T):
        P = ctl.price
        vals = W[:, t] - np.einsum("rsi,ri->rs", U[:, t], P)
        k = vals.argmax(axis=1)
        used = U[rows, t, k]
        y, conj = _supply(loss, P)
        g = y - used
        prices[:, t] = P
        grads[:, t] = g
        usage[:, t] = used
        supply[:, t] = y
        duals[:, t] = conj + vals[rows, k]
        ctl.advance(g)
    return BatchRun(prices, grads, usage, supply, duals)


def run_lower_bound(
    adversaries,
    cf: ChoiceFunction,
    schedule: StepSchedule,
    T: int,
    *,
    check_gradient: bool = True,
) -> BatchRun:
    """Lockstep runs against lower-bound adversaries that share target and limit.

    The single transaction carries welfare ``p . a + delta``, so its profit
    is ``delta > 0`` and the exact packer always includes it; usage is the
    column itself. Agrees with :func:`simulate` on each adversary.
    """
    advs = list(adversaries)
    first = advs[0]
    if any(not (np.array_equal(a.target, first.target) and np.array_equal(a.limit, first.limit)) for a in advs):
        raise ValueError("adversaries must share target and limit")
    loss = first.loss
    R, m = len(advs), first.m
    if cf.m != m:
        raise DimensionError(f"controller has m={cf.m}, adversary has m={m}")
    eps = np.stack([a.signs(1, T) for a in advs], axis=1)  # (T, R, m)
    delta = np.array([a.delta for a in advs])
    cols = np.clip(first.target - eps * first.slack, 0.0, first.limit)
    B = math.sqrt(float(first.limit @ first.limit))
    ctl = _Lockstep(cf, schedule, R, B if check_gradient else None)
    prices = np.empty((R, T, m))
    grads = np.empty((R, T, m))
    usage = np.empty((R, T, m))
    supply = np.empty((R, T, m))
    duals = np.empty((R, T))
    for t in range(T):
        P = ctl.price
        a = cols[t]
        pa = (P * a).sum(axis=1)
        q = np.maximum(pa, 0.0) + delta
        profit = q - pa
        take = profit >= 0
        used = np.where(take[:, None], a, 0.0)
        y, conj = _supply(loss, P)
        g = y - used
        prices[:, t] = P
        grads[:, t] = g
        usage[:, t] = used
        supply[:, t] = y
        duals[:, t] = conj + np.maximum(profit, 0.0)
        ctl.advance(g)
    return BatchRun(prices, grads, usage, supply, duals)
