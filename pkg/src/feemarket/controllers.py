"""Price-update rules written as choice functions (follow the regularized leader).

A choice function ``F`` turns the running gradient sum into the next price,
``p_{t+1} = grad F(-eta * (g_1 + ... + g_t))``:

* ``norm_squared``: ``F(z) = 0.5 * ||p0 + z||^2``; additive gradient steps.
  With ``project`` on, ``F`` is the conjugate of ``0.5 * ||p - p0||^2``
  restricted to the nonnegative prices inside the optional cap (a box, or an
  l2 ball with ``cap_norm="2"``), so the price is the projection of
  ``p0 + z`` and the rule is still an exact choice-function update.
* ``exponential``: ``F(z) = sum p0_i exp(z_i)``; multiplicative steps of the
  EIP-1559 shape ``p_t * exp(-eta * g_t)``.
* ``exponential_clipped``: the exponential rule with each price capped at
  ``price_cap`` through a linear extension of ``F`` above the cap.

Fixed step sizes reconstruct prices from the (compensated) gradient sum;
decreasing schedules use the incremental form instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, as_price_vector

CHOICE_KINDS = ("norm_squared", "exponential", "exponential_clipped")
SCHEDULE_KINDS = ("fixed", "inverse_sqrt", "inverse_t")


class GradientBoundError(ValueError):
    """A gradient exceeded the per-block bound; points at a packing or loss bug."""


@dataclass(frozen=True, eq=False)
class ChoiceFunction:
    kind: str
    p0: np.ndarray
    price_cap: float | None = None
    eps: float | None = None
    project: bool = True
    cap_norm: str = "inf"

    def __post_init__(self):
        if self.kind not in CHOICE_KINDS:
            raise ValueError(f"unknown choice function {self.kind!r}")
        p0 = as_price_vector(self.p0, name="p0")
        p0.flags.writeable = False
        object.__setattr__(self, "p0", p0)
        if self.cap_norm not in ("inf", "2"):
            raise ValueError("cap_norm must be 'inf' or '2'")
        if self.cap_norm == "2" and self.kind != "norm_squared":
            raise ValueError("an l2 price cap is only supported by the gradient rule")
        if self.price_cap is not None and not self.price_cap > 0:
            raise ValueError("price_cap must be positive")
        if self.kind == "exponential_clipped" and self.price_cap is None:
            raise ValueError("exponential_clipped needs price_cap")
        if self.kind != "norm_squared":
            floor = self.eps if self.eps is not None else 0.0
            if np.any(p0 <= 0) or np.any(p0 < floor):
                raise ValueError("exponential choice functions need p0 >= eps > 0")
            if self.eps is not None and not 0 < self.eps <= 1:
                raise ValueError("eps must lie in (0, 1]")
        if self.kind == "exponential_clipped" and np.any(p0 > self.price_cap):
            raise ValueError("p0 exceeds price_cap")
        if self.kind == "norm_squared" and self.project and np.any(p0 < 0):
            raise ValueError("projected gradient rule needs p0 >= 0")

    @property
    def m(self) -> int:
        return self.p0.shape[0]

    def to_json(self) -> dict:
        out = {"kind": self.kind, "p0": self.p0.tolist()}
        if self.price_cap is not None:
            out["price_cap"] = self.price_cap
        if self.eps is not None:
            out["eps"] = self.eps
        if not self.project:
            out["project"] = False
        if self.cap_norm != "inf":
            out["cap_norm"] = self.cap_norm
        return out


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes: ``value`` (fixed), ``value / sqrt(t)`` or ``value / t``."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.kind!r}")
        if not (math.isfinite(self.value) and self.value > 0):
            raise ValueError("step-size constant must be positive")

    def eta(self, t: int) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind == "inverse_sqrt":
            return self.value / math.sqrt(t)
        return self.value / t

    def to_json(self) -> dict:
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True, eq=False)
class ControllerState:
    """Controller memory after ``step - 1`` blocks.

    ``cumulative_gradient`` is a Neumaier-compensated sum; ``compensation``
    holds its running rounding error.
    """

    initial_price: np.ndarray
    cumulative_gradient: np.ndarray
    compensation: np.ndarray
    step: int
    price: np.ndarray
    eta_schedule: StepSchedule

    @property
    def gradient_sum(self) -> np.ndarray:
        return self.cumulative_gradient + self.compensation


def _check(cf: ChoiceFunction, v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (cf.m,):
        raise DimensionError(f"{name} has shape {v.shape}, controller has m={cf.m}")
    # a finite sum implies finite entries; nan and inf both propagate
    if not math.isfinite(v.sum()):
        raise ValueError(f"{name} has non-finite entries")
    return v


def _project(cf: ChoiceFunction, p: np.ndarray) -> np.ndarray:
    if cf.kind == "norm_squared":
        if not cf.project:
            return p
        if cf.price_cap is None:
            return np.maximum(p, 0.0)
        if cf.cap_norm == "2":
            p = np.maximum(p, 0.0)
            norm = np.sqrt((p * p).sum(axis=-1, keepdims=True))
            return p * np.minimum(1.0, cf.price_cap / np.maximum(norm, 1e-300))
        return np.clip(p, 0.0, cf.price_cap)
    if cf.kind == "exponential_clipped":
        return np.minimum(p, cf.price_cap)
    return p


def choice_gradient(cf: ChoiceFunction, z) -> np.ndarray:
    """``grad F(z)``: the price selected for dual point ``z``."""
    return _grad_f(cf, _check(cf, z, "z"))


def _grad_f(cf: ChoiceFunction, z: np.ndarray) -> np.ndarray:
    if cf.kind == "norm_squared":
        return _project(cf, cf.p0 + z)
    if cf.kind == "exponential":
        return cf.p0 * np.exp(z)
    knee = np.log(cf.price_cap / cf.p0)
    return np.where(z <= knee, cf.p0 * np.exp(np.minimum(z, knee)), cf.price_cap)


def choice_value(cf: ChoiceFunction, z) -> float:
    """``F(z)`` for the unprojected choice functions."""
    z = _check(cf, z, "z")
    if cf.kind == "norm_squared":
        w = cf.p0 + z
        return 0.5 * float(w @ w)
    if cf.kind == "exponential":
        return float(cf.p0 @ np.exp(z))
    M = cf.price_cap
    knee = np.log(M / cf.p0)
    lin = M * (z - knee + 1.0)
    return float(np.sum(np.where(z <= knee, cf.p0 * np.exp(np.minimum(z, knee)), lin)))


def regularizer_gradient(cf: ChoiceFunction, p) -> np.ndarray:
    """``grad R`` for the regularizer paired with ``F``; inverts :func:`choice_gradient`."""
    p = _check(cf, p, "price")
    if cf.kind == "norm_squared":
        return p - cf.p0
    return np.log(p / cf.p0)


def smoothness(cf: ChoiceFunction, M: float | None = None) -> float:
    """Smoothness constant of ``F``: 1 for norm-squared, the price bound for the exponentials."""
    if cf.kind == "norm_squared":
        return 1.0
    if cf.kind == "exponential_clipped":
        return cf.m * cf.price_cap
    if M is None:
        raise ValueError("exponential smoothness needs the price bound M")
    return float(M)


def ftrl_price(cf: ChoiceFunction, cumulative_gradient, eta: float) -> np.ndarray:
    if not (math.isfinite(eta) and eta > 0):
        raise ValueError("eta must be positive")
    G = _check(cf, cumulative_gradient, "cumulative gradient")
    return choice_gradient(cf, -eta * G)


def incremental_price(cf: ChoiceFunction, p, g, eta: float) -> np.ndarray:
    """One incremental update ``p - eta g`` or ``p * exp(-eta g)``, then projection."""
    return _incremental(cf, _check(cf, p, "price"), _check(cf, g, "gradient"), eta)


def _incremental(cf: ChoiceFunction, p: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    if cf.kind == "norm_squared":
        return _project(cf, p - eta * g)
    return _project(cf, p * np.exp(-eta * g))


def initial_state(cf: ChoiceFunction, schedule: StepSchedule) -> ControllerState:
    zeros = np.zeros(cf.m)
    return ControllerState(
        initial_price=cf.p0,
        cumulative_gradient=zeros,
        compensation=zeros.copy(),
        step=1,
        price=_project(cf, cf.p0.copy()),
        eta_schedule=schedule,
    )


def step(
    cf: ChoiceFunction,
    state: ControllerState,
    g,
    schedule: StepSchedule | None = None,
    *,
    gradient_bound: float | None = None,
) -> tuple[ControllerState, np.ndarray]:
    """Absorb block ``state.step``'s gradient and return the next state and price."""
    schedule = schedule or state.eta_schedule
    g = _check(cf, g, "gradient")
    if gradient_bound is not None:
        norm = math.sqrt(float(g @ g))
        if norm > gradient_bound * (1 + 1e-12) + 1e-12:
            raise GradientBoundError(f"||g||={norm:.6g} exceeds bound {gradient_bound:.6g} at block {state.step}")
    s, c = state.cumulative_gradient, state.compensation
    total = s + g
    c = c + np.where(abs(s) >= abs(g), (s - total) + g, (g - total) + s)
    eta = schedule.eta(state.step)
    if schedule.kind == "fixed":
        price = _grad_f(cf, -eta * (total + c))
    else:
        price = _incremental(cf, state.price, g, eta)
    new = ControllerState(state.initial_price, total, c, state.step + 1, price, schedule)
    return new, price


def fixed_eta_for_horizon(
    cf: ChoiceFunction,
    B: float,
    M: float,
    T: int,
    eps: float | None = None,
    sigma: float | None = None,
) -> float:
    """Horizon-tuned step size ``sqrt((F(0) + F*) / (sigma T B^2 / 2))``.

    norm_squared uses ``F(0) = ||p0||^2 / 2``, ``F* = M^2 / 2``, ``sigma = 1``.
    The exponential kinds use ``F(0) = ||p0||_1``,
    ``F* = m * max(M log(M / eps) - M, 0)`` and ``sigma = M`` unless overridden.
    """
    if not (B > 0 and M > 0 and T >= 1):
        raise ValueError("need B > 0, M > 0 and T >= 1")
    if cf.kind == "norm_squared":
        f0 = 0.5 * float(cf.p0 @ cf.p0)
        fstar = 0.5 * M * M
        sig = 1.0 if sigma is None else sigma
    else:
        eps = cf.eps if eps is None else eps
        if eps is None or not 0 < eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        f0 = float(np.sum(np.abs(cf.p0)))
        fstar = cf.m * max(M * math.log(M / eps) - M, 0.0)
        sig = float(M) if sigma is None else sigma
    if sig <= 0:
        raise ValueError("sigma must be positive")
    return math.sqrt((f0 + fstar) / (sig * T * B * B / 2.0))


def horizon_free_constant(B: float, M: float) -> float:
    """``C`` for ``eta_t = C / sqrt(t)``; balances the two regret terms for a price set of diameter ``M``."""
    return M / (B * math.sqrt(2.0))


def bregman_divergence_entropy(p, pt) -> float:
    """Bregman divergence of the nonnegative entropy ``p log p``, summed over coordinates."""
    p = np.asarray(p, dtype=np.float64)
    pt = np.asarray(pt, dtype=np.float64)
    if p.shape != pt.shape:
        raise DimensionError("price vectors differ in dimension")
    if np.any(pt <= 0):
        raise ValueError("reference price must be strictly positive")
    if np.any(p < 0):
        raise ValueError("price must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(np.sum(plogp - pt * np.log(pt) - (np.log(pt) + 1.0) * (p - pt)))


def omd_step(p_t, g, eta: float) -> np.ndarray:
    """Mirror-descent step with the entropy divergence: ``p_t * exp(-eta g)``."""
    p_t = np.asarray(p_t, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p_t.shape != g.shape:
        raise DimensionError("price and gradient differ in dimension")
    if np.any(p_t <= 0):
        raise ValueError("mirror descent needs a strictly positive price")
    return p_t * np.exp(-eta * g)


def domain_exit(cf: ChoiceFunction, state: ControllerState, M: float) -> bool:
    """Whether the exponential rule's dual point has left ``||z||_inf <= log M``."""
    if cf.kind == "norm_squared" or state.eta_schedule.kind != "fixed":
        return False
    z = -state.eta_schedule.value * state.gradient_sum
    return bool(np.max(np.abs(z)) > math.log(M))
