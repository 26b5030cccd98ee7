"""Network loss functions and their Fenchel conjugates.

Both supported losses are separable across resources, so every quantity is
computed coordinate by coordinate in closed form.

``target_box``
    zero on the box ``0 <= y <= target``, infinite elsewhere. Its conjugate
    is ``target . max(p, 0)``.
``quadratic_overage``
    ``0.5 * ||max(y - target, 0)||^2`` on ``0 <= y <= limit``. For ``p >= 0``
    the conjugate maximiser is ``min(target + p, limit)``, which gives a
    Huber-like conjugate that is quadratic (curvature 1) on
    ``[0, limit - target]`` and linear above it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, as_resource_vector

LOSS_KINDS = ("target_box", "quadratic_overage")


@dataclass(frozen=True, eq=False)
class LossSpec:
    kind: str
    target: np.ndarray
    limit: np.ndarray

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        target = as_resource_vector(self.target, name="target")
        limit = as_resource_vector(self.limit, target.shape[0], name="limit")
        if np.any(target > limit):
            raise ValueError("target must not exceed limit")
        target.flags.writeable = False
        limit.flags.writeable = False
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "limit", limit)

    @property
    def m(self) -> int:
        return self.target.shape[0]

    def to_json(self) -> dict:
        return {"kind": self.kind, "target": self.target.tolist(), "limit": self.limit.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "LossSpec":
        return cls(kind=obj["kind"], target=obj["target"], limit=obj["limit"])


def _vec(spec: LossSpec, x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != spec.m:
        raise DimensionError(f"{name} has shape {v.shape}, loss expects m={spec.m}")
    return v


def loss_eval(spec: LossSpec, y) -> float:
    y = _vec(spec, y, "usage")
    if spec.kind == "target_box":
        return 0.0 if np.all(y >= 0) and np.all(y <= spec.target) else np.inf
    if np.any(y < 0) or np.any(y > spec.limit):
        return np.inf
    over = np.maximum(y - spec.target, 0.0)
    return 0.5 * float(over @ over)


def conjugate_eval(spec: LossSpec, p) -> float:
    """``sup_y p.y - loss(y)`` in closed form."""
    p = _vec(spec, p, "price")
    if spec.kind == "target_box":
        return float(spec.target @ np.maximum(p, 0.0))
    return float(np.sum(_quadratic_conjugate(spec, p)))


def _quadratic_conjugate(spec: LossSpec, p: np.ndarray) -> np.ndarray:
    room = spec.limit - spec.target
    inner = p * spec.target + 0.5 * p * p
    outer = p * spec.limit - 0.5 * room * room
    return np.where(p < 0, 0.0, np.where(p <= room, inner, outer))


def conjugate_argmax(spec: LossSpec, p) -> np.ndarray:
    """Maximiser ``y*(p)`` of ``p.y - loss(y)``; always within ``[0, limit]``.

    Ties at ``p_i = 0`` resolve to ``target_i`` and negative prices give 0.
    """
    p = _vec(spec, p, "price")
    if spec.kind == "target_box":
        return np.where(p >= 0, spec.target, 0.0)
    return np.where(p >= 0, np.minimum(spec.target + p, spec.limit), 0.0)


def interior_price_cap(spec: LossSpec) -> np.ndarray:
    """Largest price per resource at which the quadratic conjugate is still 1-strongly convex."""
    if spec.kind != "quadratic_overage":
        raise ValueError("only the quadratic_overage conjugate has a strongly convex region")
    return spec.limit - spec.target

