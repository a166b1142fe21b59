"""Complexity-conditioned routing over the shallow / medium / deep paths.

Soft weights are a softmax of ``-beta * |d_hat - c_j|``.  At inference the
router either takes the arg max (ties go to the shallower path) or compares
d_hat against two thresholds.  For training, the straight-through contract is:
forward uses the hard one-hot decision, backward uses the gradients of the
soft weights returned by :func:`soft_weights_gradient`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import RoutingError

J = 3

# (rounds, subspace_dim) for path index 0, 1, 2
PATH_TABLE: tuple[tuple[int, int], ...] = ((2, 8), (4, 16), (6, 32))
PATH_NAMES = ("shallow", "medium", "deep")

Mode = Literal["soft", "hard", "threshold"]


@dataclass(frozen=True)
class PathSpec:
    rounds: int
    subspace_dim: int

    def __post_init__(self):
        if (self.rounds, self.subspace_dim) not in PATH_TABLE:
            raise RoutingError(f"(rounds, subspace_dim) must be one of {PATH_TABLE}")

    @classmethod
    def for_index(cls, j: int) -> "PathSpec":
        return cls(*PATH_TABLE[j])

    @classmethod
    def named(cls, name: str) -> "PathSpec":
        try:
            return cls.for_index(PATH_NAMES.index(name))
        except ValueError:
            raise RoutingError(f"unknown path {name!r}; expected one of {PATH_NAMES}") from None

    @property
    def index(self) -> int:
        return PATH_TABLE.index((self.rounds, self.subspace_dim))


@dataclass(frozen=True)
class RouterParams:
    centers: tuple[float, float, float] = (3.0, 8.0, 13.0)
    beta: float = 1.0
    tau1: float = 5.0
    tau2: float = 12.0

    def __post_init__(self):
        centers = tuple(float(c) for c in self.centers)
        if len(centers) != J:
            raise RoutingError(f"expected {J} path centers, got {len(centers)}")
        if not all(math.isfinite(c) for c in centers):
            raise RoutingError("path centers must be finite")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise RoutingError("beta must be positive and finite")
        if not (math.isfinite(self.tau1) and math.isfinite(self.tau2) and self.tau1 < self.tau2):
            raise RoutingError("thresholds must satisfy tau1 < tau2")
        object.__setattr__(self, "centers", centers)

    def with_centers(self, centers) -> "RouterParams":
        return RouterParams(tuple(centers), self.beta, self.tau1, self.tau2)

    def with_beta(self, beta: float) -> "RouterParams":
        return RouterParams(self.centers, beta, self.tau1, self.tau2)

    @classmethod
    def from_dict(cls, cfg: dict) -> "RouterParams":
        default = cls()
        return cls(
            centers=tuple(cfg.get("centers", default.centers)),
            beta=float(cfg.get("beta", default.beta)),
            tau1=float(cfg.get("tau1", default.tau1)),
            tau2=float(cfg.get("tau2", default.tau2)),
        )

    def to_dict(self) -> dict:
        return {"centers": list(self.centers), "beta": self.beta, "tau1": self.tau1, "tau2": self.tau2}


@dataclass(frozen=True)
class RouteDecision:
    weights: tuple[float, ...]
    selected: int
    spec: PathSpec = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "spec", PathSpec.for_index(self.selected))

    def to_dict(self) -> dict:
        return {
            "weights": list(self.weights),
            "selected": self.selected,
            "rounds": self.spec.rounds,
            "subspace_dim": self.spec.subspace_dim,
        }


def _check_signal(d_hat: float) -> float:
    try:
        d_hat = float(d_hat)
    except (TypeError, ValueError):
        raise RoutingError("invalid complexity signal") from None
    if not math.isfinite(d_hat):
        raise RoutingError("invalid complexity signal")
    return d_hat


def soft_weights(d_hat: float, params: RouterParams = RouterParams()) -> np.ndarray:
    d_hat = _check_signal(d_hat)
    logits = -params.beta * np.abs(d_hat - np.asarray(params.centers))
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def hard_route(d_hat: float, params: RouterParams = RouterParams()) -> RouteDecision:
    w = soft_weights(d_hat, params)
    # np.argmax returns the first maximum, i.e. the shallower path on ties
    return RouteDecision(tuple(w), int(np.argmax(w)))


def threshold_route(d_hat: float, params: RouterParams = RouterParams()) -> RouteDecision:
    d_hat = _check_signal(d_hat)
    if d_hat <= params.tau1:
        j = 0
    elif d_hat <= params.tau2:
        j = 1
    else:
        j = 2
    onehot = [0.0] * J
    onehot[j] = 1.0
    return RouteDecision(tuple(onehot), j)


def route(d_hat: float, params: RouterParams = RouterParams(), mode: Mode = "threshold") -> RouteDecision:
    if mode == "threshold":
        return threshold_route(d_hat, params)
    if mode == "hard":
        return hard_route(d_hat, params)
    if mode == "soft":
        # soft mode still names the arg-max path so callers get a runnable spec
        return hard_route(d_hat, params)
    raise RoutingError(f"unknown routing mode {mode!r}")


def soft_weights_gradient(
    d_hat: float, params: RouterParams = RouterParams()
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of :func:`soft_weights`.

    Returns ``(dw_dd, dw_dc, dw_dbeta)`` with shapes (J,), (J, J) and (J,);
    ``dw_dc[j, m]`` is the derivative of w_j with respect to c_m.
    """
    d_hat = _check_signal(d_hat)
    c = np.asarray(params.centers)
    diff = d_hat - c
    if np.any(diff == 0.0):
        raise RoutingError("nondifferentiable point")
    w = soft_weights(d_hat, params)
    sign = np.sign(diff)
    # softmax Jacobian dw_j/da_m = w_j (delta_jm - w_m), a_m = -beta |d - c_m|
    # the diagonal w_j (1 - w_j) uses 1 - w_j = sum of the other weights,
    # which keeps full relative accuracy when one weight saturates
    others = np.array([np.sum(np.delete(w, j)) for j in range(J)])
    jac = -np.outer(w, w)
    jac[np.diag_indices(J)] = w * others
    da_dd = -params.beta * sign
    da_dc = params.beta * sign
    da_dbeta = -np.abs(diff)
    return jac @ da_dd, jac * da_dc[None, :], jac @ da_dbeta


@dataclass(frozen=True)
class AnnealSchedule:
    beta0: float = 1.0
    beta_max: float = 10.0
    steps: int = 1000

    def __post_init__(self):
        if not (self.beta0 > 0 and self.beta_max >= self.beta0 and self.steps >= 1):
            raise RoutingError("invalid schedule: need beta0 > 0, beta_max >= beta0, steps >= 1")


def anneal_beta(step: int, schedule: AnnealSchedule = AnnealSchedule()) -> float:
    """Exponential ramp from beta0 to beta_max over ``steps``, then held."""
    if step < 0:
        raise RoutingError("invalid schedule: negative step")
    frac = min(step, schedule.steps) / schedule.steps
    if frac == 1.0:
        return float(schedule.beta_max)
    return float(schedule.beta0 * (schedule.beta_max / schedule.beta0) ** frac)
