"""
Extended Chapman-Kolmogorov propagation for a homogeneous second-order
chain.

Probabilities conditional on two consecutive past states are obtained by
pushing the joint distribution of the current pair (X_{t-1}, X_t) forward
one day at a time: Q'[j, k] = sum_h Q[h, j] * P_hjk. This is the same
sum-of-products the closed-form trace expressions expand to, at
O(n * m^3) per call instead of O(m^n).
"""

from typing import Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, field_validator

from ..errors import ConfigurationError, NoSupportError
from ..models import ChainInitialization, FirstOrderMatrix, TransitionTensor

logger = structlog.get_logger()


class PredictionCurve(BaseModel):
    """values[n-1] = P(X_{s+2+n} = target | X_{s+1} = j, X_s = h), n = 1..horizon"""
    h: int
    j: int
    target: int
    horizon: int
    values: Tuple[float, ...]
    lost_mass: Tuple[float, ...] = ()

    model_config = ConfigDict(frozen=True)

    @field_validator("values")
    @classmethod
    def check_probabilities(cls, v):
        if any(not 0.0 <= p <= 1.0 for p in v):
            raise ValueError("curve values must lie in [0, 1]")
        return v


def _check_state(tensor: TransitionTensor, state: int, name: str) -> None:
    if not 1 <= state <= tensor.m:
        raise ConfigurationError(f"{name}={state} outside states 1..{tensor.m}")


def _step(pairs: np.ndarray, tensor: TransitionTensor) -> Tuple[np.ndarray, float]:
    """Advance the pair distribution one day; mass on unsupported pairs is lost."""
    lost = float(pairs[~tensor.support].sum())
    kept = np.where(tensor.support, pairs, 0.0)
    return np.einsum("hj,hjk->jk", kept, tensor.values), lost


def propagate_pairs(tensor: TransitionTensor, pairs: np.ndarray, steps: int) -> Tuple[np.ndarray, float]:
    """Push a pair distribution `steps` days ahead. Returns (pairs, lost mass)."""
    lost = 0.0
    for _ in range(steps):
        pairs, dropped = _step(pairs, tensor)
        lost += dropped
    return pairs, lost


def n_step_with_loss(tensor: TransitionTensor, h: int, j: int, n: int) -> Tuple[np.ndarray, float]:
    """
    Distribution of X_{s+n+2} given X_s = h, X_{s+1} = j, with the mass that
    drained into pairs the tensor does not define.
    """
    _check_state(tensor, h, "h")
    _check_state(tensor, j, "j")
    if n < 1:
        raise ConfigurationError(f"n must be at least 1, got {n}")
    if not tensor.is_supported(h, j):
        raise NoSupportError(f"pair ({h}, {j}) is not supported by the tensor", h=h, j=j)

    pairs = np.zeros((tensor.m, tensor.m))
    pairs[h - 1, j - 1] = 1.0
    pairs, lost = propagate_pairs(tensor, pairs, n + 1)
    return pairs.sum(axis=0), lost


def n_step_distribution(tensor: TransitionTensor, h: int, j: int, n: int) -> np.ndarray:
    """
    Vector over l of P(X_{s+n+2} = l | X_{s+1} = j, X_s = h).

    n = 1 is sum_k P_hjk P_jkl. Sums to 1 whenever every reachable pair is
    supported; otherwise the shortfall is the lost mass.
    """
    dist, lost = n_step_with_loss(tensor, h, j, n)
    if lost > 0.0:
        logger.debug("Probability mass entered unsupported pairs", h=h, j=j, n=n, lost_mass=lost)
    return dist


def prediction_curve(tensor: TransitionTensor, h: int, j: int, target: int, n_max: int) -> PredictionCurve:
    """Curve n -> P(X_{s+2+n} = target | X_{s+1} = j, X_s = h) for n = 1..n_max."""
    _check_state(tensor, h, "h")
    _check_state(tensor, j, "j")
    _check_state(tensor, target, "target")
    if n_max < 0:
        raise ConfigurationError(f"horizon must be non-negative, got {n_max}")
    if not tensor.is_supported(h, j):
        raise NoSupportError(f"pair ({h}, {j}) is not supported by the tensor", h=h, j=j)

    pairs = np.zeros((tensor.m, tensor.m))
    pairs[h - 1, j - 1] = 1.0
    # first step brings us to X_{s+2}; every later step is one curve point
    pairs, lost = _step(pairs, tensor)
    values, losses = [], []
    for _ in range(n_max):
        pairs, dropped = _step(pairs, tensor)
        lost += dropped
        values.append(float(min(max(pairs[:, target - 1].sum(), 0.0), 1.0)))
        losses.append(lost)

    if losses and losses[-1] > 0.0:
        logger.info("Prediction curve lost mass to unsupported pairs", h=h, j=j, target=target, lost_mass=losses[-1])
    return PredictionCurve(h=h, j=j, target=target, horizon=n_max, values=tuple(values), lost_mass=tuple(losses))


def first_order_n_step(matrix: FirstOrderMatrix, n: int) -> FirstOrderMatrix:
    """n-th power of a one-step matrix; n = 0 is the identity."""
    if n < 0:
        raise ConfigurationError(f"n must be non-negative, got {n}")
    power = np.linalg.matrix_power(matrix.values, n)
    return FirstOrderMatrix(values=np.clip(power, 0.0, 1.0))


def state_occupation(tensor: TransitionTensor, init: ChainInitialization, t: int) -> np.ndarray:
    """pi(t): P(X_t = j) for every state j."""
    if t < 1:
        raise ConfigurationError(f"t must be at least 1, got {t}")
    if init.m != tensor.m:
        raise ConfigurationError(f"initialization has {init.m} states, tensor has {tensor.m}")
    if t == 1:
        return np.array(init.initial_dist)
    if t == 2:
        return init.initial_dist @ init.first_step.values
    pairs = init.initial_dist[:, None] * init.first_step.values
    pairs, lost = propagate_pairs(tensor, pairs, t - 2)
    if lost > 0.0:
        logger.debug("Occupation lost mass to unsupported pairs", t=t, lost_mass=lost)
    return pairs.sum(axis=0)


def occupation_curve(tensor: TransitionTensor, init: ChainInitialization, t_max: int) -> np.ndarray:
    """Rows pi(1), ..., pi(t_max) as a (t_max, m) array."""
    if t_max < 1:
        raise ConfigurationError(f"t_max must be at least 1, got {t_max}")
    rows = [np.array(init.initial_dist)]
    if t_max >= 2:
        rows.append(init.initial_dist @ init.first_step.values)
    pairs = init.initial_dist[:, None] * init.first_step.values
    for _ in range(3, t_max + 1):
        pairs, _lost = _step(pairs, tensor)
        rows.append(pairs.sum(axis=0))
    return np.vstack(rows)
