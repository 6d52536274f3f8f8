"""Dynamic zoom quantizers for state, actuator, and input measurements.

The base map is an odd, piecewise-linear staircase with three regimes:

* dead zone: magnitudes up to ``M_hat`` quantize to exactly zero;
* staircase: on ``(M_hat, M]`` flat levels sit at cell midpoints of a cell of
  width slightly under ``2 * Delta``, connected by linear risers of relative
  width ``rho`` so the map is locally Lipschitz while the error never
  exceeds ``Delta``;
* saturation: beyond ``M`` the value moves at unit slope to ``M - Delta/2``
  and stays there, so out-of-range inputs always report magnitude above
  ``M - Delta``.

Zooming multiplies the domain and range by a positive scale ``mu``:
``q_mu(v) = mu * q(v / mu)``.

For the joint (state, actuator) quantizer the error budget ``Delta`` is split
half/half between the two parts, and the state half is divided equally among
coordinates (each coordinate gets ``Delta / (2 sqrt(n))``, Euclidean).  The
combined error ``|q1(X) - X| + sup|q2(u) - u|`` is then at most ``Delta``
whenever the composite norm is within range, and the reported norm of an
out-of-range pair always exceeds ``M - Delta``.  ``JOINT_ERROR_FACTOR`` (= 1)
records that no inflation factor is needed with this split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError

__all__ = [
    "QuantizerSpec",
    "JOINT_ERROR_FACTOR",
    "base_quantize",
    "base_quantize_array",
    "quantize_state",
    "quantize_input",
    "state_budgets",
]

# Joint-error inflation factor for the (X, u) quantizer: the half/half budget
# split keeps the combined error within Delta, so downstream mismatch bounds
# can use the range/error constants unmodified.
JOINT_ERROR_FACTOR = 1.0

# Staircase step is 2*Delta*(1 - _MARGIN): the shave keeps the worst-case
# error strictly below Delta so range/error audits pass with margin.
_MARGIN = 1e-3


@dataclass(frozen=True)
class QuantizerSpec:
    """Range ``M``, error bound ``Delta``, dead zone ``M_hat``, riser width.

    ``rho`` is the riser width as a fraction of the staircase step (the
    stability constants never depend on it; it only controls the local
    Lipschitz constant ``~1/rho``).  ``ramped=False`` selects a discontinuous
    pure-staircase variant for comparison runs.

    ``M_hat <= Delta`` is required: inside the dead zone the output is zero,
    so the dead-zone radius itself must fit in the error budget.
    """

    M: float
    Delta: float
    M_hat: float
    rho: float = 0.25
    ramped: bool = True

    def __post_init__(self):
        if not (self.Delta > 0.0):
            raise ValueError("Delta must be positive")
        if not (self.M > self.Delta):
            raise ValueError("need M > Delta")
        if not (0.0 < self.M_hat < self.M):
            raise ValueError("need 0 < M_hat < M")
        if not (self.M_hat <= self.Delta):
            raise ValueError("need M_hat <= Delta (dead-zone error must fit the budget)")
        if not (0.0 < self.rho <= 0.5):
            raise ValueError("need 0 < rho <= 0.5")


def base_quantize_array(spec: QuantizerSpec, v) -> np.ndarray:
    """Vectorized base quantizer at unit zoom."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("quantizer input must be finite")
    M, Delta, M_hat = spec.M, spec.Delta, spec.M_hat
    s = 2.0 * Delta * (1.0 - _MARGIN)
    r = spec.rho * s if spec.ramped else 0.0

    def stair(m):
        # staircase/riser value for magnitudes in (M_hat, M]
        k = np.maximum(np.floor((m - M_hat) / s), 0.0)
        b = M_hat + k * s
        level = M_hat + (k + 0.5) * s
        lower = np.where(k >= 1.0, level - s, 0.0)
        if r > 0.0:
            frac = np.clip((m - b) / r, 0.0, 1.0)
        else:
            frac = 1.0
        return lower + (level - lower) * frac

    a = np.abs(v)
    out = np.zeros_like(a)
    mid = (a > M_hat) & (a <= M)
    if np.any(mid):
        out[mid] = stair(a[mid])
    high = a > M
    if np.any(high):
        q_edge = float(stair(np.array([M]))[0])
        target = M - 0.5 * Delta
        direction = math.copysign(1.0, target - q_edge) if target != q_edge else 0.0
        out[high] = q_edge + direction * np.minimum(a[high] - M, abs(target - q_edge))
    return np.sign(v) * out


def base_quantize(spec: QuantizerSpec, v: float) -> float:
    """Scalar base quantizer at unit zoom; odd, locally Lipschitz."""
    return float(base_quantize_array(spec, np.array([v]))[0])


def state_budgets(spec: QuantizerSpec, n: int) -> tuple[float, float]:
    """Per-coordinate state budget and actuator-sample budget for dimension n."""
    return spec.Delta / (2.0 * math.sqrt(n)), spec.Delta / 2.0


def _derived(spec: QuantizerSpec, budget: float) -> QuantizerSpec:
    if spec.M_hat > budget:
        raise ValueError(
            f"dead zone M_hat={spec.M_hat} exceeds the split error budget "
            f"{budget}; shrink M_hat (it must fit the per-part budget)")
    return QuantizerSpec(M=spec.M, Delta=budget, M_hat=spec.M_hat,
                         rho=spec.rho, ramped=spec.ramped)


def quantize_state(spec: QuantizerSpec, mu: float, X, u) -> tuple[np.ndarray, np.ndarray]:
    """Zoomed joint quantization of the ODE state and the actuator grid.

    Returns ``(mu * q1(X / mu), mu * q2(u / mu))`` where q1 acts
    coordinatewise with budget ``Delta / (2 sqrt(n))`` and q2 samplewise with
    budget ``Delta / 2``.
    """
    if not (np.isfinite(mu) and mu > 0.0):
        raise NonFiniteError(f"zoom value must be positive and finite, got {mu}")
    X = np.atleast_1d(np.asarray(X, dtype=float))
    u = np.asarray(u, dtype=float)
    bx, bu = state_budgets(spec, X.shape[0])
    Xq = mu * base_quantize_array(_derived(spec, bx), X / mu)
    uq = mu * base_quantize_array(_derived(spec, bu), u / mu)
    return Xq, uq


def quantize_input(spec: QuantizerSpec, mu: float, U: float) -> float:
    """Zoomed scalar input quantization ``mu * q(U / mu)`` with full budget."""
    if not (np.isfinite(mu) and mu > 0.0):
        raise NonFiniteError(f"zoom value must be positive and finite, got {mu}")
    if not np.isfinite(U):
        raise NonFiniteError("input to quantize must be finite")
    return mu * base_quantize(spec, U / mu)
