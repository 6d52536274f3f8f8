"""Forward predictors, backstepping transforms, and controller mismatches.

The predictor state solves a Volterra integral equation along the actuator
grid: ``p(x) = X + integral_0^x f(p(y), u(y)) dy``.  It is marched node by
node with trapezoidal quadrature; the implicit right endpoint is resolved by
an explicit Euler guess refined by one fixed-point correction, which keeps
the scheme explicit and second-order.  All predictors share the actuator
grid nodes, so the backstepping transforms are pointwise.

Three predictors are provided:

* ``predictor_exact``   -- driven by the measured state and actuator grid;
* ``predictor_quantized`` -- seeded at the quantized state, driven by the
  quantized actuator samples (the feedback law's only available data);
* ``inverse_predictor`` -- driven by the nominal feedback plus the
  transformed actuator state, used by the inverse transform.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import GridTooCoarse, NonFiniteError
from .model import ActuatorGrid, FeedbackSpec, PlantSpec
from .quantizer import QuantizerSpec, quantize_input, quantize_state

__all__ = [
    "predictor_exact",
    "predictor_quantized",
    "inverse_predictor",
    "backstepping_direct",
    "backstepping_inverse",
    "u_nominal",
    "predictor_mismatch",
    "input_mismatch",
    "sup_growth_factor",
    "kappa_along",
]


def sup_growth_factor(L: float, D: float) -> float:
    """Gronwall factor bounding sup|p| by this times the composite norm."""
    return max(1.0, L * D) * math.exp(L * D)


def _as_values(u) -> np.ndarray:
    if isinstance(u, ActuatorGrid):
        return u.values
    return np.asarray(u, dtype=float)


def _march_scalar(f, x0: float, u: np.ndarray, h: float) -> np.ndarray:
    # trapezoidal rule; Euler predictor + one fixed-point correction
    N = u.shape[0] - 1
    ul = u.tolist()
    out = np.empty(N + 1)
    pk = float(x0)
    out[0] = pk
    h2 = 0.5 * h
    for k in range(N):
        uk = ul[k]
        uk1 = ul[k + 1]
        fk = f(pk, uk)
        guess = pk + h * fk
        f1 = f(guess, uk1)
        corrected = pk + h2 * (fk + f1)
        f2 = f(corrected, uk1)
        pk = pk + h2 * (fk + f2)
        out[k + 1] = pk
    return out


def _march_vector(f, x0: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
    N = u.shape[0] - 1
    n = x0.shape[0]
    out = np.empty((N + 1, n))
    pk = np.asarray(x0, dtype=float)
    out[0] = pk
    h2 = 0.5 * h
    for k in range(N):
        uk = u[k]
        uk1 = u[k + 1]
        fk = np.asarray(f(pk, uk), dtype=float)
        guess = pk + h * fk
        f1 = np.asarray(f(guess, uk1), dtype=float)
        corrected = pk + h2 * (fk + f1)
        f2 = np.asarray(f(corrected, uk1), dtype=float)
        pk = pk + h2 * (fk + f2)
        out[k + 1] = pk
    return out


def _march_known_input(plant: PlantSpec, X, u: np.ndarray) -> np.ndarray:
    N = u.shape[0] - 1
    if N < 1:
        raise GridTooCoarse("actuator grid needs at least one cell")
    h = plant.D / N
    if h * plant.L >= 1.0:
        raise GridTooCoarse(
            f"h*L = {h * plant.L:.3g} >= 1; refine the grid (N > L*D)")
    X = np.atleast_1d(np.asarray(X, dtype=float))
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(u))):
        raise NonFiniteError("predictor inputs must be finite")
    if plant.n == 1 and plant.f_scalar is not None:
        p = _march_scalar(plant.f_scalar, float(X[0]), u, h).reshape(-1, 1)
    else:
        p = _march_vector(plant.f, X, u, h)
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("predictor march overflowed")
    return p


def predictor_exact(plant: PlantSpec, X, u) -> np.ndarray:
    """March the predictor along the grid from the measured (X, u).

    Returns an ``(N+1, n)`` array; row k is the prediction at offset k*D/N,
    row 0 equals X, row N is the full-delay-ahead predicted state.
    """
    return _march_known_input(plant, X, _as_values(u))


def predictor_quantized(plant: PlantSpec, qspec: QuantizerSpec, mu: float,
                        X, u) -> np.ndarray:
    """Predictor built from quantized measurements only.

    Seeded at the zoomed quantization of X and driven by the zoomed
    quantization of each actuator sample.
    """
    Xq, uq = quantize_state(qspec, mu, np.atleast_1d(np.asarray(X, dtype=float)),
                            _as_values(u))
    return _march_known_input(plant, Xq, uq)


def inverse_predictor(plant: PlantSpec, fb: FeedbackSpec, X, w) -> np.ndarray:
    """Predictor driven by the nominal loop plus the transformed input w.

    Marches ``pi(x) = X + integral_0^x f(pi, kappa(pi) + w(y)) dy``; the
    effective Lipschitz constant of the integrand is L*(1 + kappa0), which
    tightens the step restriction accordingly.
    """
    w = _as_values(w)
    N = w.shape[0] - 1
    if N < 1:
        raise GridTooCoarse("actuator grid needs at least one cell")
    h = plant.D / N
    if h * plant.L * (1.0 + fb.kappa0) >= 1.0:
        raise GridTooCoarse(
            f"h*L*(1+kappa0) = {h * plant.L * (1.0 + fb.kappa0):.3g} >= 1; refine the grid")
    X = np.atleast_1d(np.asarray(X, dtype=float))
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(w))):
        raise NonFiniteError("predictor inputs must be finite")
    if plant.n == 1 and plant.f_scalar is not None and fb.kappa_scalar is not None:
        f, kap = plant.f_scalar, fb.kappa_scalar

        def g(x, wv):
            return f(x, kap(x) + wv)

        p = _march_scalar(g, float(X[0]), w, h).reshape(-1, 1)
    else:
        fv, kapv = plant.f, fb.kappa

        def gv(x, wv):
            return fv(x, float(kapv(x)) + wv)

        p = _march_vector(gv, X, w, h)
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("predictor march overflowed")
    return p


def kappa_along(fb: FeedbackSpec, p: np.ndarray) -> np.ndarray:
    """Evaluate the feedback at every node of a predictor grid."""
    if p.shape[1] == 1 and fb.kappa_scalar is not None:
        kap = fb.kappa_scalar
        return np.array([kap(x) for x in p[:, 0].tolist()])
    kap = fb.kappa
    return np.array([float(kap(row)) for row in p])


def backstepping_direct(plant: PlantSpec, fb: FeedbackSpec, X, u) -> np.ndarray:
    """Transform (X, u) -> w: subtract the feedback along the exact predictor."""
    u = _as_values(u)
    p = predictor_exact(plant, X, u)
    return u - kappa_along(fb, p)


def backstepping_inverse(plant: PlantSpec, fb: FeedbackSpec, X, w) -> np.ndarray:
    """Transform (X, w) -> u: add the feedback along the inverse predictor."""
    w = _as_values(w)
    p = inverse_predictor(plant, fb, X, w)
    return w + kappa_along(fb, p)


def u_nominal(plant: PlantSpec, fb: FeedbackSpec, X, u) -> float:
    """Delay-compensating nominal feedback: kappa at the full-delay predictor."""
    p = predictor_exact(plant, X, u)
    return float(fb.kappa(p[-1]))


def predictor_mismatch(plant: PlantSpec, fb: FeedbackSpec, qspec: QuantizerSpec,
                       mu: float, X, u) -> float:
    """Feedback discrepancy caused by quantized measurements.

    Difference between the feedback evaluated at the quantized-data predictor
    and at the exact predictor, both from the same snapshot.
    """
    u = _as_values(u)
    p = predictor_exact(plant, X, u)
    pq = predictor_quantized(plant, qspec, mu, X, u)
    return float(fb.kappa(pq[-1])) - float(fb.kappa(p[-1]))


def input_mismatch(plant: PlantSpec, fb: FeedbackSpec, qspec: QuantizerSpec,
                   mu: float, X, u) -> float:
    """Discrepancy between the nominal feedback value and its quantization."""
    nominal = u_nominal(plant, fb, X, u)
    return nominal - quantize_input(qspec, mu, nominal)
