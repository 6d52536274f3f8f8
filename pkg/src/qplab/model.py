"""Plant, nominal feedback, actuator grid, and the composite state norm.

The controlled system is an ODE driven through a pure transport line of
length ``D``: the plant sees the oldest in-flight input sample, fresh inputs
enter at the far end.  The in-flight input history ("actuator state") is kept
on a uniform grid of ``N + 1`` samples over ``[0, D]``; with the exact-shift
transport scheme used by the simulator the samples are exact, so the sup norm
over samples equals the true sup norm.

All stability bookkeeping uses the composite norm ``|X| + sup|u|`` with the
Euclidean norm on the ODE state.  The choice of vector norm is free up to
constants; Euclidean is fixed here so that every derived constant is
well-defined and reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "PlantSpec",
    "FeedbackSpec",
    "GesCertificate",
    "ActuatorGrid",
    "CompositeState",
    "composite_norm",
    "norm_xu",
    "builtin_plants",
    "linear_plant",
    "lipschitz_defect_f",
    "lipschitz_defect_kappa",
]


@dataclass(frozen=True)
class GesCertificate:
    """Exponential-stability certificate of the delay/quantization-free loop.

    ``|x(t)| <= M_sigma * |x0| * exp(-sigma t) + b3 * sup|w|`` for the nominal
    loop driven by a bounded disturbance ``w`` entering next to the feedback.

    M_sigma : overshoot factor, >= 1
    sigma   : exponential decay rate, > 0
    b3      : gain from the disturbance to the state, > 0
    """

    M_sigma: float
    sigma: float
    b3: float

    def __post_init__(self):
        if not (self.M_sigma >= 1.0):
            raise ValueError(f"M_sigma must be >= 1, got {self.M_sigma}")
        if not (self.sigma > 0.0):
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not (self.b3 > 0.0):
            raise ValueError(f"b3 must be > 0, got {self.b3}")


@dataclass(frozen=True)
class PlantSpec:
    """Input-delayed plant ``dX/dt = f(X, U(t - D))``.

    f must satisfy ``f(0, 0) = 0`` and be globally Lipschitz with constant
    ``L`` in both arguments: ``|f(X1,u1) - f(X2,u2)| <= L(|X1-X2| + |u1-u2|)``.
    Lipschitzness is audited at random points by the test suite, not proven.

    ``f`` takes an ``(n,)`` array and a scalar input and returns an ``(n,)``
    array.  For scalar plants (``n == 1``) an optional ``f_scalar`` operating
    on plain floats may be supplied; the integrators use it as a fast path.

    name : catalog identifier, or "" for ad-hoc plants.
    """

    n: int
    D: float
    f: Callable
    L: float
    f_scalar: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("state dimension must be a positive integer")
        if not (self.D > 0.0):
            raise ValueError("delay D must be positive")
        if not (self.L > 0.0):
            raise ValueError("Lipschitz constant L must be positive")
        z = np.asarray(self.f(np.zeros(self.n), 0.0), dtype=float)
        if z.shape != (self.n,):
            raise ValueError(f"f must return shape ({self.n},), got {z.shape}")
        if float(np.linalg.norm(z)) > 1e-12:
            raise ValueError("f(0, 0) must vanish (within 1e-12)")
        if self.f_scalar is not None:
            if self.n != 1:
                raise ValueError("f_scalar only makes sense for n == 1")
            if abs(float(self.f_scalar(0.0, 0.0))) > 1e-12:
                raise ValueError("f_scalar(0, 0) must vanish (within 1e-12)")


@dataclass(frozen=True)
class FeedbackSpec:
    """Globally Lipschitz nominal feedback ``kappa`` with its certificate.

    kappa(0) = 0 and |kappa(p) - kappa(q)| <= kappa0 |p - q|.  ``ges`` may be
    None for a feedback whose certificate has not been estimated yet (see
    ``gains.estimate_ges``).
    """

    kappa: Callable
    kappa0: float
    ges: Optional[GesCertificate] = None
    kappa_scalar: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if not (self.kappa0 > 0.0):
            raise ValueError("kappa0 must be positive")
        for n_probe in range(1, 9):
            try:
                v = float(self.kappa(np.zeros(n_probe)))
            except Exception:
                continue
            if abs(v) > 1e-12:
                raise ValueError("kappa(0) must vanish (within 1e-12)")
            break


@dataclass(frozen=True)
class ActuatorGrid:
    """Uniform samples of the in-flight input over ``[0, D]``.

    values[k] is the input that will reach the plant after k*D/N time units;
    values[N] is the freshest sample at the boundary.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.shape[0] < 2:
            raise ValueError("actuator grid needs at least 2 samples")
        object.__setattr__(self, "values", v)

    @property
    def n_cells(self) -> int:
        return self.values.shape[0] - 1

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    @staticmethod
    def constant(value: float, n_cells: int) -> "ActuatorGrid":
        return ActuatorGrid(np.full(n_cells + 1, float(value)))

    @staticmethod
    def from_samples(values) -> "ActuatorGrid":
        return ActuatorGrid(np.asarray(values, dtype=float))

    @staticmethod
    def from_callable(fn: Callable[[float], float], D: float, n_cells: int) -> "ActuatorGrid":
        xs = np.linspace(0.0, D, n_cells + 1)
        return ActuatorGrid(np.array([float(fn(x)) for x in xs]))

    @staticmethod
    def from_segments(segments, D: float, n_cells: int) -> "ActuatorGrid":
        """Sample a right-continuous piecewise-constant profile at the nodes.

        segments: sequence of (start, value) pairs, starts strictly
        increasing, first start at 0.  Each value applies on
        [start, next_start).
        """
        starts = [float(s) for s, _ in segments]
        vals = [float(v) for _, v in segments]
        if not starts or starts[0] != 0.0:
            raise ValueError("segments must start at 0.0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment starts must be strictly increasing")
        if starts[-1] >= D:
            raise ValueError("segment starts must lie inside [0, D)")
        xs = np.linspace(0.0, D, n_cells + 1)
        idx = np.searchsorted(starts, xs, side="right") - 1
        return ActuatorGrid(np.array(vals, dtype=float)[idx])


@dataclass(frozen=True)
class CompositeState:
    """ODE state plus actuator grid at one time instant."""

    X: np.ndarray
    u: ActuatorGrid
    t: float = 0.0

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.X, dtype=float))
        object.__setattr__(self, "X", x)
        if self.t < 0.0:
            raise ValueError("time must be nonnegative")


def norm_xu(X, u_values) -> float:
    """Composite norm |X| + sup|u| on raw arrays."""
    x = np.atleast_1d(np.asarray(X, dtype=float))
    u = np.asarray(u_values, dtype=float)
    return float(np.linalg.norm(x) + (np.max(np.abs(u)) if u.size else 0.0))


def composite_norm(s: CompositeState) -> float:
    """Composite norm of a state: Euclidean |X| plus sup norm of the grid."""
    return norm_xu(s.X, s.u.values)


def lipschitz_defect_f(plant: PlantSpec, rng: np.random.Generator,
                       samples: int = 200, scale: float = 10.0) -> float:
    """Worst violation of the declared Lipschitz bound of f at random points.

    Returns max over sampled pairs of |f(X1,u1)-f(X2,u2)| - L(|X1-X2|+|u1-u2|);
    a correct declaration keeps this <= 0 up to roundoff.
    """
    worst = -math.inf
    for _ in range(samples):
        X1 = rng.uniform(-scale, scale, plant.n)
        X2 = rng.uniform(-scale, scale, plant.n)
        u1, u2 = rng.uniform(-scale, scale, 2)
        lhs = float(np.linalg.norm(np.asarray(plant.f(X1, u1)) - np.asarray(plant.f(X2, u2))))
        rhs = plant.L * (float(np.linalg.norm(X1 - X2)) + abs(u1 - u2))
        worst = max(worst, lhs - rhs)
    return worst


def lipschitz_defect_kappa(fb: FeedbackSpec, n: int, rng: np.random.Generator,
                           samples: int = 200, scale: float = 10.0) -> float:
    """Worst violation of the declared Lipschitz bound of kappa."""
    worst = -math.inf
    for _ in range(samples):
        p = rng.uniform(-scale, scale, n)
        q = rng.uniform(-scale, scale, n)
        lhs = abs(float(fb.kappa(p)) - float(fb.kappa(q)))
        rhs = fb.kappa0 * float(np.linalg.norm(p - q))
        worst = max(worst, lhs - rhs)
    return worst


def linear_plant(a: float, b: float, k: float, D: float = 1.0,
                 name: str = "") -> tuple[PlantSpec, FeedbackSpec]:
    """Scalar linear plant dx/dt = a x + b u with feedback kappa(x) = -k x.

    Requires a - b k < 0 so the nominal loop contracts; the certificate is
    the exact one of the closed-loop scalar ODE.
    """
    sigma = b * k - a
    if not (sigma > 0.0):
        raise ValueError("need a - b*k < 0 for a contracting nominal loop")
    L = max(abs(a), abs(b))
    if L == 0.0:
        raise ValueError("degenerate plant: a = b = 0")

    def f(X, u):
        return np.atleast_1d(a * np.asarray(X, dtype=float) + b * u)

    def kappa(X):
        return -k * float(X[0]) if isinstance(X, np.ndarray) else -k * float(X)

    cert = GesCertificate(M_sigma=1.0, sigma=sigma, b3=abs(b) / sigma)
    plant = PlantSpec(n=1, D=D, f=f, L=L,
                      f_scalar=lambda x, u: a * x + b * u, name=name or "linear")
    fb = FeedbackSpec(kappa=kappa, kappa0=max(k, 1e-12), ges=cert,
                      kappa_scalar=lambda x: -k * x, name=name or "linear")
    return plant, fb


def _sine_plant() -> tuple[PlantSpec, FeedbackSpec]:
    # dx/dt = -x + 0.5 sin x + u; kappa = -0.5 sin x makes the loop dx/dt = -x.
    def f(X, u):
        X = np.asarray(X, dtype=float)
        return np.atleast_1d(-X + 0.5 * np.sin(X) + u)

    def f_scalar(x, u):
        return -x + 0.5 * math.sin(x) + u

    def kappa(X):
        x = float(X[0]) if isinstance(X, np.ndarray) else float(X)
        return -0.5 * math.sin(x)

    plant = PlantSpec(n=1, D=1.0, f=f, L=1.5, f_scalar=f_scalar, name="sine")
    fb = FeedbackSpec(kappa=kappa, kappa0=0.5,
                      ges=GesCertificate(M_sigma=1.0, sigma=1.0, b3=1.0),
                      kappa_scalar=lambda x: -0.5 * math.sin(x), name="sine")
    return plant, fb


def _linear2d_plant() -> tuple[PlantSpec, FeedbackSpec]:
    # Two-state linear plant with symmetric closed loop, so the certificate
    # is exact: A_cl = A - B K is symmetric with largest eigenvalue -sigma.
    A = np.array([[-1.0, 0.0], [0.0, -2.0]])
    B = np.array([1.0, 1.0])
    K = np.array([0.5, 0.5])
    sigma = 2.0 - math.sqrt(2.0) / 2.0
    cert = GesCertificate(M_sigma=1.0, sigma=sigma, b3=float(np.linalg.norm(B)) / sigma)

    def f(X, u):
        return A @ np.asarray(X, dtype=float) + B * u

    def kappa(X):
        return -float(K @ np.asarray(X, dtype=float))

    plant = PlantSpec(n=2, D=1.0, f=f, L=2.0, name="linear2d")
    fb = FeedbackSpec(kappa=kappa, kappa0=float(np.linalg.norm(K)), ges=cert, name="linear2d")
    return plant, fb


def builtin_plants() -> dict[str, tuple[PlantSpec, FeedbackSpec]]:
    """Catalog of test plants with exact constants and analytic certificates.

    "linear"   : scalar dx/dt = u with kappa(x) = -x  (L = 1, kappa0 = 1)
    "sine"     : scalar dx/dt = -x + 0.5 sin x + u with kappa = -0.5 sin x
                 (L = 1.5, kappa0 = 0.5; nominal loop is dx/dt = -x)
    "linear2d" : two-state linear plant with a symmetric closed loop
    "unstable" : scalar dx/dt = x + u with kappa(x) = -2x; open loop diverges,
                 useful for growth and blowup studies
    """
    return {
        "linear": linear_plant(0.0, 1.0, 1.0, name="linear"),
        "sine": _sine_plant(),
        "linear2d": _linear2d_plant(),
        "unstable": linear_plant(1.0, 1.0, 2.0, name="unstable"),
    }
