"""Derived stability constants, feasibility flags, and certificate estimation.

Everything downstream (switching supervisor, envelope checks) is driven by a
handful of constants computed from the plant data ``(L, D)``, the feedback
data ``(kappa0, M_sigma, sigma, b3)``, and the design parameters.  The
constants are pure arithmetic; this module also re-exposes the feasibility
conditions as named flags so a configuration can be vetted before simulating.

Roles of the derived constants (all stored in ``GainLedger``):

* ``M3`` / ``M4``: growth factors of the direct/inverse backstepping
  transform, giving the two-sided norm equivalence
  ``M4 * |(X,u)| <= |(X,w)| <= M3 * |(X,u)|``.
* ``M5``: gain from the composite norm to the nominal feedback magnitude.
* ``phi``, ``phi1``, ``M0``: small-gain bookkeeping of the interconnection of
  the state and transformed-actuator subsystems.
* ``MBar``: trigger margin; the zoom-out phase hands over once the reported
  norm is below ``(MBar * M - Delta) * mu``.
* ``Omega``: contraction factor of the zoom variable per zoom-in window.
* ``T``: zoom-in window length.
* ``gamma`` / ``gamma_bar``: envelope prefactors for the state-quantized and
  input-quantized closed loops.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import Infeasible, InvalidDelta, NotContracting
from .model import FeedbackSpec, GesCertificate, PlantSpec
from .predictor import sup_growth_factor

__all__ = [
    "DesignParams",
    "GainLedger",
    "compute_gains",
    "search_eps_nu",
    "estimate_ges",
    "default_design",
    "small_gain_margin",
]


@dataclass(frozen=True)
class DesignParams:
    """Free design parameters of the switched quantized feedback.

    lam   : small-gain slack; must satisfy (b3+1)/(1+lam) < exp(-D)
    eps   : fading-memory slack (> 0)
    nu    : transport decay-rate slack (> 0)
    delta : envelope decay rate, in (0, min(sigma, nu))
    M     : quantizer range
    Delta : quantizer error bound
    mu0   : initial zoom value
    tau   : zoom-out dwell time
    """

    lam: float
    eps: float
    nu: float
    delta: float
    M: float
    Delta: float
    mu0: float
    tau: float

    def __post_init__(self):
        for name in ("lam", "eps", "nu", "delta", "M", "Delta", "mu0", "tau"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0.0):
                raise ValueError(f"design parameter {name} must be positive, got {v}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @staticmethod
    def from_dict(d: dict) -> "DesignParams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return DesignParams(**d)


_FLAG_NAMES = ("small_gain_ok", "phi_ok", "phi1_ok", "thm1_ok", "thm2_ok",
               "positive_log_arg_ok")


@dataclass(frozen=True)
class GainLedger:
    """All constants of a configuration plus feasibility flags.

    Serializes to a flat key/value JSON document ("lambda" for ``lam``).
    """

    # plant / feedback inputs
    L: float
    D: float
    kappa0: float
    M_sigma: float
    sigma: float
    b3: float
    # design parameters
    lam: float
    eps: float
    nu: float
    delta: float
    mu0: float
    tau: float
    M: float
    Delta: float
    # derived constants
    M3: float
    M4: float
    M5: float
    MBar: float
    phi: float
    phi1: float
    M0: float
    Omega: float
    T: float
    gamma: float
    gamma_bar: float
    thm1_threshold: float
    thm2_threshold: float
    # feasibility flags
    small_gain_ok: bool
    phi_ok: bool
    phi1_ok: bool
    thm1_ok: bool
    thm2_ok: bool
    positive_log_arg_ok: bool

    def flags(self) -> dict[str, bool]:
        return {name: getattr(self, name) for name in _FLAG_NAMES}

    def all_ok(self) -> bool:
        return all(self.flags().values())

    def margins(self) -> dict[str, float]:
        """Signed margin of each feasibility condition (positive = holds)."""
        return {
            "small_gain_ok": math.exp(-self.D) - (self.b3 + 1.0) / (1.0 + self.lam),
            "phi_ok": 1.0 - self.phi,
            "phi1_ok": 1.0 - self.phi1,
            "thm1_ok": self.thm1_threshold - self.Delta / self.M,
            "thm2_ok": self.thm2_threshold - self.Delta / self.M,
            "positive_log_arg_ok": self.M * self.MBar - 2.0 * self.Delta,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "GainLedger":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return GainLedger(**d)

    @staticmethod
    def from_json(text: str) -> "GainLedger":
        return GainLedger.from_dict(json.loads(text))


def small_gain_margin(lam: float, D: float, b3: float) -> float:
    return math.exp(-D) - (b3 + 1.0) / (1.0 + lam)


def _h_small_gain(eps: float, nu: float, lam: float, D: float, b3: float) -> float:
    """Combined small-gain expression; feasibility requires a value < 1."""
    return (1.0 + eps) / (1.0 + lam) * math.exp(D * (nu + 1.0)) * (b3 * (eps + 1.0) + 1.0)


def compute_gains(plant: PlantSpec, fb: FeedbackSpec, design: DesignParams) -> GainLedger:
    """Fill the full constant ledger and evaluate every feasibility flag.

    Raises InvalidDelta when ``delta`` leaves (0, min(sigma, nu)); any other
    failed condition only clears its flag so the ledger can still be
    inspected and printed.
    """
    if fb.ges is None:
        raise ValueError("feedback has no stability certificate; run estimate_ges first")
    L, D, k0 = plant.L, plant.D, fb.kappa0
    cert = fb.ges
    if not (0.0 < design.delta < min(cert.sigma, design.nu)):
        raise InvalidDelta(
            f"delta={design.delta} outside (0, min(sigma={cert.sigma}, nu={design.nu}))")

    growth = sup_growth_factor(L, D)
    M3 = 1.0 + k0 * growth
    M4 = 1.0 / (1.0 + k0 * max(1.0, k0 * L * D) * math.exp(L * D * (1.0 + k0)))
    M5 = k0 * growth

    lam, eps, nu = design.lam, design.eps, design.nu
    phi = (1.0 + eps) / (1.0 + lam) * math.exp(D * (nu + 1.0))
    phi_ok = phi < 1.0
    phi1 = (1.0 + eps) * phi * cert.b3 / (1.0 - phi) if phi_ok else math.inf
    phi1_ok = phi1 < 1.0
    if phi_ok and phi1_ok:
        M0 = ((1.0 / (1.0 - phi)) * (1.0 / (1.0 - phi1))
              * max(math.exp(D * (nu + 1.0)), phi * cert.M_sigma)
              + (1.0 / (1.0 - phi1))
              * max(cert.M_sigma, (1.0 + eps) / (1.0 - phi) * math.exp(D * (nu + 1.0)) * cert.b3))
    else:
        M0 = math.inf

    MBar = M4 / (M3 * (1.0 + M0))
    M, Delta = design.M, design.Delta
    Omega = M5 * Delta * (1.0 + lam) * (1.0 + M0) ** 2 / (M4 * M)
    T = -math.log(Omega / (1.0 + M0)) / design.delta if math.isfinite(Omega) else math.nan

    thm1_threshold = M4 / ((1.0 + M0) * max(M5 * (1.0 + lam) * (1.0 + M0), 2.0 * M5))
    thm2_threshold = M4 / (M5 * (1.0 + lam) * (1.0 + M0) ** 2)
    ratio = Delta / M
    thm1_ok = ratio < thm1_threshold
    thm2_ok = ratio < thm2_threshold
    log_arg = M * MBar - 2.0 * Delta
    positive_log_arg_ok = log_arg > 0.0

    gamma = math.nan
    gamma_bar = math.nan
    if positive_log_arg_ok and math.isfinite(T) and T > 0.0 and 0.0 < Omega:
        decay = math.log(Omega) / T
        inv_state = 1.0 / (design.mu0 * log_arg)
        gamma = (2.0 / M4
                 * max(M4 * M * design.mu0 / Omega * math.exp(2.0 * L * design.tau), M3)
                 * max(inv_state, 1.0) * inv_state ** (1.0 - decay / L))
        inv_input = M5 / (design.mu0 * M * MBar)
        gamma_bar = (2.0 / M4
                     * max(M4 * M / (Omega * M5) * math.exp(2.0 * L * design.tau) * design.mu0, M3)
                     * max(inv_input, 1.0) * inv_input ** (1.0 - decay / L))

    return GainLedger(
        L=L, D=D, kappa0=k0, M_sigma=cert.M_sigma, sigma=cert.sigma, b3=cert.b3,
        lam=lam, eps=eps, nu=nu, delta=design.delta, mu0=design.mu0, tau=design.tau,
        M=M, Delta=Delta,
        M3=M3, M4=M4, M5=M5, MBar=MBar, phi=phi, phi1=phi1, M0=M0,
        Omega=Omega, T=T, gamma=gamma, gamma_bar=gamma_bar,
        thm1_threshold=thm1_threshold, thm2_threshold=thm2_threshold,
        small_gain_ok=small_gain_margin(lam, D, cert.b3) > 0.0,
        phi_ok=phi_ok, phi1_ok=phi1_ok, thm1_ok=thm1_ok, thm2_ok=thm2_ok,
        positive_log_arg_ok=positive_log_arg_ok,
    )


def search_eps_nu(lam: float, D: float, b3: float,
                  grid_points: int = 25) -> tuple[float, float]:
    """Find slack parameters (eps, nu) satisfying the combined small-gain test.

    Scans a logarithmic grid over (1e-4, 1]^2 and returns the point
    maximizing the smaller of the two margins (combined expression < 1 and
    phi < 1).  Raises Infeasible when no grid point qualifies, which happens
    exactly when lam sits at or below the small-gain boundary.
    """
    grid = np.logspace(-4.0, 0.0, grid_points)
    best = None
    best_margin = -math.inf
    for eps in grid:
        for nu in grid:
            h = _h_small_gain(eps, nu, lam, D, b3)
            phi = (1.0 + eps) / (1.0 + lam) * math.exp(D * (nu + 1.0))
            margin = min(1.0 - h, 1.0 - phi)
            if h < 1.0 and phi < 1.0 and margin > best_margin:
                best_margin = margin
                best = (float(eps), float(nu))
    if best is None:
        raise Infeasible(
            f"no (eps, nu) in (1e-4, 1]^2 satisfies the small-gain test for "
            f"lam={lam}, D={D}, b3={b3}")
    return best


def default_design(plant: PlantSpec, fb: FeedbackSpec, M: float, Delta: float,
                   mu0: float = 1.0, tau: float = 1.0,
                   lam: Optional[float] = None,
                   eps: Optional[float] = None, nu: Optional[float] = None,
                   delta: Optional[float] = None) -> DesignParams:
    """Fill unspecified design parameters with workable defaults.

    lam defaults to the smallest small-gain-feasible value with 20% margin;
    (eps, nu) come from the feasibility search; delta defaults to the
    midpoint of its admissible interval.
    """
    if fb.ges is None:
        raise ValueError("feedback has no stability certificate; run estimate_ges first")
    b3, sigma = fb.ges.b3, fb.ges.sigma
    if lam is None:
        lam = 1.2 * (b3 + 1.0) * math.exp(plant.D) - 1.0
    if eps is None or nu is None:
        eps_s, nu_s = search_eps_nu(lam, plant.D, b3)
        eps = eps_s if eps is None else eps
        nu = nu_s if nu is None else nu
    if delta is None:
        delta = 0.5 * min(sigma, nu)
    return DesignParams(lam=lam, eps=eps, nu=nu, delta=delta,
                        M=M, Delta=Delta, mu0=mu0, tau=tau)


def _rk4_autonomous(g, x0: np.ndarray, dt: float, steps: int) -> np.ndarray:
    xs = np.empty((steps + 1, x0.shape[0]))
    x = np.asarray(x0, dtype=float)
    xs[0] = x
    for k in range(steps):
        k1 = g(x)
        k2 = g(x + 0.5 * dt * k1)
        k3 = g(x + 0.5 * dt * k2)
        k4 = g(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or float(np.linalg.norm(x)) > 1e12:
            raise NotContracting("nominal loop trajectory diverged")
        xs[k + 1] = x
    return xs


def estimate_ges(plant: PlantSpec, fb: FeedbackSpec, horizon: float = 10.0,
                 trials: int = 20, seed: int = 0) -> GesCertificate:
    """Estimate an exponential-stability certificate of the nominal loop.

    Simulates the delay-free loop from random initial conditions, fits the
    tightest exponential envelope of the normalized decay via log-linear
    regression, then conservatively inflates overshoot (and deflates the
    decay rate) by 5%.  The disturbance gain is measured from steady states
    under constant disturbances, also inflated by 5%.  Over-estimation is
    safe (certificates feed conservative constants); under-estimation is not.
    """
    rng = np.random.default_rng(seed)

    def loop(x):
        return np.asarray(plant.f(x, float(fb.kappa(x))), dtype=float)

    dt = 0.01
    steps = int(round(horizon / dt))
    ts = np.linspace(0.0, horizon, steps + 1)
    envelope = np.zeros(steps + 1)
    for _ in range(trials):
        x0 = rng.uniform(-10.0, 10.0, plant.n)
        if float(np.linalg.norm(x0)) < 1e-6:
            continue
        xs = _rk4_autonomous(loop, x0, dt, steps)
        ratios = np.linalg.norm(xs, axis=1) / float(np.linalg.norm(x0))
        envelope = np.maximum(envelope, ratios)
    if envelope[-1] >= 1.0:
        raise NotContracting("nominal loop does not decay over the horizon")

    # regress log(envelope) on t where the envelope is meaningfully positive
    mask = envelope > 1e-12
    slope, intercept = np.polyfit(ts[mask], np.log(envelope[mask]), 1)
    if slope >= 0.0:
        raise NotContracting("fitted envelope rate is nonnegative")
    sigma = -float(slope) * 0.95
    # raise the prefactor until the envelope is valid on every sample
    M_sigma = float(np.max(envelope * np.exp(sigma * ts)))
    M_sigma = max(1.0, M_sigma) * 1.05

    # disturbance gain from steady states under constant forcing
    ratios = []
    for w in (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0):
        def forced(x, w=w):
            return np.asarray(plant.f(x, float(fb.kappa(x)) + w), dtype=float)

        xs = _rk4_autonomous(forced, np.zeros(plant.n), dt,
                             int(round(max(horizon, 10.0 / sigma) / dt)))
        ratios.append(float(np.linalg.norm(xs[-1])) / abs(w))
    b3 = max(ratios) * 1.05
    if not (b3 > 0.0):
        raise NotContracting("measured disturbance gain is degenerate")
    return GesCertificate(M_sigma=M_sigma, sigma=sigma, b3=b3)
