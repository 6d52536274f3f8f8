"""Post-hoc checks of the quantitative closed-loop guarantees along traces.

Each check compares a simulated trace against a one-sided sufficient bound:
open-loop growth and trigger timing, per-window contraction of the
transformed norm, the full-horizon decay envelope, and the two-sided norm
equivalence of the backstepping transform.  A pass is meaningful; a fail
should first be retried on a refined grid before being read as a
contradiction (the controller is continuous-time, the trace is not).

Violation ratios are (observed quantity) / (bound), with the bound floored
at 1e-300 so exact-zero states do not divide by zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gains import GainLedger
from .model import FeedbackSpec, PlantSpec
from .predictor import backstepping_direct, kappa_along, predictor_exact
from .sim import SimTrace

__all__ = [
    "CheckResult",
    "EnvelopeReport",
    "check_open_loop",
    "check_contraction",
    "check_decay_envelope",
    "check_norm_equivalence",
    "run_checks",
]

_FLOOR = 1e-300
_TOL = 1e-9


@dataclass
class CheckResult:
    """Outcome of one check; ``holds`` is None when not applicable."""

    name: str
    holds: Optional[bool]
    max_violation_ratio: float = 0.0
    time_of_worst: float = math.nan
    margin_stats: dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "holds": self.holds,
                "max_violation_ratio": self.max_violation_ratio,
                "time_of_worst": self.time_of_worst,
                "margin_stats": self.margin_stats, "note": self.note}


@dataclass
class EnvelopeReport:
    checks: list

    def all_pass(self) -> bool:
        return all(c.holds is not False for c in self.checks)

    def to_dict(self) -> dict:
        return {"all_pass": self.all_pass(),
                "checks": [c.to_dict() for c in self.checks]}

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def table(self) -> str:
        lines = [f"{'check':<24} {'holds':<8} {'max ratio':<14} note"]
        for c in self.checks:
            holds = {True: "pass", False: "FAIL", None: "skipped"}[c.holds]
            lines.append(f"{c.name:<24} {holds:<8} {c.max_violation_ratio:<14.6g} {c.note}")
        return "\n".join(lines)


def _ratio(lhs: float, rhs: float) -> float:
    return lhs / max(rhs, _FLOOR)


def _trigger_denominator(ledger: GainLedger, mode: str) -> float:
    if mode == "state_q":
        return ledger.M * ledger.MBar - 2.0 * ledger.Delta
    return ledger.M * ledger.MBar / ledger.M5


def check_open_loop(trace: SimTrace, ledger: GainLedger) -> CheckResult:
    """Pre-handover growth bound and the guaranteed trigger-time bound.

    While the input is zero the composite norm can grow at most like
    ``2 exp(L t)`` times its initial value, and the zoom-out phase must hand
    over no later than ``ln(norm0 / (mu0 * c)) / L`` once that log argument
    exceeds one (c is the mode's trigger margin).
    """
    name = "open_loop_growth"
    if trace.mode not in ("state_q", "input_q"):
        return CheckResult(name, None, note="only meaningful for supervised modes")
    norm0 = trace.initial_norm()
    denom = _trigger_denominator(ledger, trace.mode)
    ratios = np.zeros(1)
    t_worst = math.nan
    pre = trace.phase == "zoom_out"
    if np.any(pre):
        bound = 2.0 * np.exp(ledger.L * trace.t[pre]) * norm0
        r = trace.norm[pre] / np.maximum(bound, _FLOOR)
        idx = int(np.argmax(r))
        ratios = r
        t_worst = float(trace.t[pre][idx])
    stats = {"growth_max_ratio": float(np.max(ratios))}

    if trace.t1_star is None:
        if denom <= 0.0 or norm0 <= ledger.mu0 * denom:
            note = "no handover recorded; trigger-time bound vacuous"
            holds = float(np.max(ratios)) <= 1.0 + _TOL
            return CheckResult(name, holds, float(np.max(ratios)), t_worst, stats, note)
        t_bound = math.log(norm0 / (ledger.mu0 * denom)) / ledger.L
        if trace.t[-1] < t_bound:
            return CheckResult(name, None, float(np.max(ratios)), t_worst, stats,
                               note=f"horizon {trace.t[-1]:.3g} shorter than the "
                                    f"trigger bound {t_bound:.3g}; no handover yet")
        return CheckResult(name, False, math.inf, float(trace.t[-1]), stats,
                           note="no handover within its guaranteed bound")

    max_ratio = float(np.max(ratios))
    if denom > 0.0 and norm0 > ledger.mu0 * denom:
        t_bound = math.log(norm0 / (ledger.mu0 * denom)) / ledger.L
        stats["t1_star"] = trace.t1_star
        stats["t1_bound"] = t_bound
        r = _ratio(trace.t1_star, t_bound) if t_bound > 0 else (0.0 if trace.t1_star == 0 else math.inf)
        if r > max_ratio:
            max_ratio, t_worst = r, trace.t1_star
    holds = max_ratio <= 1.0 + _TOL
    return CheckResult(name, holds, max_ratio, t_worst, stats)


def _transformed_norms(trace: SimTrace) -> tuple[np.ndarray, np.ndarray]:
    """|X| + sup|w| at snapshot times, w rebuilt by the direct transform."""
    if trace.plant is None or trace.fb is None:
        raise ValueError("trace carries no plant/feedback; cannot rebuild w")
    ts = trace.snapshot_times()
    norms = np.empty(ts.shape[0])
    for j, idx in enumerate(trace.snap_idx):
        X = trace.X[idx]
        u = trace.snap_u[j]
        p = predictor_exact(trace.plant, X, u)
        w = u - kappa_along(trace.fb, p)
        norms[j] = np.linalg.norm(X) + np.max(np.abs(w))
    return ts, norms


def contraction_constant(ledger: GainLedger, mode: str) -> float:
    """Handover bound on the transformed norm, per unit zoom value."""
    if mode == "state_q":
        return ledger.M3 * ledger.MBar * ledger.M
    return ledger.M4 * ledger.M / ((1.0 + ledger.M0) * ledger.M5)


def check_contraction(trace: SimTrace, ledger: GainLedger,
                      mode: Optional[str] = None) -> CheckResult:
    """Per-window contraction of the transformed norm during zoom in.

    Window-end values must be majorized by ``Omega^i * C * mu_star`` and the
    in-window evolution by ``max(M0 exp(-delta (t - t_ref)) * norm_ref,
    Omega * C * mu_i)``.  The reference point of each window is its first
    recorded snapshot (one is forced at every zoom change).
    """
    name = "window_contraction"
    mode = mode or trace.mode
    if mode not in ("state_q", "input_q") or trace.t1_star is None:
        return CheckResult(name, None, note="needs a supervised trace with a handover")
    T, Omega, delta, M0 = ledger.T, ledger.Omega, ledger.delta, ledger.M0
    C = contraction_constant(ledger, mode)
    mu_star = trace.mu_star
    ts, norms = _transformed_norms(trace)
    zoomed = ts >= trace.t1_star - 1e-12
    ts, norms = ts[zoomed], norms[zoomed]
    if ts.size == 0:
        return CheckResult(name, None, note="no snapshots after the handover")

    windows = np.floor((ts - trace.t1_star) / T).astype(int) + 1
    max_ratio = 0.0
    t_worst = math.nan
    end_ratios = {}
    hypothesis_ratio = _ratio(norms[0], C * mu_star)
    max_ratio = hypothesis_ratio
    t_worst = float(ts[0])
    complete = int(math.floor((trace.t[-1] - trace.t1_star) / T))
    for i in sorted(set(windows)):
        sel = windows == i
        tw, nw = ts[sel], norms[sel]
        mu_i = mu_star * Omega ** (i - 1)
        ref_t, ref_n = tw[0], nw[0]
        bound = np.maximum(M0 * np.exp(-delta * (tw - ref_t)) * ref_n,
                           Omega * C * mu_i)
        r = nw / np.maximum(bound, _FLOOR)
        j = int(np.argmax(r))
        if r[j] > max_ratio:
            max_ratio, t_worst = float(r[j]), float(tw[j])
        if i <= complete:
            window_end = trace.t1_star + i * T
            near_end = tw >= window_end - 0.1 * T
            if np.any(near_end):
                n_end = float(nw[near_end][-1])
                r_end = _ratio(n_end, Omega ** i * C * mu_star)
                end_ratios[i] = r_end
                if r_end > max_ratio:
                    max_ratio, t_worst = r_end, float(tw[near_end][-1])
    stats = {"complete_windows": complete,
             "hypothesis_ratio": hypothesis_ratio,
             "window_end_ratios": {str(k): v for k, v in end_ratios.items()}}
    holds = max_ratio <= 1.0 + _TOL and len(end_ratios) >= 1
    note = "" if end_ratios else "no complete window reached"
    return CheckResult(name, holds if end_ratios else None, max_ratio, t_worst,
                       stats, note)


def check_decay_envelope(trace: SimTrace, ledger: GainLedger,
                           mode: Optional[str] = None) -> CheckResult:
    """Pointwise decay envelope over the whole horizon.

    The composite norm must stay under
    ``g * norm0^(2 - r/L) * exp(r t)`` with ``r = ln(Omega)/T < 0`` and the
    mode's envelope prefactor g.
    """
    name = "decay_envelope"
    mode = mode or trace.mode
    if mode not in ("state_q", "input_q"):
        return CheckResult(name, None, note="envelope applies to supervised modes")
    g = ledger.gamma if mode == "state_q" else ledger.gamma_bar
    if not math.isfinite(g):
        return CheckResult(name, False, math.inf,
                           note="envelope prefactor undefined (check ledger flags)")
    rate = math.log(ledger.Omega) / ledger.T
    if not rate < 0.0:
        return CheckResult(name, False, math.inf, note="envelope rate is not negative")
    norm0 = trace.initial_norm()
    env = g * norm0 ** (2.0 - rate / ledger.L) * np.exp(rate * trace.t)
    r = trace.norm / np.maximum(env, _FLOOR)
    idx = int(np.argmax(r))
    stats = {"initial_norm": norm0,
             "regime": "sub_unit" if norm0 < 1.0 else "super_unit",
             "max_ratio": float(r[idx]),
             "mean_ratio": float(np.mean(r)),
             "envelope_rate": rate}
    holds = bool(r[idx] <= 1.0 + _TOL)
    return CheckResult(name, holds, float(r[idx]), float(trace.t[idx]), stats)


def check_norm_equivalence(plant: PlantSpec, fb: FeedbackSpec, samples: int = 1000,
                           seed: int = 0, grid_n: int = 200, x_scale: float = 5.0,
                           u_scale: float = 5.0, M3: Optional[float] = None,
                           M4: Optional[float] = None) -> CheckResult:
    """Randomized two-sided audit of the backstepping norm equivalence.

    Draws (X, u) samples, rebuilds w, and checks
    ``M4 |(X,u)| <= |(X,w)| <= M3 |(X,u)|`` within 1e-9.  Passing M3/M4
    overrides supports negative controls (a deflated M3 must fail).
    """
    name = "norm_equivalence"
    from .predictor import sup_growth_factor  # local to avoid import cycle noise

    growth = sup_growth_factor(plant.L, plant.D)
    m3 = M3 if M3 is not None else 1.0 + fb.kappa0 * growth
    m4 = M4 if M4 is not None else 1.0 / (
        1.0 + fb.kappa0 * max(1.0, fb.kappa0 * plant.L * plant.D)
        * math.exp(plant.L * plant.D * (1.0 + fb.kappa0)))
    rng = np.random.default_rng(seed)
    violations = 0
    max_ratio = 0.0
    for _ in range(samples):
        X = rng.uniform(-x_scale, x_scale, plant.n)
        u = rng.uniform(-u_scale, u_scale, grid_n + 1) if u_scale > 0 else np.zeros(grid_n + 1)
        w = backstepping_direct(plant, fb, X, u)
        J = float(np.linalg.norm(X) + np.max(np.abs(u)))
        W = float(np.linalg.norm(X) + np.max(np.abs(w)))
        upper_ok = W <= m3 * J + _TOL
        lower_ok = m4 * J <= W + _TOL
        if not (upper_ok and lower_ok):
            violations += 1
        max_ratio = max(max_ratio, _ratio(W, m3 * J), _ratio(m4 * J, W))
    holds = violations == 0
    return CheckResult(name, holds, max_ratio,
                       margin_stats={"violations": violations, "samples": samples,
                                     "M3": m3, "M4": m4})


def run_checks(trace: SimTrace, ledger: Optional[GainLedger] = None,
               equivalence_samples: int = 200) -> EnvelopeReport:
    """All checks applicable to one trace."""
    ledger = ledger or trace.ledger
    if ledger is None:
        raise ValueError("no gain ledger available for this trace")
    checks = [
        check_open_loop(trace, ledger),
        check_contraction(trace, ledger),
        check_decay_envelope(trace, ledger),
    ]
    if trace.plant is not None and trace.fb is not None:
        checks.append(check_norm_equivalence(trace.plant, trace.fb,
                                             samples=equivalence_samples,
                                             grid_n=min(trace.grid_n, 200)))
    return EnvelopeReport(checks)
