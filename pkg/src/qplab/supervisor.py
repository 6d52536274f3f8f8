"""Piecewise-constant zoom schedule and the zoom-out -> zoom-in handover.

The zoom variable starts in an open-loop "zoom out" phase where it grows
geometrically every dwell interval, widening the quantizer range until the
reported (or measured, under input quantization) norm falls inside a safe
fraction of the range.  At that first instant the schedule freezes, control
activates, and the variable contracts by a fixed factor every window of
length T ("zoom in"), shrinking the quantization error to zero.

The dwell intervals are half-open ``[(j-1)*tau, j*tau)`` so the schedule is
single-valued; the trigger is evaluated once per simulation step, so the
recorded handover time is quantized to the step grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .gains import GainLedger
from .quantizer import QuantizerSpec, quantize_state

__all__ = [
    "ZOOM_OUT",
    "ZOOM_IN",
    "SupervisorState",
    "initial_state",
    "mu_at",
    "trigger_state",
    "trigger_input",
    "advance",
]

ZOOM_OUT = "zoom_out"
ZOOM_IN = "zoom_in"


@dataclass(frozen=True)
class SupervisorState:
    """Value-type supervisor state; transitions are pure (see ``advance``).

    phase    : "zoom_out" or "zoom_in"
    mu       : current zoom value (piecewise constant, > 0)
    j        : zoom-out dwell index (>= 1)
    i        : zoom-in window index (>= 1, valid once zoomed in)
    t1_star  : handover time, None while zooming out
    mu_star  : zoom value frozen at handover
    tau, mu0 : dwell length and initial zoom scale
    T, Omega : zoom-in window length and contraction factor
    L        : plant Lipschitz constant (sets the zoom-out growth rate)
    """

    phase: str
    mu: float
    j: int
    i: int
    t1_star: Optional[float]
    mu_star: Optional[float]
    tau: float
    mu0: float
    T: float
    Omega: float
    L: float


def initial_state(ledger: GainLedger) -> SupervisorState:
    """Zoom-out state at time zero."""
    st = SupervisorState(phase=ZOOM_OUT, mu=1.0, j=1, i=1, t1_star=None,
                         mu_star=None, tau=ledger.tau, mu0=ledger.mu0,
                         T=ledger.T, Omega=ledger.Omega, L=ledger.L)
    return replace(st, mu=_zoom_out_mu(st, 1))


def _zoom_out_mu(s: SupervisorState, j: int) -> float:
    return 2.0 * math.exp(2.0 * s.L * (j + 1) * s.tau) * s.mu0


def mu_at(s: SupervisorState, t: float) -> float:
    """Schedule value at time t (left-endpoint dwell convention).

    Before handover the dwell index is floor(t / tau) + 1; afterwards the
    frozen value contracts by Omega per completed window.
    """
    if t < 0.0:
        raise ValueError("time must be nonnegative")
    if s.t1_star is None or t < s.t1_star:
        j = int(math.floor(t / s.tau)) + 1
        return _zoom_out_mu(s, j)
    windows = int(math.floor((t - s.t1_star) / s.T))
    return s.mu_star * s.Omega ** windows


def trigger_state(qspec: QuantizerSpec, mu: float, X, u,
                  ledger: GainLedger) -> bool:
    """Handover test for state quantization, from quantized data only."""
    Xq, uq = quantize_state(qspec, mu, X, u)
    reported = float(np.linalg.norm(Xq)) + float(np.max(np.abs(uq)))
    return reported <= (ledger.MBar * ledger.M - ledger.Delta) * mu


def trigger_input(mu: float, X, u, ledger: GainLedger) -> bool:
    """Handover test for input quantization, from exact measurements."""
    norm = float(np.linalg.norm(np.atleast_1d(np.asarray(X, dtype=float))))
    norm += float(np.max(np.abs(np.asarray(u, dtype=float))))
    return norm <= (ledger.M * ledger.MBar / ledger.M5) * mu


def advance(s: SupervisorState, t: float, X, u, *, mode: str,
            qspec: Optional[QuantizerSpec], ledger: GainLedger
            ) -> tuple[SupervisorState, list[dict]]:
    """One supervisor step at time t; returns the new state and event records.

    mode is "state_q" or "input_q" and selects the trigger.  Must be called
    once per simulation step with nondecreasing t.
    """
    events: list[dict] = []
    if s.phase == ZOOM_OUT:
        j = int(math.floor(t / s.tau)) + 1
        mu = _zoom_out_mu(s, j)
        if mu != s.mu or j != s.j:
            events.append({"t": t, "kind": "mu_change", "mu_before": s.mu,
                           "mu_after": mu, "phase": ZOOM_OUT})
            s = replace(s, mu=mu, j=j)
        if mode == "state_q":
            fired = trigger_state(qspec, s.mu, X, u, ledger)
        elif mode == "input_q":
            fired = trigger_input(s.mu, X, u, ledger)
        else:
            raise ValueError(f"unsupported supervisor mode {mode!r}")
        if fired:
            events.append({"t": t, "kind": "phase_change", "mu_before": s.mu,
                           "mu_after": s.mu, "phase": ZOOM_IN})
            s = replace(s, phase=ZOOM_IN, t1_star=t, mu_star=s.mu, i=1)
        return s, events

    # zoom in: contract mu on window boundaries
    i = int(math.floor((t - s.t1_star) / s.T)) + 1
    if i != s.i:
        mu = s.mu_star * s.Omega ** (i - 1)
        events.append({"t": t, "kind": "mu_change", "mu_before": s.mu,
                       "mu_after": mu, "phase": ZOOM_IN})
        s = replace(s, mu=mu, i=i)
    return s, events
