"""Fixed-step closed-loop simulation of the delayed plant.

The transport line is integrated exactly: the step size is locked to
``dt = D / N`` so advancing one step shifts the actuator grid by exactly one
cell toward the plant and fills the far boundary with the fresh input.  The
ODE state advances with classical RK4, with the inflow sample linearly
interpolated across the step (zero-order hold available behind a flag).
The controller is recomputed every step.

Modes:

* ``state_q``  -- zoom supervisor + feedback from the quantized-data predictor;
* ``input_q``  -- zoom supervisor + quantized nominal feedback from exact data;
* ``nominal``  -- delay-compensating feedback, no quantization;
* ``open_loop`` -- zero input.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, NonFiniteError
from .gains import DesignParams, GainLedger, compute_gains
from .model import ActuatorGrid, CompositeState, FeedbackSpec, PlantSpec, builtin_plants
from .predictor import kappa_along, predictor_exact, predictor_quantized
from .quantizer import QuantizerSpec, quantize_input
from .supervisor import ZOOM_IN, advance, initial_state

__all__ = ["ScenarioConfig", "SimTrace", "step", "run", "resolve_plant"]

MODES = ("state_q", "input_q", "nominal", "open_loop")


def resolve_plant(plant_ref, feedback_ref="default") -> tuple[PlantSpec, FeedbackSpec]:
    """Resolve catalog ids (or pass through explicit spec objects)."""
    if isinstance(plant_ref, PlantSpec):
        if not isinstance(feedback_ref, FeedbackSpec):
            raise ConfigError("inline plant needs an inline feedback spec")
        return plant_ref, feedback_ref
    catalog = builtin_plants()
    if plant_ref not in catalog:
        raise ConfigError(f"unknown plant id {plant_ref!r}; known: {sorted(catalog)}")
    plant, fb = catalog[plant_ref]
    if isinstance(feedback_ref, FeedbackSpec):
        return plant, feedback_ref
    if feedback_ref in (None, "default", plant_ref):
        return plant, fb
    raise ConfigError(f"unknown feedback id {feedback_ref!r} for plant {plant_ref!r}")


def _normalize_u0(u0, D: float) -> dict:
    if isinstance(u0, dict):
        kind = u0.get("kind")
        if kind == "constant":
            return {"kind": "constant", "value": float(u0["value"])}
        if kind == "samples":
            return {"kind": "samples", "values": [float(v) for v in u0["values"]]}
        if kind == "segments":
            return {"kind": "segments",
                    "segments": [[float(a), float(b)] for a, b in u0["segments"]]}
        raise ConfigError(f"unknown u0 kind {kind!r}")
    if isinstance(u0, (int, float)):
        return {"kind": "constant", "value": float(u0)}
    if isinstance(u0, ActuatorGrid):
        return {"kind": "samples", "values": [float(v) for v in u0.values]}
    seq = list(u0)
    if seq and isinstance(seq[0], (tuple, list)) and len(seq[0]) == 2:
        return {"kind": "segments", "segments": [[float(a), float(b)] for a, b in seq]}
    return {"kind": "samples", "values": [float(v) for v in seq]}


def _u0_grid(spec: dict, D: float, N: int) -> ActuatorGrid:
    kind = spec["kind"]
    if kind == "constant":
        return ActuatorGrid.constant(spec["value"], N)
    if kind == "samples":
        vals = spec["values"]
        if len(vals) != N + 1:
            raise ConfigError(f"u0 samples must have N+1={N + 1} entries, got {len(vals)}")
        return ActuatorGrid.from_samples(vals)
    return ActuatorGrid.from_segments([tuple(p) for p in spec["segments"]], D, N)


@dataclass(frozen=True)
class ScenarioConfig:
    """One closed-loop scenario.

    ``plant`` / ``feedback`` are catalog ids (or inline spec objects, which
    then cannot be serialized).  ``M_hat`` defaults to a quarter of the
    per-coordinate error budget; ``staircase=True`` selects the
    discontinuous quantizer variant.  ``snapshot_stride`` controls how often
    full actuator snapshots are kept (event steps and the final step are
    always kept); ``diag_stride > 0`` additionally records the transformed
    actuator norm and the controller mismatch every that many steps.
    """

    plant: Union[str, PlantSpec]
    design: DesignParams
    grid_n: int
    t_end: float
    x0: tuple
    u0: dict
    mode: str
    feedback: Union[str, FeedbackSpec] = "default"
    M_hat: Optional[float] = None
    rho: float = 0.25
    staircase: bool = False
    zoh: bool = False
    seed: int = 0
    snapshot_stride: int = 10
    diag_stride: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.grid_n < 10:
            raise ConfigError("grid_n must be at least 10")
        if not (self.t_end > 0.0):
            raise ConfigError("t_end must be positive")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be >= 1")
        if self.diag_stride < 0:
            raise ConfigError("diag_stride must be >= 0")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        plant, _ = resolve_plant(self.plant, self.feedback)
        object.__setattr__(self, "u0", _normalize_u0(self.u0, plant.D))
        if len(self.x0) != plant.n:
            raise ConfigError(f"x0 has {len(self.x0)} entries, plant has n={plant.n}")

    def quantizer_spec(self, n: int) -> QuantizerSpec:
        m_hat = self.M_hat
        if m_hat is None:
            m_hat = self.design.Delta / (4.0 * np.sqrt(n))
        return QuantizerSpec(M=self.design.M, Delta=self.design.Delta,
                             M_hat=float(m_hat), rho=self.rho,
                             ramped=not self.staircase)

    def to_dict(self) -> dict:
        if not isinstance(self.plant, str) or not isinstance(self.feedback, (str, type(None))):
            raise ConfigError("only catalog-id configs can be serialized")
        return {
            "plant": self.plant,
            "feedback": self.feedback,
            "design": self.design.to_dict(),
            "M_hat": self.M_hat,
            "rho": self.rho,
            "staircase": self.staircase,
            "zoh": self.zoh,
            "grid_n": self.grid_n,
            "t_end": self.t_end,
            "x0": list(self.x0),
            "u0": self.u0,
            "mode": self.mode,
            "seed": self.seed,
            "snapshot_stride": self.snapshot_stride,
            "diag_stride": self.diag_stride,
        }

    @staticmethod
    def from_dict(d: dict) -> "ScenarioConfig":
        d = dict(d)
        try:
            design = DesignParams.from_dict(d.pop("design"))
            return ScenarioConfig(design=design, **d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scenario config: {exc}") from exc


@dataclass
class SimTrace:
    """Per-step record of a simulation run plus sparse actuator snapshots."""

    t: np.ndarray
    X: np.ndarray
    u_sup: np.ndarray
    x_norm: np.ndarray
    norm: np.ndarray
    U: np.ndarray
    mu: np.ndarray
    phase: np.ndarray
    w_sup: np.ndarray
    d: np.ndarray
    events: list
    snap_idx: np.ndarray
    snap_u: np.ndarray
    t1_star: Optional[float]
    mu_star: Optional[float]
    mode: str
    dt: float
    grid_n: int
    config: Optional[ScenarioConfig] = None
    ledger: Optional[GainLedger] = None
    plant: Optional[PlantSpec] = None
    fb: Optional[FeedbackSpec] = None

    def __len__(self) -> int:
        return self.t.shape[0]

    def initial_norm(self) -> float:
        return float(self.norm[0])

    def final_norm(self) -> float:
        return float(self.norm[-1])

    def snapshot_times(self) -> np.ndarray:
        return self.t[self.snap_idx]


def _rk4(f, X: np.ndarray, u_now: float, u_next: float, dt: float,
         zoh: bool) -> np.ndarray:
    if zoh:
        u_mid = u_end = u_now
    else:
        u_mid = 0.5 * (u_now + u_next)
        u_end = u_next
    k1 = np.asarray(f(X, u_now), dtype=float)
    k2 = np.asarray(f(X + 0.5 * dt * k1, u_mid), dtype=float)
    k3 = np.asarray(f(X + 0.5 * dt * k2, u_mid), dtype=float)
    k4 = np.asarray(f(X + dt * k3, u_end), dtype=float)
    return X + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(plant: PlantSpec, U_now: float, state: CompositeState,
         zoh: bool = False) -> CompositeState:
    """Advance one transport cell: RK4 on the ODE, exact shift on the grid."""
    u = state.u.values
    dt = plant.D / state.u.n_cells
    X1 = _rk4(plant.f, state.X, float(u[0]), float(u[1]), dt, zoh)
    if not (np.all(np.isfinite(X1)) and np.isfinite(U_now)):
        raise NonFiniteError("state overflow during step")
    u1 = np.empty_like(u)
    u1[:-1] = u[1:]
    u1[-1] = U_now
    return CompositeState(X=X1, u=ActuatorGrid(u1), t=state.t + dt)


def run(config: ScenarioConfig) -> SimTrace:
    """Run one scenario; raises NonFiniteError (with partial trace) on blowup."""
    plant, fb = resolve_plant(config.plant, config.feedback)
    ledger = compute_gains(plant, fb, config.design)
    mode = config.mode
    supervised = mode in ("state_q", "input_q")
    if supervised:
        if not (np.isfinite(ledger.T) and ledger.T > 0.0):
            raise ConfigError(
                "zoom-in window length is not positive; the quantizer "
                "error/range ratio is too large for any schedule")
        flag = ledger.thm1_ok if mode == "state_q" else ledger.thm2_ok
        if not flag:
            warnings.warn(
                f"{mode} run with failing range/error condition "
                f"(Delta/M = {ledger.Delta / ledger.M:.3g}); envelope not guaranteed",
                stacklevel=2)

    N = config.grid_n
    dt = plant.D / N
    steps = max(1, int(round(config.t_end / dt)))
    S = steps + 1
    qspec = config.quantizer_spec(plant.n)

    X = np.array(config.x0, dtype=float)
    u = _u0_grid(config.u0, plant.D, N).values.copy()
    sup = initial_state(ledger) if supervised else None

    t_arr = np.arange(S) * dt
    X_arr = np.empty((S, plant.n))
    u_sup = np.empty(S)
    x_norm = np.empty(S)
    norm = np.empty(S)
    U_arr = np.zeros(S)
    mu_arr = np.full(S, np.nan)
    phase_arr = np.full(S, "none", dtype="<U8")
    w_sup = np.full(S, np.nan)
    d_arr = np.full(S, np.nan)
    events: list[dict] = []
    snap_rows: list[int] = []
    snap_data: list[np.ndarray] = []

    def partial(k: int) -> SimTrace:
        sl = slice(0, k)
        return SimTrace(t=t_arr[sl], X=X_arr[sl], u_sup=u_sup[sl], x_norm=x_norm[sl],
                        norm=norm[sl], U=U_arr[sl], mu=mu_arr[sl], phase=phase_arr[sl],
                        w_sup=w_sup[sl], d=d_arr[sl], events=events,
                        snap_idx=np.array([i for i in snap_rows if i < k], dtype=int),
                        snap_u=np.array([snap_data[j] for j, i in enumerate(snap_rows) if i < k])
                        if snap_rows else np.empty((0, N + 1)),
                        t1_star=sup.t1_star if sup else None,
                        mu_star=sup.mu_star if sup else None,
                        mode=mode, dt=dt, grid_n=N, config=config, ledger=ledger,
                        plant=plant, fb=fb)

    for k in range(S):
        t = k * dt
        if k > 0:
            # advance the ODE over [t_{k-1}, t_k], then shift the transport
            # line one cell; the boundary sample is written below once the
            # control value at t_k is known (the predictor seeing the stale
            # boundary sample perturbs it only through the trapezoid endpoint
            # weight, a second-order effect)
            X = _rk4(plant.f, X, float(u[0]), float(u[1]), dt, config.zoh)
            if not np.all(np.isfinite(X)):
                raise NonFiniteError("state overflow", partial_trace=partial(k))
            u[:-1] = u[1:]

        U_k = 0.0
        p_grid = None
        step_events: list[dict] = []
        if supervised:
            sup, step_events = advance(sup, t, X, u, mode=mode, qspec=qspec,
                                       ledger=ledger)
            events.extend(step_events)
            mu_arr[k] = sup.mu
            phase_arr[k] = sup.phase
            if sup.phase == ZOOM_IN:
                if mode == "state_q":
                    pq = predictor_quantized(plant, qspec, sup.mu, X, u)
                    U_k = float(fb.kappa(pq[-1]))
                else:
                    p_grid = predictor_exact(plant, X, u)
                    U_k = quantize_input(qspec, sup.mu, float(fb.kappa(p_grid[-1])))
        elif mode == "nominal":
            p_grid = predictor_exact(plant, X, u)
            U_k = float(fb.kappa(p_grid[-1]))

        if not np.isfinite(U_k):
            raise NonFiniteError("control output overflow", partial_trace=partial(k))
        if k > 0:
            u[-1] = U_k

        X_arr[k] = X
        u_sup[k] = np.max(np.abs(u))
        x_norm[k] = np.linalg.norm(X)
        norm[k] = x_norm[k] + u_sup[k]
        U_arr[k] = U_k
        if not np.isfinite(norm[k]):
            raise NonFiniteError("state norm overflow", partial_trace=partial(k))

        if config.diag_stride and k % config.diag_stride == 0:
            if p_grid is None:
                p_grid = predictor_exact(plant, X, u)
            w_sup[k] = np.max(np.abs(u - kappa_along(fb, p_grid)))
            if supervised and sup.phase == ZOOM_IN:
                nominal = float(fb.kappa(p_grid[-1]))
                d_arr[k] = (U_k - nominal) if mode == "state_q" else (nominal - U_k)

        if k % config.snapshot_stride == 0 or step_events or k == S - 1:
            snap_rows.append(k)
            snap_data.append(u.copy())

    return SimTrace(t=t_arr, X=X_arr, u_sup=u_sup, x_norm=x_norm, norm=norm,
                    U=U_arr, mu=mu_arr, phase=phase_arr, w_sup=w_sup, d=d_arr,
                    events=events, snap_idx=np.array(snap_rows, dtype=int),
                    snap_u=np.array(snap_data), t1_star=sup.t1_star if sup else None,
                    mu_star=sup.mu_star if sup else None, mode=mode, dt=dt,
                    grid_n=N, config=config, ledger=ledger, plant=plant, fb=fb)
