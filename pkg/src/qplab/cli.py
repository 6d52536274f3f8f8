"""Command-line front end: gains, simulate, verify, sweep.

File formats
------------
* scenario config: JSON or TOML mirroring ``ScenarioConfig`` field names
  (design parameters under ``design``, with ``lambda`` spelled out);
* trace CSV: header ``t,X_1..X_n,u_sup,U,mu,phase,norm,w_sup,d``, one row per
  step, floats printed with 17 significant digits so reruns round-trip;
* snapshots CSV: ``t,u_0..u_N`` rows at the snapshot stride;
* events / ledger / report: flat JSON documents;
* manifest: resolved config plus a SHA-256 of every output file.

Exit codes: 0 success, 1 usage or config error, 2 condition/check failure,
3 numerical blowup (with the partial trace flushed).  ``QPL_THREADS`` caps
sweep parallelism.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import itertools
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InvalidDelta, NonFiniteError, QplabError
from .gains import DesignParams, GainLedger, compute_gains
from .sim import ScenarioConfig, SimTrace, resolve_plant, run
from .verify import run_checks

__all__ = ["main", "write_outputs", "load_trace_dir", "load_config"]


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def load_config(path) -> dict:
    """Read a JSON or TOML config; a manifest is unwrapped to its config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if isinstance(data, dict) and "config" in data and "outputs" in data:
        data = data["config"]  # manifest reuse
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a table/object: {path}")
    return data


def trace_csv_text(trace: SimTrace) -> str:
    n = trace.X.shape[1]
    cols = ["t"] + [f"X_{i + 1}" for i in range(n)] + \
        ["u_sup", "U", "mu", "phase", "norm", "w_sup", "d"]
    lines = [",".join(cols)]
    for k in range(len(trace)):
        row = [_fmt(trace.t[k])]
        row += [_fmt(v) for v in trace.X[k]]
        row += [_fmt(trace.u_sup[k]), _fmt(trace.U[k]), _fmt(trace.mu[k]),
                str(trace.phase[k]), _fmt(trace.norm[k]), _fmt(trace.w_sup[k]),
                _fmt(trace.d[k])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def snapshots_csv_text(trace: SimTrace) -> str:
    N = trace.grid_n
    lines = [",".join(["t"] + [f"u_{i}" for i in range(N + 1)])]
    for j, idx in enumerate(trace.snap_idx):
        lines.append(",".join([_fmt(trace.t[idx])] + [_fmt(v) for v in trace.snap_u[j]]))
    return "\n".join(lines) + "\n"


def events_json_text(trace: SimTrace) -> str:
    doc = {"mode": trace.mode, "t1_star": trace.t1_star, "mu_star": trace.mu_star,
           "events": trace.events}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_outputs(trace: SimTrace, out_dir, extra_note: str = "") -> dict:
    """Write trace/snapshots/events/ledger plus a manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "trace.csv": trace_csv_text(trace),
        "snapshots.csv": snapshots_csv_text(trace),
        "events.json": events_json_text(trace),
    }
    if trace.ledger is not None:
        files["ledger.json"] = trace.ledger.to_json() + "\n"
    for name, text in files.items():
        _atomic_write(out / name, text)
    manifest = {
        "tool": "qplab",
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "note": extra_note,
        "config": trace.config.to_dict() if trace.config is not None else None,
        "outputs": {name: _sha256(out / name) for name in files},
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _read_csv_columns(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise ConfigError(f"missing file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"empty file: {path}") from None
        rows = []
        for row in reader:
            if len(row) != len(header):
                raise ConfigError(f"malformed row in {path}: expected "
                                  f"{len(header)} fields, got {len(row)}")
            rows.append(row)
    return header, rows


def load_trace_dir(trace_dir) -> SimTrace:
    """Rebuild a SimTrace from a simulate output directory."""
    d = Path(trace_dir)
    manifest_path = d / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"missing manifest.json in {d}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("config") is None:
        raise ConfigError("manifest carries no config; cannot rebuild the trace")
    config = ScenarioConfig.from_dict(manifest["config"])
    plant, fb = resolve_plant(config.plant, config.feedback)
    ledger_path = d / "ledger.json"
    ledger = GainLedger.from_json(ledger_path.read_text()) if ledger_path.exists() else None

    header, rows = _read_csv_columns(d / "trace.csv")
    n = plant.n
    expected = 1 + n + 7
    if len(header) != expected:
        raise ConfigError(f"trace.csv header has {len(header)} columns, expected {expected}")
    dt = plant.D / config.grid_n
    expected_rows = int(round(config.t_end / dt)) + 1
    if len(rows) != expected_rows:
        raise ConfigError(f"trace.csv is truncated: {len(rows)} rows, expected {expected_rows}")
    data = np.array([[float(v) for v in row[:1 + n]] + [float(v) for v in row[1 + n:1 + n + 3]]
                     + [float(row[1 + n + 4]), float(row[1 + n + 5]), float(row[1 + n + 6])]
                     for row in rows])
    phase = np.array([row[1 + n + 3] for row in rows], dtype="<U8")

    sh, srows = _read_csv_columns(d / "snapshots.csv")
    if len(sh) != config.grid_n + 2:
        raise ConfigError("snapshots.csv header does not match the grid size")
    snap_t = np.array([float(r[0]) for r in srows])
    snap_u = np.array([[float(v) for v in r[1:]] for r in srows]) \
        if srows else np.empty((0, config.grid_n + 1))
    snap_idx = np.array([int(round(t / dt)) for t in snap_t], dtype=int)

    events_doc = json.loads((d / "events.json").read_text())
    t = data[:, 0]
    X = data[:, 1:1 + n]
    return SimTrace(t=t, X=X, u_sup=data[:, 1 + n], norm=data[:, 1 + n + 3],
                    x_norm=np.linalg.norm(X, axis=1), U=data[:, 1 + n + 1],
                    mu=data[:, 1 + n + 2], phase=phase, w_sup=data[:, 1 + n + 4],
                    d=data[:, 1 + n + 5], events=events_doc.get("events", []),
                    snap_idx=snap_idx, snap_u=snap_u,
                    t1_star=events_doc.get("t1_star"), mu_star=events_doc.get("mu_star"),
                    mode=config.mode, dt=dt, grid_n=config.grid_n, config=config,
                    ledger=ledger, plant=plant, fb=fb)


def _scenario_from_args(args) -> ScenarioConfig:
    data = load_config(args.config)
    if args.mode:
        data["mode"] = args.mode
    if args.grid_n:
        data["grid_n"] = args.grid_n
    if args.seed is not None:
        data["seed"] = args.seed
    return ScenarioConfig.from_dict(data)


def cmd_gains(args) -> int:
    try:
        data = load_config(args.config)
        plant, fb = resolve_plant(data.get("plant", "linear"), data.get("feedback", "default"))
        design = DesignParams.from_dict(data["design"])
        ledger = compute_gains(plant, fb, design)
    except InvalidDelta as exc:
        print(f"InvalidDelta: {exc}", file=sys.stderr)
        return 1
    except (KeyError, TypeError, ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    _atomic_write(out / "ledger.json", ledger.to_json() + "\n")
    margins = ledger.margins()
    print(f"{'condition':<22} {'holds':<6} margin")
    for name, ok in ledger.flags().items():
        print(f"{name:<22} {str(ok):<6} {_fmt(margins[name])}")
    print(f"ledger written to {out / 'ledger.json'}")
    return 0 if ledger.all_ok() else 2


def cmd_simulate(args) -> int:
    try:
        config = _scenario_from_args(args)
    except (ConfigError, QplabError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        trace = run(config)
    except NonFiniteError as exc:
        print(f"numerical blowup: {exc}", file=sys.stderr)
        if exc.partial_trace is not None:
            write_outputs(exc.partial_trace, out, extra_note="partial trace after blowup")
            print(f"partial trace flushed to {out}", file=sys.stderr)
        return 3
    write_outputs(trace, out)
    print(f"simulated {config.mode} for {trace.t[-1]:.6g} time units "
          f"({len(trace)} steps), final norm {_fmt(trace.final_norm())}")
    print(f"outputs written to {out}")
    if args.refine:
        refined = dataclasses.replace(config, grid_n=2 * config.grid_n)
        rtrace = run(refined)
        write_outputs(rtrace, out / "refine_2n", extra_note="grid-refined rerun")
        rel = abs(rtrace.final_norm() - trace.final_norm()) / max(trace.final_norm(), 1e-300)
        print(f"refined rerun at N={refined.grid_n}: final norm "
              f"{_fmt(rtrace.final_norm())} (relative change {rel:.3g})")
    return 0


def cmd_verify(args) -> int:
    try:
        trace = load_trace_dir(args.trace_dir)
        ledger = trace.ledger
        if args.ledger:
            ledger = GainLedger.from_json(Path(args.ledger).read_text())
        if ledger is None:
            raise ConfigError("no ledger.json found next to the trace")
        report = run_checks(trace, ledger)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"cannot verify: {exc}", file=sys.stderr)
        return 1
    print(report.table())
    if args.out:
        _atomic_write(Path(args.out), report.to_json() + "\n")
        print(f"report written to {args.out}")
    return 0 if report.all_pass() else 2


_SWEEP_KEYS = ("Delta", "M", "mu0", "tau", "lambda", "grid_n", "x0_scale")


def _apply_overrides(base: dict, overrides: dict) -> dict:
    data = json.loads(json.dumps(base))  # deep copy
    design = data.get("design", {})
    for key, value in overrides.items():
        if key in ("Delta", "M", "mu0", "tau", "lambda"):
            design[key] = value
        elif key == "grid_n":
            data["grid_n"] = int(value)
        elif key == "x0_scale":
            data["x0"] = [v * value for v in data["x0"]]
        else:
            raise ConfigError(f"unsupported sweep key {key!r}")
    data["design"] = design
    return data


def _windows_to_convergence(trace: SimTrace, ledger: GainLedger) -> int:
    if trace.t1_star is None:
        return -1
    target = 1e-3 * trace.initial_norm()
    below = np.nonzero(trace.norm <= target)[0]
    if below.size == 0:
        return -1
    t_hit = trace.t[below[0]]
    return int(math.ceil(max(t_hit - trace.t1_star, 0.0) / ledger.T))


def _sweep_worker(payload: tuple[dict, dict]) -> dict:
    base, overrides = payload
    row = {k: overrides[k] for k in overrides}
    try:
        config = ScenarioConfig.from_dict(_apply_overrides(base, overrides))
        trace = run(config)
        ledger = trace.ledger
        from .verify import check_decay_envelope
        env = check_decay_envelope(trace, ledger)
        row.update(status="ok",
                   t1_star="" if trace.t1_star is None else _fmt(trace.t1_star),
                   windows_to_convergence=_windows_to_convergence(trace, ledger),
                   max_envelope_ratio="" if env.holds is None else _fmt(env.max_violation_ratio),
                   final_norm=_fmt(trace.final_norm()),
                   thm_ok=(ledger.thm1_ok if config.mode == "state_q" else ledger.thm2_ok))
    except QplabError as exc:
        row.update(status=f"error: {exc}", t1_star="", windows_to_convergence="",
                   max_envelope_ratio="", final_norm="", thm_ok="")
    return row


def cmd_sweep(args) -> int:
    try:
        data = load_config(args.config)
        base = data["base"]
        grid = data.get("grid", {})
        bad = [k for k in grid if k not in _SWEEP_KEYS]
        if bad:
            raise ConfigError(f"unsupported sweep keys {bad}; allowed: {_SWEEP_KEYS}")
        ScenarioConfig.from_dict(base)  # validate early
    except (KeyError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    keys = sorted(grid)
    combos = [dict(zip(keys, values))
              for values in itertools.product(*(grid[k] for k in keys))] if keys else []
    payloads = [(base, combo) for combo in combos]

    threads = int(os.environ.get("QPL_THREADS", "0")) or min(4, os.cpu_count() or 1)
    if threads > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_worker, payloads))
    else:
        rows = [_sweep_worker(p) for p in payloads]

    cols = ["run"] + keys + ["status", "t1_star", "windows_to_convergence",
                             "max_envelope_ratio", "final_norm", "thm_ok"]
    lines = [",".join(cols)]
    for i, row in enumerate(rows):
        record = [str(i)] + [_fmt(row[k]) if isinstance(row[k], float) else str(row[k])
                             for k in keys]
        record += [str(row["status"]), str(row["t1_star"]),
                   str(row["windows_to_convergence"]), str(row["max_envelope_ratio"]),
                   str(row["final_norm"]), str(row["thm_ok"])]
        lines.append(",".join(record))
    out = Path(args.out)
    _atomic_write(out / "sweep.csv", "\n".join(lines) + "\n")
    print(f"{len(rows)} runs -> {out / 'sweep.csv'}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qplab",
        description="switched quantized predictor feedback laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gains", help="compute the constant ledger and condition table")
    g.add_argument("--config", required=True)
    g.add_argument("--out", default="out")
    g.set_defaults(func=cmd_gains)

    s = sub.add_parser("simulate", help="run one scenario and write trace files")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="out")
    s.add_argument("--mode", choices=("state_q", "input_q", "nominal", "open_loop"))
    s.add_argument("--grid-n", type=int, dest="grid_n")
    s.add_argument("--seed", type=int)
    s.add_argument("--refine", action="store_true",
                   help="also rerun at twice the grid resolution")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="run envelope checks over a trace directory")
    v.add_argument("--trace-dir", required=True)
    v.add_argument("--ledger")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("sweep", help="run a parameter grid and aggregate summaries")
    w.add_argument("--config", required=True)
    w.add_argument("--out", default="out")
    w.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
