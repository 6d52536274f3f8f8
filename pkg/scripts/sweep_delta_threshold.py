"""Sweep the quantizer error bound across its admissible threshold.

For the worked design the range/error condition flips at
Delta/M ~ 6.0e-6; runs below the threshold converge while runs above lose
the guarantee.  Writes the aggregated sweep CSV and prints it.

Usage: python scripts/sweep_delta_threshold.py [--out OUT_DIR]
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

try:
    import qplab  # noqa: F401
except ImportError:
    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from qplab.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/delta_sweep")
    args = parser.parse_args()

    sweep = {
        "base": {
            "plant": "linear", "feedback": "default",
            "design": {"lambda": 8.0, "eps": 0.1, "nu": 0.1, "delta": 0.05,
                       "M": 10.0, "Delta": 5e-5, "mu0": 1.0, "tau": 1.0},
            "grid_n": 50, "t_end": 20.0, "x0": [0.9],
            "u0": {"kind": "constant", "value": 0.5},
            "mode": "state_q", "seed": 0, "snapshot_stride": 20,
        },
        "grid": {"Delta": [1e-6, 1e-5, 5e-5, 1e-4, 5e-4]},
    }
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(sweep, fh)
        cfg_path = fh.name
    rc = cli_main(["sweep", "--config", cfg_path, "--out", args.out])
    print()
    print(Path(args.out, "sweep.csv").read_text())
    return rc


if __name__ == "__main__":
    sys.exit(main())
