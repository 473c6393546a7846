"""From sweep CSV to figure, via the command-line tools.

The simulator and the plotter only meet through the metrics CSV schema:
`fedlora sweep` writes it, `fedplot` reads it. This demo shells out to both
(install the plotter first: `pip install -e plotter/`).

    python demos/07_figures.py
"""

import subprocess
import sys
import tempfile
from pathlib import Path

workdir = Path(tempfile.mkdtemp(prefix="fedlora-demo-"))
sweep_csv = workdir / "rank_sweep.csv"

subprocess.run(
    [
        sys.executable, "-m", "fedlora.cli", "sweep",
        "--axis", "rank", "--values", "4,16,64",
        "--rounds", "10", "--n-samples", "256", "--val-samples", "64",
        "--out", str(sweep_csv),
    ],
    check=True,
)

for kind in ("convergence", "gradnorm", "activations"):
    out = workdir / f"{kind}.png"
    subprocess.run(
        [
            sys.executable, "-m", "fedplot.cli",
            "--kind", kind, "--csv", str(sweep_csv), "--out", str(out),
        ],
        check=True,
    )
    print(f"wrote {out}")

print(f"\nsweep CSV and figures are in {workdir}")
