"""
The command-line workflow
=========================

The same steps through the ``iitr`` command: fit a policy from a CSV file,
evaluate it, and draw the value curve. Everything is written to a scratch
directory.
"""

import csv
import json
import subprocess
import sys
import tempfile
from pathlib import Path

from iitr.sim import DGPConfig, generate

work = Path(tempfile.mkdtemp())
data, _ = generate(DGPConfig(n=800, p=6, seed=2))
with open(work / "trial.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(list(data.names) + ["a", "y"])
    for x, a, y in zip(data.covariates, data.treatment, data.outcome):
        w.writerow([f"{v:.6f}" for v in x] + [a, f"{y:.6f}"])

# Keep x6 out of the policy; it still informs the nuisance models.
(work / "config.toml").write_text("""
[data]
outcome = "y"
treatment = "a"

[pipeline]
n_lambda = 8
prune_frac = 0.01
exclude = ["x6"]
""")


def iitr(*args):
    cmd = [sys.executable, "-m", "iitr", *args]
    return subprocess.run(cmd, check=True, capture_output=True, text=True).stdout


iitr("fit", "--data", str(work / "trial.csv"), "--config", str(work / "config.toml"),
     "--out", str(work / "fit"))
print(json.loads((work / "fit" / "policy.json").read_text())["selected"])

print(iitr("evaluate", "--data", str(work / "trial.csv"), "--policy",
           str(work / "fit" / "policy.json")))

iitr("complementary", "--data", str(work / "trial.csv"), "--policy",
     str(work / "fit" / "policy.json"), "--config", str(work / "config.toml"),
     "--out", str(work / "curve"))
print((work / "curve" / "value_curve.csv").read_text())
