"""The command-line pipeline end to end on a small scene.

Equivalent shell session::

    subpixel synth --out run --rows 40 --cols 40
    subpixel train --out run --sample-count 1200 --epochs 20
    subpixel predict --out run
    subpixel evaluate --out run
    subpixel baseline rf --out run --sample-count 1200
    subpixel assess-reference --out run
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path


def cli(*args):
    cmd = [sys.executable, "-m", "subpixel.cli", *map(str, args)]
    print("$", "subpixel", *map(str, args))
    subprocess.run(cmd, check=True, stdout=subprocess.DEVNULL)


out = Path(tempfile.mkdtemp(prefix="subpixel-"))
common = ["--out", out, "--seed", 0, "--deterministic"]
cli("synth", *common, "--rows", 40, "--cols", 40)
cli("train", *common, "--sample-count", 1200, "--epochs", 20)
cli("predict", *common)
cli("evaluate", *common)
cli("baseline", "rf", *common, "--sample-count", 1200, "--n-trees", 30)
cli("assess-reference", *common)

report = json.loads((out / "evaluate.json").read_text())
for scale in ("scene_1x1", "scene_3x3", "test_1x1"):
    c = report["metrics"][scale]["classes"]
    print(f"{scale:<10} MAE% built-up {c['built-up']['mae_pct']:.2f}, vegetation {c['vegetation']['mae_pct']:.2f}")
rf = json.loads((out / "baseline_rf.json").read_text())
print("RF feature width", rf["feature_width"], "OOB", round(rf["oob_score"], 4))
print("reference kappa", round(json.loads((out / "assess_reference.json").read_text())["kappa"], 4))
print("artifacts in", out)
