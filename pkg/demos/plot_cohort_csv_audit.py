"""
Auditing a tabular cohort from the command line
===============================================

An observational cohort with a rare outcome is audited end to end with
the ``riskstab`` command: train, predict, report, then compare two model
families. With no true risk available, results are binned by each
person's developed risk, the mean prediction across runs.

The cohort here is synthetic so the script runs anywhere.
"""

import csv
import json
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

work = Path(tempfile.mkdtemp(prefix="riskstab_demo_"))
rng = np.random.default_rng(3)

###############################################################################
# Write a cohort
# --------------
# Five covariates and about 7% mortality.

n = 3000
x = rng.normal(size=(n, 5))
logit = -3.0 + 0.9 * x[:, 0] + 0.6 * x[:, 1] - 0.4 * x[:, 2]
death = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(int)
with open(work / "cohort.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["pid", "age", "sbp", "hr", "killip", "bmi", "death"])
    for i in range(n):
        w.writerow([i + 1, *map(repr, x[i].tolist()), death[i]])
print(f"{n} patients, mortality {death.mean():.3f}")

###############################################################################
# Describe the audit
# ------------------
# The threshold of 0.07 reflects a treatment decision at low absolute risk.

(work / "audit.cfg").write_text(f"""\
harness.master_seed = 11
harness.B = 20
harness.n_train = 1500
harness.modes = resample_train
data.source = csv
data.csv_path = {work / 'cohort.csv'}
data.feature_columns = age, sbp, hr, killip, bmi
data.label_column = death
data.id_column = pid
data.n_test = 1000
model.presets = Log-LBFGS, NN-1L
metrics.tau = 0.07
""")


def riskstab(*args):
    cmd = [sys.executable, "-m", "riskstab.cli", *map(str, args)]
    done = subprocess.run(cmd, capture_output=True, text=True)
    print("$ riskstab", *args[:2], "->", done.returncode)
    if done.stderr:
        print(done.stderr.strip())
    return done


riskstab("campaign", work / "audit.cfg", "--out", work / "out")

###############################################################################
# Read one report
# ---------------

rep = work / "out" / "runs" / "NN-1L__resample_train__n1500" / "report"
summary = json.loads((rep / "summary.json").read_text())
print("binned by", summary["stability"]["bin_by"], "| runs kept", summary["runs_retained"], "of", summary["runs_total"])
print((rep / "binned_edfr.csv").read_text())

###############################################################################
# Compare the two families
# ------------------------
# ``most_stable`` names the model with the smaller mean in each bin.

reports = [work / "out" / "runs" / f"{p}__resample_train__n1500" / "report" for p in ("Log-LBFGS", "NN-1L")]
riskstab("compare", *reports, "--out", work / "compare")
print((work / "compare" / "compare_epiw.csv").read_text())
print("outputs under", work)
