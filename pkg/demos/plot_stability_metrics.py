"""
Two ways to measure how much a retrained model wobbles
======================================================

A model that is retrained B times gives B risk estimates for the same
person. We summarize that spread in two ways: the width of the central
95% of the estimates, and how often two runs disagree about the action
taken at a decision threshold.
"""

import numpy as np

from riskstab.metrics import decision, edfr, edfr_max, epiw

###############################################################################
# One person, five retrainings
# ----------------------------
# Four runs put this person just under the threshold and one just above.

tau = 0.53
risks = np.array([0.50, 0.51, 0.52, 0.52, 0.55])
print("decisions:", decision(risks, tau))
print("interval width:", round(float(epiw(risks)), 4))

###############################################################################
# Of the 10 pairs of runs, the 4 that pair the odd run with another
# disagree, so the flip rate is 0.4.

print("flip rate:", edfr(risks, tau))
print("largest possible with B=5:", edfr_max(5))

###############################################################################
# Width and flips measure different things
# ----------------------------------------
# A wide spread far from the threshold flips nothing, while a narrow
# spread straddling it flips a lot.

far = np.array([0.05, 0.10, 0.20, 0.25, 0.30])
near = np.array([0.525, 0.528, 0.531, 0.534, 0.529])
for name, row in (("far from tau", far), ("straddling tau", near)):
    print(f"{name:15s} width={epiw(row):.3f} flips={edfr(row, tau):.2f}")

###############################################################################
# Whole matrices
# --------------
# Both functions accept an n x B matrix and work row by row.

rng = np.random.default_rng(0)
matrix = np.clip(rng.normal(0.5, 0.05, size=(4, 20)), 0, 1)
print(np.round(epiw(matrix), 3))
print(np.round(edfr(matrix, tau), 3))
