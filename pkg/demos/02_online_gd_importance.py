"""
Fitting the importance vector
=============================

The repository regression is a single equation r . theta = y, refitted with a
handful of gradient steps per event. Each step shrinks the error by the
factor 1 - 2 alpha |r|^2, so any alpha up to 1/|r|^2 never makes it worse.
"""

import numpy as np

from optmlstm.cells import average_importance, online_gd, select_component

rng = np.random.default_rng(3)
r = rng.uniform(-1, 1, 24)
y = 0.7

for scale in (0.1, 0.5, 1.0):
    alpha = scale / (r @ r)
    theta, errs = online_gd(r, y, np.zeros(24), alpha, 8, trace=True)
    print(f"alpha = {scale:.1f}/|r|^2  errors:", " ".join(f"{abs(e):.2e}" for e in errs))

###############################################################################
# Run long enough and gradient descent from zero lands on the minimum-norm
# solution, the same one least squares returns.

theta = online_gd(r, y, np.zeros(24), 0.4 / (r @ r), 1000)
ls, *_ = np.linalg.lstsq(r[None, :], [y], rcond=None)
print("max |theta - lstsq| =", np.abs(theta - ls).max())

###############################################################################
# Averaging each four-wide block gives one score per component; the highest
# wins, ties going to the earliest component.

ai = average_importance(theta, 4)
print("block averages:", np.round(ai, 4), "-> component", select_component(ai))
