"""
Inside one optimum-output LSTM step
===================================

A plain LSTM step produces six vectors: forget, input and output gates, the
candidate, the cell state and the hidden output. The optimum-output cell
keeps all six, learns how well each one tracks the current mid-price, and
hands the best of them to the next layer.
"""

import numpy as np

from optmlstm.cells import COMPONENTS, LstmWeights, RepoConfig, optm_forward
from optmlstm.lob import fit_normalizer, generate_synthetic

# a short trending book, z-scored on its own first 200 events
stream = generate_synthetic(400, "trend", seed=1)
norm = fit_normalizer("zscore", stream[:200])

rng = np.random.default_rng(0)
U = 4
w = LstmWeights.init(U, 40, rng)

###############################################################################
# Walk the stream one event at a time. The importance vector theta is carried
# from event to event, so its estimate sharpens as more events arrive.

h, c, theta = np.zeros(U), np.zeros(U), None
cfg = RepoConfig(alpha=1e-2, iters=10)
picked = []
for e in stream[:200]:
    out = optm_forward(w, norm.apply(e), h, c, norm.label(e.mid), cfg, theta)
    h, c, theta = out.state.h, out.c_next, out.theta_next
    picked.append(out.repo.selected_name)

print("average importance per component after 200 events:")
for name, a in zip(COMPONENTS, out.repo.ai):
    print(f"  {name:<8} {a:+.4f}")
print("selected now:", out.repo.selected_name)

###############################################################################
# The hidden output handed on is literally one of the stored vectors, and the
# cell state passes through untouched.

assert out.h_new.tobytes() == out.state.component(out.repo.selected).tobytes()
assert out.c_next is out.state.c

counts = {k: picked.count(k) for k in COMPONENTS}
print("selection counts:", counts)
