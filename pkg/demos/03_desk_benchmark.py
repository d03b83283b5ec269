"""
A desk-scale progressive benchmark
==================================

Train every model on the first 2000 events of a synthetic trending book, then
forecast the next 500 mid-prices one at a time, learning from each event only
after its forecast has been scored.
"""

from optmlstm.lob import generate_synthetic
from optmlstm.models import ModelSpec
from optmlstm.protocol import ProtocolConfig, benchmark_matrix

stream = generate_synthetic(2500, "trend", seed=0, drift=1.0, noise_std=2.0)
cfg = ProtocolConfig(train_sizes=[2000], test_len=500, regime="short", epochs=2)
specs = [ModelSpec(kind=k, units=4) for k in ("optm_lstm", "lstm", "gru", "persistence", "naive")]

reports, table = benchmark_matrix(cfg, specs, stream, jobs=1)
print(table)

###############################################################################
# Which of its six components did the optimum-output cell end up using?

optm = next(r for r in reports if r.model == "optm_lstm")
for name, freq in sorted(optm.selection_freq.items(), key=lambda kv: -kv[1]):
    print(f"{name:<8} {freq:6.1%}")
