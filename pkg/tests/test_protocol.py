import json

import numpy as np
import numpy.testing as npt
import pytest

from optmlstm.errors import ConfigError
from optmlstm.lob import LEVELS, LobEvent, LobStream, generate_synthetic
from optmlstm.models import ModelSpec, PersistenceModel
from optmlstm.protocol import (
    ProtocolConfig,
    benchmark_matrix,
    early_stop,
    ranked_table,
    run_scenario,
    write_results,
)


def event(mid, vol=10):
    k = np.arange(LEVELS)
    return LobEvent(mid + 1 + k, np.full(LEVELS, vol), mid - 1 - k, np.full(LEVELS, vol))


def mid_stream(mids):
    return LobStream.from_events([event(m) for m in mids])


def persistence_mse_oracle(mids, N, K):
    # forecast m[N+k] with m[N-1+k]
    m = np.asarray(mids, dtype=np.float64)
    return float(np.mean((m[N - 1:N - 1 + K] - m[N:N + K]) ** 2))


def test_hand_case_two_thirds():
    cfg = ProtocolConfig(train_sizes=[1], test_len=3, normalization="raw")
    rep = run_scenario(cfg, ModelSpec(kind="persistence"), mid_stream([1, 2, 2, 3]))
    assert rep.ok
    assert rep.test_mse == 2 / 3
    npt.assert_array_equal(rep.test_errors, [1.0, 0.0, 1.0])


def test_random_streams_match_oracle():
    rng = np.random.default_rng(11)
    for _ in range(10):
        mids = 1000 + np.cumsum(rng.integers(-3, 4, 60))
        N, K = int(rng.integers(1, 30)), int(rng.integers(1, 30))
        cfg = ProtocolConfig(train_sizes=[N], test_len=K, normalization="raw")
        rep = run_scenario(cfg, ModelSpec(kind="persistence"), mid_stream(mids))
        assert rep.test_mse == persistence_mse_oracle(mids, N, K)


def test_constant_stream_scores_zero():
    cfg = ProtocolConfig(train_sizes=[5], test_len=5, normalization="raw")
    for kind in ("persistence", "naive"):
        assert run_scenario(cfg, ModelSpec(kind=kind), mid_stream([50] * 10)).test_mse == 0.0


def test_stream_too_short():
    cfg = ProtocolConfig(train_sizes=[3], test_len=2, normalization="raw")
    with pytest.raises(ConfigError):
        run_scenario(cfg, ModelSpec(kind="persistence"), mid_stream([1, 2, 3, 4]))


class SpyModel(PersistenceModel):
    def __init__(self, spec):
        super().__init__(spec)
        self.calls = []

    def predict_next(self, e):
        self.calls.append(("predict", e.mid))
        return super().predict_next(e)

    def absorb(self, e, y_next, epochs=1):
        self.calls.append(("absorb", e.mid, y_next))
        return super().absorb(e, y_next, epochs)


def test_forecast_precedes_absorb():
    spec = ModelSpec(kind="persistence")
    spy = SpyModel(spec)
    cfg = ProtocolConfig(train_sizes=[3], test_len=3, epochs=1, normalization="raw")
    run_scenario(cfg, spec, mid_stream([10, 11, 12, 13, 14, 15]), model=spy)
    test_calls = spy.calls[4:]  # two training pairs, each predict + absorb
    assert test_calls == [
        ("predict", 12.0), ("absorb", 12.0, 13.0),
        ("predict", 13.0), ("absorb", 13.0, 14.0),
        ("predict", 14.0), ("absorb", 14.0, 15.0),
    ]
    # no event beyond the one being forecast is ever read during testing
    assert max(c[1] for c in test_calls if c[0] == "predict") == 14.0


def test_test_mse_is_mean_of_stored_errors():
    stream = generate_synthetic(400, "trend", seed=1)
    cfg = ProtocolConfig(train_sizes=[200], test_len=150, epochs=1)
    rep = run_scenario(cfg, ModelSpec(kind="lstm", units=2), stream)
    assert rep.ok and len(rep.test_errors) == 150
    assert rep.test_mse == float(np.mean(rep.test_errors))


def test_early_stop_examples():
    assert not early_stop([1.0, 1.0, 1.0], 3)
    assert early_stop([1.0, 1.0, 1.0, 1.0], 3)
    h = [5, 4, 4.2, 4.1, 4.05]
    assert not early_stop(h[:3], 2, 0.5)
    assert early_stop(h[:4], 2, 0.5)
    assert not any(early_stop(list(np.arange(20.0, 0, -1))[:n], 2) for n in range(1, 21))
    with pytest.raises(ConfigError):
        early_stop([], 1)


def test_long_regime_stops_early_and_reports_fields():
    cfg = ProtocolConfig(train_sizes=[20], test_len=5, regime="long", patience=3, normalization="raw")
    rep = run_scenario(cfg, ModelSpec(kind="naive"), mid_stream(range(100, 130)))
    rec = rep.to_record()
    assert rec["stopped_early"] and rec["epochs_run"] == 4
    assert rec["patience"] == 3 and rec["min_delta"] == 0.0
    short = run_scenario(ProtocolConfig(train_sizes=[20], test_len=5, normalization="raw"),
                         ModelSpec(kind="naive"), mid_stream(range(100, 130))).to_record()
    assert "stopped_early" not in short and short["epochs_run"] == 5


def test_config_validation():
    with pytest.raises(ConfigError):
        ProtocolConfig(regime="medium")
    with pytest.raises(ConfigError):
        ProtocolConfig(regime="short", epochs=6)
    with pytest.raises(ConfigError):
        ProtocolConfig(train_sizes=[0])
    assert ProtocolConfig(regime="long").epochs == 60


@pytest.fixture(scope="module")
def small_bench():
    stream = generate_synthetic(700, "trend", seed=2)
    cfg = ProtocolConfig(train_sizes=[300, 500], test_len=200, epochs=1)
    specs = [ModelSpec(kind=k, units=2) for k in ("optm_lstm", "lstm", "persistence", "naive")]
    return cfg, specs, stream


def test_benchmark_ranks_and_is_deterministic(small_bench, tmp_path):
    cfg, specs, stream = small_bench
    reports, table = benchmark_matrix(cfg, specs, stream)
    assert len(reports) == 8 and all(r.ok for r in reports)
    by = {(r.model, r.train_size): r.test_mse for r in reports}
    for n in (300, 500):
        assert by[("persistence", n)] < by[("naive", n)]
    lines = table.splitlines()[2:]
    assert [float(l.split()[6]) for l in lines] == sorted(float(l.split()[6]) for l in lines)

    reports2, _ = benchmark_matrix(cfg, specs, stream, jobs=2)
    write_results(reports, tmp_path / "a")
    write_results(reports2, tmp_path / "b")
    assert (tmp_path / "a/results.jsonl").read_bytes() == (tmp_path / "b/results.jsonl").read_bytes()
    recs = [json.loads(l) for l in (tmp_path / "a/results.jsonl").read_text().splitlines()]
    assert "wall_clock" not in recs[0] and "selection_freq" in recs[0]


def test_failures_are_recorded_not_dropped():
    # no training targets, so the naive regressor has nothing to average
    cfg = ProtocolConfig(train_sizes=[1], test_len=3, normalization="raw")
    specs = [ModelSpec(kind="naive"), ModelSpec(kind="persistence")]
    reports, table = benchmark_matrix(cfg, specs, mid_stream([1, 2, 2, 3]))
    naive = reports[0]
    assert naive.status == "failed" and "StateError" in naive.error
    assert table.splitlines()[-1].split()[1] == "naive"
    assert ranked_table(reports) == table
