import json
import time

import numpy as np
import pytest

from optmlstm.cells import (
    COMPONENTS,
    LstmWeights,
    RepoConfig,
    average_importance,
    lstm_forward,
    online_gd,
    optm_forward,
    select_component,
)
from optmlstm.cli import main
from optmlstm.learning import HeadWeights, gradcheck_suite, param_count
from optmlstm.lob import LEVELS, LobEvent, LobStream, generate_synthetic
from optmlstm.models import ModelSpec
from optmlstm.numerics import make_rng
from optmlstm.protocol import ProtocolConfig, run_scenario


# -- C1 ----------------------------------------------------------------------


@pytest.mark.criterion("C1")
def test_c1_gradcheck():
    t0 = time.perf_counter()
    results = gradcheck_suite(seed=0, h=1e-6, units=2, inputs=3)
    elapsed = time.perf_counter() - t0
    cases = {r.case for r in results}
    assert {f"lstm_bptt_T{T}" for T in (1, 2, 3)} <= cases
    assert {f"optm_local_{c}" for c in COMPONENTS} <= cases
    worst = max(results, key=lambda r: r.rel_error)
    assert worst.rel_error < 1e-4, worst
    assert elapsed < 60


# -- C2 ----------------------------------------------------------------------


@pytest.mark.criterion("C2")
def test_c2_online_gd_oracle():
    t0 = time.perf_counter()
    rng = make_rng(20)
    for _ in range(100):
        C = int(rng.integers(6, 49))
        r = rng.standard_normal(C) * rng.uniform(0.1, 3)
        y = float(rng.standard_normal() * 5)
        theta0 = rng.standard_normal(C)
        theta = online_gd(r, y, theta0, 0.4 / (r @ r), 1000)
        # normal equations of min ||theta|| subject to r . theta = y
        oracle = r * (y / (r @ r))
        assert abs(r @ theta - r @ oracle) < 1e-6
    for _ in range(1000):
        C = int(rng.integers(1, 49))
        r = rng.standard_normal(C)
        alpha = rng.uniform(0, 1) / (r @ r)
        _, errs = online_gd(r, float(rng.standard_normal()), rng.standard_normal(C), alpha, 30, trace=True)
        a = np.abs(errs)
        # the error contracts by |1 - 2 alpha |r|^2| <= 1; allow rounding noise
        assert np.all(a[1:] <= a[:-1] * (1 + 1e-12) + 1e-14)
    assert time.perf_counter() - t0 < 10


# -- C3 ----------------------------------------------------------------------


def naive_importance(theta, U):
    out = []
    for k in range(6):
        s = 0.0
        for j in range(U):
            s += float(theta[k * U + j])
        out.append(s / U)
    return out


def naive_select(ai):
    best = 0
    for k in range(1, len(ai)):
        if ai[k] > ai[best]:
            best = k
    return best + 1


@pytest.mark.criterion("C3")
def test_c3_importance_and_selection():
    rng = make_rng(30)
    for U in (1, 2, 4, 8):
        for n in range(1000):
            theta = rng.standard_normal(6 * U)
            if n % 10 == 0:  # exercise ties
                theta = np.round(theta)
            ai = average_importance(theta, U)
            assert ai.tolist() == naive_importance(theta, U)
            assert select_component(ai) == naive_select(ai.tolist())
    hand = average_importance([1, 3, 2, 2, 0, 0, 5, 1, -1, -1, 4, 4], 2)
    assert select_component(hand) == 6


# -- C4 ----------------------------------------------------------------------


def mid_stream(mids):
    k = np.arange(LEVELS)
    vol = np.full(LEVELS, 10)
    return LobStream.from_events([LobEvent(m + 1 + k, vol, m - 1 - k, vol) for m in mids])


@pytest.mark.criterion("C4")
def test_c4_protocol_identity():
    cfg = ProtocolConfig(train_sizes=[1], test_len=3, normalization="raw")
    assert run_scenario(cfg, ModelSpec(kind="persistence"), mid_stream([1, 2, 2, 3])).test_mse == 2 / 3
    for seed in range(10):
        regime = ("random_walk", "trend", "mean_revert")[seed % 3]
        stream = generate_synthetic(600, regime, seed=seed)
        N, K = 100 + 20 * seed, 300
        cfg = ProtocolConfig(train_sizes=[N], test_len=K, normalization="raw", epochs=1)
        m = stream.mids()
        expected = float(np.mean(np.diff(m)[N - 1:N - 1 + K] ** 2))
        assert run_scenario(cfg, ModelSpec(kind="persistence"), stream).test_mse == expected


# -- C5 ----------------------------------------------------------------------


def enumerated_count(U, I, O):
    sh = LstmWeights.shapes(U, I)
    weights = sum(int(np.prod(s)) for k, s in sh.items() if k[0] in "WU")
    # the formula counts three U-sized bias vectors
    biases = 3 * U
    out = int(np.prod(HeadWeights.shapes(U, (O,))["head_W0"]))
    return weights + out + biases


@pytest.mark.criterion("C5")
def test_c5_param_count():
    assert param_count(1, 1, 1) == 12 == enumerated_count(1, 1, 1)
    assert param_count(32, 40, 1) == 9344 == enumerated_count(32, 40, 1)
    for U in (1, 3, 8):
        for I in (1, 7, 40):
            for O in (1, 2):
                assert param_count(U, I, O) == enumerated_count(U, I, O)


# -- C6 / C7 -----------------------------------------------------------------

BENCH = ["benchmark", "--synthetic", "trend", "--events", "10000", "--drift", "1", "--noise-std", "2",
         "--regime", "short", "--sizes", "5000", "--test-len", "1000", "--units", "4",
         "--models", "optm,lstm,gru,persistence,naive", "--seed", "0", "--jobs", "1"]


@pytest.fixture(scope="module")
def bench_runs(tmp_path_factory):
    runs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(name)
        t0 = time.perf_counter()
        code = main([*BENCH, "--out", str(out)])
        runs.append((code, out, time.perf_counter() - t0))
    return runs


@pytest.mark.criterion("C6")
def test_c6_desk_benchmark(bench_runs):
    code, out, elapsed = bench_runs[0]
    assert code == 0
    recs = {r["model"]: r for r in map(json.loads, (out / "results.jsonl").read_text().splitlines())}
    ranked = [line.split()[1] for line in (out / "results.txt").read_text().splitlines()[2:]]
    assert ranked.index("persistence") < ranked.index("naive")
    optm, naive = recs["optm_lstm"], recs["naive"]
    assert optm["status"] == "ok" and np.isfinite(optm["test_mse"])
    assert optm["test_mse"] < naive["test_mse"]
    assert elapsed < 300


@pytest.mark.criterion("C7")
def test_c7_determinism(bench_runs):
    (_, a, _), (_, b, _) = bench_runs
    for name in ("results.jsonl", "results.txt", "run_config.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


# -- C8 ----------------------------------------------------------------------


@pytest.mark.criterion("C8")
def test_c8_structural_invariants():
    rng = make_rng(80)
    for n in range(10_000):
        U, D = int(rng.integers(1, 9)), int(rng.integers(1, 41))
        scale = rng.uniform(0.1, 3)
        w = LstmWeights.from_dict({k: scale * rng.standard_normal(s) for k, s in LstmWeights.shapes(U, D).items()})
        x = rng.standard_normal(D) * 3
        h_prev, c_prev = rng.uniform(-1, 1, U), rng.standard_normal(U) * 3
        st = lstm_forward(w, x, h_prev, c_prev)
        for g in (st.f, st.i, st.o):
            assert np.all((g >= 0) & (g <= 1))
        assert np.all(np.abs(st.c_tilde) <= 1) and np.all(np.abs(st.h) <= 1)
        if n % 10 == 0:
            cfg = RepoConfig(alpha=rng.uniform(0, 0.05), iters=int(rng.integers(1, 11)))
            out = optm_forward(w, x, h_prev, c_prev, float(rng.standard_normal()), cfg,
                               rng.standard_normal(6 * U))
            comps = [v.tobytes() for v in out.state.components()]
            assert out.h_new.tobytes() in comps
            assert out.h_new.tobytes() == comps[out.repo.selected - 1]
            assert out.c_next.tobytes() == st.c.tobytes()
