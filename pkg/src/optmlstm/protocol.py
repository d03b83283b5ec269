"""Online progressive train/test protocol and the benchmark matrix.

For a training size N and test length K on a stream with mid-prices m:

* training pairs are (event t, m[t+1]) for t = 0 .. N-2;
* test step k (k = 0 .. K-1) forecasts m[N+k] from event N-1+k, stores the
  squared error, and only then absorbs that pair into training.

The normalizer is fitted on the first N events and frozen afterwards.
"""
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, OptmError
from .lob import NORMALIZATIONS
from .models import build_model

REGIME_EPOCHS = {"short": 5, "long": 60}


@dataclass
class ProtocolConfig:
    train_sizes: tuple = (1000, 2000, 5000, 10000, 15000)
    test_len: int = 1000
    regime: str = "short"
    epochs: int = None  # defaults to the regime's budget
    patience: int = 5
    min_delta: float = 0.0
    normalization: str = "zscore"
    absorb_epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        self.train_sizes = tuple(int(n) for n in self.train_sizes)
        if self.regime not in REGIME_EPOCHS:
            raise ConfigError(f"regime must be 'short' or 'long', got {self.regime!r}")
        if self.epochs is None:
            self.epochs = REGIME_EPOCHS[self.regime]
        if not 1 <= self.epochs <= REGIME_EPOCHS[self.regime]:
            raise ConfigError(f"{self.regime} regime allows 1..{REGIME_EPOCHS[self.regime]} epochs, got {self.epochs}")
        if self.test_len < 1:
            raise ConfigError(f"test_len must be >= 1, got {self.test_len}")
        if not self.train_sizes or min(self.train_sizes) < 1:
            raise ConfigError(f"train sizes must be >= 1, got {self.train_sizes}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.patience < 1 or self.absorb_epochs < 1:
            raise ConfigError("patience and absorb_epochs must be >= 1")

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class EvalReport:
    model: str
    train_size: int
    test_len: int
    regime: str
    normalization: str
    seed: int
    train_mse: float = float("nan")
    test_mse: float = float("nan")
    status: str = "ok"
    error: str = None
    epochs_run: int = 0
    stopped_early: bool = False
    patience: int = None
    min_delta: float = None
    selection_freq: dict = None
    wall_clock: float = 0.0
    test_errors: np.ndarray = field(default=None, repr=False)

    @property
    def ok(self):
        return self.status == "ok"

    def to_record(self, timing=False):
        rec = {
            "model": self.model,
            "train_size": self.train_size,
            "test_len": self.test_len,
            "regime": self.regime,
            "normalization": self.normalization,
            "seed": self.seed,
            "train_mse": self.train_mse,
            "test_mse": self.test_mse,
            "status": self.status,
            "error": self.error,
            "epochs_run": self.epochs_run,
        }
        if self.regime == "long":
            rec.update(stopped_early=self.stopped_early, patience=self.patience, min_delta=self.min_delta)
        if self.selection_freq is not None:
            rec["selection_freq"] = self.selection_freq
        if timing:
            rec["wall_clock"] = self.wall_clock
        return rec


def early_stop(history, patience, min_delta=0.0):
    """True once the best loss has not improved by more than ``min_delta``
    for ``patience`` consecutive epochs."""
    if not history:
        raise ConfigError("early_stop needs at least one epoch loss")
    best = history[0]
    stale = 0
    for loss in history[1:]:
        if best - loss > min_delta:
            best = loss
            stale = 0
        else:
            stale += 1
    return stale >= patience


def run_scenario(cfg, spec, stream, train_size=None, model=None):
    """Train on the first ``train_size`` events, then test progressively.

    ``model`` overrides ``build_model(spec)``; it must expose the Model
    interface (used to instrument call order in tests).
    """
    N = cfg.train_sizes[0] if train_size is None else int(train_size)
    K = cfg.test_len
    if len(stream) < N + K:
        raise ConfigError(f"stream of {len(stream)} events is too short for train_size={N} + test_len={K}")
    report = EvalReport(spec.kind, N, K, cfg.regime, cfg.normalization, spec.seed)
    if cfg.regime == "long":
        report.patience, report.min_delta = cfg.patience, cfg.min_delta
    t0 = time.perf_counter()
    try:
        _run(cfg, spec, stream, N, K, report, model)
    except (OptmError, FloatingPointError) as exc:
        report.status = "failed"
        report.error = f"{type(exc).__name__}: {exc}"
    report.wall_clock = time.perf_counter() - t0
    return report


def _report_units(model, normalization):
    if normalization == "raw":
        return lambda v: v
    return model.normalizer.label


def train(model, cfg, stream, train_size, report=None):
    """Fit the normalizer on the first ``train_size`` events and run the
    regime's epoch budget over their (event, next mid) pairs.

    Returns the per-epoch training MSE history (reporting units).
    """
    N = int(train_size)
    model.train_size = N
    model.fit_normalizer(stream[:N] if N >= 2 else [stream[0]], cfg.normalization)
    units = _report_units(model, cfg.normalization)
    mids = stream.mids()
    train_events = [stream[t] for t in range(N - 1)]
    train_targets = mids[1:N]
    history = []
    if not train_events:
        return history
    for _ in range(cfg.epochs):
        preds = model.train_epoch(train_events, train_targets)
        loss = float(np.mean((units(preds) - units(train_targets)) ** 2))
        if not np.isfinite(loss):
            raise NumericError(f"training loss became non-finite at epoch {len(history) + 1}")
        history.append(loss)
        if cfg.regime == "long" and early_stop(history, cfg.patience, cfg.min_delta):
            if report is not None:
                report.stopped_early = len(history) < cfg.epochs
            break
    return history


def progressive_test(model, cfg, stream, train_size, test_len=None):
    """Forecast, score, then absorb each of ``test_len`` events in order.

    Returns the stored per-event squared errors (reporting units).
    """
    N = int(train_size)
    K = cfg.test_len if test_len is None else int(test_len)
    if len(stream) < N + K:
        raise ConfigError(f"stream of {len(stream)} events is too short for train_size={N} + test_len={K}")
    units = _report_units(model, cfg.normalization)
    mids = stream.mids()
    errors = np.empty(K)
    for k in range(K):
        e = stream[N - 1 + k]
        pred = model.predict_next(e)
        if not np.isfinite(pred):
            raise NumericError(f"non-finite forecast at test event {k}")
        errors[k] = (units(pred) - units(mids[N + k])) ** 2
        model.absorb(e, mids[N + k], epochs=cfg.absorb_epochs)
    return errors


def _run(cfg, spec, stream, N, K, report, model):
    if model is None:
        model = build_model(spec)
    history = train(model, cfg, stream, N, report)
    report.epochs_run = len(history)
    report.train_mse = history[-1] if history else 0.0
    errors = progressive_test(model, cfg, stream, N, K)
    report.test_errors = errors
    report.test_mse = float(np.mean(errors))
    if hasattr(model, "selection_frequencies"):
        report.selection_freq = model.selection_frequencies()


def _cell(args):
    cfg, spec, stream, n = args
    return run_scenario(cfg, spec, stream, train_size=n)


def benchmark_matrix(cfg, specs, stream, jobs=1):
    """One report per (spec, train size); failures are recorded, never dropped.

    Returns the reports in (spec, size) order and the ranked text table.
    """
    tasks = [(cfg, spec, stream, n) for spec in specs for n in cfg.train_sizes]
    longest = max(n for n in cfg.train_sizes) + cfg.test_len
    if len(stream) < longest:
        raise ConfigError(f"stream of {len(stream)} events is too short for train_size + test_len = {longest}")
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_cell, tasks))
    else:
        reports = [_cell(t) for t in tasks]
    return reports, ranked_table(reports)


def _sci(x):
    return "nan" if x is None or not np.isfinite(x) else f"{x:.4E}"


def ranked_table(reports):
    """Plain-text table, lowest test MSE first, failed runs last."""
    order = sorted(reports, key=lambda r: (not r.ok, r.test_mse if r.ok else 0.0))
    head = f"{'Rank':>4}  {'Model':<12} {'Size':>9}  {'Regime':<6} {'Norm':<7} {'MSE-Train':>12} {'MSE-Test':>12}  Status"
    lines = [head, "-" * len(head)]
    for rank, r in enumerate(order, 1):
        status = r.status if r.ok else f"failed ({r.error})"
        lines.append(f"{rank:>4}  {r.model:<12} {r.train_size:>9}  {r.regime:<6} {r.normalization:<7} "
                     f"{_sci(r.train_mse):>12} {_sci(r.test_mse):>12}  {status}")
    return "\n".join(lines) + "\n"


def write_results(reports, out_dir, table=None):
    """Write ``results.jsonl`` (one record per run), ``results.txt`` (ranked
    table) and ``timings.jsonl`` (wall-clock, kept apart so the results file
    is reproducible byte for byte)."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.jsonl"), "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_record(), sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "results.txt"), "w", encoding="utf-8") as fh:
        fh.write(table if table is not None else ranked_table(reports))
    with open(os.path.join(out_dir, "timings.jsonl"), "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps({"model": r.model, "train_size": r.train_size,
                                 "wall_clock": r.wall_clock}) + "\n")
