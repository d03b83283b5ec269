"""Forecasting models behind one predict/absorb interface.

Every model maps the current event to a forecast of the next mid-price in
scaled-price units. ``absorb`` reveals the realized next mid-price and lets
the model learn from that single pair (batch size 1).
"""
import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .cells import (
    COMPONENTS,
    GruWeights,
    LstmWeights,
    RepoConfig,
    gru_forward,
    lstm_forward,
    optm_forward,
)
from .errors import ConfigError, StateError
from .learning import (
    HeadWeights,
    OptimizerState,
    bptt_grads,
    gru_bptt_grads,
    head_forward,
    optm_local_grads,
    step,
)
from .lob import N_FEATURES, Normalizer, fit_normalizer, mid_price
from .numerics import make_rng

KINDS = ("optm_lstm", "lstm", "gru", "persistence", "naive")
CHECKPOINT_VERSION = 1
# what the optimum-output cell hands to the next event as h_prev:
#   lstm_h - the standard LSTM hidden state (selected output goes to the head only)
#   h_new  - the selected component itself; can feed an unbounded c back into the gates
#   none   - nothing; h_prev = c_prev = 0 for every event
OPTM_CARRY = ("lstm_h", "h_new", "none")


@dataclass
class ModelSpec:
    kind: str = "optm_lstm"
    units: int = 4
    head_sizes: tuple = (4, 1)
    look_back: int = 1
    optimizer: str = "adam"
    lr: float = 1e-3
    repo: RepoConfig = field(default_factory=RepoConfig)
    seed: int = 0
    clip_norm: float = None
    optm_carry: str = "lstm_h"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if isinstance(self.repo, dict):
            self.repo = RepoConfig(**self.repo)
        self.head_sizes = tuple(int(n) for n in self.head_sizes)
        if not self.head_sizes or self.head_sizes[-1] != 1:
            raise ConfigError(f"head must end in one unit, got {self.head_sizes}")
        if self.units < 1 or self.look_back < 1:
            raise ConfigError("units and look_back must be >= 1")
        if self.optm_carry not in OPTM_CARRY:
            raise ConfigError(f"optm_carry must be one of {OPTM_CARRY}, got {self.optm_carry!r}")
        if self.kind == "optm_lstm" and self.look_back != 1:
            raise ConfigError("optm_lstm reads one event at a time; look_back must be 1")

    @property
    def name(self):
        return self.kind

    def to_dict(self):
        d = asdict(self)
        d["head_sizes"] = list(self.head_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Model:
    """Shared plumbing: normalizer, carry reset, the epoch loop."""

    def __init__(self, spec):
        self.spec = spec
        self.normalizer = Normalizer("raw")
        self.events_seen = 0
        self.train_size = None

    @property
    def kind(self):
        return self.spec.kind

    def fit_normalizer(self, window, mode):
        self.normalizer = fit_normalizer(mode, window)

    def reset_carry(self):
        pass

    def predict_next(self, e):
        raise NotImplementedError

    def absorb(self, e, y_next, epochs=1):
        raise NotImplementedError

    def train_epoch(self, events, targets):
        """One pass over (event, next mid) pairs; returns the pre-update forecasts."""
        self.reset_carry()
        preds = np.empty(len(targets))
        for t, (e, y) in enumerate(zip(events, targets)):
            preds[t] = self.predict_next(e)
            self.absorb(e, y)
        return preds

    def copy(self):
        return copy.deepcopy(self)


class PersistenceModel(Model):
    """Flat forecast: the next mid-price equals the current one."""

    def predict_next(self, e):
        return mid_price(e)

    def absorb(self, e, y_next, epochs=1):
        self.events_seen += 1
        return self


class NaiveModel(Model):
    """Constant forecast equal to the running mean of every target seen."""

    def __init__(self, spec):
        super().__init__(spec)
        self.total = 0.0
        self.count = 0

    @property
    def constant(self):
        if self.count == 0:
            raise StateError("naive regressor has not seen any training target")
        return self.total / self.count

    def predict_next(self, e):
        return self.constant

    def absorb(self, e, y_next, epochs=1):
        self.total += float(y_next)
        self.count += 1
        self.events_seen += 1
        return self

    def train_epoch(self, events, targets):
        # refit from scratch so repeated epochs do not double-count targets
        targets = np.asarray(targets, dtype=np.float64)
        if targets.size == 0:
            raise StateError("naive regressor needs at least one training target")
        self.total = float(np.sum(targets))
        self.count = int(targets.size)
        self.events_seen += int(targets.size)
        return np.full(targets.size, self.constant)


class _FlatParams:
    """All trainable tensors as views into one contiguous vector."""

    def __init__(self, shapes, values=None):
        self.names = list(shapes)
        self.shapes = dict(shapes)
        sizes = [int(np.prod(s)) for s in shapes.values()]
        self.flat = np.zeros(sum(sizes)) if values is None else np.array(values, dtype=np.float64)
        self.views, off = {}, 0
        for n, s, k in zip(self.names, shapes.values(), sizes):
            self.views[n] = self.flat[off:off + k].reshape(s)
            off += k

    def flatten(self, grads):
        return np.concatenate([grads[n].ravel() for n in self.names])

    def __deepcopy__(self, memo):
        return _FlatParams(self.shapes, self.flat.copy())


class _NetworkModel(Model):
    cell_cls = None

    def __init__(self, spec, inputs=N_FEATURES):
        super().__init__(spec)
        self.inputs = inputs
        U = spec.units
        shapes = {**self.cell_cls.shapes(U, inputs), **HeadWeights.shapes(U, spec.head_sizes)}
        self.params = _FlatParams(shapes)
        rng = make_rng(spec.seed)
        init = {**self.cell_cls.init(U, inputs, rng).tensors(),
                **HeadWeights.init(U, spec.head_sizes, rng).tensors()}
        for n, v in init.items():
            self.params.views[n][...] = v
        self._bind()
        self.opt = OptimizerState(spec.optimizer, spec.lr, clip_norm=spec.clip_norm)
        self.reset_carry()

    def __deepcopy__(self, memo):
        new = self.__class__.__new__(self.__class__)
        memo[id(self)] = new
        for k, v in self.__dict__.items():
            if k not in ("cell", "head"):
                setattr(new, k, copy.deepcopy(v, memo))
        new._bind()
        return new

    def _bind(self):
        self.cell = self.cell_cls.from_dict(self.params.views)
        self.head = HeadWeights.from_dict(self.params.views)

    def _apply_grads(self, grads):
        step(self.opt, {"flat": self.params.flat}, {"flat": self.params.flatten(grads)})

    def carry_arrays(self):
        raise NotImplementedError

    def set_carry_arrays(self, arrays):
        raise NotImplementedError


class RecurrentModel(_NetworkModel):
    """Prototype LSTM or GRU layer plus a linear dense head.

    The carry persists across events; with ``look_back = L`` the last L
    events are unrolled from the carry that preceded the oldest of them and
    gradients flow back through all L steps.
    """

    def __init__(self, spec, inputs=N_FEATURES):
        self.cell_cls = LstmWeights if spec.kind == "lstm" else GruWeights
        super().__init__(spec, inputs)

    def reset_carry(self):
        U = self.spec.units
        self.h = np.zeros(U)
        self.c = np.zeros(U)
        self.buffer = []

    def carry_arrays(self):
        buf = np.array(self.buffer).reshape(len(self.buffer), self.inputs)
        return {"h": self.h, "c": self.c, "buffer": buf}

    def set_carry_arrays(self, arrays):
        self.h, self.c = arrays["h"], arrays["c"]
        self.buffer = list(arrays["buffer"])

    def _unroll(self, xs):
        traj, h, c = [], self.h, self.c
        for x in xs:
            if self.spec.kind == "lstm":
                st = lstm_forward(self.cell, x, h, c)
                c = st.c
            else:
                st = gru_forward(self.cell, x, h)
            h = st.h
            traj.append(st)
        return traj

    def predict_next(self, e):
        xs = self.buffer + [self.normalizer.apply(e)]
        traj = self._unroll(xs)
        return self.normalizer.inverse_label(head_forward(self.head, traj[-1].h)[0])

    def absorb(self, e, y_next, epochs=1):
        xs = self.buffer + [self.normalizer.apply(e)]
        y = self.normalizer.label(float(y_next))
        labels = [None] * (len(xs) - 1) + [y]
        backward = bptt_grads if self.spec.kind == "lstm" else gru_bptt_grads
        first = None
        for _ in range(epochs):
            traj = self._unroll(xs)
            if first is None:
                first = traj
            self._apply_grads(backward(self.cell, self.head, traj, labels))
        # carry comes from the pre-update pass
        if first is None:
            first = self._unroll(xs)
        if len(xs) == self.spec.look_back:
            self.h = first[0].h
            if self.spec.kind == "lstm":
                self.c = first[0].c
            xs = xs[1:]
        self.buffer = xs
        self.events_seen += 1
        return self


class OptmLstmModel(_NetworkModel):
    """Optimum-output LSTM layer plus a linear dense head, one event per step.

    The importance vector always carries over between events; which hidden
    state carries over is set by ``spec.optm_carry``.
    """

    cell_cls = LstmWeights

    def __init__(self, spec, inputs=N_FEATURES):
        super().__init__(spec, inputs)
        self.selection_counts = np.zeros(len(COMPONENTS), dtype=np.int64)

    def reset_carry(self):
        U = self.spec.units
        self.h = np.zeros(U)
        self.c = np.zeros(U)
        self.theta = np.zeros(len(COMPONENTS) * U)

    def carry_arrays(self):
        return {"h": self.h, "c": self.c, "theta": self.theta}

    def set_carry_arrays(self, arrays):
        self.h, self.c, self.theta = arrays["h"], arrays["c"], arrays["theta"]

    def _forward(self, e, x=None):
        if x is None:
            x = self.normalizer.apply(e)
        y_now = self.normalizer.label(mid_price(e))
        return optm_forward(self.cell, x, self.h, self.c, y_now, self.spec.repo, self.theta)

    def predict_next(self, e):
        out = self._forward(e)
        return self.normalizer.inverse_label(head_forward(self.head, out.h_new)[0])

    def absorb(self, e, y_next, epochs=1):
        x = self.normalizer.apply(e)
        y = self.normalizer.label(float(y_next))
        first = None
        for _ in range(epochs):
            out = self._forward(e, x)
            if first is None:
                first = out
            self._apply_grads(optm_local_grads(out.repo.selected, out.state, self.cell, self.head, y))
        if first is None:
            first = self._forward(e, x)
        mode = self.spec.optm_carry
        if mode == "lstm_h":
            self.h, self.c = first.state.h, first.c_next
        elif mode == "h_new":
            self.h, self.c = first.h_new, first.c_next
        self.theta = first.theta_next
        self.selection_counts[first.repo.selected - 1] += 1
        self.events_seen += 1
        return self

    def selection_frequencies(self):
        total = self.selection_counts.sum()
        freq = self.selection_counts / total if total else np.zeros(len(COMPONENTS))
        return dict(zip(COMPONENTS, freq.tolist()))


def build_model(spec, inputs=N_FEATURES):
    if spec.kind == "persistence":
        return PersistenceModel(spec)
    if spec.kind == "naive":
        return NaiveModel(spec)
    if spec.kind == "optm_lstm":
        return OptmLstmModel(spec, inputs)
    return RecurrentModel(spec, inputs)


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model, path):
    """Write a versioned ``.npz`` holding every tensor plus JSON metadata."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "normalizer": model.normalizer.to_dict(),
        "events_seen": model.events_seen,
        "train_size": model.train_size,
    }
    arrays = {}
    if isinstance(model, NaiveModel):
        meta["naive"] = {"total": model.total, "count": model.count}
    if isinstance(model, _NetworkModel):
        meta["inputs"] = model.inputs
        meta["opt"] = {"t": model.opt.t}
        arrays["params"] = model.params.flat
        if "flat" in model.opt.m:
            arrays["opt_m"] = model.opt.m["flat"]
            arrays["opt_v"] = model.opt.v["flat"]
        for k, v in model.carry_arrays().items():
            arrays[f"carry_{k}"] = v
        if isinstance(model, OptmLstmModel):
            arrays["selection_counts"] = model.selection_counts
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays.pop("meta").tobytes().decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {meta.get('version')!r}")
    spec = ModelSpec.from_dict(meta["spec"])
    model = build_model(spec, meta.get("inputs", N_FEATURES))
    model.normalizer = Normalizer.from_dict(meta["normalizer"])
    model.events_seen = meta["events_seen"]
    model.train_size = meta.get("train_size")
    if isinstance(model, NaiveModel):
        model.total = meta["naive"]["total"]
        model.count = meta["naive"]["count"]
    if isinstance(model, _NetworkModel):
        model.params.flat[...] = arrays["params"]
        model.opt.t = meta["opt"]["t"]
        if "opt_m" in arrays:
            model.opt.m["flat"] = arrays["opt_m"].copy()
            model.opt.v["flat"] = arrays["opt_v"].copy()
        model.set_carry_arrays({k[len("carry_"):]: v.copy() for k, v in arrays.items() if k.startswith("carry_")})
        if isinstance(model, OptmLstmModel):
            model.selection_counts = arrays["selection_counts"].copy()
    return model
