"""Forward passes for the LSTM, GRU and optimum-output LSTM cells.

The optimum-output cell runs a standard LSTM step, concatenates its six
gates/states into a repository vector ``r = [f | i | c~ | o | c | h]``, fits
an importance vector on the current (already known) mid-price with a few
plain gradient-descent iterations, and emits as hidden output whichever
component has the highest average importance. The cell state passes
through untouched.
"""
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .numerics import glorot_init, sigmoid

COMPONENTS = ("f", "i", "c_tilde", "o", "c", "h")
N_COMPONENTS = len(COMPONENTS)


def _check_len(name, v, n):
    if v.ndim != 1 or v.shape[0] != n:
        raise ShapeError(f"{name}: expected shape ({n},), got {v.shape}")


# -- LSTM --------------------------------------------------------------------


@dataclass
class LstmWeights:
    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    U_f: np.ndarray
    U_i: np.ndarray
    U_c: np.ndarray
    U_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        U, D = self.W_f.shape
        for name in ("W_f", "W_i", "W_c", "W_o"):
            if getattr(self, name).shape != (U, D):
                raise ShapeError(f"{name}: expected ({U}, {D}), got {getattr(self, name).shape}")
        for name in ("U_f", "U_i", "U_c", "U_o"):
            if getattr(self, name).shape != (U, U):
                raise ShapeError(f"{name}: expected ({U}, {U}), got {getattr(self, name).shape}")
        for name in ("b_f", "b_i", "b_c", "b_o"):
            if getattr(self, name).shape != (U,):
                raise ShapeError(f"{name}: expected ({U},), got {getattr(self, name).shape}")

    @property
    def units(self):
        return self.W_f.shape[0]

    @property
    def inputs(self):
        return self.W_f.shape[1]

    @staticmethod
    def shapes(units, inputs):
        sh = {}
        for g in "fico":
            sh[f"W_{g}"] = (units, inputs)
        for g in "fico":
            sh[f"U_{g}"] = (units, units)
        for g in "fico":
            sh[f"b_{g}"] = (units,)
        return sh

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: d[f.name] for f in fields(cls)})

    @classmethod
    def zeros(cls, units, inputs):
        return cls.from_dict({k: np.zeros(s) for k, s in cls.shapes(units, inputs).items()})

    @classmethod
    def init(cls, units, inputs, rng):
        """Glorot-uniform weight matrices, zero biases."""
        d = {}
        for k, s in cls.shapes(units, inputs).items():
            d[k] = glorot_init(*s, rng) if len(s) == 2 else np.zeros(s)
        return cls.from_dict(d)

    def tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class CellState:
    """Everything one LSTM step produced, plus the inputs it consumed."""

    f: np.ndarray
    i: np.ndarray
    c_tilde: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    x: np.ndarray

    def component(self, k):
        """Gate/state by 1-based repository index (1=f ... 6=h)."""
        return getattr(self, COMPONENTS[k - 1])

    def components(self):
        return [self.f, self.i, self.c_tilde, self.o, self.c, self.h]


def lstm_forward(w, x, h_prev, c_prev):
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    _check_len("x", x, w.inputs)
    _check_len("h_prev", h_prev, w.units)
    _check_len("c_prev", c_prev, w.units)

    f = sigmoid(w.W_f @ x + w.U_f @ h_prev + w.b_f)
    i = sigmoid(w.W_i @ x + w.U_i @ h_prev + w.b_i)
    c_tilde = np.tanh(w.W_c @ x + w.U_c @ h_prev + w.b_c)
    o = sigmoid(w.W_o @ x + w.U_o @ h_prev + w.b_o)
    c = f * c_prev + i * c_tilde
    h = o * np.tanh(c)
    return CellState(f, i, c_tilde, o, c, h, h_prev, c_prev, x)


# -- GRU ---------------------------------------------------------------------


@dataclass
class GruWeights:
    """Update (z), reset (r) and candidate (n) parameters of a GRU cell."""

    W_z: np.ndarray
    W_r: np.ndarray
    W_n: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_n: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_n: np.ndarray

    @property
    def units(self):
        return self.W_z.shape[0]

    @property
    def inputs(self):
        return self.W_z.shape[1]

    @staticmethod
    def shapes(units, inputs):
        sh = {}
        for g in "zrn":
            sh[f"W_{g}"] = (units, inputs)
        for g in "zrn":
            sh[f"U_{g}"] = (units, units)
        for g in "zrn":
            sh[f"b_{g}"] = (units,)
        return sh

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: d[f.name] for f in fields(cls)})

    @classmethod
    def zeros(cls, units, inputs):
        return cls.from_dict({k: np.zeros(s) for k, s in cls.shapes(units, inputs).items()})

    @classmethod
    def init(cls, units, inputs, rng):
        d = {}
        for k, s in cls.shapes(units, inputs).items():
            d[k] = glorot_init(*s, rng) if len(s) == 2 else np.zeros(s)
        return cls.from_dict(d)

    def tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class GruState:
    z: np.ndarray
    r: np.ndarray
    n: np.ndarray
    h: np.ndarray
    h_prev: np.ndarray
    x: np.ndarray


def gru_forward(w, x, h_prev):
    """One GRU step; the new hidden output is ``state.h``.

    z = sigma(W_z x + U_z h_prev + b_z), r = sigma(W_r x + U_r h_prev + b_r),
    n = tanh(W_n x + U_n (r * h_prev) + b_n), h = (1 - z) * n + z * h_prev.
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    _check_len("x", x, w.inputs)
    _check_len("h_prev", h_prev, w.units)
    z = sigmoid(w.W_z @ x + w.U_z @ h_prev + w.b_z)
    r = sigmoid(w.W_r @ x + w.U_r @ h_prev + w.b_r)
    n = np.tanh(w.W_n @ x + w.U_n @ (r * h_prev) + w.b_n)
    h = (1.0 - z) * n + z * h_prev
    return GruState(z, r, n, h, h_prev, x)


# -- Feature Repo ------------------------------------------------------------


@dataclass
class RepoConfig:
    alpha: float = 1e-4
    iters: int = 10
    theta_init: str = "warm"  # or "zero"
    importance_mode: str = "signed"  # or "absolute"

    def __post_init__(self):
        # alpha == 0 is allowed: it freezes the importance vector
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")
        if self.theta_init not in ("warm", "zero"):
            raise ConfigError(f"theta_init must be 'warm' or 'zero', got {self.theta_init!r}")
        if self.importance_mode not in ("signed", "absolute"):
            raise ConfigError(f"importance_mode must be 'signed' or 'absolute', got {self.importance_mode!r}")


@dataclass
class RepoResult:
    r: np.ndarray
    theta: np.ndarray
    ai: np.ndarray
    selected: int  # 1-based repository index
    h_new: np.ndarray

    @property
    def selected_name(self):
        return COMPONENTS[self.selected - 1]


def online_gd(r, y, theta0, alpha, iters, trace=False):
    """Fit ``r . theta ~ y`` with ``iters`` full-gradient steps on the squared error.

    Each step: prediction ``r . theta``, error ``prediction - y``, gradient
    ``2 * error * r``, update ``theta -= alpha * gradient``. With ``trace=True``
    also returns the error seen at each iteration (before its update).
    """
    r = np.asarray(r, dtype=np.float64)
    theta = np.array(theta0, dtype=np.float64)
    if r.shape != theta.shape or r.ndim != 1:
        raise ShapeError(f"online_gd: r {r.shape} and theta {theta.shape} must be equal-length vectors")
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    errors = []
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, iters + 1):
            err = float(r @ theta) - y
            theta -= alpha * (2.0 * err) * r
            if not np.isfinite(err) or not np.all(np.isfinite(theta)):
                raise NumericError(f"online_gd diverged at iteration {it} (alpha={alpha})")
            errors.append(err)
    if trace:
        return theta, errors
    return theta


def average_importance(theta, units, mode="signed"):
    """Mean of each contiguous ``units``-sized block of ``theta`` (repo order)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != N_COMPONENTS * units:
        raise ShapeError(f"theta must have length 6*{units}, got {theta.shape}")
    blocks = theta.reshape(N_COMPONENTS, units)
    if mode == "absolute":
        blocks = np.abs(blocks)
    elif mode != "signed":
        raise ConfigError(f"unknown importance mode {mode!r}")
    # cumsum accumulates left to right, so each block sum is the plain sequential sum
    return np.cumsum(blocks, axis=1)[:, -1] / units


def select_component(ai):
    """1-based index of the largest average importance; ties go to the lowest index."""
    return int(np.argmax(ai)) + 1


def feature_repo(state, y, theta0, cfg):
    r = np.concatenate(state.components())
    theta = online_gd(r, y, theta0, cfg.alpha, cfg.iters)
    ai = average_importance(theta, state.h.shape[0], cfg.importance_mode)
    k = select_component(ai)
    return RepoResult(r, theta, ai, k, state.component(k))


@dataclass
class OptmOutput:
    state: CellState
    repo: RepoResult

    @property
    def h_new(self):
        return self.repo.h_new

    @property
    def c_next(self):
        return self.state.c

    @property
    def theta_next(self):
        return self.repo.theta


def optm_forward(w, x, h_prev, c_prev, y_current, cfg, theta_carry=None):
    """Optimum-output LSTM step.

    ``y_current`` is the mid-price of the event being read (known at read time),
    in the same units as the model's target. ``theta_carry`` is the importance
    vector from the previous event; it seeds gradient descent when
    ``cfg.theta_init == "warm"``.
    """
    state = lstm_forward(w, x, h_prev, c_prev)
    C = N_COMPONENTS * w.units
    if cfg.theta_init == "zero" or theta_carry is None:
        theta0 = np.zeros(C)
    else:
        theta0 = np.asarray(theta_carry, dtype=np.float64)
        _check_len("theta_carry", theta0, C)
    return OptmOutput(state, feature_repo(state, y_current, theta0, cfg))
