"""Losses, manual backpropagation through time, optimizers and gradient checks.

Gradients are plain ``dict[str, ndarray]`` keyed like the parameters they
belong to: the LSTM/GRU tensor names (``W_f``, ``U_i``, ``b_o`` ...) and
``head_W{k}`` / ``head_b{k}`` for the dense head.
"""
from dataclasses import dataclass, field

import numpy as np

from .cells import COMPONENTS, GruWeights, LstmWeights, gru_forward, lstm_forward
from .errors import ConfigError, NumericError, ShapeError
from .numerics import glorot_init, make_rng


# -- dense head --------------------------------------------------------------


@dataclass
class HeadWeights:
    """Chain of linear dense layers mapping the recurrent output to one scalar.

    ``weights[0]`` is the matrix that multiplies the hidden output directly.
    """

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("head needs one bias per weight matrix and at least one layer")
        for k in range(1, len(self.weights)):
            if self.weights[k].shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(f"head layer {k} input {self.weights[k].shape[1]} != "
                                 f"layer {k - 1} output {self.weights[k - 1].shape[0]}")
        for W, b in zip(self.weights, self.biases):
            if b.shape != (W.shape[0],):
                raise ShapeError(f"head bias {b.shape} does not match weight {W.shape}")
        if self.weights[-1].shape[0] != 1:
            raise ShapeError("head must end in a single output unit")

    @property
    def V(self):
        return self.weights[0]

    @staticmethod
    def shapes(units, sizes):
        sh, prev = {}, units
        for k, n in enumerate(sizes):
            sh[f"head_W{k}"] = (n, prev)
            sh[f"head_b{k}"] = (n,)
            prev = n
        return sh

    @classmethod
    def from_dict(cls, d):
        n = sum(1 for k in d if k.startswith("head_W"))
        return cls([d[f"head_W{k}"] for k in range(n)], [d[f"head_b{k}"] for k in range(n)])

    @classmethod
    def init(cls, units, sizes, rng):
        d = {}
        for k, s in cls.shapes(units, sizes).items():
            d[k] = glorot_init(*s, rng) if len(s) == 2 else np.zeros(s)
        return cls.from_dict(d)

    def tensors(self):
        d = {}
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            d[f"head_W{k}"] = W
            d[f"head_b{k}"] = b
        return d


def head_forward(head, v):
    """Return the scalar prediction and the layer inputs needed for backward."""
    acts = [v]
    for W, b in zip(head.weights, head.biases):
        v = W @ v + b
        acts.append(v)
    return float(v[0]), acts


def head_backward(head, acts, dy, grads):
    """Accumulate head gradients into ``grads``; return dL/d(head input)."""
    g = np.array([dy])
    for k in range(len(head.weights) - 1, -1, -1):
        grads[f"head_W{k}"] += np.outer(g, acts[k])
        grads[f"head_b{k}"] += g
        g = head.weights[k].T @ g
    return g


# -- losses ------------------------------------------------------------------


def _pair(y, yhat):
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    yhat = np.atleast_1d(np.asarray(yhat, dtype=np.float64))
    if y.size == 0 or y.shape != yhat.shape:
        raise ShapeError(f"mse needs equal non-empty inputs, got {y.shape} and {yhat.shape}")
    return y, yhat


def mse(y, yhat):
    """Reporting MSE: mean of squared errors."""
    y, yhat = _pair(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def mse_temporal(y, yhat):
    """Training loss: half the squared error, summed over steps."""
    y, yhat = _pair(y, yhat)
    return float(0.5 * np.sum((y - yhat) ** 2))


# -- backward passes ---------------------------------------------------------


def zero_grads(*param_sets):
    grads = {}
    for p in param_sets:
        for k, v in p.tensors().items():
            grads[k] = np.zeros_like(v)
    return grads


def _check_finite(grads):
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {k}")
    return grads


def _lstm_gate_backward(w, st, dc, do, grads, gates="fico"):
    """Push dL/dc and dL/do through the gate pre-activations of one step.

    Returns dL/dh_prev. ``gates`` restricts which gate parameters receive
    gradient (used by the local optimum-output backward pass).
    """
    dh_prev = np.zeros_like(st.h_prev)
    pre = {}
    if "f" in gates:
        pre["f"] = dc * st.c_prev * st.f * (1.0 - st.f)
    if "i" in gates:
        pre["i"] = dc * st.c_tilde * st.i * (1.0 - st.i)
    if "c" in gates:
        pre["c"] = dc * st.i * (1.0 - st.c_tilde ** 2)
    if "o" in gates and do is not None:
        pre["o"] = do * st.o * (1.0 - st.o)
    for g, da in pre.items():
        grads[f"W_{g}"] += np.outer(da, st.x)
        grads[f"U_{g}"] += np.outer(da, st.h_prev)
        grads[f"b_{g}"] += da
        dh_prev += getattr(w, f"U_{g}").T @ da
    return dh_prev


def bptt_grads(w, head, trajectory, labels):
    """Gradients of the summed half-squared error over a trajectory.

    ``trajectory`` is the list of CellState from consecutive lstm_forward
    calls; ``labels[t]`` is the target for step t, or None when step t
    carries no loss (many-to-one training labels only the last step).
    """
    if len(trajectory) == 0 or len(labels) != len(trajectory):
        raise ShapeError(f"need T >= 1 states and one label per state, got {len(trajectory)} / {len(labels)}")
    grads = zero_grads(w, head)
    U = w.units
    dh_next = np.zeros(U)
    dc_next = np.zeros(U)
    for st, y in zip(reversed(trajectory), reversed(list(labels))):
        dh = dh_next.copy()
        if y is not None:
            yhat, acts = head_forward(head, st.h)
            dh += head_backward(head, acts, yhat - y, grads)
        tc = np.tanh(st.c)
        do = dh * tc
        dc = dh * st.o * (1.0 - tc ** 2) + dc_next
        dh_next = _lstm_gate_backward(w, st, dc, do, grads)
        dc_next = dc * st.f
    return _check_finite(grads)


def optm_local_grads(selected, state, w, head, label):
    """Gradients for one optimum-output step with the repository as a stop-gradient.

    The loss flows through the head into the selected component's own
    expression only; h_prev, c_prev and the importance vector are constants.
    ``selected`` is the 1-based repository index (1=f ... 6=h).
    """
    name = COMPONENTS[selected - 1]
    grads = zero_grads(w, head)
    yhat, acts = head_forward(head, state.component(selected))
    dout = head_backward(head, acts, yhat - label, grads)
    st = state
    if name == "f":
        da = dout * st.f * (1.0 - st.f)
        _accum_gate(grads, "f", da, st)
    elif name == "i":
        _accum_gate(grads, "i", dout * st.i * (1.0 - st.i), st)
    elif name == "c_tilde":
        _accum_gate(grads, "c", dout * (1.0 - st.c_tilde ** 2), st)
    elif name == "o":
        _accum_gate(grads, "o", dout * st.o * (1.0 - st.o), st)
    elif name == "c":
        _lstm_gate_backward(w, st, dout, None, grads, gates="fic")
    else:
        tc = np.tanh(st.c)
        _lstm_gate_backward(w, st, dout * st.o * (1.0 - tc ** 2), dout * tc, grads)
    return _check_finite(grads)


def _accum_gate(grads, g, da, st):
    grads[f"W_{g}"] += np.outer(da, st.x)
    grads[f"U_{g}"] += np.outer(da, st.h_prev)
    grads[f"b_{g}"] += da


def gru_bptt_grads(w, head, trajectory, labels):
    """GRU counterpart of :func:`bptt_grads` (trajectory of GruState)."""
    if len(trajectory) == 0 or len(labels) != len(trajectory):
        raise ShapeError(f"need T >= 1 states and one label per state, got {len(trajectory)} / {len(labels)}")
    grads = zero_grads(w, head)
    dh_next = np.zeros(w.units)
    for st, y in zip(reversed(trajectory), reversed(list(labels))):
        dh = dh_next.copy()
        if y is not None:
            yhat, acts = head_forward(head, st.h)
            dh += head_backward(head, acts, yhat - y, grads)
        dn = dh * (1.0 - st.z)
        dz = dh * (st.h_prev - st.n)
        da_n = dn * (1.0 - st.n ** 2)
        da_z = dz * st.z * (1.0 - st.z)
        rh = st.r * st.h_prev
        drh = w.U_n.T @ da_n
        da_r = drh * st.h_prev * st.r * (1.0 - st.r)
        for g, da, hin in (("z", da_z, st.h_prev), ("r", da_r, st.h_prev), ("n", da_n, rh)):
            grads[f"W_{g}"] += np.outer(da, st.x)
            grads[f"U_{g}"] += np.outer(da, hin)
            grads[f"b_{g}"] += da
        dh_next = dh * st.z + drh * st.r + w.U_z.T @ da_z + w.U_r.T @ da_r
    return _check_finite(grads)


# -- optimizers --------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = None
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.kind!r}")


def step(opt, params, grads):
    """Update ``params`` in place from ``grads`` (both name -> array dicts)."""
    if opt.clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > opt.clip_norm:
            grads = {k: g * (opt.clip_norm / norm) for k, g in grads.items()}
    if opt.kind == "sgd":
        for k, p in params.items():
            p -= opt.lr * grads[k]
        return params
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for k, p in params.items():
        g = grads[k]
        if k not in opt.m:
            opt.m[k] = np.zeros_like(p)
            opt.v[k] = np.zeros_like(p)
        m, v = opt.m[k], opt.v[k]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


# -- bookkeeping -------------------------------------------------------------


def param_count(units, inputs, outputs):
    """Cell parameter count W = 4U^2 + 4UI + UO + 3U."""
    if min(units, inputs, outputs) <= 0:
        raise ConfigError("param_count needs positive sizes")
    U, I, O = units, inputs, outputs
    return 4 * U * U + 4 * U * I + U * O + 3 * U


# -- gradient checking -------------------------------------------------------


def numerical_grads(loss_fn, tensors, h=1e-6):
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``tensors``.

    Perturbs the arrays in place and restores them.
    """
    out = {}
    for name, p in tensors.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            lp = loss_fn()
            flat[j] = old - h
            lm = loss_fn()
            flat[j] = old
            gflat[j] = (lp - lm) / (2.0 * h)
        out[name] = g
    return out


def relative_error(a, b):
    """||a - b|| / max(||a||, ||b||); zero when both are exactly zero."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def lstm_sequence_loss(w, head, xs, h0, c0, labels):
    h, c, loss = h0, c0, 0.0
    for x, y in zip(xs, labels):
        st = lstm_forward(w, x, h, c)
        h, c = st.h, st.c
        if y is not None:
            loss += 0.5 * (head_forward(head, h)[0] - y) ** 2
    return loss


def optm_local_loss(w, head, x, h_prev, c_prev, selected, label):
    st = lstm_forward(w, x, h_prev, c_prev)
    return 0.5 * (head_forward(head, st.component(selected))[0] - label) ** 2


def _random_problem(rng, U, D, sizes):
    w = LstmWeights.from_dict({k: rng.uniform(-1, 1, s) for k, s in LstmWeights.shapes(U, D).items()})
    head = HeadWeights.from_dict({k: rng.uniform(-1, 1, s) for k, s in HeadWeights.shapes(U, sizes).items()})
    return w, head


@dataclass
class GradCheckResult:
    case: str
    tensor: str
    rel_error: float


def gradcheck_suite(seed=0, perturb=0.0, h=1e-6, units=2, inputs=3, head_sizes=(4, 1)):
    """Finite-difference checks of every analytic gradient routine.

    Covers LSTM BPTT for T in {1, 2, 3}, the local optimum-output gradients
    for each of the six selectable components, and GRU BPTT for T in {1, 3}.
    ``perturb`` scales analytic gradients by ``1 + perturb`` to self-test
    the harness.
    """
    rng = make_rng(seed)
    results = []

    def record(case, analytic, numeric):
        for k in analytic:
            results.append(GradCheckResult(case, k, relative_error(analytic[k] * (1.0 + perturb), numeric[k])))

    for T in (1, 2, 3):
        w, head = _random_problem(rng, units, inputs, head_sizes)
        xs = rng.uniform(-1, 1, (T, inputs))
        h0, c0 = rng.uniform(-1, 1, units), rng.uniform(-1, 1, units)
        labels = list(rng.uniform(-1, 1, T))
        traj, hh, cc = [], h0, c0
        for x in xs:
            st = lstm_forward(w, x, hh, cc)
            traj.append(st)
            hh, cc = st.h, st.c
        analytic = bptt_grads(w, head, traj, labels)
        tensors = {**w.tensors(), **head.tensors()}
        numeric = numerical_grads(lambda: lstm_sequence_loss(w, head, xs, h0, c0, labels), tensors, h)
        record(f"lstm_bptt_T{T}", analytic, numeric)

    for k in range(1, len(COMPONENTS) + 1):
        w, head = _random_problem(rng, units, inputs, head_sizes)
        x = rng.uniform(-1, 1, inputs)
        h_prev, c_prev = rng.uniform(-1, 1, units), rng.uniform(-1, 1, units)
        label = float(rng.uniform(-1, 1))
        st = lstm_forward(w, x, h_prev, c_prev)
        analytic = optm_local_grads(k, st, w, head, label)
        tensors = {**w.tensors(), **head.tensors()}
        numeric = numerical_grads(lambda: optm_local_loss(w, head, x, h_prev, c_prev, k, label), tensors, h)
        record(f"optm_local_{COMPONENTS[k - 1]}", analytic, numeric)

    for T in (1, 3):
        gw = GruWeights.from_dict({k: rng.uniform(-1, 1, s) for k, s in GruWeights.shapes(units, inputs).items()})
        head = HeadWeights.from_dict({k: rng.uniform(-1, 1, s) for k, s in HeadWeights.shapes(units, head_sizes).items()})
        xs = rng.uniform(-1, 1, (T, inputs))
        h0 = rng.uniform(-1, 1, units)
        labels = list(rng.uniform(-1, 1, T))

        def gru_loss():
            hh, loss = h0, 0.0
            for x, y in zip(xs, labels):
                hh = gru_forward(gw, x, hh).h
                loss += 0.5 * (head_forward(head, hh)[0] - y) ** 2
            return loss

        traj, hh = [], h0
        for x in xs:
            st = gru_forward(gw, x, hh)
            traj.append(st)
            hh = st.h
        analytic = gru_bptt_grads(gw, head, traj, labels)
        numeric = numerical_grads(gru_loss, {**gw.tensors(), **head.tensors()}, h)
        record(f"gru_bptt_T{T}", analytic, numeric)

    return results
