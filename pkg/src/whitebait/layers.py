"""Differentiable layers: embedding lookup, LSTM, batch normalization,
inverted dropout, and dense.

Everything is built from nncore primitives, so one backward sweep covers any
stack of these. Train/infer mode is always an explicit argument; nothing
switches behaviour implicitly.
"""

import numpy as np

from . import nncore as nc
from .nncore import Parameter, ShapeError, Tensor

EMBED_INIT_RANGE = 0.05
FORGET_BIAS_INIT = 1.0
BATCHNORM_MOMENTUM = 0.99
BATCHNORM_EPSILON = 1e-5

TRAIN = "train"
INFER = "infer"


def _check_mode(mode):
    if mode not in (TRAIN, INFER):
        raise ValueError("mode must be %r or %r, got %r" % (TRAIN, INFER, mode))


def fan_uniform(rng, fan_in, fan_out):
    """Scaled-uniform draw for an affine weight matrix."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class EmbeddingTable:
    """Row-per-id lookup table; rows init uniform in +-EMBED_INIT_RANGE."""

    def __init__(self, name, n_rows, embed_dim, rng):
        self.weights = Parameter(
            name, rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE,
                              size=(n_rows, embed_dim)))
        self.n_rows = n_rows
        self.embed_dim = embed_dim

    def parameters(self):
        return [self.weights]


def embed(ids, table):
    """Look up rows for an EncodedSequence or a plain 1-D id array.

    Backward scatters gradients only into the looked-up rows, accumulating
    across repeats.
    """
    if hasattr(ids, "ids"):
        ids = ids.ids
    return nc.gather_rows(table.weights, np.asarray(ids))


class LstmCell:
    """Gate weights of a single LSTM layer.

    Input weights W_*, recurrent weights U_*, biases b_* for the input (i),
    forget (f), output (o) and candidate (g) gates. The forget bias starts
    at +1 so early training does not wipe the cell state.
    """

    GATES = ("i", "f", "o", "g")

    def __init__(self, name, input_dim, hidden_dim, rng):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        for gate in self.GATES:
            setattr(self, "W_" + gate, Parameter(
                "%s/W_%s" % (name, gate), fan_uniform(rng, input_dim, hidden_dim)))
        for gate in self.GATES:
            setattr(self, "U_" + gate, Parameter(
                "%s/U_%s" % (name, gate), fan_uniform(rng, hidden_dim, hidden_dim)))
        for gate in self.GATES:
            bias = np.full(hidden_dim, FORGET_BIAS_INIT) if gate == "f" \
                else np.zeros(hidden_dim)
            setattr(self, "b_" + gate, Parameter("%s/b_%s" % (name, gate), bias))

    def parameters(self):
        return [getattr(self, prefix + gate)
                for prefix in ("W_", "U_", "b_")
                for gate in self.GATES]


def _gate(x_t, h_prev, w, u, b):
    return nc.add(nc.affine(x_t, w, b), nc.matmul(h_prev, u))


def lstm_step(x_t, h_prev, c_prev, cell):
    """One LSTM step over a [batch, input_dim] slice; returns (h_t, c_t)."""
    i = nc.sigmoid(_gate(x_t, h_prev, cell.W_i, cell.U_i, cell.b_i))
    f = nc.sigmoid(_gate(x_t, h_prev, cell.W_f, cell.U_f, cell.b_f))
    o = nc.sigmoid(_gate(x_t, h_prev, cell.W_o, cell.U_o, cell.b_o))
    g = nc.tanh(_gate(x_t, h_prev, cell.W_g, cell.U_g, cell.b_g))
    c_t = nc.add(nc.mul(f, c_prev), nc.mul(i, g))
    h_t = nc.mul(o, nc.tanh(c_t))
    return h_t, c_t


def lstm_sequence(xs, cell, true_length):
    """Run the cell over one sequence [max_len, input_dim] from zero state.

    Only the first `true_length` positions are consumed, so padding never
    advances the state; true_length 0 returns the zero vector.
    """
    if true_length < 0 or true_length > xs.data.shape[0]:
        raise ShapeError("lstm_sequence: true_length %d out of range for %d steps"
                         % (true_length, xs.data.shape[0]))
    h = Tensor(np.zeros((1, cell.hidden_dim)))
    c = Tensor(np.zeros((1, cell.hidden_dim)))
    for t in range(true_length):
        x_t = nc.slice_axis(xs, 0, t, t + 1)
        h, c = lstm_step(x_t, h, c, cell)
    return nc.reshape(h, (cell.hidden_dim,))


def lstm_masked_batch(step_inputs, lengths, cell):
    """Batched LSTM with per-row masking; equivalent to running
    lstm_sequence row by row.

    `step_inputs` is a list of [batch, input_dim] tensors, one per timestep
    (at least max(lengths) of them); rows whose length is exhausted keep
    their state frozen. Returns h [batch, hidden_dim].
    """
    lengths = np.asarray(lengths)
    batch = lengths.shape[0]
    h = Tensor(np.zeros((batch, cell.hidden_dim)))
    c = Tensor(np.zeros((batch, cell.hidden_dim)))
    steps = int(lengths.max()) if batch else 0
    for t in range(steps):
        live = Tensor((lengths > t).astype(np.float64).reshape(batch, 1))
        frozen = Tensor(1.0 - live.data)
        h_new, c_new = lstm_step(step_inputs[t], h, c, cell)
        h = nc.add(nc.mul(h_new, live), nc.mul(h, frozen))
        c = nc.add(nc.mul(c_new, live), nc.mul(c, frozen))
    return h


class BatchNormLayer:
    """Per-feature scale/shift with batch statistics in training and running
    statistics at inference."""

    def __init__(self, name, n_features, momentum=BATCHNORM_MOMENTUM,
                 epsilon=BATCHNORM_EPSILON):
        self.gamma = Parameter(name + "/gamma", np.ones(n_features))
        self.beta = Parameter(name + "/beta", np.zeros(n_features))
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self.momentum = momentum
        self.epsilon = epsilon

    def parameters(self):
        return [self.gamma, self.beta]


def batchnorm(x, layer, mode):
    """Normalize a [batch, features] tensor.

    Train mode normalizes by batch mean/variance (biased) and updates the
    running statistics; it requires batch >= 2. Infer mode normalizes by the
    running statistics only.
    """
    _check_mode(mode)
    if mode == TRAIN:
        if x.data.shape[0] < 2:
            raise ShapeError("batchnorm: train mode needs a batch of >= 2, got %d"
                             % x.data.shape[0])
        mu = nc.mean(x, axis=0)
        centered = nc.sub(x, mu)
        var = nc.mean(nc.mul(centered, centered), axis=0)
        m = layer.momentum
        layer.running_mean = m * layer.running_mean + (1 - m) * mu.data.reshape(-1)
        layer.running_var = m * layer.running_var + (1 - m) * var.data.reshape(-1)
        denom = nc.sqrt(nc.add(var, Tensor(layer.epsilon)))
        xhat = nc.div(centered, denom)
    else:
        mu = Tensor(layer.running_mean)
        denom = Tensor(np.sqrt(layer.running_var + layer.epsilon))
        xhat = nc.div(nc.sub(x, mu), denom)
    return nc.add(nc.mul(xhat, layer.gamma), layer.beta)


class DropoutLayer:
    """Inverted dropout: zero with probability `rate` during training and
    scale survivors by 1/(1-rate); identity at inference."""

    def __init__(self, rate, rng):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1), got %r" % rate)
        self.rate = rate
        self.rng = rng

    def sample_mask(self, shape):
        keep = self.rng.random(shape) >= self.rate
        return keep.astype(np.float64) / (1.0 - self.rate)


def dropout(x, layer, mode, mask=None):
    """Apply a dropout layer; `mask` overrides the random draw (used to
    freeze masks in gradient checks)."""
    _check_mode(mode)
    if mode == INFER:
        return x
    if mask is None:
        if layer.rate == 0.0:
            return x
        mask = layer.sample_mask(x.data.shape)
    return nc.mul(x, Tensor(mask))


def dense(x, w, b, activation="none"):
    """Affine map plus an optional activation from {none, relu, sigmoid}."""
    out = nc.affine(x, w, b)
    if activation == "none":
        return out
    if activation == "relu":
        return nc.relu(out)
    if activation == "sigmoid":
        return nc.sigmoid(out)
    raise ValueError("unknown activation %r" % activation)
