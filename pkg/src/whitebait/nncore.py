"""Reverse-mode autodiff over dense float64 arrays, plus RMSProp and the
early-stopping / learning-rate-decay schedule.

Primitive ops executed inside a ``with Tape():`` block record themselves in
execution order (a topological order of the data flow); ``backward()`` replays
the tape once in reverse, accumulating gradients at fan-in points. Outside a
tape context the same ops run without recording, which is the inference path.

Every op checks its output for NaN/Inf and fails fast instead of letting a
bad value propagate.
"""

import hashlib
import struct

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class NumericsError(ArithmeticError):
    """A tensor stopped being finite (NaN or Inf)."""


# ---------------------------------------------------------------------------
# Tape and tensors

_TAPE_STACK = []


class Tape:
    """Ordered record of the primitive ops of one forward pass.

    A tape is meant for a single forward/backward cycle; ``node.visits`` is
    kept so tests can assert the reverse sweep touches each op exactly once.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must unwind in LIFO order"
        return False

    def __len__(self):
        return len(self.nodes)


class Node:
    __slots__ = ("op", "output", "backward_fn", "visits")

    def __init__(self, op, output, backward_fn):
        self.op = op
        self.output = output
        self.backward_fn = backward_fn
        self.visits = 0


class Tensor:
    """Dense float64 array plus the gradient accumulated by backward()."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return "Tensor(shape=%r)" % (self.data.shape,)


class Parameter(Tensor):
    """Trainable tensor: value, gradient, and the RMSProp accumulator."""

    __slots__ = ("name", "acc")

    def __init__(self, name, data):
        super().__init__(np.array(data, dtype=np.float64))
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.acc = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return "Parameter(%r, shape=%r)" % (self.name, self.data.shape)


class _TapePause:
    """Suspends recording inside an active tape (frozen/detached forward)."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return None

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is None, "tapes must unwind in LIFO order"
        return False


def no_tape():
    return _TapePause()


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(op, out, backward_fn):
    if not np.all(np.isfinite(out.data)):
        raise NumericsError("%s produced non-finite values" % op)
    tape = _active_tape()
    if tape is not None:
        tape.nodes.append(Node(op, out, backward_fn))
    return out


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitives


def add(a, b):
    out = Tensor(a.data + b.data)

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _emit("add", out, backward_fn)


def sub(a, b):
    out = Tensor(a.data - b.data)

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _emit("sub", out, backward_fn)


def mul(a, b):
    out = Tensor(a.data * b.data)

    def backward_fn(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _emit("mul", out, backward_fn)


def div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(a.data / b.data)

    def backward_fn(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _emit("div", out, backward_fn)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul: incompatible shapes %r and %r"
                         % (a.data.shape, b.data.shape))
    out = Tensor(a.data @ b.data)

    def backward_fn(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _emit("matmul", out, backward_fn)


def affine(x, w, b):
    """x @ w + b with b broadcast across rows; b may be None."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError("affine: incompatible shapes x%r w%r"
                         % (x.data.shape, w.data.shape))
    if b is not None and b.data.shape != (w.data.shape[1],):
        raise ShapeError("affine: bias shape %r does not match width %d"
                         % (b.data.shape, w.data.shape[1]))
    y = x.data @ w.data
    if b is not None:
        y = y + b.data
    out = Tensor(y)

    def backward_fn(g):
        _accum(x, g @ w.data.T)
        _accum(w, x.data.T @ g)
        if b is not None:
            _accum(b, g.sum(axis=0))

    return _emit("affine", out, backward_fn)


def sigmoid(x):
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    out = Tensor(s)

    def backward_fn(g):
        _accum(x, g * s * (1.0 - s))

    return _emit("sigmoid", out, backward_fn)


def tanh(x):
    t = np.tanh(x.data)
    out = Tensor(t)

    def backward_fn(g):
        _accum(x, g * (1.0 - t * t))

    return _emit("tanh", out, backward_fn)


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0))

    def backward_fn(g):
        _accum(x, g * (x.data > 0.0))

    return _emit("relu", out, backward_fn)


def sqrt(x):
    with np.errstate(invalid="ignore"):
        r = np.sqrt(x.data)
    out = Tensor(r)

    def backward_fn(g):
        _accum(x, g * 0.5 / r)

    return _emit("sqrt", out, backward_fn)


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]

    def backward_fn(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + size)
            _accum(t, g[tuple(idx)])
            offset += size

    return _emit("concat", out, backward_fn)


def slice_axis(x, axis, start, stop):
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(x.data[idx].copy())

    def backward_fn(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[idx] += g

    return _emit("slice", out, backward_fn)


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))

    def backward_fn(g):
        _accum(x, g.reshape(x.data.shape))

    return _emit("reshape", out, backward_fn)


def mean(x, axis=None):
    """Mean over all elements (axis=None, 0-d output) or one axis (keepdims)."""
    if axis is None:
        out = Tensor(x.data.mean())
        n = x.data.size

        def backward_fn(g):
            _accum(x, np.full_like(x.data, float(g) / n))

    else:
        out = Tensor(x.data.mean(axis=axis, keepdims=True))
        n = x.data.shape[axis]

        def backward_fn(g):
            _accum(x, np.broadcast_to(g / n, x.data.shape).copy())

    return _emit("mean", out, backward_fn)


def mse(pred, target):
    """Mean squared error over all elements; 0-d output."""
    if pred.data.shape != target.data.shape:
        raise ShapeError("mse: shape mismatch %r vs %r"
                         % (pred.data.shape, target.data.shape))
    diff = pred.data - target.data
    out = Tensor(np.mean(diff * diff))
    n = pred.data.size

    def backward_fn(g):
        scaled = (2.0 * float(g) / n) * diff
        _accum(pred, scaled)
        _accum(target, -scaled)

    return _emit("mse", out, backward_fn)


def gather_rows(table, ids):
    """Row lookup table[ids]; backward scatter-adds into the looked-up rows."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1:
        raise ShapeError("gather: ids must be 1-D, got shape %r" % (ids.shape,))
    rows = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise ShapeError("gather: id out of range for table with %d rows" % rows)
    out = Tensor(table.data[ids])

    def backward_fn(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return _emit("gather", out, backward_fn)


# ---------------------------------------------------------------------------
# Backward sweep


def backward(tape, loss):
    """Populate gradients of everything `loss` depends on.

    `loss` must be a scalar produced on `tape`. Each tape node is processed
    exactly once, in reverse execution order; nodes whose output received no
    gradient are skipped (their contribution is zero).
    """
    if loss.data.size != 1:
        raise ShapeError("backward: loss must be scalar, got shape %r"
                         % (loss.data.shape,))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        node.visits += 1
        g = node.output.grad
        if g is None:
            continue
        node.backward_fn(g)


# ---------------------------------------------------------------------------
# RMSProp and the training schedule


@dataclass
class TrainSchedule:
    """Optimizer and early-stopping settings.

    When validation loss has not improved (strictly, with 1e-6 tolerance) for
    `patience` consecutive epochs the learning rate is multiplied by
    `lr_decay_factor`; if that would push it below `min_lr`, training stops
    instead. `max_epochs` is a hard cap either way.
    """

    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-8
    patience: int = 5
    lr_decay_factor: float = 0.5
    max_epochs: int = 100
    min_lr: float = 1e-5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must be in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ValueError("lr_decay_factor must be in (0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.min_lr <= 0:
            raise ValueError("min_lr must be > 0")


IMPROVEMENT_TOL = 1e-6


def rmsprop_step(param, schedule, lr=None):
    """One RMSProp update: acc <- rho*acc + (1-rho)*g^2, then
    value <- value - lr*g / (sqrt(acc) + epsilon), elementwise."""
    g = param.grad
    if not np.all(np.isfinite(g)):
        raise NumericsError("rmsprop: non-finite gradient for %r" % param.name)
    if lr is None:
        lr = schedule.learning_rate
    param.acc *= schedule.rho
    param.acc += (1.0 - schedule.rho) * g * g
    param.data -= lr * g / (np.sqrt(param.acc) + schedule.epsilon)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float  # NaN for the epoch-0 baseline row
    val_loss: float
    lr: float


@dataclass
class ScheduleResult:
    history: list
    best_epoch: int
    best_val: float


def run_schedule(train_step, val_loss, schedule, snapshot=None, restore=None):
    """Drive training epochs under early stopping with learning-rate decay.

    `train_step(lr)` runs one epoch and returns its training loss;
    `val_loss()` evaluates the current model. Epoch 0 is the pre-training
    baseline, so a run that never improves returns the initial state. When
    `snapshot`/`restore` are given, the parameters from the best-validation
    epoch are restored before returning.
    """
    lr = schedule.learning_rate
    best_val = float(val_loss())
    best_epoch = 0
    best_snap = snapshot() if snapshot is not None else None
    history = [EpochRecord(0, float("nan"), best_val, lr)]
    bad_epochs = 0
    for epoch in range(1, schedule.max_epochs + 1):
        tl = float(train_step(lr))
        vl = float(val_loss())
        history.append(EpochRecord(epoch, tl, vl, lr))
        if vl < best_val - IMPROVEMENT_TOL:
            best_val = vl
            best_epoch = epoch
            bad_epochs = 0
            if snapshot is not None:
                best_snap = snapshot()
        else:
            bad_epochs += 1
            if bad_epochs >= schedule.patience:
                next_lr = lr * schedule.lr_decay_factor
                if next_lr < schedule.min_lr:
                    break
                lr = next_lr
                bad_epochs = 0
    if restore is not None and best_snap is not None:
        restore(best_snap)
    return ScheduleResult(history, best_epoch, best_val)


# ---------------------------------------------------------------------------
# Parameter serialization and seeded streams

_MAGIC = b"WBNN"
_VERSION = 1


def save_parameters(path, params):
    """Write parameters to a flat binary file.

    `params` is either an iterable of Parameters or a name -> array mapping
    (written in mapping order). Layout: magic, version (u32), count (u32);
    then per parameter a UTF-8 name (u16 length prefix), ndim (u32), dims
    (u32 each), and the values as little-endian float64 in row-major order.
    """
    if isinstance(params, dict):
        entries = [(name, np.asarray(arr)) for name, arr in params.items()]
    else:
        entries = [(p.name, p.data) for p in params]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(entries)))
        for name, arr in entries:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_parameters(path):
    """Read a parameter file written by save_parameters; name -> array."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError("%s: not a parameter file (bad magic)" % path)
    version, count = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise ValueError("%s: unsupported parameter file version %d" % (path, version))
    offset = 12
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = []
        for _ in range(ndim):
            (dim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape.append(dim)
        n = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
        offset += 8 * n
        out[name] = values.astype(np.float64).reshape(shape)
    if offset != len(raw):
        raise ValueError("%s: trailing bytes after last parameter" % path)
    return out


def seed_stream(seed, name):
    """Named, independent RNG stream derived from one root seed.

    The stream key is a stable hash of `name`, so every component gets its
    own reproducible generator regardless of creation order.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))
