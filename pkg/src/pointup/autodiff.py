"""Tape-based reverse-mode automatic differentiation on dense float64 arrays.

A Tape records ops in execution order while a ``recording`` context is
active; ``backward`` walks the records in exact reverse order and
accumulates gradients additively at fan-out. Everything is double
precision, and any op that produces a non-finite value raises
NumericalError immediately, which keeps divergence diagnosable.
"""

from contextlib import contextmanager

import numpy as np

from .errors import NumericalError

_active_tape = None


class Tensor:
    """Dense float64 value, optionally tracked for gradients.

    ``grad`` is populated by ``backward`` for every requires_grad tensor
    reached from the loss; it stays None for tensors the loss does not
    depend on (a None gradient means zero).
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def grad_value(self):
        """Gradient as an array, treating an untouched tensor as zero."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Execution-ordered record of (op, inputs, output, backward closure)."""

    def __init__(self):
        self._entries = []
        self._next_id = 0

    def __len__(self):
        return len(self._entries)

    def record(self, op_name, inputs, output, backward_fn):
        if output.node_id is None:
            output.node_id = self._next_id
            self._next_id += 1
        self._entries.append((op_name, inputs, output, backward_fn))

    def clear(self):
        self._entries.clear()


@contextmanager
def recording(tape=None):
    """Activate a tape for the duration of the block and yield it."""
    global _active_tape
    if tape is None:
        tape = Tape()
    prev = _active_tape
    _active_tape = tape
    try:
        yield tape
    finally:
        _active_tape = prev


def active_tape():
    return _active_tape


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def constant(value):
    """Untracked tensor; gradients never flow into it."""
    return Tensor(np.asarray(value, dtype=np.float64))


def _check_finite(data, op_name):
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"op '{op_name}' produced non-finite values")


def _make(op_name, data, inputs, backward_fn):
    _check_finite(data, op_name)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape
    if tape is not None and out.requires_grad:
        tape.record(op_name, inputs, out, backward_fn)
    return out


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _make("add", data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _make("sub", data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data
    a_data, b_data = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * b_data, a.shape), _unbroadcast(g * a_data, b.shape))

    return _make("mul", data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data
    a_data, b_data = a.data, b.data

    def backward(g):
        ga = g / b_data
        gb = -g * a_data / (b_data * b_data)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make("div", data, (a, b), backward)


def neg(a):
    a = as_tensor(a)

    def backward(g):
        return (-g,)

    return _make("neg", -a.data, (a,), backward)


def square(a):
    a = as_tensor(a)
    a_data = a.data

    def backward(g):
        return (g * 2.0 * a_data,)

    return _make("square", a_data * a_data, (a,), backward)


def sqrt(a):
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        data = np.sqrt(a.data)

    def backward(g):
        return (g / (2.0 * data),)

    return _make("sqrt", data, (a,), backward)


def log(a):
    a = as_tensor(a)
    a_data = a.data
    with np.errstate(invalid="ignore", divide="ignore"):
        data = np.log(a.data)

    def backward(g):
        return (g / a_data,)

    return _make("log", data, (a,), backward)


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _make("exp", data, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    # numerically stable in both tails
    data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                    np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def backward(g):
        return (g * data * (1.0 - data),)

    return _make("sigmoid", data, (a,), backward)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _make("relu", np.where(mask, a.data, 0.0), (a,), backward)


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, slope * a.data)

    def backward(g):
        return (g * np.where(mask, 1.0, slope),)

    return _make("leaky_relu", data, (a,), backward)


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient passes through the interior only."""
    a = as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        return (g * inside,)

    return _make("clip", np.clip(a.data, lo, hi), (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data
    with np.errstate(over="ignore", invalid="ignore"):
        data = a_data @ b_data

    def backward(g):
        return (g @ b_data.T, a_data.T @ g)

    return _make("matmul", data, (a, b), backward)


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got shape {a.shape}")

    def backward(g):
        return (g.T,)

    return _make("transpose", a.data.T, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    old_shape = a.shape

    def backward(g):
        return (g.reshape(old_shape),)

    return _make("reshape", a.data.reshape(shape), (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", data, tuple(tensors), backward)


def gather(a, indices, axis=0):
    """Take rows/elements along ``axis``; the scatter-add adjoint handles
    repeated indices correctly."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise ValueError(f"gather index out of range for axis {axis} of shape {a.shape}")
    shape = a.shape

    def backward(g):
        grad = np.zeros(shape, dtype=np.float64)
        if axis == 0:
            np.add.at(grad, idx, g)
        else:
            moved = np.moveaxis(grad, axis, 0)
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (grad,)

    return _make("gather", np.take(a.data, idx, axis=axis), (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.data.ndim)
    shape = a.shape

    def backward(g):
        g_exp = g
        if not keepdims:
            for ax in sorted(axes):
                g_exp = np.expand_dims(g_exp, ax)
        return (np.broadcast_to(g_exp, shape).copy(),)

    return _make("reduce_sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    shape = a.shape

    def backward(g):
        g_exp = g
        if not keepdims:
            for ax in sorted(axes):
                g_exp = np.expand_dims(g_exp, ax)
        return (np.broadcast_to(g_exp, shape) / count,)

    return _make("reduce_mean", a.data.mean(axis=axes, keepdims=keepdims), (a,), backward)


def reduce_max(a, axis=None, keepdims=False):
    """Max reduction; ties route the full gradient to the lowest index."""
    a = as_tensor(a)
    if axis is None:
        flat_idx = int(np.argmax(a.data))
        shape = a.shape

        def backward(g):
            grad = np.zeros(shape, dtype=np.float64)
            grad.reshape(-1)[flat_idx] = np.asarray(g).reshape(-1)[0]
            return (grad,)

        data = a.data.max()
        if keepdims:
            data = np.full((1,) * a.data.ndim, data)
        return _make("reduce_max", data, (a,), backward)

    ax = axis % a.data.ndim
    argmax = np.expand_dims(np.argmax(a.data, axis=ax), ax)
    shape = a.shape

    def backward(g):
        g_exp = g if keepdims else np.expand_dims(g, ax)
        grad = np.zeros(shape, dtype=np.float64)
        np.put_along_axis(grad, argmax, g_exp, axis=ax)
        return (grad,)

    return _make("reduce_max", a.data.max(axis=ax, keepdims=keepdims), (a,), backward)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make("softmax", data, (a,), backward)


def vecnorm(a, axis=-1):
    """Euclidean norm along ``axis`` (reduced away).

    The adjoint is v/|v| and is defined as 0 where the norm vanishes, so
    losses built on point distances stay finite for coincident points.
    """
    a = as_tensor(a)
    data = np.sqrt(np.sum(a.data * a.data, axis=axis))
    a_data = a.data

    def backward(g):
        norms = np.expand_dims(data, axis)
        g_exp = np.expand_dims(g, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(norms > 0, a_data / np.where(norms > 0, norms, 1.0), 0.0)
        return (g_exp * unit,)

    return _make("vecnorm", data, (a,), backward)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss, tape=None):
    """Accumulate dL/dt into ``t.grad`` for every tracked tensor.

    ``loss`` must be a scalar. The tape is cleared afterwards; re-running
    backward requires a fresh forward pass.
    """
    if tape is None:
        tape = _active_tape
    if tape is None:
        raise RuntimeError("backward called with no active tape")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")

    grads = {}
    if loss.node_id is not None:
        grads[loss.node_id] = np.ones_like(loss.data)
    elif loss.requires_grad:
        # a tracked leaf used directly as the loss
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0

    for op_name, inputs, output, backward_fn in reversed(tape._entries):
        g = grads.pop(output.node_id, None)
        if g is None:
            continue
        input_grads = backward_fn(g)
        for tensor, grad in zip(inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            grad = np.asarray(grad, dtype=np.float64).reshape(tensor.shape)
            if tensor.node_id is not None:
                if tensor.node_id in grads:
                    grads[tensor.node_id] = grads[tensor.node_id] + grad
                else:
                    grads[tensor.node_id] = grad
            else:
                # leaf parameter: accumulate into .grad
                if tensor.grad is None:
                    tensor.grad = grad.copy()
                else:
                    tensor.grad = tensor.grad + grad
            # intermediate tensors also expose their gradient, which is
            # occasionally useful in tests
            if tensor.node_id is not None:
                tensor.grad = grads[tensor.node_id]
    tape.clear()


def collect_grads(params):
    """Pop accumulated gradients off ``params`` (name -> array), zeroing them."""
    grads = {}
    for name, tensor in params:
        grads[name] = tensor.grad_value()
        tensor.zero_grad()
    return grads


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(func, inputs, h=1e-4, freeze_structure=False, skip_nonsmooth=False):
    """Max relative error between tape gradients and central differences.

    ``func`` maps the input tensors to a scalar Tensor and must be pure:
    it is re-evaluated ~2*size times with perturbed copies. The error is
    max over coordinates of |a - b| / max(1, |a|, |b|).

    ``freeze_structure=True`` pins data-dependent selections (neighbor
    graphs, matchings, disk memberships) to the unperturbed point, so the
    probe stays on the smooth branch the gradient belongs to.

    ``skip_nonsmooth=True`` excludes coordinates whose stencil straddles a
    kink (relu/hinge corners): the h and h/2 central differences must
    agree to 1e-3 relative, else the coordinate is skipped. The gradient
    at a kink is the one-sided branch value, which no symmetric stencil
    can measure.
    """
    from . import structure as _structure

    inputs = [as_tensor(t) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()

    recorder = _structure.Recorder() if freeze_structure else None

    def evaluate(build_tape=False):
        if recorder is None:
            if build_tape:
                with recording():
                    out = func(*inputs)
                    backward(out)
                return out
            return func(*inputs)
        with _structure.replaying(recorder):
            if build_tape:
                with recording():
                    out = func(*inputs)
                    backward(out)
                return out
            return func(*inputs)

    evaluate(build_tape=True)
    analytic = [t.grad_value().copy() for t in inputs]
    for t in inputs:
        t.zero_grad()

    def probe(flat, i, step):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(evaluate().data)
        flat[i] = orig - step
        f_minus = float(evaluate().data)
        flat[i] = orig
        return (f_plus - f_minus) / (2.0 * step)

    worst = 0.0
    for t, grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            numeric = probe(flat, i, h)
            if skip_nonsmooth:
                refined = probe(flat, i, h / 2.0)
                gap = abs(numeric - refined) / max(1.0, abs(numeric), abs(refined))
                if gap > 1e-3:
                    continue  # a kink sits inside the stencil
                numeric = refined
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
