"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Computations are recorded on an explicit :class:`Tape`: every primitive
operation appends one node (op kind, input node ids, saved activations), so
node order is a topological order of the dataflow graph by construction.
``Tape.backward`` walks the node list once in reverse and accumulates
gradients per node id.

The primitive set is exactly what an LSTM encoder, bilinear attention,
1-D convolution with max pooling, softmax losses and Gaussian log-density
terms need. No GPU, no general broadcasting, no higher-order derivatives.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "parameter",
    "apply",
    "grad_check",
    "active_tape",
    "OP_KINDS",
]

_UNTRACKED = -1


class AutodiffError(ValueError):
    """Shape mismatch, non-finite values, or tape misuse."""


def _as_f64(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    # NaN/Inf propagate through the sum, so one reduction detects them all.
    if not np.isfinite(arr.sum()):
        raise AutodiffError("non-finite values in tensor")
    return arr


class Tensor:
    """Dense float64 array plus an optional handle into the active tape."""

    __slots__ = ("values", "trainable", "name", "_node", "_tape_serial")

    def __init__(self, values, trainable: bool = False, name: str | None = None):
        self.values = _as_f64(values)
        self.trainable = trainable
        self.name = name
        self._node = _UNTRACKED
        self._tape_serial = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def node_id(self) -> int | None:
        """Node id on the active tape, or None when untracked."""
        tape = _ACTIVE[-1] if _ACTIVE else None
        if tape is not None and self._tape_serial == tape.serial:
            return self._node
        return None

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.values.shape})"

    # Operator sugar; everything routes through apply().
    def __add__(self, other):
        return apply("add", self, _coerce(other))

    def __sub__(self, other):
        return apply("sub", self, _coerce(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return apply("scale", self, factor=float(other))
        return apply("mul", self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return apply("neg", self)

    def __matmul__(self, other):
        return apply("matmul", self, _coerce(other))


def tensor(values, name: str | None = None) -> Tensor:
    """Constant (non-trainable) tensor."""
    return Tensor(values, trainable=False, name=name)


def parameter(values, name: str | None = None) -> Tensor:
    """Trainable tensor; it is watched automatically when first used under a tape."""
    return Tensor(values, trainable=True, name=name)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


_ACTIVE: list["Tape"] = []
_SERIAL = [0]


def active_tape() -> "Tape | None":
    return _ACTIVE[-1] if _ACTIVE else None


class Tape:
    """Ordered record of primitive ops; gradient slots keyed by node id."""

    def __init__(self):
        _SERIAL[0] += 1
        self.serial = _SERIAL[0]
        self.nodes: list[tuple[str, tuple[int, ...], tuple]] = []
        self.watched: dict[int, Tensor] = {}
        self._grads: list | None = None
        self._consumed = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE.pop()
        return False

    def watch(self, t: Tensor) -> int:
        """Register a leaf tensor; returns its node id on this tape."""
        if t._tape_serial == self.serial:
            return t._node
        nid = len(self.nodes)
        self.nodes.append(("leaf", (), ()))
        t._node = nid
        t._tape_serial = self.serial
        self.watched[nid] = t
        return nid

    def _record(self, op: str, input_ids: tuple[int, ...], ctx: tuple, out: Tensor) -> None:
        nid = len(self.nodes)
        self.nodes.append((op, input_ids, ctx))
        out._node = nid
        out._tape_serial = self.serial

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar loss; returns grads keyed by leaf node id.

        Parameters never reached from the loss get a zero gradient. A tape
        can be swept only once.
        """
        if self._consumed:
            raise AutodiffError("tape already consumed by a previous backward")
        if loss._tape_serial != self.serial:
            raise AutodiffError("loss is not on this tape")
        if loss.values.shape != ():
            raise AutodiffError(f"loss must be scalar, got shape {loss.values.shape}")
        self._consumed = True

        grads: list = [None] * len(self.nodes)
        grads[loss._node] = np.asarray(1.0)
        for nid in range(loss._node, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            op, input_ids, ctx = self.nodes[nid]
            if op == "leaf":
                continue
            for iid, ig in zip(input_ids, _BACKWARD[op](g, ctx)):
                if iid == _UNTRACKED or ig is None:
                    continue
                if grads[iid] is None:
                    grads[iid] = ig
                else:
                    grads[iid] = grads[iid] + ig
        self._grads = grads
        out = {}
        for nid, t in self.watched.items():
            g = grads[nid]
            out[nid] = np.zeros_like(t.values) if g is None else np.asarray(g)
        return out

    def grad(self, t: Tensor) -> np.ndarray | None:
        """Gradient of the swept loss with respect to ``t`` (None if untracked)."""
        if self._grads is None or t._tape_serial != self.serial:
            return None
        g = self._grads[t._node]
        return np.zeros_like(t.values) if g is None else np.asarray(g)

    def gradients_by_name(self, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
        """Map a named parameter dict to this tape's gradients (zeros if unused)."""
        if self._grads is None:
            raise AutodiffError("backward has not run on this tape")
        return {
            name: (self.grad(p) if p._tape_serial == self.serial else np.zeros_like(p.values))
            for name, p in params.items()
        }


# --------------------------------------------------------------------------
# Primitive operations.
#
# Each op has a forward returning (values, ctx) and a backward mapping
# (grad_out, ctx) -> tuple of input gradients aligned with the inputs
# (None for inputs that need no gradient, e.g. integer index arrays).
# --------------------------------------------------------------------------


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise AutodiffError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _fwd_add(a, b):
    if a.shape == b.shape:
        return a + b, (a.shape, b.shape)
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return a + b[None, :], (a.shape, b.shape)
    raise AutodiffError(f"add: shape mismatch {a.shape} vs {b.shape}")


def _bwd_add(g, ctx):
    a_shape, b_shape = ctx
    gb = g if b_shape == a_shape else g.sum(axis=0)
    return g, gb


def _fwd_sub(a, b):
    if a.shape == b.shape:
        return a - b, (a.shape, b.shape)
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return a - b[None, :], (a.shape, b.shape)
    raise AutodiffError(f"sub: shape mismatch {a.shape} vs {b.shape}")


def _bwd_sub(g, ctx):
    a_shape, b_shape = ctx
    gb = -g if b_shape == a_shape else -g.sum(axis=0)
    return g, gb


def _fwd_mul(a, b):
    _same_shape(a, b, "mul")
    return a * b, (a, b)


def _fwd_matmul(a, b):
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise AutodiffError(f"matmul: unsupported ranks {a.ndim}, {b.ndim}")
    if a.shape[-1] != b.shape[0]:
        raise AutodiffError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    return a @ b, (a, b)


def _bwd_matmul(g, ctx):
    a, b = ctx
    if a.ndim == 2 and b.ndim == 2:
        return g @ b.T, a.T @ g
    if a.ndim == 2 and b.ndim == 1:
        return np.outer(g, b), a.T @ g
    if a.ndim == 1 and b.ndim == 2:
        return b @ g, np.outer(a, g)
    return g * b, g * a  # 1D · 1D


def _fwd_softmax(x, axis):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return y, (y, axis)


def _bwd_softmax(g, ctx):
    y, axis = ctx
    dot = (g * y).sum(axis=axis, keepdims=True)
    return ((g - dot) * y,)


def _fwd_concat(*parts, axis=0):
    if any(p.ndim != parts[0].ndim for p in parts):
        raise AutodiffError("concat: rank mismatch")
    return np.concatenate(parts, axis=axis), (tuple(p.shape[axis] for p in parts), axis)


def _bwd_concat(g, ctx):
    sizes, axis = ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _fwd_stack_rows(*rows):
    if any(r.ndim != 1 for r in rows):
        raise AutodiffError("stack_rows: inputs must be vectors")
    return np.stack(rows, axis=0), (len(rows),)


def _bwd_stack_rows(g, ctx):
    return tuple(g[i] for i in range(ctx[0]))


def _fwd_gather_rows(w, ids):
    idx = np.asarray(ids, dtype=np.intp)
    return w[idx], (w.shape, idx)


def _bwd_gather_rows(g, ctx):
    shape, idx = ctx
    out = np.zeros(shape)
    np.add.at(out, idx, g)
    return out, None


def _fwd_gather(v, ids):
    if v.ndim != 1:
        raise AutodiffError("gather: input must be a vector")
    idx = np.asarray(ids, dtype=np.intp)
    return v[idx], (v.shape, idx)


def _fwd_take(v, index):
    if v.ndim != 1:
        raise AutodiffError("take: input must be a vector")
    return np.asarray(v[index]), (v.shape, int(index))


def _bwd_take(g, ctx):
    shape, index = ctx
    out = np.zeros(shape)
    out[index] = g
    return (out,)


def _fwd_row(m, index):
    if m.ndim != 2:
        raise AutodiffError("row: input must be a matrix")
    return m[index], (m.shape, int(index))


def _bwd_row(g, ctx):
    shape, index = ctx
    out = np.zeros(shape)
    out[index] = g
    return (out,)


def _fwd_slice1d(v, start, stop):
    if v.ndim != 1:
        raise AutodiffError("slice1d: input must be a vector")
    return v[start:stop], (v.shape, start, stop)


def _bwd_slice1d(g, ctx):
    shape, start, stop = ctx
    out = np.zeros(shape)
    out[start:stop] = g
    return (out,)


def _fwd_reshape(x, shape):
    return x.reshape(shape), (x.shape,)


def _fwd_sum(x):
    return np.asarray(x.sum()), (x.shape,)


def _fwd_sum_axis(x, axis):
    if x.ndim != 2:
        raise AutodiffError("sum_axis: input must be a matrix")
    return x.sum(axis=axis), (x.shape, axis)


def _bwd_sum_axis(g, ctx):
    shape, axis = ctx
    return (np.broadcast_to(np.expand_dims(g, axis), shape),)


def _fwd_conv1d_same(h, w, b):
    # h: (m, d) sequence, w: (k, d, f) filter bank, b: (f,). Zero same-padding.
    if h.ndim != 2 or w.ndim != 3 or b.ndim != 1:
        raise AutodiffError("conv1d_same: expected (m,d), (k,d,f), (f,)")
    m, d = h.shape
    k, dw, f = w.shape
    if dw != d or b.shape[0] != f:
        raise AutodiffError(f"conv1d_same: shape mismatch {h.shape}, {w.shape}, {b.shape}")
    left = (k - 1) // 2
    padded = np.zeros((m + k - 1, d))
    padded[left:left + m] = h
    out = np.tile(b, (m, 1))
    for j in range(k):
        out += padded[j:j + m] @ w[j]
    return out, (padded, w, m, k, left)


def _bwd_conv1d_same(g, ctx):
    padded, w, m, k, left = ctx
    gp = np.zeros_like(padded)
    gw = np.empty_like(w)
    for j in range(k):
        gp[j:j + m] += g @ w[j].T
        gw[j] = padded[j:j + m].T @ g
    return gp[left:left + m], gw, g.sum(axis=0)


def _fwd_maxpool_cols(x):
    # Max over the sequence axis; ties route gradient to the first maximum.
    if x.ndim != 2:
        raise AutodiffError("maxpool_cols: input must be a matrix")
    arg = np.argmax(x, axis=0)
    return x[arg, np.arange(x.shape[1])], (x.shape, arg)


def _bwd_maxpool_cols(g, ctx):
    shape, arg = ctx
    out = np.zeros(shape)
    out[arg, np.arange(shape[1])] = g
    return (out,)


def _fwd_dropout(x, mask):
    # mask already carries inverted scaling (kept entries are 1/keep_prob).
    _same_shape(x, mask, "dropout")
    return x * mask, (mask,)


def _fwd_sq_norm(x):
    return np.asarray((x * x).sum()), (x,)


def _fwd_l2_norm(x):
    n = np.asarray(np.sqrt((x * x).sum()))
    return n, (x, n)


def _bwd_l2_norm(g, ctx):
    x, n = ctx
    return (g * x / max(float(n), 1e-12),)


def _fwd_clamp_min(x, floor):
    return np.maximum(x, floor), (x > floor,)


def _fwd_sigmoid(a):
    # Clipped input keeps exp() finite; the true derivative is ~1e-26 there.
    y = 1.0 / (1.0 + np.exp(-np.clip(a, -60.0, 60.0)))
    return y, (y,)


def _fwd_exp(a):
    with np.errstate(over="ignore"):
        y = np.exp(a)
    return y, (y,)


def _fwd_log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(a), (a,)


_FORWARD = {
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "neg": lambda a: (-a, ()),
    "scale": lambda a, factor: (a * factor, (factor,)),
    "matmul": _fwd_matmul,
    "transpose": lambda a: (a.T, ()),
    "sigmoid": _fwd_sigmoid,
    "tanh": lambda a: (lambda y: (y, (y,)))(np.tanh(a)),
    "exp": _fwd_exp,
    "log": _fwd_log,
    "softmax": _fwd_softmax,
    "concat": _fwd_concat,
    "stack_rows": _fwd_stack_rows,
    "gather_rows": _fwd_gather_rows,
    "gather": _fwd_gather,
    "take": _fwd_take,
    "row": _fwd_row,
    "slice1d": _fwd_slice1d,
    "reshape": _fwd_reshape,
    "sum": _fwd_sum,
    "sum_axis": _fwd_sum_axis,
    "conv1d_same": _fwd_conv1d_same,
    "maxpool_cols": _fwd_maxpool_cols,
    "dropout": _fwd_dropout,
    "sq_norm": _fwd_sq_norm,
    "l2_norm": _fwd_l2_norm,
    "clamp_min": _fwd_clamp_min,
}

_BACKWARD = {
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": lambda g, ctx: (g * ctx[1], g * ctx[0]),
    "neg": lambda g, ctx: (-g,),
    "scale": lambda g, ctx: (g * ctx[0],),
    "matmul": _bwd_matmul,
    "transpose": lambda g, ctx: (g.T,),
    "sigmoid": lambda g, ctx: (g * ctx[0] * (1.0 - ctx[0]),),
    "tanh": lambda g, ctx: (g * (1.0 - ctx[0] * ctx[0]),),
    "exp": lambda g, ctx: (g * ctx[0],),
    "log": lambda g, ctx: (g / ctx[0],),
    "softmax": _bwd_softmax,
    "concat": _bwd_concat,
    "stack_rows": _bwd_stack_rows,
    "gather_rows": _bwd_gather_rows,
    "gather": lambda g, ctx: (_bwd_gather_rows(g, ctx)[0], None),
    "take": _bwd_take,
    "row": _bwd_row,
    "slice1d": _bwd_slice1d,
    "reshape": lambda g, ctx: (g.reshape(ctx[0]),),
    "sum": lambda g, ctx: (np.broadcast_to(g, ctx[0]),),
    "sum_axis": _bwd_sum_axis,
    "conv1d_same": _bwd_conv1d_same,
    "maxpool_cols": _bwd_maxpool_cols,
    "dropout": lambda g, ctx: (g * ctx[0],),
    "sq_norm": lambda g, ctx: (g * 2.0 * ctx[0],),
    "l2_norm": _bwd_l2_norm,
    "clamp_min": lambda g, ctx: (g * ctx[0],),
}

OP_KINDS = tuple(sorted(_FORWARD))

# Ops whose trailing inputs are index arrays, not tensors.
_INDEX_ARG_OPS = {"gather_rows", "gather"}


def register_op(name: str, forward, backward) -> None:
    """Add a fused op kind (forward -> (values, ctx), backward -> input grads).

    Fused kernels trade tape granularity for speed; they are held to the same
    finite-difference contract as the built-in primitives.
    """
    if name in _FORWARD:
        raise AutodiffError(f"op kind {name!r} already registered")
    _FORWARD[name] = forward
    _BACKWARD[name] = backward


def apply(op: str, *inputs, **attrs) -> Tensor:
    """Run one primitive op, recording it on the active tape when tracking.

    Inputs may be Tensors or raw arrays (treated as constants). Index
    arguments of gather ops are passed through untyped. Raises
    :class:`AutodiffError` on shape mismatch or non-finite results.
    """
    if op not in _FORWARD:
        raise AutodiffError(f"unknown op kind {op!r}")

    tape = _ACTIVE[-1] if _ACTIVE else None
    values = []
    input_ids = []
    tracked = False
    tensor_inputs = inputs
    index_arg = None
    if op in _INDEX_ARG_OPS:
        tensor_inputs, index_arg = inputs[:-1], inputs[-1]

    for x in tensor_inputs:
        if isinstance(x, Tensor):
            values.append(x.values)
            if tape is not None:
                if x._tape_serial == tape.serial:
                    input_ids.append(x._node)
                    tracked = True
                elif x.trainable:
                    input_ids.append(tape.watch(x))
                    tracked = True
                else:
                    input_ids.append(_UNTRACKED)
            else:
                input_ids.append(_UNTRACKED)
        else:
            values.append(_as_f64(x))
            input_ids.append(_UNTRACKED)

    if index_arg is not None:
        values.append(index_arg)
        input_ids.append(_UNTRACKED)

    out_values, ctx = _FORWARD[op](*values, **attrs)
    out_arr = np.asarray(out_values, dtype=np.float64)
    if not np.isfinite(out_arr.sum()):
        raise AutodiffError(f"{op}: non-finite output")

    out = Tensor.__new__(Tensor)
    out.values = out_arr
    out.trainable = False
    out.name = None
    out._node = _UNTRACKED
    out._tape_serial = -1
    if tape is not None and tracked:
        tape._record(op, tuple(input_ids), ctx, out)
    return out


# Thin functional wrappers used throughout the model code.
def sigmoid(x):
    return apply("sigmoid", x)


def tanh(x):
    return apply("tanh", x)


def exp(x):
    return apply("exp", x)


def log(x):
    return apply("log", x)


def softmax(x, axis=-1):
    return apply("softmax", x, axis=axis)


def matmul(a, b):
    return apply("matmul", a, b)


def transpose(a):
    return apply("transpose", a)


def concat(parts, axis=0):
    return apply("concat", *parts, axis=axis)


def stack_rows(rows):
    return apply("stack_rows", *rows)


def gather_rows(w, ids):
    return apply("gather_rows", w, ids)


def gather(v, ids):
    return apply("gather", v, ids)


def take(v, index):
    return apply("take", v, index=index)


def row(m, index):
    return apply("row", m, index=index)


def slice1d(v, start, stop):
    return apply("slice1d", v, start=start, stop=stop)


def reshape(x, shape):
    return apply("reshape", x, shape=shape)


def tsum(x):
    return apply("sum", x)


def sum_axis(x, axis):
    return apply("sum_axis", x, axis=axis)


def conv1d_same(h, w, b):
    return apply("conv1d_same", h, w, b)


def maxpool_cols(x):
    return apply("maxpool_cols", x)


def dropout(x, keep_prob: float, rng: np.random.Generator):
    """Train-time dropout with inverted scaling; evaluation needs no rescale."""
    if not 0.0 < keep_prob <= 1.0:
        raise AutodiffError(f"dropout: keep_prob {keep_prob} outside (0, 1]")
    mask = (rng.random(np.shape(x.values if isinstance(x, Tensor) else x)) < keep_prob) / keep_prob
    return apply("dropout", x, tensor(mask))


def sq_norm(x):
    return apply("sq_norm", x)


def l2_norm(x):
    return apply("l2_norm", x)


def clamp_min(x, floor: float):
    return apply("clamp_min", x, floor=floor)


def zero_value(x: Tensor) -> Tensor:
    """Tensor with value 0 but the gradient of ``x``; REINFORCE surrogate glue."""
    return apply("sub", x, tensor(x.values))


def grad_check(f, point: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map a single tensor to a scalar tensor using the ops in this
    module. Relative error per coordinate is |analytic - numeric| divided by
    max(1, |analytic|, |numeric|).
    """
    probe = parameter(point.values.copy(), name="grad_check_point")
    with Tape() as tape:
        out = f(probe)
        if out.values.shape != ():
            raise AutodiffError("grad_check: f must be scalar-valued")
    tape.backward(out)
    analytic = tape.grad(probe)

    flat = probe.values.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(Tensor(probe.values)).values)
        flat[i] = orig - step
        lo = float(f(Tensor(probe.values)).values)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * step)
    numeric = numeric.reshape(probe.values.shape)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
