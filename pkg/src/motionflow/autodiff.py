"""Dense tensors with reverse-mode automatic differentiation.

Small on purpose: 2-D matmul, elementwise arithmetic, a handful of structural
ops (slicing, concatenation, row broadcast) and one fused LSTM cell. That is
everything the flow networks here need. No general broadcasting: binary ops
take equal shapes or a python scalar, anything else raises DimensionError.

Tensors are immutable once created. Creation order is a topological order of
the graph (an op's output is always created after its parents), so backward
sorts reachable nodes by creation id and accumulates adjoints in that fixed
order. Two backward runs over the same graph give bitwise-identical grads.
"""

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, NumericError

_node_counter = 0


class Tensor:
    __slots__ = ("data", "parents", "grad", "tracked", "tid", "_backward")

    def __init__(self, data, parents=(), backward=None, tracked=False):
        global _node_counter
        self.data = data
        self.parents = parents
        self.grad = None
        self.tracked = tracked
        self._backward = backward
        _node_counter += 1
        self.tid = _node_counter

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = "param" if self.tracked and not self.parents else "node"
        return "Tensor(%s, shape=%s)" % (tag, self.data.shape)

    # operator sugar; the module-level functions hold the real logic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return sum_all(self)

    def backward(self):
        backward(self)


def tensor(data, dtype=np.float64):
    """Constant leaf. Takes no part in gradient accumulation."""
    return Tensor(np.asarray(data, dtype=dtype))


def parameter(data, dtype=np.float64):
    """Trainable leaf. backward() deposits an adjoint in .grad."""
    return Tensor(np.array(data, dtype=dtype), tracked=True)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return Tensor(np.asarray(x, dtype=np.float64))
    raise DimensionError("expected Tensor or scalar, got %r" % type(x))


def _check_binary_shapes(a, b):
    # equal shapes, or one side is a scalar (0-d / size 1)
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise DimensionError(
        "shape mismatch %s vs %s (no implicit broadcasting)"
        % (a.data.shape, b.data.shape))


def _acc(t, g):
    if not t.tracked:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    # undo scalar broadcasting in binary-op backward
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def _binary(a, b, out, back_a, back_b):
    tracked = a.tracked or b.tracked

    def bwd(g):
        if a.tracked:
            _acc(a, _unbroadcast(back_a(g), a.data.shape))
        if b.tracked:
            _acc(b, _unbroadcast(back_b(g), b.data.shape))

    return Tensor(out, (a, b), bwd if tracked else None, tracked)


def _unary(a, out, back):
    def bwd(g):
        _acc(a, back(g))

    return Tensor(out, (a,), bwd if a.tracked else None, a.tracked)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b)
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b)
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b)
    return _binary(a, b, a.data * b.data,
                   lambda g: g * b.data, lambda g: g * a.data)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b)
    if np.any(b.data == 0.0):
        raise NumericError("division by zero")
    out = a.data / b.data
    return _binary(a, b, out,
                   lambda g: g / b.data, lambda g: -g * out / b.data)


def neg(a):
    a = _as_tensor(a)
    return _unary(a, -a.data, lambda g: -g)


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericError("log of non-positive value")
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda g: g * out)


def sigmoid(a):
    a = _as_tensor(a)
    out = expit(a.data)
    return _unary(a, out, lambda g: g * out * (1.0 - out))


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _unary(a, out, lambda g: g * (1.0 - out * out))


# ---------------------------------------------------------------------------
# matrix / structural ops

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            "matmul inner dims disagree: %s x %s"
            % (a.data.shape, b.data.shape))
    return _binary(a, b, a.data @ b.data,
                   lambda g: g @ b.data.T, lambda g: a.data.T @ g)


def transpose(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError("transpose expects a 2-D tensor")
    return _unary(a, a.data.T, lambda g: g.T)


def add_row(a, v):
    """a[B,D] + v[D], row-broadcast made explicit."""
    a, v = _as_tensor(a), _as_tensor(v)
    if a.data.ndim != 2 or v.data.ndim != 1 or a.data.shape[1] != v.data.shape[0]:
        raise DimensionError(
            "add_row expects [B,D] and [D], got %s and %s"
            % (a.data.shape, v.data.shape))
    return _binary(a, v, a.data + v.data[None, :],
                   lambda g: g, lambda g: g.sum(axis=0))


def mul_row(a, v):
    """a[B,D] * v[D], row-broadcast made explicit."""
    a, v = _as_tensor(a), _as_tensor(v)
    if a.data.ndim != 2 or v.data.ndim != 1 or a.data.shape[1] != v.data.shape[0]:
        raise DimensionError(
            "mul_row expects [B,D] and [D], got %s and %s"
            % (a.data.shape, v.data.shape))
    return _binary(a, v, a.data * v.data[None, :],
                   lambda g: g * v.data[None, :],
                   lambda g: (g * a.data).sum(axis=0))


def slice_cols(a, start, stop):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError("slice_cols expects a 2-D tensor")

    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return full

    return _unary(a, a.data[:, start:stop], back)


def slice_rows(a, start, stop):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError("slice_rows expects a 2-D tensor")

    def back(g):
        full = np.zeros_like(a.data)
        full[start:stop, :] = g
        return full

    return _unary(a, a.data[start:stop, :], back)


def concat_cols(parts):
    parts = [_as_tensor(p) for p in parts]
    if any(p.data.ndim != 2 for p in parts):
        raise DimensionError("concat_cols expects 2-D tensors")
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError("concat_cols row counts differ: %s" % rows)
    out = np.concatenate([p.data for p in parts], axis=1)
    tracked = any(p.tracked for p in parts)
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def bwd(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            if p.tracked:
                _acc(p, g[:, a:b])

    return Tensor(out, tuple(parts), bwd if tracked else None, tracked)


def diag_embed(v):
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise DimensionError("diag_embed expects a 1-D tensor")
    return _unary(v, np.diag(v.data), lambda g: np.diagonal(g).copy())


def sum_all(a):
    a = _as_tensor(a)
    return _unary(a, np.asarray(a.data.sum()),
                  lambda g: np.broadcast_to(g, a.data.shape))


def dot(a, b):
    return sum_all(mul(a, b))


# ---------------------------------------------------------------------------
# fused LSTM cell

class LstmCellParams:
    """Weights of one LSTM cell: wx[input,4H], wh[H,4H], b[4H].

    Gate order along the 4H axis is input, forget, candidate, output.
    """

    def __init__(self, wx, wh, b):
        self.wx = wx
        self.wh = wh
        self.b = b
        if wx.data.ndim != 2 or wh.data.ndim != 2 or b.data.ndim != 1:
            raise DimensionError("bad LSTM parameter ranks")
        hidden = wh.data.shape[0]
        if wh.data.shape[1] != 4 * hidden or wx.data.shape[1] != 4 * hidden \
                or b.data.shape[0] != 4 * hidden:
            raise DimensionError("LSTM parameter shapes inconsistent")
        self.input_dim = wx.data.shape[0]
        self.hidden_dim = hidden

    @staticmethod
    def create(input_dim, hidden_dim, rng, dtype=np.float64):
        k = 1.0 / np.sqrt(hidden_dim)
        shape = [(input_dim, 4 * hidden_dim), (hidden_dim, 4 * hidden_dim),
                 (4 * hidden_dim,)]
        wx, wh, b = (parameter(rng.uniform(-k, k, s), dtype=dtype)
                     for s in shape)
        return LstmCellParams(wx, wh, b)


def lstm_cell(x, h, c, p, x_proj=None):
    """One step of a standard LSTM cell. Returns (h', c').

    x_proj, when given, is a precomputed [B,4H] term added to the gate
    pre-activations; the training loop uses it to batch the projection of a
    large static input over all frames in one matmul.
    """
    x, h, c = _as_tensor(x), _as_tensor(h), _as_tensor(c)
    hd = p.hidden_dim
    if x.data.ndim != 2 or x.data.shape[1] != p.input_dim:
        raise DimensionError(
            "lstm_cell input shape %s, expected [B,%d]"
            % (x.data.shape, p.input_dim))
    if h.data.shape != c.data.shape or h.data.shape != (x.data.shape[0], hd):
        raise DimensionError("lstm_cell state shapes inconsistent")

    pre = x.data @ p.wx.data + h.data @ p.wh.data + p.b.data[None, :]
    if x_proj is not None:
        x_proj = _as_tensor(x_proj)
        pre = pre + x_proj.data
    gi = expit(pre[:, :hd])
    gf = expit(pre[:, hd:2 * hd])
    gg = np.tanh(pre[:, 2 * hd:3 * hd])
    go = expit(pre[:, 3 * hd:])
    c2 = gf * c.data + gi * gg
    th = np.tanh(c2)
    h2 = go * th
    hc = np.concatenate([h2, c2], axis=1)

    parents = [x, h, c, p.wx, p.wh, p.b]
    if x_proj is not None:
        parents.append(x_proj)
    tracked = any(t.tracked for t in parents)

    def bwd(g):
        gh2 = g[:, :hd]
        gc2 = g[:, hd:] + gh2 * go * (1.0 - th * th)
        gpre = np.concatenate([
            gc2 * gg * gi * (1.0 - gi),
            gc2 * c.data * gf * (1.0 - gf),
            gc2 * gi * (1.0 - gg * gg),
            gh2 * th * go * (1.0 - go),
        ], axis=1)
        if x.tracked:
            _acc(x, gpre @ p.wx.data.T)
        if h.tracked:
            _acc(h, gpre @ p.wh.data.T)
        if c.tracked:
            _acc(c, gc2 * gf)
        if p.wx.tracked:
            _acc(p.wx, x.data.T @ gpre)
        if p.wh.tracked:
            _acc(p.wh, h.data.T @ gpre)
        if p.b.tracked:
            _acc(p.b, gpre.sum(axis=0))
        if x_proj is not None and x_proj.tracked:
            _acc(x_proj, gpre)

    node = Tensor(hc, tuple(parents), bwd if tracked else None, tracked)
    return slice_cols(node, 0, hd), slice_cols(node, hd, 2 * hd)


# ---------------------------------------------------------------------------
# backward pass and gradient checking

def backward(loss):
    """Accumulate adjoints of `loss` into every reachable tracked leaf."""
    if loss.data.size != 1:
        raise ContractError("backward needs a scalar loss, got shape %s"
                            % (loss.data.shape,))
    if not loss.tracked:
        raise ContractError("loss does not depend on any tracked tensor")
    # creation ids already order the DAG; gather reachable nodes and walk
    # them newest-first so each node's adjoint is complete before use
    seen = set()
    nodes = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or not t.tracked:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t.parents)
    nodes.sort(key=lambda t: t.tid, reverse=True)
    loss.grad = np.ones_like(loss.data)
    for t in nodes:
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


def zero_grad(params):
    for p in params:
        p.grad = None


def grad_check(f, params, eps=1e-6):
    """Compare autodiff grads of scalar f(params) to central differences.

    Returns the max over all parameter entries of
    |autodiff - central| / (|central| + 1e-8). Rebuilds the graph for every
    perturbed evaluation, so f must be a pure function of the params.
    """
    zero_grad(params)
    out = f(params)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("non-finite evaluation in grad_check")
    backward(out)
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
             for p in params]

    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(params).data)
            flat[i] = orig - eps
            fm = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("non-finite evaluation in grad_check")
            fd = (fp - fm) / (2.0 * eps)
            rel = abs(gflat[i] - fd) / (abs(fd) + 1e-8)
            worst = max(worst, rel)
    return worst
