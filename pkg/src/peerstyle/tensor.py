"""Dense float64 tensors with reverse-mode automatic differentiation.

Graphs are built dynamically while ops run and replayed in reverse by
:meth:`Tensor.backward`. Image data uses (batch, channel, height, width)
layout throughout.
"""

import contextlib
import os

import numpy as np

from . import _kernels

_GRAD_ENABLED = True
_CHECK_FINITE = os.environ.get("PEERSTYLE_DEBUG_NAN", "0").lower() in ("1", "true", "on", "yes")


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def set_finite_check(enabled):
    """Toggle the NaN/Inf check applied to every op output."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # --- basic attributes -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # --- autodiff -------------------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("loss does not depend on any tensor that requires grad")
        if self.op != "leaf" and self._backward is None:
            raise RuntimeError("graph already consumed by an earlier backward(); recompute the loss")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                parent_grads = node._backward(g)
                for parent, pg in zip(node._parents, parent_grads):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            # free the graph as we go; non-leaf tensors are single-use
            node._parents = ()
            node._backward = None

    # --- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        return power(self, exponent)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data, parents, backward, op="custom"):
    """Wrap a forward result as a graph node.

    ``backward(g)`` receives the output gradient and returns one gradient (or
    ``None``) per parent, in order.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise binary
# --------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "div")


# --------------------------------------------------------------------------
# elementwise unary
# --------------------------------------------------------------------------

def relu(x):
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make_node(x.data * mask, (x,), backward, "relu")


def leaky_relu(x, slope=0.2):
    pos = x.data > 0
    factor = np.where(pos, 1.0, slope)

    def backward(g):
        return (g * factor,)

    return make_node(x.data * factor, (x,), backward, "leaky_relu")


def tanh(x):
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return make_node(out, (x,), backward, "tanh")


def exp(x):
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return make_node(out, (x,), backward, "exp")


def sqrt(x):
    out = np.sqrt(x.data)

    def backward(g):
        return (g * 0.5 / out,)

    return make_node(out, (x,), backward, "sqrt")


def square(x):
    def backward(g):
        return (2.0 * g * x.data,)

    return make_node(x.data * x.data, (x,), backward, "square")


def power(x, exponent):
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * x.data ** (exponent - 1.0),)

    return make_node(x.data ** exponent, (x,), backward, "power")


def abs_(x):
    def backward(g):
        return (g * np.sign(x.data),)

    return make_node(np.abs(x.data), (x,), backward, "abs")


def maximum(x, value):
    """Elementwise max(x, value) against a scalar; ties route gradient to x."""
    keep = x.data >= value

    def backward(g):
        return (g * keep,)

    return make_node(np.where(keep, x.data, value), (x,), backward, "maximum")


# --------------------------------------------------------------------------
# reductions and shape ops
# --------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(np.asarray(out, dtype=np.float64), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    if count == 0:
        raise ShapeError("mean over an empty axis")
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_node(np.asarray(out, dtype=np.float64), (x,), backward, "mean")


def reshape(x, shape):
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return make_node(out, (x,), backward, "reshape")


def transpose(x, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return make_node(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward, "transpose")


def broadcast_to(x, shape):
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None

    def backward(g):
        return (_unbroadcast(g, x.shape),)

    return make_node(out, (x,), backward, "broadcast_to")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != axis
        ):
            raise ShapeError(f"concat along axis {axis}: shapes {ref.shape} and {t.shape} disagree")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_node(out, tuple(tensors), backward, "concat")


def slice_axis(x, axis, start, stop):
    axis = axis % x.ndim
    if not 0 <= start <= stop <= x.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of extent {x.shape[axis]}")
    key = [slice(None)] * x.ndim
    key[axis] = slice(start, stop)
    key = tuple(key)

    def backward(g):
        full = np.zeros(x.shape)
        full[key] = g
        return (full,)

    return make_node(x.data[key].copy(), (x,), backward, "slice")


def index(x, key):
    out = np.array(x.data[key], dtype=np.float64)

    def backward(g):
        full = np.zeros(x.shape)
        np.add.at(full, key, g)
        return (full,)

    return make_node(out, (x,), backward, "index")


def matmul(a, b):
    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return make_node(a.data @ b.data, (a, b), backward, "matmul")


def gather_pixels(values, neighbor_index):
    """values (B, C, Q) gathered at integer neighbor_index (B, P, K) -> (B, C, P, K)."""
    idx = np.asarray(neighbor_index, dtype=np.int64)
    if idx.ndim != 3 or idx.shape[0] != values.shape[0]:
        raise ShapeError(f"gather_pixels: index shape {idx.shape} does not match values {values.shape}")
    q = values.shape[2]
    if idx.size and (idx.min() < 0 or idx.max() >= q):
        raise ShapeError(f"gather_pixels: indices outside [0, {q})")
    out = _kernels.gather(values.data, idx)

    def backward(g):
        return (_kernels.scatter(g, idx, q),)

    return make_node(out, (values,), backward, "gather_pixels")


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

def _conv_out(n, k, stride, padding, name):
    span = n + 2 * padding - k
    if span < 0:
        raise ShapeError(f"kernel extent {k} exceeds padded {name} {n + 2 * padding}")
    return span // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of x (B, Cin, H, W) with weight (Cout, Cin, kh, kw)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D (B, C, H, W), got {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-D, got {weight.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: need stride >= 1 and padding >= 0 (stride={stride}, padding={padding})")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input channels {cin} != weight input channels {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ho = _conv_out(h, kh, stride, padding, "height")
    wo = _conv_out(w, kw, stride, padding, "width")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _kernels.im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(cout, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(b, cout, ho, wo)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(b, cout, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            gxp = _kernels.col2im(gcols, cin, h + 2 * padding, w + 2 * padding, kh, kw, stride, ho, wo)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_node(out, parents, backward, "conv2d")


def conv2d_transpose(x, weight, bias=None, stride=1, padding=0):
    """Adjoint of conv2d's spatial map; weight is (Cin, Cout, kh, kw).

    Output extent is (H - 1) * stride - 2 * padding + kh.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d_transpose input must be 4-D (B, C, H, W), got {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d_transpose weight must be 4-D, got {weight.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d_transpose: need stride >= 1 and padding >= 0")
    b, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d_transpose: input channels {cin} != weight input channels {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d_transpose: bias shape {bias.shape} != ({cout},)")
    hp = (h - 1) * stride + kh
    wp = (w - 1) * stride + kw
    ho, wo = hp - 2 * padding, wp - 2 * padding
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d_transpose: padding {padding} leaves no output for input {h}x{w}")

    wmat = weight.data.reshape(cin, -1)  # (Cin, Cout*kh*kw)
    xf = x.data.reshape(b, cin, h * w)
    cols = np.matmul(wmat.T, xf)
    full = _kernels.col2im(cols, cout, hp, wp, kh, kw, stride, h, w)
    out = full[:, :, padding : padding + ho, padding : padding + wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        gcols = _kernels.im2col(gp, kh, kw, stride, h, w)  # (B, Cout*kh*kw, h*w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(wmat, gcols).reshape(x.shape)
        if weight.requires_grad:
            gw = np.tensordot(xf, gcols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_node(out, parents, backward, "conv2d_transpose")


# --------------------------------------------------------------------------
# normalization and regularization
# --------------------------------------------------------------------------

def instance_norm(x, scale=None, shift=None, eps=1e-5):
    """Per-(batch, channel) plane standardization followed by a channel affine."""
    if x.ndim != 4:
        raise ShapeError(f"instance_norm input must be 4-D, got {x.shape}")
    b, c, h, w = x.shape
    n = h * w
    if n == 0:
        raise ShapeError("instance_norm: plane has zero pixels")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps) if eps > 0 else np.where(var > 0, 1.0 / np.sqrt(np.where(var > 0, var, 1.0)), 0.0)
    xhat = xc * inv
    gamma = scale.data.reshape(1, c, 1, 1) if scale is not None else 1.0
    out = xhat * gamma
    if shift is not None:
        out = out + shift.data.reshape(1, c, 1, 1)

    parents = [x]
    if scale is not None:
        parents.append(scale)
    if shift is not None:
        parents.append(shift)

    def backward(g):
        grads = []
        gxhat = g * gamma
        gx = inv * (gxhat - gxhat.mean(axis=(2, 3), keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=(2, 3), keepdims=True))
        grads.append(gx)
        if scale is not None:
            grads.append((g * xhat).sum(axis=(0, 2, 3)))
        if shift is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_node(out, tuple(parents), backward, "instance_norm")


def dropout(x, rate, training, rng):
    """Inverted dropout; identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    factor = keep / (1.0 - rate)

    def backward(g):
        return (g * factor,)

    return make_node(x.data * factor, (x,), backward, "dropout")


def global_avg_pool(x):
    return mean(x, axis=(2, 3), keepdims=True)
