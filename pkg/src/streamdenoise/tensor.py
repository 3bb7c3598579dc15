"""Minimal dense tensors with tape-based reverse-mode differentiation.

Operations only record onto a tape while one is active::

    with Tape() as tape:
        loss = mean(mul(x, x))
    grads = tape.backward(loss)
    grads[x]   # == 2 * x.data / x.size

Outside a tape every op is a plain numpy computation wrapped in a Tensor,
which is what the streaming inference path uses.
"""

from __future__ import annotations

import numpy as np

_ACTIVE: list["Tape"] = []


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ------------------------------------------------------------------------ tape


class _Slice:
    """Gradient that is nonzero only in ``index`` of the parent."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


class Gradients:
    """Mapping from tensors to their gradient arrays."""

    def __init__(self, store, tensors):
        self._store = store
        self._tensors = tensors

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._store.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t):
        return id(t) in self._store

    def __len__(self):
        return len(self._store)

    def items(self):
        for key, g in self._store.items():
            yield self._tensors[key], g


class Tape:
    """Ordered record of executed ops; supports exactly one backward pass."""

    def __init__(self):
        self.nodes = []
        self._ids = set()
        self._used = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, parents, backward_fn):
        self.nodes.append((out, parents, backward_fn))
        self._ids.add(id(out))

    def backward(self, loss: Tensor) -> Gradients:
        return backward(self, loss)


def _active_tape():
    return _ACTIVE[-1] if _ACTIVE else None


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward_fn)
    return out


def _accumulate(store, owned, tensors, t, g):
    key = id(t)
    tensors[key] = t
    if isinstance(g, _Slice):
        cur = store.get(key)
        if cur is None:
            cur = np.zeros_like(t.data)
            store[key] = cur
            owned.add(key)
        elif key not in owned:
            cur = cur.copy()
            store[key] = cur
            owned.add(key)
        cur[g.index] += g.value
        return
    cur = store.get(key)
    if cur is None:
        store[key] = g
    elif key in owned:
        cur += g
    else:
        store[key] = cur + g
        owned.add(key)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse pass over ``tape`` from scalar ``loss``; fills ``.grad`` on leaves."""
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if tape._used:
        raise TapeError("backward already ran on this tape")
    if id(loss) not in tape._ids:
        raise TapeError("loss was not produced on this tape")
    tape._used = True
    store = {id(loss): np.ones_like(loss.data)}
    owned = set()
    tensors = {id(loss): loss}
    produced = set()
    for out, parents, fn in reversed(tape.nodes):
        produced.add(id(out))
        g = store.get(id(out))
        if g is None:
            continue
        pgrads = fn(g)
        for p, pg in zip(parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            _accumulate(store, owned, tensors, p, pg)
    leaves = {k: g for k, g in store.items() if k not in produced}
    for k, g in leaves.items():
        tensors[k].grad = g
    return Gradients(leaves, tensors)


# -------------------------------------------------------------- elementwise


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,))


# ------------------------------------------------------------------ linear


def matmul(a, b) -> Tensor:
    """(n, k) @ (k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def bias_add(x, b) -> Tensor:
    """Add a per-channel bias along axis 1 of (N, C) or (N, C, F)."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.ndim < 2 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match channels of {x.shape}")
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    reduce_axes = (0,) + tuple(range(2, x.ndim))
    return _make(x.data + b.data.reshape(bshape), (x, b),
                 lambda g: (g, g.sum(axis=reduce_axes)))


def _conv_out_len(n_in, k, stride, padding):
    return (n_in + 2 * padding - k) // stride + 1


def conv1d(x, w, stride=1, padding=0) -> Tensor:
    """Cross-correlation along the last axis.

    x: (N, C_in, F), w: (C_out, C_in, k) -> (N, C_out, F_out).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with weight {w.shape}")
    n, cin, f = x.shape
    cout, _, k = w.shape
    fo = _conv_out_len(f, k, stride, padding)
    if fo < 1:
        raise ShapeError(f"conv1d: kernel {k} too large for {f} bins with padding {padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :fo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n, cin * k, fo)
    wmat = w.data.reshape(cout, cin * k)
    out = np.matmul(wmat, cols)

    def back(g):
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gcols = np.matmul(wmat.T, g).reshape(n, cin, k, fo)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        span = stride * (fo - 1) + 1
        for j in range(k):
            gxp[:, :, j:j + span:stride] += gcols[:, :, j, :]
        gx = gxp[:, :, padding:padding + f] if padding else gxp
        return gx, gw

    return _make(out, (x, w), back)


def conv_transpose1d(x, w, stride=2, padding=0) -> Tensor:
    """Transposed convolution (frequency upsampling).

    x: (N, C_in, F), w: (C_in, C_out, k) -> (N, C_out, stride * F).
    The full-length output ((F - 1) * stride + k) is cropped to
    ``[padding, padding + stride * F)``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv_transpose1d: input {x.shape} incompatible with weight {w.shape}")
    n, cin, f = x.shape
    _, cout, k = w.shape
    if padding + stride > k:
        raise ShapeError(f"conv_transpose1d: padding {padding} + stride {stride} exceeds kernel {k}")
    full_len = (f - 1) * stride + k
    span = stride * (f - 1) + 1
    wmat = w.data.reshape(cin, cout * k)
    contrib = np.matmul(wmat.T, x.data).reshape(n, cout, k, f)
    full = np.zeros((n, cout, full_len), dtype=contrib.dtype)
    for j in range(k):
        full[:, :, j:j + span:stride] += contrib[:, :, j, :]
    out = full[:, :, padding:padding + stride * f]

    def back(g):
        gfull = np.zeros((n, cout, full_len), dtype=g.dtype)
        gfull[:, :, padding:padding + stride * f] = g
        gcontrib = np.empty((n, cout, k, f), dtype=g.dtype)
        for j in range(k):
            gcontrib[:, :, j, :] = gfull[:, :, j:j + span:stride]
        gcontrib = gcontrib.reshape(n, cout * k, f)
        gx = np.matmul(wmat, gcontrib)
        gw = np.tensordot(x.data, gcontrib, axes=([0, 2], [0, 2])).reshape(w.shape)
        return gx, gw

    return _make(np.ascontiguousarray(out), (x, w), back)


# ------------------------------------------------------------------- shape


def concat(tensors, axis=1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref))
                                     if i != axis % len(ref)):
            raise ShapeError(f"concat on axis {axis}: shapes {ref} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    ndim = len(ref)

    def back(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * ndim
            idx[axis] = slice(int(lo), int(hi))
            out.append(g[tuple(idx)])
        return out

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def slice_(x, axis, start, stop) -> Tensor:
    """``x[..., start:stop, ...]`` along ``axis``."""
    x = as_tensor(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    return _make(x.data[idx], (x,), lambda g: (_Slice(idx, g),))


def split(x, axis=0) -> list:
    """Unit slices along ``axis`` with the axis dropped."""
    x = as_tensor(x)
    out = []
    for i in range(x.shape[axis]):
        idx = [slice(None)] * x.ndim
        idx[axis] = i
        idx = tuple(idx)
        out.append(_make(x.data[idx], (x,), lambda g, idx=idx: (_Slice(idx, g),)))
    return out


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "stack")

    def back(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),))


# --------------------------------------------------------------- reductions


def sum_(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,),
                 lambda g: (np.broadcast_to(g, shape).astype(x.dtype),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.size
    return _make(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def mse(pred, target) -> Tensor:
    d = sub(pred, target)
    return mean(mul(d, d))


# ------------------------------------------------------------- grad check


def grad_check(f, x: Tensor, eps: float = 1e-6, floor: float = 1e-3) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f`` maps a Tensor to a scalar Tensor. Relative errors use
    ``max(|analytic|, |numeric|, floor)`` as denominator.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    base = np.array(x.data, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
    if y.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {y.shape}")
    if not np.isfinite(y.data).all():
        raise ValueError("f(x) is not finite")
    analytic = tape.backward(y)[probe] if y.requires_grad else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Tensor(base.copy())).data)
        flat[i] = orig - eps
        fm = float(f(Tensor(base.copy())).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"f is not finite near coordinate {i}")
        num_flat[i] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0
