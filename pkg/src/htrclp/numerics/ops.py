"""Differentiable operations over :class:`~htrclp.numerics.tensor.Tensor`.

Each op computes its forward value with numpy and registers a closure that
maps output gradients to input gradients.  Only the operations the CRNN
recognizer needs are provided.
"""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc
    record("add", (a, b), (out,),
           lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc
    record("mul", (a, b), (out,),
           lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))
    return out


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant array (masks, dropout keep-masks)."""
    out = Tensor(x.data * c)
    record("mul_const", (x,), (out,), lambda g: (_unbroadcast(g * c, x.shape),))
    return out


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = Tensor(np.sum(x.data, axis=axis))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    record("sum", (x,), (out,), backward)
    return out


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul_const(sum(x, axis=axis), np.asarray(1.0 / n, dtype=x.dtype))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and a 2-D ``b`` of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = Tensor(a.data @ b.data)

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    record("matmul", (a, b), (out,), backward)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map over the last axis: ``x @ w + b``."""
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: x {x.shape}, w {w.shape}, b {b.shape}")
    out = Tensor(x.data @ w.data + b.data)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        return (g @ w.data.T,
                x.data.reshape(-1, w.shape[0]).T @ g2,
                g2.sum(axis=0))

    record("linear", (x, w, b), (out,), backward)
    return out


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0 <= slope <= 1:
        raise ValueError(f"leaky_relu slope must lie in [0, 1], got {slope}")
    s = x.dtype.type(slope)
    out = Tensor(np.maximum(x.data, x.data * s))
    if x.requires_grad:
        factor = (x.data > 0).astype(x.dtype)
        factor *= 1 - s
        factor += s
        record("leaky_relu", (x,), (out,), lambda g: (g * factor,))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    record("tanh", (x,), (out,), lambda g: (g * (1 - y * y),))
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    out = Tensor(y)
    record("sigmoid", (x,), (out,), lambda g: (g * y * (1 - y),))
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return mul_const(x, keep)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    record("reshape", (x,), (out,), lambda g: (g.reshape(x.shape),))
    return out


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    out = Tensor(np.transpose(x.data, axes))
    record("transpose", (x,), (out,), lambda g: (np.transpose(g, inv),))
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat along {axis}: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    record("concat", tensors, (out,), backward)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = _softmax(x.data, axis)
    out = Tensor(y)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    record("softmax", (x,), (out,), backward)
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = _log_softmax(x.data, axis)
    out = Tensor(y)

    def backward(g):
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    record("log_softmax", (x,), (out,), backward)
    return out


# -- convolution and pooling -------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, h: int, w: int) -> np.ndarray:
    """(B, C, H+kh-1, W+kw-1) -> (B, C*kh*kw, H*W), rows ordered (c, i, j) like the kernel."""
    bsz, c = xp.shape[:2]
    cols = np.empty((bsz, c, kh, kw, h, w), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(bsz, c * kh * kw, h * w)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """'Same' 2-D convolution, stride 1, for x (B, C, H, W) and w (O, C, kh, kw)."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} vs kernel {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {b.shape} for {w.shape[0]} filters")
    bsz, _, h, wd = x.shape
    o, c, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} must be odd-sized")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw, h, wd)
    w2 = w.data.reshape(o, -1)
    y = np.matmul(w2, cols)
    y += b.data[:, None]
    out = Tensor(y.reshape(bsz, o, h, wd))

    def backward(g):
        g3 = g.reshape(bsz, o, h * wd)
        gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gb = g3.sum(axis=(0, 2))
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g3).reshape(bsz, c, kh, kw, h, wd)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + h, j:j + wd] += gcols[:, :, i, j]
            gx = gxp[:, :, ph:ph + h, pw:pw + wd]
        return gx, gw, gb

    record("conv2d", (x, w, b), (out,), backward)
    return out


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max-pooling, stride 2; odd trailing rows/columns are padded (ceil mode).

    Ties go to the first maximum in (top-left, top-right, bottom-left,
    bottom-right) order, which is where the gradient is routed.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2x2 expects (B, C, H, W), got {x.shape}")
    bsz, c, h, w = x.shape
    h2, w2 = -(-h // 2), -(-w // 2)
    data = x.data
    if (h % 2) or (w % 2):
        data = np.pad(data, ((0, 0), (0, 0), (0, 2 * h2 - h), (0, 2 * w2 - w)),
                      constant_values=-np.inf)
    views = [data[:, :, i::2, j::2] for i in (0, 1) for j in (0, 1)]
    y = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
    out = Tensor(y)
    if not x.requires_grad:
        return out
    taken = views[0] == y
    masks = [taken]
    for v in views[1:3]:
        m = (v == y) & ~taken
        taken = taken | m
        masks.append(m)
    masks.append(~taken)

    def backward(g):
        gx = np.empty((bsz, c, 2 * h2, 2 * w2), dtype=g.dtype)
        for (i, j), m in zip(((0, 0), (0, 1), (1, 0), (1, 1)), masks):
            np.multiply(g, m, out=gx[:, :, i::2, j::2])
        return (gx[:, :, :h, :w],)

    record("maxpool2x2", (x,), (out,), backward)
    return out


# -- recurrent ---------------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1)


def _softmax(x, axis=-1):
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def _log_softmax(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    return x - m - np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))


def _gates(z, hidden):
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden:2 * hidden])
    g = np.tanh(z[:, 2 * hidden:3 * hidden])
    o = _sigmoid(z[:, 3 * hidden:])
    return i, f, g, o


def _gate_grads(dc, dh, i, f, g, o, tc, c_prev):
    do = dh * tc
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1)
    return dz, dc * f


def lstm_cell_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, params) -> tuple:
    """One LSTM step without peepholes; ``params`` is (W_x, W_h, b).

    Gate layout along the 4H axis is input, forget, cell, output.
    """
    w_x, w_h, b = params
    hidden = h_prev.shape[-1]
    if w_x.shape != (x_t.shape[-1], 4 * hidden) or w_h.shape != (hidden, 4 * hidden) \
            or b.shape != (4 * hidden,) or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_cell_step: x {x_t.shape}, h {h_prev.shape}, "
                         f"W_x {w_x.shape}, W_h {w_h.shape}, b {b.shape}")
    z = x_t.data @ w_x.data + h_prev.data @ w_h.data + b.data
    i, f, g, o = _gates(z, hidden)
    c = f * c_prev.data + i * g
    tc = np.tanh(c)
    h = o * tc
    h_out, c_out = Tensor(h), Tensor(c)

    def backward(gh, gc):
        dc = gc + gh * o * (1 - tc * tc)
        dz, dc_prev = _gate_grads(dc, gh, i, f, g, o, tc, c_prev.data)
        return (dz @ w_x.data.T, dz @ w_h.data.T, dc_prev,
                x_t.data.T @ dz, h_prev.data.T @ dz, dz.sum(axis=0))

    record("lstm_cell_step", (x_t, h_prev, c_prev, w_x, w_h, b), (h_out, c_out), backward)
    return h_out, c_out


def lstm_layer(x: Tensor, mask: np.ndarray, w_x: Tensor, w_h: Tensor, b: Tensor,
               reverse: bool = False) -> Tensor:
    """Run an LSTM over x (B, T, D) and return hidden states (B, T, H).

    ``mask`` (B, T) marks valid frames.  Padded frames leave the state
    untouched and emit zeros, so a reverse pass effectively starts at each
    sample's own last valid frame.
    """
    bsz, steps, dim = x.shape
    hidden = w_h.shape[0]
    if w_x.shape != (dim, 4 * hidden) or w_h.shape != (hidden, 4 * hidden) or b.shape != (4 * hidden,):
        raise ShapeError(f"lstm_layer: x {x.shape}, W_x {w_x.shape}, W_h {w_h.shape}, b {b.shape}")
    if mask.shape != (bsz, steps):
        raise ShapeError(f"lstm_layer: mask {mask.shape} for input {x.shape}")
    dt = x.dtype
    xp = (x.data.reshape(-1, dim) @ w_x.data + b.data).reshape(bsz, steps, 4 * hidden)
    m_all = mask.astype(dt)[:, :, None]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    h = np.zeros((bsz, hidden), dt)
    c = np.zeros((bsz, hidden), dt)
    out = np.zeros((bsz, steps, hidden), dt)
    cache = {}
    wh = w_h.data
    for t in order:
        z = xp[:, t] + h @ wh
        i, f, g, o = _gates(z, hidden)
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = m_all[:, t]
        cache[t] = (h, c, i, f, g, o, tc)
        out[:, t] = m * h_new
        c = c + m * (c_new - c)
        h = h + m * (h_new - h)
    result = Tensor(out)

    def backward(gout):
        dxp = np.zeros_like(xp)
        dwh = np.zeros_like(wh)
        dh_next = np.zeros((bsz, hidden), dt)
        dc_next = np.zeros((bsz, hidden), dt)
        for t in reversed(order):
            h_prev, c_prev, i, f, g, o, tc = cache[t]
            m = m_all[:, t]
            dh_new = m * (dh_next + gout[:, t])
            dc = m * dc_next + dh_new * o * (1 - tc * tc)
            dz, dc_prev = _gate_grads(dc, dh_new, i, f, g, o, tc, c_prev)
            dxp[:, t] = dz
            dwh += h_prev.T @ dz
            dh_next = dz @ wh.T + (1 - m) * dh_next
            dc_next = dc_prev + (1 - m) * dc_next
        dxp2 = dxp.reshape(-1, 4 * hidden)
        dx = (dxp2 @ w_x.data.T).reshape(x.shape) if x.requires_grad else None
        return dx, x.data.reshape(-1, dim).T @ dxp2, dwh, dxp2.sum(axis=0)

    record("lstm_layer", (x, w_x, w_h, b), (result,), backward)
    return result
