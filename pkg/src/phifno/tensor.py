"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations needed by the Fourier neural operator and its loss are
provided. Operations executed while a :class:`Tape` is active are appended to
it; :func:`backward` walks the tape from the end.

Complex tensors carry gradients as ``dL/d(re) + 1j * dL/d(im)``.
"""
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_active_tapes = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.pop()
        return False

    def __len__(self):
        return len(self.nodes)


@contextmanager
def no_grad():
    """Suspend recording (the active tape stack is hidden, then restored)."""
    saved = _active_tapes[:]
    _active_tapes.clear()
    try:
        yield
    finally:
        _active_tapes.extend(saved)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, vjp):
    """Wrap ``data``; record a node when a tape is active and a parent needs grad."""
    tracked = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
    out = Tensor(data, requires_grad=bool(tracked) and bool(_active_tapes))
    if out.requires_grad:
        _active_tapes[-1].nodes.append(_Node(out, parents, vjp))
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(scalar, tape, leaves=()):
    """Accumulate ``d scalar / d leaf`` into ``leaf.grad`` for every tracked leaf.

    A leaf is a tracked tensor used by the tape but not produced by it. Leaves
    listed in ``leaves`` that the scalar does not depend on get zero
    gradients. Returns ``{name or index: grad}`` in first-use order.
    """
    if scalar.data.size != 1:
        raise ValueError("backward needs a single-element tensor")
    produced = {id(node.out) for node in tape.nodes}
    found = {}
    for node in tape.nodes:
        for p in node.parents:
            if isinstance(p, Tensor) and p.requires_grad and id(p) not in produced:
                found.setdefault(id(p), p)
    for leaf in leaves:
        found.setdefault(id(leaf), leaf)

    grads = {id(scalar): np.ones_like(scalar.data, dtype=float)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg

    out = {}
    for key, leaf in found.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        out[leaf.name if leaf.name is not None else len(out)] = leaf.grad
    return out


# ------------------------------------------------------------------ elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _record(a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = _unbroadcast(g * np.conj(b.data), a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * np.conj(a.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data * b.data, (a, b), vjp)


def gelu(x):
    """``x * Phi(x)`` with the exact normal CDF."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data**2)
        return (g * (cdf + x.data * pdf),)

    return _record(x.data * cdf, (x,), vjp)


def total(x):
    x = as_tensor(x)

    def vjp(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.sum(x.data), (x,), vjp)


def mean(x):
    x = as_tensor(x)
    n = x.data.size

    def vjp(g):
        return (np.full(x.shape, g / n),)

    return _record(np.mean(x.data), (x,), vjp)


def sum_squares(x):
    """Sum of squared moduli (real and imaginary parts for complex data)."""
    x = as_tensor(x)

    def vjp(g):
        return (2.0 * g * x.data,)

    return _record(np.sum(np.abs(x.data) ** 2), (x,), vjp)


# ------------------------------------------------------------------- FNO pieces


def pointwise_affine(X, W, B):
    """``out[b, o, i, j] = sum_c W[o, c] * X[b, c, i, j] + B[o]``."""
    X, W, B = as_tensor(X), as_tensor(W), as_tensor(B)
    if X.ndim != 4 or W.ndim != 2 or W.shape[1] != X.shape[1] or B.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: X{X.shape}, W{W.shape}, B{B.shape}")
    b, c, nx, ny = X.shape
    flat = X.data.reshape(b, c, nx * ny)
    out = (np.matmul(W.data, flat) + B.data[None, :, None]).reshape(b, -1, nx, ny)

    def vjp(g):
        gf = g.reshape(b, -1, nx * ny)
        gX = np.matmul(W.data.T, gf).reshape(X.shape) if X.requires_grad else None
        gW = np.matmul(gf, flat.transpose(0, 2, 1)).sum(axis=0) if W.requires_grad else None
        gB = gf.sum(axis=(0, 2)) if B.requires_grad else None
        return gX, gW, gB

    return _record(out, (X, W, B), vjp)


def rfft2(X):
    """Unnormalized real FFT over the last two axes, half spectrum on the last."""
    X = as_tensor(X)
    nx, ny = X.shape[-2:]
    if nx < 2 or ny < 2:
        raise ValueError("rfft2 needs at least 2 points per axis")
    nk = ny // 2 + 1

    def vjp(g):
        full = np.zeros(X.shape, dtype=complex)
        full[..., :nk] = g
        return (np.real(np.fft.ifft2(full)) * (nx * ny),)

    return _record(np.fft.rfft2(X.data), (X,), vjp)


def irfft2(Z, ny):
    """Inverse of :func:`rfft2`, carrying the ``1 / (nx * ny)`` factor."""
    Z = as_tensor(Z)
    nx = Z.shape[-2]
    weights = np.full(Z.shape[-1], 2.0)
    weights[0] = 1.0
    if ny % 2 == 0:
        weights[-1] = 1.0

    def vjp(g):
        return (np.fft.rfft2(g) * weights / (nx * ny),)

    return _record(np.fft.irfft2(Z.data, s=(nx, ny)), (Z,), vjp)


def spectral_mix(Z, W, modes):
    """Per-mode channel mixing on the ``modes x modes`` low corner of the half spectrum.

    ``Y[b, o, kx, ky] = sum_i W[i, o, kx, ky] * Z[b, i, kx, ky]`` for
    ``kx, ky < modes``; every other mode of ``Y`` is zero.
    """
    Z, W = as_tensor(Z), as_tensor(W)
    b, c, kx, ky = Z.shape
    if W.shape[2:] != (modes, modes) or W.shape[0] != c or modes > kx or modes > ky:
        raise ValueError(f"bad spectral weights {W.shape} for spectrum {Z.shape}, modes={modes}")
    out = np.zeros((b, W.shape[1], kx, ky), dtype=complex)
    # modes to the front: (x, y, b, i) @ (x, y, i, o)
    low = np.ascontiguousarray(Z.data[:, :, :modes, :modes].transpose(2, 3, 0, 1))
    Wm = np.ascontiguousarray(W.data.transpose(2, 3, 0, 1))
    out[:, :, :modes, :modes] = np.matmul(low, Wm).transpose(2, 3, 0, 1)

    def vjp(g):
        gl = np.ascontiguousarray(g[:, :, :modes, :modes].transpose(2, 3, 0, 1))
        gZ = gW = None
        if Z.requires_grad:
            gZ = np.zeros(Z.shape, dtype=complex)
            gZ[:, :, :modes, :modes] = np.matmul(gl, np.conj(Wm).transpose(0, 1, 3, 2)).transpose(2, 3, 0, 1)
        if W.requires_grad:
            gW = np.matmul(np.conj(low).transpose(0, 1, 3, 2), gl).transpose(2, 3, 0, 1)
        return gZ, gW

    return _record(out, (Z, W), vjp)


def reflection_pad(X, p):
    """Reflect ``p`` entries on every side of the last two axes (edge not repeated)."""
    X = as_tensor(X)
    nx, ny = X.shape[-2:]
    if p < 0 or p >= min(nx, ny):
        raise ValueError(f"padding {p} too large for a {nx}x{ny} grid")
    if p == 0:
        return X
    width = [(0, 0)] * (X.ndim - 2) + [(p, p), (p, p)]
    ix = np.pad(np.arange(nx), p, mode="reflect")
    iy = np.pad(np.arange(ny), p, mode="reflect")

    def vjp(g):
        acc = np.zeros(X.shape[:-2] + (nx, g.shape[-1]), dtype=g.dtype)
        for k, i in enumerate(ix):
            acc[..., i, :] += g[..., k, :]
        out = np.zeros(X.shape, dtype=g.dtype)
        for k, j in enumerate(iy):
            out[..., j] += acc[..., k]
        return (out,)

    return _record(np.pad(X.data, width, mode="reflect"), (X,), vjp)


def crop(X, p):
    X = as_tensor(X)
    if p == 0:
        return X
    nx, ny = X.shape[-2:]
    if 2 * p >= min(nx, ny):
        raise ValueError(f"cannot crop {p} from a {nx}x{ny} grid")

    def vjp(g):
        out = np.zeros(X.shape, dtype=g.dtype)
        out[..., p:-p, p:-p] = g
        return (out,)

    return _record(X.data[..., p:-p, p:-p], (X,), vjp)


def central_diff(X, axis, spacing):
    """Centered difference along ``axis`` (-2 or -1); border entries are zero."""
    X = as_tensor(X)
    if X.shape[axis] < 3:
        raise ValueError("central differences need at least 3 points")
    out = np.zeros_like(X.data)
    scale = 1.0 / (2.0 * spacing)
    if axis in (-2, X.ndim - 2):
        out[..., 1:-1, :] = (X.data[..., 2:, :] - X.data[..., :-2, :]) * scale
    elif axis in (-1, X.ndim - 1):
        out[..., 1:-1] = (X.data[..., 2:] - X.data[..., :-2]) * scale
    else:
        raise ValueError("axis must be one of the last two")

    def vjp(g):
        gx = np.zeros_like(X.data)
        if axis in (-2, X.ndim - 2):
            gx[..., 2:, :] += g[..., 1:-1, :] * scale
            gx[..., :-2, :] -= g[..., 1:-1, :] * scale
        else:
            gx[..., 2:] += g[..., 1:-1] * scale
            gx[..., :-2] -= g[..., 1:-1] * scale
        return (gx,)

    return _record(out, (X,), vjp)


def masked_sq_norm(X, mask):
    """Per-batch sum of ``X**2`` over masked pixels; ``X`` is ``(b, 1, nx, ny)``.

    ``mask`` is ``(nx, ny)`` or one mask per batch entry ``(b, nx, ny)``.
    """
    X = as_tensor(X)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-2:] != X.shape[-2:]:
        raise ValueError(f"mask {mask.shape} does not match {X.shape}")
    m = mask.reshape((-1, 1) + mask.shape[-2:]) if mask.ndim == 3 else mask[None, None]
    m = m.astype(X.data.dtype)
    out = np.sum(X.data**2 * m, axis=(1, 2, 3))

    def vjp(g):
        return (2.0 * X.data * m * g[:, None, None, None],)

    return _record(out, (X,), vjp)
