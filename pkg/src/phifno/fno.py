"""Fourier neural operator mapping (f_h, phi_h, g_h) grids to w_h (or u_h) grids.

Layout of the network::

    standardize -> lift -> pad -> 4 x gelu(spectral + pointwise) -> crop
                -> project (affine, gelu, affine) -> unstandardize
"""
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T

CHECKPOINT_MAGIC = b"PHIFNO\x00\x01"
CHECKPOINT_VERSION = 1
N_LAYERS = 4


class CheckpointError(OSError):
    pass


@dataclass(frozen=True)
class FnoHyperparams:
    n_d: int = 20
    modes: int = 10
    n_Q: int = 128
    c_in: int = 3
    pad: int = 8
    pad_per_layer: bool = False
    predict_u: bool = False

    def __post_init__(self):
        for name in ("n_d", "modes", "n_Q", "c_in"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.pad < 0:
            raise ValueError("pad must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class ChannelStats:
    """Per-channel mean/std of the inputs and of the target channel."""

    mean_in: np.ndarray
    std_in: np.ndarray
    mean_out: float
    std_out: float

    def __post_init__(self):
        self.mean_in = np.asarray(self.mean_in, dtype=float)
        self.std_in = np.asarray(self.std_in, dtype=float)
        self.mean_out = float(self.mean_out)
        self.std_out = float(self.std_out)
        if np.any(~(self.std_in > 0)) or not self.std_out > 0:
            raise ValueError("channel statistics need a strictly positive std")

    @classmethod
    def identity(cls, c_in=3):
        return cls(np.zeros(c_in), np.ones(c_in), 0.0, 1.0)

    def to_dict(self):
        return {
            "mean_in": self.mean_in.tolist(),
            "std_in": self.std_in.tolist(),
            "mean_out": self.mean_out,
            "std_out": self.std_out,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean_in"], d["std_in"], d["mean_out"], d["std_out"])


def _pooled(values_per_sample):
    pooled = np.concatenate([np.ravel(v) for v in values_per_sample])
    if pooled.size == 0:
        raise ValueError("no pixels to compute statistics on")
    return float(pooled.mean()), float(pooled.std())


def compute_channel_stats(inputs, target, masks):
    """Population mean/std pooled over the masked pixels of every sample.

    ``inputs`` is ``(n, c_in, nx, ny)``, ``target`` ``(n, nx, ny)`` and
    ``masks`` ``(n, nx, ny)`` boolean (the ``S0`` masks).
    """
    inputs = np.asarray(inputs, dtype=float)
    target = np.asarray(target, dtype=float)
    masks = np.asarray(masks, dtype=bool)
    if len(inputs) == 0:
        raise ValueError("empty training set")
    mean_in, std_in = [], []
    for c in range(inputs.shape[1]):
        m, s = _pooled(inputs[k, c][masks[k]] for k in range(len(inputs)))
        mean_in.append(m)
        std_in.append(s)
    m_out, s_out = _pooled(target[k][masks[k]] for k in range(len(target)))
    if min(std_in) <= 0 or s_out <= 0:
        raise ValueError("zero-variance channel on the domain pixels")
    return ChannelStats(mean_in, std_in, m_out, s_out)


def standardize(X, stats):
    """``(X - mean) / std`` per input channel; ``X`` is ``(b, c_in, nx, ny)``."""
    X = np.asarray(X, dtype=float)
    return (X - stats.mean_in[None, :, None, None]) / stats.std_in[None, :, None, None]


def unstandardize(Y, stats):
    """Inverse of the output standardization; works on arrays and tensors."""
    if isinstance(Y, T.Tensor):
        return T.add(T.mul(Y, stats.std_out), stats.mean_out)
    return np.asarray(Y, dtype=float) * stats.std_out + stats.mean_out


def standardize_output(Y, stats):
    return (np.asarray(Y, dtype=float) - stats.mean_out) / stats.std_out


# ------------------------------------------------------------------ parameters


def param_shapes(h):
    """Ordered ``(name, shape, is_complex)`` triples; this is the blob order."""
    shapes = [("lift.W", (h.n_d, h.c_in), False), ("lift.B", (h.n_d,), False)]
    for layer in range(1, N_LAYERS + 1):
        shapes += [
            (f"layer{layer}.spectral", (h.n_d, h.n_d, h.modes, h.modes), True),
            (f"layer{layer}.W", (h.n_d, h.n_d), False),
            (f"layer{layer}.B", (h.n_d,), False),
        ]
    shapes += [
        ("proj1.W", (h.n_Q, h.n_d), False),
        ("proj1.B", (h.n_Q,), False),
        ("proj2.W", (1, h.n_Q), False),
        ("proj2.B", (1,), False),
    ]
    return shapes


def param_count(h):
    """Number of real scalars; complex weights count twice."""
    return (
        (h.c_in + 1) * h.n_d
        + N_LAYERS * (2 * h.n_d**2 * h.modes**2 + h.n_d**2 + h.n_d)
        + (h.n_d + 2) * h.n_Q
        + 1
    )


@dataclass(eq=False)
class FnoParams:
    hyper: FnoHyperparams
    tensors: dict  # name -> Tensor, in param_shapes order
    stats: ChannelStats = field(default_factory=ChannelStats.identity)

    def __getitem__(self, name):
        return self.tensors[name]

    def leaves(self):
        return list(self.tensors.values())

    def to_blob(self):
        """Flat float64 vector; complex entries are stored as (re, im) pairs."""
        parts = []
        for name, _, is_complex in param_shapes(self.hyper):
            a = np.ascontiguousarray(self.tensors[name].data)
            parts.append(a.view(np.float64).ravel() if is_complex else a.ravel())
        return np.concatenate(parts).astype(np.float64, copy=False)

    def set_blob(self, blob):
        blob = np.asarray(blob, dtype=np.float64)
        if blob.size != param_count(self.hyper):
            raise ValueError(f"blob has {blob.size} scalars, expected {param_count(self.hyper)}")
        offset = 0
        for name, shape, is_complex in param_shapes(self.hyper):
            n = int(np.prod(shape)) * (2 if is_complex else 1)
            chunk = blob[offset : offset + n].copy()
            offset += n
            data = chunk.view(np.complex128).reshape(shape) if is_complex else chunk.reshape(shape)
            self.tensors[name].data = data

    def grad_blob(self):
        parts = []
        for name, _, is_complex in param_shapes(self.hyper):
            t = self.tensors[name]
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            g = np.ascontiguousarray(g, dtype=np.complex128 if is_complex else np.float64)
            parts.append(g.view(np.float64).ravel() if is_complex else g.ravel())
        return np.concatenate(parts)

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self):
        tensors = {
            k: T.Tensor(t.data.copy(), requires_grad=t.requires_grad, name=k)
            for k, t in self.tensors.items()
        }
        return FnoParams(self.hyper, tensors, self.stats)


def init_params(h, rng, stats=None):
    """Seeded initialization.

    Affine maps are uniform on ``+-1/sqrt(fan_in)``; spectral weights have real
    and imaginary parts uniform on ``[0, 1/(n_d * n_d))``.
    """
    tensors = {}
    spectral_scale = 1.0 / (h.n_d * h.n_d)
    for name, shape, is_complex in param_shapes(h):
        if is_complex:
            data = spectral_scale * (rng.random(shape) + 1j * rng.random(shape))
        else:
            fan_in = {"lift": h.c_in, "proj1": h.n_d, "proj2": h.n_Q}.get(name.split(".")[0], h.n_d)
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = T.Tensor(data, requires_grad=True, name=name)
    return FnoParams(h, tensors, stats if stats is not None else ChannelStats.identity(h.c_in))


# ---------------------------------------------------------------------- forward


def spectral_conv(X, W, modes):
    """Truncated Fourier multiplier on the ``modes x modes`` low corner."""
    X = T.as_tensor(X)
    nx, ny = X.shape[-2:]
    if modes > min(nx, ny) // 2:
        raise ValueError(f"{modes} modes do not fit a {nx}x{ny} grid")
    Z = T.rfft2(X)
    return T.irfft2(T.spectral_mix(Z, W, modes), ny)


def fourier_layer(X, spectral, W, B, modes):
    return T.gelu(T.add(spectral_conv(X, spectral, modes), T.pointwise_affine(X, W, B)))


def forward_standardized(params, Xs):
    """Network body on already standardized inputs ``(b, c_in, nx, ny)``.

    Returns the standardized prediction ``(b, 1, nx, ny)`` as a tensor.
    """
    h = params.hyper
    p = h.pad
    Z = T.pointwise_affine(Xs, params["lift.W"], params["lift.B"])
    if not h.pad_per_layer:
        Z = T.reflection_pad(Z, p)
    for layer in range(1, N_LAYERS + 1):
        if h.pad_per_layer:
            Z = T.reflection_pad(Z, p)
        Z = fourier_layer(
            Z,
            params[f"layer{layer}.spectral"],
            params[f"layer{layer}.W"],
            params[f"layer{layer}.B"],
            h.modes,
        )
        if h.pad_per_layer:
            Z = T.crop(Z, p)
    if not h.pad_per_layer:
        Z = T.crop(Z, p)
    Z = T.gelu(T.pointwise_affine(Z, params["proj1.W"], params["proj1.B"]))
    return T.pointwise_affine(Z, params["proj2.W"], params["proj2.B"])


def stack_inputs(f_h, phi_h, g_h):
    """Stack grids ``(nx, ny)`` or batches ``(b, nx, ny)`` into ``(b, 3, nx, ny)``."""
    f_h, phi_h, g_h = (np.asarray(a, dtype=float) for a in (f_h, phi_h, g_h))
    if not (f_h.shape == phi_h.shape == g_h.shape):
        raise ValueError("f_h, phi_h and g_h must share one shape")
    X = np.stack([f_h, phi_h, g_h], axis=-3)
    return X[None] if X.ndim == 3 else X


def fno_forward(params, f_h, phi_h, g_h):
    """Predicted ``w_h`` (or ``u_h`` when ``predict_u``) with the input's shape."""
    single = np.ndim(f_h) == 2
    X = stack_inputs(f_h, phi_h, g_h)
    nx, ny = X.shape[-2:]
    m = params.hyper.modes
    if m > min(nx, ny) // 2:
        raise ValueError(f"{m} modes need a grid of at least {2 * m}x{2 * m}")
    with T.no_grad():
        Y = forward_standardized(params, standardize(X, params.stats))
        out = unstandardize(Y.data[:, 0], params.stats)
    return out[0] if single else out


def reconstruct_prediction(params, out, phi_h, g_h):
    """Map the network output to ``u``: ``phi * w + g`` unless ``predict_u``."""
    if params.hyper.predict_u:
        return np.asarray(out, dtype=float)
    return np.asarray(phi_h, dtype=float) * out + np.asarray(g_h, dtype=float)


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(params, path, extra=None):
    """Write magic, header length (u64 LE), JSON header, then the float64 LE blob."""
    blob = params.to_blob().astype("<f8")
    raw = blob.tobytes()
    order = []
    offset = 0
    for name, shape, is_complex in param_shapes(params.hyper):
        n = int(np.prod(shape)) * (2 if is_complex else 1)
        order.append({"name": name, "shape": list(shape), "complex": is_complex, "offset": offset})
        offset += n
    header = {
        "format_version": CHECKPOINT_VERSION,
        "hyperparams": params.hyper.to_dict(),
        "stats": params.stats.to_dict(),
        "order": order,
        "param_count": int(blob.size),
        "scalar": "float64",
        "byte_order": "little",
        "complex_layout": "interleaved re, im",
        "sha256": hashlib.sha256(raw).hexdigest(),
        "extra": extra or {},
    }
    hbytes = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(raw)


def read_checkpoint_header(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(n).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header") from exc
        return header, fh.read()


def load_checkpoint(path):
    header, raw = read_checkpoint_header(path)
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    h = FnoHyperparams(**header["hyperparams"])
    if len(raw) != 8 * header["param_count"] or header["param_count"] != param_count(h):
        raise CheckpointError(f"{path}: parameter blob has the wrong length")
    if hashlib.sha256(raw).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: checksum mismatch")
    params = init_params(h, np.random.default_rng(0), ChannelStats.from_dict(header["stats"]))
    params.set_blob(np.frombuffer(raw, dtype="<f8"))
    return params
