import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phifno import fno
from phifno import tensor as T
from phifno.geometry import EllipseParams, sample_ellipse
from phifno.mesh import build_background_mesh, interpolate_nodal

SMALL = fno.FnoHyperparams(n_d=4, modes=3, n_Q=8, pad=2)


def small_params(seed=0, h=SMALL):
    return fno.init_params(h, np.random.default_rng(seed))


def test_param_count_examples():
    assert fno.param_count(fno.FnoHyperparams()) == 324577
    assert fno.param_count(fno.FnoHyperparams(n_d=1, modes=1, n_Q=1, c_in=3)) == 24


@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 9), st.integers(1, 4))
def test_param_count_equals_blob_length(n_d, m, n_Q, c_in):
    h = fno.FnoHyperparams(n_d=n_d, modes=m, n_Q=n_Q, c_in=c_in)
    p = fno.init_params(h, np.random.default_rng(0))
    assert p.to_blob().size == fno.param_count(h)
    assert sum(int(np.prod(s)) * (2 if c else 1) for _, s, c in fno.param_shapes(h)) == fno.param_count(h)


def test_channel_stats_examples():
    inputs = np.zeros((2, 1, 2, 2))
    inputs[0, 0] = 1.0
    inputs[1, 0, 1, 1] = 5.0
    masks = np.zeros((2, 2, 2), bool)
    masks[0].flat[:3] = True
    masks[1, 1, 1] = True
    target = np.random.default_rng(0).normal(size=(2, 2, 2))
    stats = fno.compute_channel_stats(inputs, target, masks)
    assert stats.mean_in[0] == 2.0 and stats.std_in[0] == pytest.approx(np.sqrt(3.0), rel=1e-15)
    flipped = fno.compute_channel_stats(inputs[::-1], target[::-1], masks[::-1])
    assert flipped.mean_in[0] == pytest.approx(2.0, rel=1e-15)
    assert flipped.std_in[0] == pytest.approx(stats.std_in[0], rel=1e-15)
    with pytest.raises(ValueError):
        fno.compute_channel_stats(np.full((1, 1, 2, 2), 3.0), target[:1], masks[:1])


def test_standardize_examples(rng):
    stats = fno.ChannelStats([2.0, -1.0, 0.5], [3.0, 2.0, 0.1], 0.3, 4.0)
    X = np.full((1, 3, 2, 2), 5.0)
    assert fno.standardize(X, stats)[0, 0, 0, 0] == 1.0
    means = np.broadcast_to(stats.mean_in[None, :, None, None], (1, 3, 2, 2))
    assert np.all(fno.standardize(means, stats) == 0)
    Y = rng.normal(size=(2, 5, 5))
    assert np.abs(fno.unstandardize(fno.standardize_output(Y, stats), stats) - Y).max() <= 1e-12
    X = rng.normal(size=(2, 3, 4, 4))
    back = fno.standardize(X, stats) * stats.std_in[None, :, None, None] + stats.mean_in[None, :, None, None]
    assert np.abs(back - X).max() <= 1e-12


def dense_spectral_conv(x, W, m):
    """DFT, multiply the low corner, inverse DFT; all with explicit loops over modes."""
    nx, ny = x.shape
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    full = np.zeros((nx, ny), dtype=complex)
    for kx in range(m):
        for ky in range(m):
            coeff = np.sum(x * np.exp(-2j * np.pi * (kx * I / nx + ky * J / ny))) * W[kx, ky]
            full[kx, ky] = coeff
    # Hermitian completion of the half spectrum, then a plain inverse DFT
    spec = full.copy()
    for kx in range(nx):
        for ky in range(1, (ny + 1) // 2):
            spec[(-kx) % nx, (-ky) % ny] = np.conj(full[kx, ky])
    for kx in range(nx):
        spec[kx, 0] = full[kx, 0]
    out = np.zeros((nx, ny))
    for i in range(nx):
        for j in range(ny):
            out[i, j] = np.real(np.sum(spec * np.exp(2j * np.pi * (np.arange(nx)[:, None] * i / nx + np.arange(ny)[None, :] * j / ny)))) / (nx * ny)
    return out


def test_spectral_conv_matches_dense_dft(rng):
    x = rng.normal(size=(8, 8))
    W = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    W[:, 0] = W[:, 0].real  # ky = 0 column is self-conjugate only for real multipliers
    W[0, 0] = W[0, 0].real
    out = fno.spectral_conv(x[None, None], W[None, None], 3).data[0, 0]
    # the inverse real FFT keeps only the real part of the ky = 0 and Nyquist columns,
    # which the dense oracle reproduces through its Hermitian completion
    assert np.abs(out - dense_spectral_conv(x, W, 3)).max() <= 1e-10


def test_spectral_conv_identity_and_zero(rng):
    nx = ny = 16
    m = 4
    Z = np.zeros((nx, ny // 2 + 1), dtype=complex)
    Z[:m, :m] = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    Z[0, 0] = Z[0, 0].real
    Z[1:m, 0] = 0  # keep the ky=0 column Hermitian inside the block
    x = np.fft.irfft2(Z, s=(nx, ny))
    eye = np.zeros((2, 2, m, m), dtype=complex)
    eye[0, 0] = eye[1, 1] = 1.0
    X = np.stack([x, 2 * x])[None]
    assert np.abs(fno.spectral_conv(X, eye, m).data - X).max() <= 1e-10
    assert np.all(fno.spectral_conv(X, np.zeros_like(eye), m).data == 0)


def test_spectral_conv_is_low_pass(rng):
    X = rng.normal(size=(1, 2, 16, 12))
    W = rng.normal(size=(2, 2, 4, 4)) + 1j * rng.normal(size=(2, 2, 4, 4))
    Y = fno.spectral_conv(X, W, 4).data
    spec = np.fft.rfft2(Y)
    total = np.sum(np.abs(spec) ** 2)
    low = np.zeros(spec.shape, bool)
    low[..., :4, :4] = True
    low[..., -3:, 0] = True  # conjugate partners of the ky=0 column
    assert np.sum(np.abs(spec[~low]) ** 2) <= 1e-10 * total
    with pytest.raises(ValueError):
        fno.spectral_conv(X, W, 7)


def test_fourier_layer_examples(rng):
    X = rng.normal(size=(1, 3, 8, 8))
    zeros = np.zeros((3, 3, 2, 2), dtype=complex)
    out = fno.fourier_layer(X, zeros, np.eye(3), np.zeros(3), 2).data
    assert np.array_equal(out, T.gelu(X).data)
    B = rng.normal(size=3)
    out = fno.fourier_layer(np.zeros_like(X), rng.normal(size=(3, 3, 2, 2)) + 0j, rng.normal(size=(3, 3)), B, 2).data
    assert np.allclose(out, T.gelu(np.broadcast_to(B[None, :, None, None], X.shape)).data, atol=1e-15)
    Ws = rng.normal(size=(3, 3, 2, 2)) + 1j * rng.normal(size=(3, 3, 2, 2))
    Wb = rng.normal(size=(3, 3))
    spec = np.fft.rfft2(X)
    mixed = np.zeros_like(spec)
    mixed[..., :2, :2] = np.einsum("bixy,ioxy->boxy", spec[..., :2, :2], Ws)
    ref = T.gelu(np.fft.irfft2(mixed, s=(8, 8)) + np.einsum("oi,bixy->boxy", Wb, X) + B[None, :, None, None]).data
    assert np.abs(fno.fourier_layer(X, Ws, Wb, B, 2).data - ref).max() <= 1e-13


@pytest.mark.parametrize("shape", [(16, 16), (20, 24), (32, 32)])
def test_forward_output_shape(shape):
    p = small_params()
    rng = np.random.default_rng(1)
    f, phi, g = rng.normal(size=(3,) + shape)
    assert fno.fno_forward(p, f, phi, g).shape == shape
    assert fno.fno_forward(p, f[None], phi[None], g[None]).shape == (1,) + shape


def test_forward_is_deterministic_and_handles_batches(rng):
    p = small_params()
    f, phi, g = rng.normal(size=(3, 2, 16, 16))
    a = fno.fno_forward(p, f, phi, g)
    b = fno.fno_forward(p, f, phi, g)
    assert np.array_equal(a, b)
    assert np.allclose(a[1], fno.fno_forward(p, f[1], phi[1], g[1]), atol=1e-13)
    with pytest.raises(ValueError):
        fno.fno_forward(p, f[0, :5, :5], phi[0, :5, :5], g[0, :5, :5])


def test_forward_runs_at_two_resolutions():
    h = fno.FnoHyperparams(n_d=4, modes=4, n_Q=8)
    p = fno.init_params(h, np.random.default_rng(0))
    for n in (64, 96):
        mesh = build_background_mesh(n, n)
        phi = interpolate_nodal(EllipseParams(0.5, 0.5, 0.3, 0.2, 0.3), mesh)
        out = fno.fno_forward(p, np.ones((n, n)), phi, np.zeros((n, n)))
        assert out.shape == (n, n) and np.all(np.isfinite(out))


def test_pad_per_layer_changes_only_padding_placement(rng):
    f, phi, g = rng.normal(size=(3, 16, 16))
    once = small_params()
    per_layer = fno.FnoParams(fno.FnoHyperparams(**{**SMALL.to_dict(), "pad_per_layer": True}), once.tensors)
    assert not np.array_equal(fno.fno_forward(once, f, phi, g), fno.fno_forward(per_layer, f, phi, g))
    no_pad_a = fno.FnoParams(fno.FnoHyperparams(**{**SMALL.to_dict(), "pad": 0}), once.tensors)
    no_pad_b = fno.FnoParams(fno.FnoHyperparams(**{**SMALL.to_dict(), "pad": 0, "pad_per_layer": True}), once.tensors)
    assert np.array_equal(fno.fno_forward(no_pad_a, f, phi, g), fno.fno_forward(no_pad_b, f, phi, g))


def test_dirichlet_values_are_exact(rng):
    p = small_params()
    mesh = build_background_mesh(24, 24)
    phi = interpolate_nodal(sample_ellipse(rng, 2 / 23), mesh)
    phi[::5, ::3] = 0.0
    f, g = rng.normal(size=(2, 24, 24))
    u = fno.reconstruct_prediction(p, fno.fno_forward(p, f, phi, g), phi, g)
    assert np.array_equal(u[phi == 0], g[phi == 0])


def test_init_determinism():
    a, b, c = small_params(3), small_params(3), small_params(4)
    assert np.array_equal(a.to_blob(), b.to_blob())
    assert not np.array_equal(a.to_blob(), c.to_blob())


def test_checkpoint_round_trip(tmp_path):
    stats = fno.ChannelStats([1.0, 2.0, 3.0], [0.5, 0.25, 2.0], -0.1, 7.0)
    p = fno.init_params(SMALL, np.random.default_rng(5), stats)
    path = tmp_path / "model.ckpt"
    fno.save_checkpoint(p, path, {"epoch": 3})
    q = fno.load_checkpoint(path)
    assert q.hyper == p.hyper and q.stats.to_dict() == stats.to_dict()
    assert np.array_equal(q.to_blob(), p.to_blob())
    for name in p.tensors:
        assert np.array_equal(p[name].data, q[name].data) and p[name].data.dtype == q[name].data.dtype
    header, raw = fno.read_checkpoint_header(path)
    assert header["param_count"] == len(raw) // 8 == fno.param_count(SMALL)
    assert header["extra"] == {"epoch": 3}


def test_checkpoint_layout_is_documented(tmp_path):
    p = small_params()
    path = tmp_path / "m.ckpt"
    fno.save_checkpoint(p, path)
    raw = path.read_bytes()
    n = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16 : 16 + n])
    blob = np.frombuffer(raw[16 + n :], dtype="<f8")
    entry = next(e for e in header["order"] if e["name"] == "layer2.spectral")
    W = p["layer2.spectral"].data
    assert blob[entry["offset"]] == W.flat[0].real and blob[entry["offset"] + 1] == W.flat[0].imag


def test_checkpoint_errors(tmp_path):
    p = small_params()
    path = tmp_path / "m.ckpt"
    fno.save_checkpoint(p, path)
    raw = bytearray(path.read_bytes())
    (tmp_path / "trunc.ckpt").write_bytes(raw[:-8])
    raw[-1] ^= 0xFF
    (tmp_path / "flip.ckpt").write_bytes(raw)
    (tmp_path / "junk.ckpt").write_bytes(b"hello world, not a model")
    for name in ("trunc", "flip", "junk"):
        with pytest.raises(fno.CheckpointError):
            fno.load_checkpoint(tmp_path / f"{name}.ckpt")
    raw = bytearray(path.read_bytes())
    n = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16 : 16 + n])
    header["format_version"] = 99
    hb = json.dumps(header).encode()
    (tmp_path / "ver.ckpt").write_bytes(bytes(raw[:8]) + len(hb).to_bytes(8, "little") + hb + bytes(raw[16 + n :]))
    with pytest.raises(fno.CheckpointError):
        fno.load_checkpoint(tmp_path / "ver.ckpt")


def test_predict_u_mode_returns_output_directly(rng):
    h = fno.FnoHyperparams(**{**SMALL.to_dict(), "predict_u": True})
    p = fno.init_params(h, rng)
    out = rng.normal(size=(4, 4))
    assert np.array_equal(fno.reconstruct_prediction(p, out, np.zeros((4, 4)), np.ones((4, 4))), out)
