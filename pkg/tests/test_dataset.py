import json

import numpy as np
import pytest

from phifno import dataset as D
from phifno import geometry as geo
from phifno.mesh import masks_from_levelset
from phifno.phifem import SolverError, ground_truth
from phifno.training import metric_E1


def test_round_trip_is_bitwise(tiny_dataset, tmp_path):
    ds = tiny_dataset.subset([0, 1, 2])
    D.write_dataset(ds, tmp_path)
    back = D.read_dataset(tmp_path)
    for name in D.FIELDS:
        assert np.array_equal(getattr(back, name), getattr(ds, name))
    assert back.records == ds.records
    assert back.meta["seed"] == 3


def test_byte_layout_matches_manifest(tiny_dataset, tmp_path):
    D.write_dataset(tiny_dataset, tmp_path)
    raw = (tmp_path / "data.bin").read_bytes()
    nx = ny = 16
    k, field, i, j = 5, D.FIELDS.index("g"), 7, 3
    offset = (((k * 4) + field) * nx + i) * ny * 8 + j * 8
    assert np.frombuffer(raw, "<f8", count=1, offset=offset)[0] == tiny_dataset.g[k, i, j]
    assert len(raw) == len(tiny_dataset) * 4 * nx * ny * 8 + 32


def test_corruption_is_detected(tiny_dataset, tmp_path):
    D.write_dataset(tiny_dataset.subset([0, 1, 2]), tmp_path)
    data = (tmp_path / "data.bin").read_bytes()
    (tmp_path / "data.bin").write_bytes(data[:-40] + data[-32:])  # one scalar short
    with pytest.raises(D.DatasetFormatError):
        D.read_dataset(tmp_path)
    flipped = bytearray(data)
    flipped[100] ^= 1
    (tmp_path / "data.bin").write_bytes(bytes(flipped))
    with pytest.raises(D.DatasetFormatError):
        D.read_dataset(tmp_path)
    (tmp_path / "data.bin").write_bytes(data)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["n_samples"] = 4
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(D.DatasetFormatError):
        D.read_dataset(tmp_path)
    manifest["n_samples"] = 3
    manifest["format_version"] = 2
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(D.DatasetFormatError):
        D.read_dataset(tmp_path)
    with pytest.raises(OSError):
        D.read_dataset(tmp_path / "missing")


def test_regeneration_invariant(tiny_dataset):
    for k in range(len(tiny_dataset)):
        f, phi, g, w = (getattr(tiny_dataset, n)[k] for n in D.FIELDS)
        w2 = ground_truth(f, phi, g, tiny_dataset.meta["sigma_D"])
        S0 = masks_from_levelset(phi).S0
        assert metric_E1(phi * w + g, phi * w2 + g, S0) <= 1e-10


def test_samples_are_valid(tiny_dataset):
    for k in range(len(tiny_dataset)):
        phi = tiny_dataset.phi[k]
        assert (phi < 0).any() and masks_from_levelset(phi).S0.any()
        rec = tiny_dataset.records[k]
        assert rec["index"] == k
        assert 20 <= abs(rec["force"]["A"]) <= 30


def test_generation_is_deterministic_and_schedule_free():
    a = D.generate_ellipse_dataset(4, 16, 16, seed=11)
    b = D.generate_ellipse_dataset(4, 16, 16, seed=11)
    c = D.generate_ellipse_dataset(4, 16, 16, seed=11, workers=2)
    assert a.array().tobytes() == b.array().tobytes() == c.array().tobytes()
    assert a.records == c.records
    assert not np.array_equal(a.array(), D.generate_ellipse_dataset(4, 16, 16, seed=12).array())


def test_gaussian_dataset():
    ds = D.generate_gaussian_shape_dataset(6, 24, 24, seed=2)
    assert len(ds) == 6 and ds.meta["generator"] == "gaussian"
    assert all(r["force"]["A"] > 0 for r in ds.records)
    design = D.gaussian_design(6, D.GenerationSpec("gaussian", 24, 24, 2))
    ranges = D.gaussian_design_ranges(geo.DEFAULT_RANGES)
    assert design.shape == (6, len(ranges))
    for d, (lo, hi) in enumerate(ranges):
        strata = np.floor((design[:, d] - lo) / (hi - lo) * 6).astype(int)
        assert sorted(strata) == list(range(6))
    again = D.generate_gaussian_shape_dataset(6, 24, 24, seed=2)
    assert again.array().tobytes() == ds.array().tobytes()


def test_failed_attempts_are_logged_and_retried():
    spec = D.GenerationSpec("ellipse", 16, 16, 0, margin=0.0)
    # margin 0 lets ellipses reach the box border, which the inside check rejects
    ds = D.generate_dataset(12, spec)
    assert len(ds) == 12
    for item in ds.failures:
        assert item["attempt"] < D.MAX_RETRIES + 1 and "Error" in item["error"]
    retried = {f["index"] for f in ds.failures}
    for k in retried:
        assert ds.records[k]["attempt"] > 0


def test_hard_failure_after_retries(monkeypatch):
    calls = []

    def failing(*args):
        calls.append(args)
        raise SolverError("forced", 1.0)

    monkeypatch.setattr(D, "ground_truth", failing)
    with pytest.raises(D.GenerationError):
        D.generate_sample(D.GenerationSpec("ellipse", 16, 16, 0), 0)
    assert len(calls) == D.MAX_RETRIES + 1


def test_split_properties(tiny_dataset):
    parts = D.split_indices(3, (1, 1, 1), seed=0)
    assert sorted(np.concatenate(parts)) == [0, 1, 2]
    a = D.split_indices(12, (6, 3, 3), seed=5)
    b = D.split_indices(12, (6, 3, 3), seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    flat = np.concatenate(a)
    assert len(set(flat)) == len(flat)
    train, val, test = D.split(tiny_dataset, (6, 3, 3), seed=5)
    assert train.records == [tiny_dataset.records[i] for i in a[0]]
    with pytest.raises(ValueError):
        D.split_indices(3, (2, 1, 1), seed=0)


def test_check_inside():
    phi = np.ones((10, 10))
    phi[4:6, 4:6] = -1
    D._check_inside(phi)
    phi[1, 5] = -1
    with pytest.raises(geo.SamplerError):
        D._check_inside(phi)
