"""Dataset generation (sample, grid, solve) and the on-disk container.

A dataset directory holds ``manifest.json``, ``data.bin`` and, when some
draws had to be resampled, ``failures.log``. ``data.bin`` is the float64
little-endian array ``[n_samples, 4, nx, ny]`` with fields in manifest
order, followed by the 32-byte SHA-256 digest of everything before it.
"""
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .mesh import EmptyDomainError, build_background_mesh, interpolate_nodal
from .phifem import SOLVER_TOL, SolverError, ground_truth

FORMAT_VERSION = 1
FIELDS = ("f", "phi", "g", "w")
MAX_RETRIES = 10
GENERATORS = ("ellipse", "gaussian")
N_GAUSSIANS = 3


class DatasetFormatError(OSError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass(eq=False)
class Dataset:
    f: np.ndarray  # (n, nx, ny)
    phi: np.ndarray
    g: np.ndarray
    w: np.ndarray
    records: list  # per-sample parameter log
    meta: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def __len__(self):
        return len(self.f)

    @property
    def shape(self):
        return self.f.shape[1:]

    @property
    def u(self):
        return self.phi * self.w + self.g

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.f[idx],
            self.phi[idx],
            self.g[idx],
            self.w[idx],
            [self.records[i] for i in idx],
            dict(self.meta),
        )

    def array(self):
        return np.stack([self.f, self.phi, self.g, self.w], axis=1)


# ------------------------------------------------------------------ generation


@dataclass(frozen=True)
class GenerationSpec:
    generator: str = "ellipse"
    nx: int = 64
    ny: int = 64
    seed: int = 0
    sigma_D: float = 1.0
    margin: float | None = None  # ellipse box margin; None means 2 / (nx - 1)
    ranges: geo.SamplerRanges = geo.DEFAULT_RANGES
    solver_tol: float = SOLVER_TOL

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}")
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grids need at least 3x3 nodes")
        if not self.sigma_D > 0:
            raise ValueError("sigma_D must be positive")

    @property
    def box_margin(self):
        return 2.0 / (self.nx - 1) if self.margin is None else float(self.margin)


def _check_inside(phi_h):
    """Reject level-sets whose active cells would touch the box border."""
    ring = np.ones(phi_h.shape, dtype=bool)
    ring[2:-2, 2:-2] = False
    if np.any(phi_h[ring] < 0):
        raise geo.SamplerError("domain touches the border of the box")
    if not np.any(phi_h < 0):
        raise EmptyDomainError("domain does not intersect grid")


def gaussian_design_ranges(ranges):
    """Columns of the Latin hypercube: 3 centers (x, y), 3 sigma, 3 gamma, A, sigma_x, sigma_y, alpha, beta."""
    cols = [ranges.gaussian_center] * (2 * N_GAUSSIANS) + [ranges.gaussian_width] * (2 * N_GAUSSIANS)
    cols += [ranges.force_amplitude, ranges.force_width, ranges.force_width, ranges.bc, ranges.bc]
    return np.array(cols, dtype=float)


def gaussian_design(n, spec):
    return geo.latin_hypercube(n, gaussian_design_ranges(spec.ranges), np.random.default_rng([spec.seed, 1]))


def _gaussian_params(row):
    k = N_GAUSSIANS
    centers = tuple((float(row[2 * i]), float(row[2 * i + 1])) for i in range(k))
    shape = geo.GaussianSumParams(centers, tuple(map(float, row[2 * k : 3 * k])), tuple(map(float, row[3 * k : 4 * k])))
    A, sx, sy, alpha, beta = (float(v) for v in row[4 * k :])
    return shape, (A, sx, sy), geo.BoundaryParams(alpha, beta)


def _draw_instance(spec, index, attempt, design_row):
    """Analytic level-set, force and boundary data of one sample attempt."""
    r = spec.ranges
    if spec.generator == "ellipse":
        rng = np.random.default_rng([spec.seed, index, attempt])
        shape = geo.sample_ellipse(rng, spec.box_margin, ranges=r)
        phi = shape
        force = geo.sample_force(rng, phi, ranges=r)
        bc = geo.sample_bc(rng, r)
        record = {"shape": shape.to_dict()}
    else:
        rng = np.random.default_rng([spec.seed, 2, index, attempt])
        if attempt > 0:
            # the design row failed; redraw every coordinate uniformly
            cols = gaussian_design_ranges(r)
            design_row = rng.uniform(cols[:, 0], cols[:, 1])
        shape, (A, sx, sy), bc = _gaussian_params(design_row)
        phi = geo.gaussian_sum_levelset(shape, (spec.nx, spec.ny))
        mu0, mu1 = geo.sample_force_center(rng, phi, ranges=r)
        force = geo.ForceParams(A, mu0, mu1, sx, sy)
        record = {"shape": shape.to_dict(), "peak": phi.peak}
    record.update(force=force.to_dict(), bc=bc.to_dict())
    return phi, force, bc, record


def generate_sample(spec, index, design_row=None):
    """Build and solve sample ``index``; retries with fresh seeds on failure.

    Returns ``(grids (4, nx, ny), record, failures)``.
    """
    mesh = build_background_mesh(spec.nx, spec.ny)
    failures = []
    for attempt in range(MAX_RETRIES + 1):
        try:
            phi, force, bc, record = _draw_instance(spec, index, attempt, design_row)
            phi_h = interpolate_nodal(phi, mesh)
            _check_inside(phi_h)
            f_h = interpolate_nodal(force, mesh)
            g_h = interpolate_nodal(bc, mesh)
            w_h = ground_truth(f_h, phi_h, g_h, spec.sigma_D, spec.solver_tol)
        except (geo.SamplerError, EmptyDomainError, SolverError) as exc:
            failures.append({"index": index, "attempt": attempt, "error": f"{type(exc).__name__}: {exc}"})
            continue
        record.update(index=index, attempt=attempt)
        return np.stack([f_h, phi_h, g_h, w_h]), record, failures
    raise GenerationError(f"sample {index} failed {MAX_RETRIES + 1} times; last: {failures[-1]['error']}")


def _generate_one(args):
    return generate_sample(*args)


def generate_dataset(n, spec, workers=1):
    """Generate ``n`` samples; ``workers > 1`` solves them in parallel processes.

    The result does not depend on ``workers``: every sample draws from its own
    seed sequence.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    design = gaussian_design(n, spec) if spec.generator == "gaussian" else [None] * n
    jobs = [(spec, i, design[i]) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_one, jobs, chunksize=max(1, n // (4 * workers))))
    else:
        results = [_generate_one(j) for j in jobs]
    grids = np.stack([r[0] for r in results])
    meta = {
        "generator": spec.generator,
        "seed": spec.seed,
        "sigma_D": spec.sigma_D,
        "margin": spec.box_margin if spec.generator == "ellipse" else None,
        "ranges": spec.ranges.to_dict(),
    }
    return Dataset(
        grids[:, 0],
        grids[:, 1],
        grids[:, 2],
        grids[:, 3],
        [r[1] for r in results],
        meta,
        [f for r in results for f in r[2]],
    )


def generate_ellipse_dataset(n, nx, ny, seed, sigma_D=1.0, workers=1, **kw):
    return generate_dataset(n, GenerationSpec("ellipse", nx, ny, seed, sigma_D, **kw), workers)


def generate_gaussian_shape_dataset(n, nx, ny, seed, sigma_D=1.0, workers=1, **kw):
    """Level-set, force and boundary data from one Latin hypercube; forces are positive."""
    return generate_dataset(n, GenerationSpec("gaussian", nx, ny, seed, sigma_D, **kw), workers)


# ------------------------------------------------------------------- container


def write_dataset(ds, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    raw = np.ascontiguousarray(ds.array(), dtype="<f8").tobytes()
    digest = hashlib.sha256(raw).digest()
    n, nx, ny = ds.f.shape
    manifest = {
        "format_version": FORMAT_VERSION,
        "nx": nx,
        "ny": ny,
        "n_samples": n,
        "fields": list(FIELDS),
        "scalar": "float64",
        "byte_order": "little",
        "layout": "sample, field, i, j (row-major, j fastest)",
        "checksum": {"algorithm": "sha256", "hex": digest.hex(), "trailing_bytes": 32},
        **ds.meta,
        "samples": ds.records,
    }
    with open(path / "data.bin", "wb") as fh:
        fh.write(raw)
        fh.write(digest)
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    log = path / "failures.log"
    if ds.failures:
        with open(log, "w") as fh:
            for item in ds.failures:
                fh.write(json.dumps(item) + "\n")
    elif log.exists():
        log.unlink()


_MANIFEST_KEYS = {
    "format_version", "nx", "ny", "n_samples", "fields", "scalar", "byte_order",
    "layout", "checksum", "samples",
}


def read_dataset(path):
    path = Path(path)
    try:
        with open(path / "manifest.json") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: unreadable manifest") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version {manifest.get('format_version')}")
    if manifest.get("fields") != list(FIELDS) or manifest.get("scalar") != "float64":
        raise DatasetFormatError(f"{path}: unexpected field list or scalar type")
    n, nx, ny = manifest["n_samples"], manifest["nx"], manifest["ny"]
    expected = n * len(FIELDS) * nx * ny * 8
    data = (path / "data.bin").read_bytes()
    if len(data) != expected + 32:
        raise DatasetFormatError(
            f"{path}: data.bin has {len(data)} bytes, manifest implies {expected} + 32 checksum"
        )
    raw, digest = data[:expected], data[expected:]
    if hashlib.sha256(raw).digest() != digest or digest.hex() != manifest["checksum"]["hex"]:
        raise DatasetFormatError(f"{path}: checksum mismatch")
    arr = np.frombuffer(raw, dtype="<f8").reshape(n, len(FIELDS), nx, ny).astype(np.float64)
    failures = []
    log = path / "failures.log"
    if log.exists():
        failures = [json.loads(line) for line in log.read_text().splitlines() if line.strip()]
    meta = {k: v for k, v in manifest.items() if k not in _MANIFEST_KEYS}
    return Dataset(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], manifest.get("samples", []), meta, failures)


def split_indices(n, sizes, seed):
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or min(sizes) < 0:
        raise ValueError("sizes must be three non-negative counts")
    if sum(sizes) > n:
        raise ValueError(f"split sizes {sizes} exceed the {n} available samples")
    perm = np.random.default_rng([seed, 3]).permutation(n)
    a, b, c = sizes
    return perm[:a], perm[a : a + b], perm[a + b : a + b + c]


def split(ds, sizes=(1500, 300, 300), seed=0):
    """Disjoint seeded partition into (train, val, test)."""
    return tuple(ds.subset(idx) for idx in split_indices(len(ds), sizes, seed))


def default_workers():
    return max(1, min(8, (os.cpu_count() or 1)))
