"""Level-set functions, data fields and the random samplers of problem instances.

Every field is a plain callable ``field(x, y)`` that accepts scalars or numpy
arrays and broadcasts like a numpy ufunc.
"""
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from . import kernels

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]

REJECTION_BUDGET = 100_000

ELLIPSE_CENTER_RANGE = (0.2, 0.8)
ELLIPSE_AXIS_RANGE = (0.2, 0.45)
ELLIPSE_ANGLE_RANGE = (0.0, np.pi)
FORCE_AMPLITUDE_RANGE = (20.0, 30.0)
FORCE_CENTER_RANGE = (0.2, 0.8)
FORCE_WIDTH_RANGE = (0.15, 0.45)
FORCE_CENTER_THRESHOLD = -0.15
BC_RANGE = (-0.8, 0.8)

GAUSSIAN_CENTER_RANGE = (0.25, 0.75)
GAUSSIAN_WIDTH_RANGE = (0.01, 0.04)


@dataclass(frozen=True)
class SamplerRanges:
    """Sampling intervals, each a ``(lo, hi)`` pair."""

    ellipse_center: tuple = ELLIPSE_CENTER_RANGE
    ellipse_axis: tuple = ELLIPSE_AXIS_RANGE
    ellipse_angle: tuple = ELLIPSE_ANGLE_RANGE
    force_amplitude: tuple = FORCE_AMPLITUDE_RANGE
    force_center: tuple = FORCE_CENTER_RANGE
    force_width: tuple = FORCE_WIDTH_RANGE
    force_center_threshold: float = FORCE_CENTER_THRESHOLD
    bc: tuple = BC_RANGE
    gaussian_center: tuple = GAUSSIAN_CENTER_RANGE
    gaussian_width: tuple = GAUSSIAN_WIDTH_RANGE

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name == "force_center_threshold":
                continue
            lo, hi = value
            if not lo < hi:
                raise ValueError(f"range {name} needs lo < hi, got ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.force_amplitude[0] <= 0:
            raise ValueError("force_amplitude is a magnitude range and must be positive")
        if min(self.ellipse_axis[0], self.force_width[0], self.gaussian_width[0]) <= 0:
            raise ValueError("axes and widths must be positive")

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


DEFAULT_RANGES = SamplerRanges()


class SamplerError(RuntimeError):
    """A rejection sampler exhausted its draw budget."""


@dataclass(frozen=True)
class EllipseParams:
    x0: float
    y0: float
    lx: float
    ly: float
    theta: float

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("ellipse semi-axes must be positive")

    def __call__(self, x, y):
        return ellipse_levelset(self, x, y)

    def bounding_half_extents(self):
        c, s = np.cos(self.theta), np.sin(self.theta)
        half_w = np.sqrt(self.lx**2 * c**2 + self.ly**2 * s**2)
        half_h = np.sqrt(self.lx**2 * s**2 + self.ly**2 * c**2)
        return float(half_w), float(half_h)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GaussianSumParams:
    centers: tuple  # ((x1, y1), (x2, y2), (x3, y3))
    sigma: tuple  # x-widths, used as 2*sigma_k in the exponent denominator
    gamma: tuple  # y-widths

    def __post_init__(self):
        if min(self.sigma) <= 0 or min(self.gamma) <= 0:
            raise ValueError("gaussian widths must be positive")

    def psi(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        for (xk, yk), sk, gk in zip(self.centers, self.sigma, self.gamma):
            out = out + np.exp(-((x - xk) ** 2) / (2 * sk) - (y - yk) ** 2 / (2 * gk))
        return out

    def to_dict(self):
        return {
            "centers": [list(c) for c in self.centers],
            "sigma": list(self.sigma),
            "gamma": list(self.gamma),
        }


@dataclass(frozen=True)
class ForceParams:
    A: float
    mu0: float
    mu1: float
    sigma_x: float
    sigma_y: float

    def __call__(self, x, y):
        return gaussian_force(self)(x, y)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class BoundaryParams:
    alpha: float
    beta: float

    def __call__(self, x, y):
        return polynomial_cosine_bc(self)(x, y)

    def to_dict(self):
        return asdict(self)


def ellipse_levelset(p, x, y):
    """Rotated ellipse level-set, negative inside and ``-1`` at the center."""
    c, s = np.cos(p.theta), np.sin(p.theta)
    dx = np.asarray(x, dtype=float) - p.x0
    dy = np.asarray(y, dtype=float) - p.y0
    return -1.0 + (dx * c + dy * s) ** 2 / p.lx**2 + (dx * s - dy * c) ** 2 / p.ly**2


def grid_coordinates(nx, ny):
    x = np.arange(nx) / (nx - 1)
    y = np.arange(ny) / (ny - 1)
    return np.meshgrid(x, y, indexing="ij")


def gaussian_sum_levelset(p, grid):
    """Level-set ``-psi + 0.5 * M`` of a sum of three Gaussians.

    ``M`` is the maximum of ``psi`` over the nodes of an ``nx x ny`` grid of the
    unit square (``grid = (nx, ny)``), standing in for the continuous maximum.
    """
    nx, ny = grid
    if nx < 2 or ny < 2:
        raise ValueError("grid must be at least 2x2")
    X, Y = grid_coordinates(nx, ny)
    peak = float(p.psi(X, Y).max())

    def phi(x, y):
        return -p.psi(x, y) + 0.5 * peak

    phi.peak = peak
    return phi


def gaussian_force(p):
    def f(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return p.A * np.exp(
            -((x - p.mu0) ** 2) / (2 * p.sigma_x**2) - (y - p.mu1) ** 2 / (2 * p.sigma_y**2)
        )

    return f


def polynomial_cosine_bc(p):
    def g(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return p.alpha * ((x - 0.5) ** 2 - (y - 0.5) ** 2) * np.cos(p.beta * y * np.pi)

    return g


def sample_ellipse(rng, margin=0.0, budget=REJECTION_BUDGET, ranges=DEFAULT_RANGES):
    """Draw ellipse parameters until the rotated bounding box fits in the box.

    The box is ``[margin, 1 - margin]^2``.
    """
    if not 0.0 <= margin < 0.2:
        raise ValueError("margin must lie in [0, 0.2)")
    for _ in range(budget):
        x0, y0 = rng.uniform(*ranges.ellipse_center, size=2)
        lx, ly = rng.uniform(*ranges.ellipse_axis, size=2)
        theta = rng.uniform(*ranges.ellipse_angle)
        p = EllipseParams(float(x0), float(y0), float(lx), float(ly), float(theta))
        hw, hh = p.bounding_half_extents()
        if (
            x0 - hw >= margin
            and x0 + hw <= 1.0 - margin
            and y0 - hh >= margin
            and y0 + hh <= 1.0 - margin
        ):
            return p
    raise SamplerError(f"no admissible ellipse after {budget} draws (margin={margin})")


def sample_force_center(rng, phi, budget=REJECTION_BUDGET, ranges=DEFAULT_RANGES):
    cut = ranges.force_center_threshold
    for _ in range(budget):
        mu0, mu1 = rng.uniform(*ranges.force_center, size=2)
        if phi(mu0, mu1) < cut:
            return float(mu0), float(mu1)
    raise SamplerError(f"no force center with phi < {cut} after {budget} draws")


def sample_force(rng, phi, positive=False, budget=REJECTION_BUDGET, ranges=DEFAULT_RANGES):
    """Random Gaussian force whose center lies well inside ``{phi < 0}``.

    The amplitude is uniform on ``[-30, -20] U [20, 30]``, or on ``[20, 30]``
    when ``positive`` is set.
    """
    lo, hi = ranges.force_amplitude
    magnitude = rng.uniform(lo, hi)
    if positive:
        A = magnitude
    else:
        A = magnitude if rng.random() < 0.5 else -magnitude
    mu0, mu1 = sample_force_center(rng, phi, budget, ranges)
    sx, sy = rng.uniform(*ranges.force_width, size=2)
    return ForceParams(float(A), mu0, mu1, float(sx), float(sy))


def sample_bc(rng, ranges=DEFAULT_RANGES):
    alpha, beta = rng.uniform(*ranges.bc, size=2)
    return BoundaryParams(float(alpha), float(beta))


def latin_hypercube(n, ranges, rng):
    """Latin hypercube design of ``n`` points in the box given by ``ranges``.

    Each column holds exactly one point per equal-width stratum of its range,
    placed uniformly inside the stratum.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ranges = np.asarray(ranges, dtype=float).reshape(-1, 2)
    if np.any(ranges[:, 0] >= ranges[:, 1]):
        raise ValueError("every range needs lo < hi")
    dims = len(ranges)
    out = np.empty((n, dims))
    for d in range(dims):
        strata = rng.permutation(n)
        out[:, d] = (strata + rng.random(n)) / n
    return ranges[:, 0] + out * (ranges[:, 1] - ranges[:, 0])


def zero_level_points(phi_h):
    """Points of ``{phi_h = 0}`` on grid edges, by linear interpolation.

    ``phi_h`` holds nodal values on the uniform grid of the unit square.
    """
    phi_h = np.asarray(phi_h, dtype=float)
    nx, ny = phi_h.shape
    xs = np.arange(nx) / (nx - 1)
    ys = np.arange(ny) / (ny - 1)
    pts = []

    I, J = np.nonzero(phi_h == 0.0)
    pts.append(np.column_stack([xs[I], ys[J]]))

    a, b = phi_h[:-1, :], phi_h[1:, :]
    I, J = np.nonzero(a * b < 0)
    t = a[I, J] / (a[I, J] - b[I, J])
    pts.append(np.column_stack([xs[I] + t * (xs[I + 1] - xs[I]), ys[J]]))

    a, b = phi_h[:, :-1], phi_h[:, 1:]
    I, J = np.nonzero(a * b < 0)
    t = a[I, J] / (a[I, J] - b[I, J])
    pts.append(np.column_stack([xs[I], ys[J] + t * (ys[J + 1] - ys[J])]))

    return np.concatenate(pts, axis=0)


def hausdorff_distance(a, b):
    """Symmetric Hausdorff distance between two finite planar point sets."""
    a = np.ascontiguousarray(np.asarray(a, dtype=float).reshape(-1, 2))
    b = np.ascontiguousarray(np.asarray(b, dtype=float).reshape(-1, 2))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("hausdorff distance of an empty point set")
    return max(kernels.directed_hausdorff(a, b), kernels.directed_hausdorff(b, a))
