"""Compare the numba and pure-numpy kernels on assembly and Hausdorff distances.

    python benchmarks/bench_kernels.py [--sizes 33 65 129] [--repeat 5]

JIT compilation is triggered once before timing. Each row also reports the
largest absolute difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from phifno import _accel
from phifno.geometry import EllipseParams, hausdorff_distance
from phifno.mesh import build_background_mesh, classify_cells, interpolate_nodal
from phifno.phifem import assemble, sine_case


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_assembly(n, repeat):
    mesh = build_background_mesh(n, n)
    case = sine_case()
    phi = interpolate_nodal(EllipseParams(0.5, 0.5, 0.35, 0.25, 0.4), mesh)
    f = interpolate_nodal(case.f, mesh)
    g = interpolate_nodal(case.g, mesh)
    cls = classify_cells(mesh, phi)
    mesh.edges  # build topology outside the timed region

    def run():
        return assemble(mesh, cls, phi, f, g)[0]

    results = {}
    for name in ("numpy", "numba"):
        _accel.set_backend(name)
        run()
        results[name] = _time(run, repeat)
    diff = abs(results["numpy"][1].matrix - results["numba"][1].matrix).max()
    return results["numpy"][0], results["numba"][0], diff


def bench_hausdorff(n_points, repeat):
    rng = np.random.default_rng(0)
    a = rng.random((n_points, 2))
    b = rng.random((n_points, 2))
    results = {}
    for name in ("numpy", "numba"):
        _accel.set_backend(name)
        hausdorff_distance(a, b)
        results[name] = _time(lambda: hausdorff_distance(a, b), repeat)
    return results["numpy"][0], results["numba"][0], abs(results["numpy"][1] - results["numba"][1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[33, 65, 129])
    parser.add_argument("--points", type=int, nargs="+", default=[200, 1000, 4000])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    previous = _accel.backend()
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    try:
        for n in args.sizes:
            t_np, t_nb, d = bench_assembly(n, args.repeat)
            print(f"{'assembly ' + str(n) + 'x' + str(n):<22}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.2f}{d:>12.1e}")
        for p in args.points:
            t_np, t_nb, d = bench_hausdorff(p, args.repeat)
            print(f"{'hausdorff ' + str(p) + ' pts':<22}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.2f}{d:>12.1e}")
    finally:
        _accel.set_backend(previous)


if __name__ == "__main__":
    main()
