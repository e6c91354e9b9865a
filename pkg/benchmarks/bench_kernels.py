"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--events N] [--repeat R] [--pipeline]

Prints one line per kernel with the best-of-R time for each backend and the
speedup. Both backends are checked to agree before timing.
"""

import argparse
import timeit

import numpy as np

from progseg import kernels

W, H = 240, 180


def workload(n, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, W, n)
    y = rng.integers(0, H, n)
    t = np.sort(rng.uniform(0.0, 0.5, n))
    w = rng.uniform(0.0, 1.0, n)
    b = rng.choice((-1.0, 1.0), n)
    img = rng.uniform(0.0, 5.0, (H, W))
    return x, y, t, w, b, img


def cases(n):
    x, y, t, w, b, img = workload(n)
    xf, yf = x.astype(float), y.astype(float)
    return {
        "splat_warped": lambda impl: kernels.splat_warped(xf, yf, t, w, 40.0, -15.0, 0.0, W, H, impl=impl),
        "splat_warped_pair": lambda impl: kernels.splat_warped_pair(xf, yf, t, w, b, 40.0, -15.0, 0.0, W, H, impl=impl),
        "sample_warped": lambda impl: kernels.sample_warped(img, xf, yf, t, 40.0, -15.0, 0.0, impl=impl),
        "box_variance": lambda impl: kernels.box_variance(img, 5, impl=impl),
        "st_filter": lambda impl: kernels.st_filter(x, y, t, W, H, 1, 0.01, impl=impl),
    }


def pipeline(repeat):
    """One full segmentation of a noisy standard scene under each backend."""
    from progseg import progressive, synth

    name, labeled = synth.standard_suite(0, levels=(0.25,))[0]
    packet = labeled.packet
    print(f"\nprogressive run on {name} ({len(packet)} events), best of {repeat}")
    active = kernels._impl
    try:
        for impl in ("cython", "python"):
            kernels._impl = kernels.BACKENDS[impl]
            best = min(timeit.repeat(lambda: progressive.run(packet, 3), number=1, repeat=repeat))
            print(f"  {impl:<8}{best:8.2f} s")
    finally:
        kernels._impl = active


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=15000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pipeline", action="store_true", help="also time a full segmentation run")
    args = ap.parse_args()
    if "cython" not in kernels.BACKENDS:
        print("compiled backend not built; only the fallback is available")
        return
    print(f"{args.events} events, {W}x{H} sensor, best of {args.repeat}")
    print(f"{'kernel':<20}{'cython ms':>12}{'python ms':>12}{'speedup':>10}")
    for name, fn in cases(args.events).items():
        a, b = fn("cython"), fn("python")
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-9)
        times = {}
        for impl in ("cython", "python"):
            number = 10 if name != "st_filter" or impl == "cython" else 1
            best = min(timeit.repeat(lambda: fn(impl), number=number, repeat=args.repeat)) / number
            times[impl] = best * 1e3
        print(f"{name:<20}{times['cython']:>12.3f}{times['python']:>12.3f}{times['python'] / times['cython']:>9.1f}x")
    if args.pipeline:
        pipeline(max(1, args.repeat // 2))


if __name__ == "__main__":
    main()
