"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_backends.py [--density 1500] [--repeat 3]

Prints the best-of-N wall time per kernel and for the whole feature
extraction of one synthetic room, plus whether both backends agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from roomauth import _backend, _fallback
from roomauth.evaluation import generate_room, random_room_spec
from roomauth.pipeline import PipelineConfig, extract_features
from roomauth.preprocess import preprocess
from roomauth.registration import draw_samples


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def equal(a, b):
    if isinstance(a, tuple):
        return len(a) == len(b) and all(equal(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def kernel_cases(cloud, rng):
    pts = cloud.points
    normals = cloud.normals
    tree = _fallback.build_tree(pts)
    radii = np.full(len(pts), 0.2)
    off, nbr, _ = _fallback.radius_batch(tree, pts, radii)
    centers = np.arange(0, len(pts), 10)
    c_off, c_nbr, _ = _fallback.radius_batch(tree, pts[centers], np.full(len(centers), 0.25))
    keys = np.floor((pts - pts.min(0)) / 0.05).astype(np.int64) @ np.array([1 << 40, 1 << 20, 1])
    src = pts[rng.choice(len(pts), 300, replace=False)]
    dst = src + rng.normal(scale=0.02, size=src.shape)
    dst[:200] = pts[rng.choice(len(pts), 200, replace=False)]
    samples = draw_samples(np.random.default_rng(0), len(src), 3, 4096)
    return {
        "build_tree": lambda k: k.build_tree(pts),
        "radius_batch": lambda k: k.radius_batch(tree, pts, radii),
        "knn_batch k=30": lambda k: k.knn_batch(tree, pts, 30),
        "voxel_order": lambda k: k.voxel_order(keys, pts),
        "csr_covariances": lambda k: k.csr_covariances(pts, off, nbr),
        "spfh_batch": lambda k: k.spfh_batch(pts, normals, centers, c_off, c_nbr, 11),
        "ransac_block": lambda k: k.ransac_block(src, dst, samples, 0.2, 0.9, 0, 10**6, 0.999,
                                                 0, np.inf, -1)[0],
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--density", type=float, default=1500.0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    names = _backend.available()
    if "compiled" not in names:
        print("compiled kernels are not built; only the fallback is available")
    rng = np.random.default_rng(args.seed)
    raw = generate_room(random_room_spec(rng, args.density))
    cloud = preprocess(raw)
    print(f"room: {len(raw)} raw points, {len(cloud)} preprocessed")
    print(f"{'kernel':<20}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}{'equal':>8}")

    for label, fn in kernel_cases(cloud, rng).items():
        results = {n: best_of(lambda: fn(_backend.get(n)), args.repeat) for n in names}
        row = f"{label:<20}" + "".join(f"{results[n][0] * 1e3:>10.1f}ms" for n in names)
        if len(names) == 2:
            row += f"{results['python'][0] / results['compiled'][0]:>9.1f}x"
            row += f"{'yes' if equal(results['compiled'][1], results['python'][1]) else 'no':>8}"
        print(row)

    config = PipelineConfig()
    timings = {}
    for n in names:
        saved = _backend.kernels
        _backend.kernels = _backend.get(n)
        try:
            timings[n] = best_of(lambda: extract_features(raw, config), args.repeat)
        finally:
            _backend.kernels = saved
    row = f"{'extract_features':<20}" + "".join(f"{timings[n][0] * 1e3:>10.1f}ms" for n in names)
    if len(names) == 2:
        a, b = timings["compiled"][1], timings["python"][1]
        same = np.array_equal(a.positions, b.positions) and np.array_equal(a.descriptors, b.descriptors)
        row += f"{timings['python'][0] / timings['compiled'][0]:>9.1f}x{'yes' if same else 'no':>8}"
    print(row)


if __name__ == "__main__":
    main()
