"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--size 512] [--repeat 7]

Times each hot kernel on both backends plus the full partition pipeline,
and checks that the two backends give identical output.
"""
from __future__ import annotations

import argparse
import contextlib
import statistics
import time

import numpy as np

from partgroup import kernels
from partgroup.edges import binarize_edges, edge_normals
from partgroup.metrics import EdgeEvalConfig, disk_offsets
from partgroup.partition import partition
from partgroup.synth import SceneConfig, gen_scene

KERNEL_NAMES = ("scan_lines", "group_lines", "nms_suppress", "greedy_match")


@contextlib.contextmanager
def use_backend(name):
    impl = kernels.BACKENDS[name]
    saved = {k: getattr(kernels, k) for k in KERNEL_NAMES}
    for k in KERNEL_NAMES:
        setattr(kernels, k, getattr(impl, k))
    try:
        yield impl
    finally:
        for k, v in saved.items():
            setattr(kernels, k, v)


def timeit(fn, repeat):
    fn()  # warm-up (jit compile, caches)
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return 1000 * statistics.median(samples)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)

    s = gen_scene(SceneConfig(height=args.size, width=args.size, instances=(4, 10), seed=77,
                              spurious_edge=0.01, edge_dropout=0.05))
    parts, prob = s.degraded_parts, s.degraded_edge_prob
    fg = parts > 0
    edges = binarize_edges(prob, 0.2)
    nx, ny = edge_normals(prob)
    radius = EdgeEvalConfig().radius(*prob.shape)
    offs = disk_offsets(radius)

    cases = {
        "scan_lines": lambda m: m.scan_lines(fg, edges),
        "group_lines": None,
        "nms_suppress": lambda m: m.nms_suppress(prob, nx, ny),
        "greedy_match": lambda m: m.greedy_match(edges, s.gt_edges, *offs),
    }
    backends = [b for b in ("numba", "numpy") if b in kernels.BACKENDS]
    rows = []
    outputs = {}
    for name in KERNEL_NAMES:
        row = [name]
        for b in backends:
            impl = kernels.BACKENDS[b]
            if name == "group_lines":
                h, v, nh, nv = impl.scan_lines(fg, edges)
                fn = lambda impl=impl, h=h, v=v, n=nh + nv: impl.group_lines(h, v, n)  # noqa: E731
            else:
                fn = lambda impl=impl, f=cases[name]: f(impl)  # noqa: E731
            row.append(timeit(fn, args.repeat))
            outputs[(name, b)] = fn()
        rows.append(row)

    pipeline = ["partition (full)"]
    for b in backends:
        with use_backend(b):
            pipeline.append(timeit(lambda: partition(parts, prob), args.repeat))
            outputs[("partition", b)] = partition(parts, prob).instances
    rows.append(pipeline)

    print(f"grid {args.size}x{args.size}, median of {args.repeat} runs (ms)")
    print(f"{'kernel':<18}" + "".join(f"{b:>10}" for b in backends)
          + ("   speedup" if len(backends) == 2 else ""))
    for row in rows:
        line = f"{row[0]:<18}" + "".join(f"{v:>10.2f}" for v in row[1:])
        if len(row) == 3:
            line += f"{row[2] / row[1]:>9.1f}x"
        print(line)

    if len(backends) == 2:
        for key in list(KERNEL_NAMES) + ["partition"]:
            a, b = outputs[(key, "numba")], outputs[(key, "numpy")]
            same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) \
                else np.array_equal(a, b)
            print(f"{key:<18} outputs identical: {same}")


if __name__ == "__main__":
    main()
